#include "factrfm/symlinalg.hpp"

#include <Eigen/Dense>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace factrfm {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::InvalidMatrix,
                std::string(what) + " has non-finite entries");
  }
}

}  // namespace

SymMatrix::SymMatrix(Matrix m) : m_(std::move(m)) {
  if (m_.rows() != m_.cols()) {
    throw Error(ErrorCode::InvalidMatrix, "matrix is not square");
  }
  if (m_.rows() == 0) {
    throw Error(ErrorCode::InvalidMatrix, "matrix is empty");
  }
  require_finite(m_, "SymMatrix");
  const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
  const double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * scale) {
    throw Error(ErrorCode::InvalidMatrix,
                "matrix is not symmetric (max asymmetry " +
                    std::to_string(asym) + ")");
  }
  m_ = ((m_ + m_.transpose()) / 2.0).eval();
}

SymMatrix SymMatrix::identity(Eigen::Index dim) {
  return SymMatrix(Matrix::Identity(dim, dim), Unchecked{});
}

SymMatrix SymMatrix::zero(Eigen::Index dim) {
  return SymMatrix(Matrix::Zero(dim, dim), Unchecked{});
}

SymMatrix SymMatrix::from_symmetric_part(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw Error(ErrorCode::InvalidMatrix, "matrix is not square");
  }
  require_finite(m, "matrix");
  return SymMatrix(((m + m.transpose()) / 2.0).eval(), Unchecked{});
}

Matrix EigenDecomposition::reconstruct() const {
  return eigenvectors * eigenvalues.asDiagonal() * eigenvectors.transpose();
}

EigenDecomposition sym_eig(const SymMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a.mat());
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::InvalidMatrix, "eigensolver did not converge");
  }
  // Eigen returns ascending order; callers expect descending.
  EigenDecomposition dec;
  dec.eigenvalues = solver.eigenvalues().reverse();
  dec.eigenvectors = solver.eigenvectors().rowwise().reverse();
  return dec;
}

SymMatrix psd_power(const SymMatrix& a, double p, double clamp_tol) {
  if (!(p > 0)) {
    throw Error(ErrorCode::InvalidConfig, "power must be positive");
  }
  EigenDecomposition dec = sym_eig(a);
  const double w_max = std::max(dec.eigenvalues(0), 0.0);
  const double w_min = dec.eigenvalues(dec.eigenvalues.size() - 1);
  if (w_min < -clamp_tol * w_max) {
    throw Error(ErrorCode::NotPsd,
                "eigenvalue " + std::to_string(w_min) +
                    " below clamp threshold (largest " +
                    std::to_string(w_max) + ")");
  }
  Vector powered = dec.eigenvalues.cwiseMax(0.0).array().pow(p);
  return SymMatrix::from_symmetric_part(
      dec.eigenvectors * powered.asDiagonal() * dec.eigenvectors.transpose());
}

SymMatrix symmetrized_sqrt(const Matrix& b) {
  if (b.rows() != b.cols() || b.rows() == 0) {
    throw Error(ErrorCode::InvalidMatrix, "matrix is not square");
  }
  require_finite(b, "matrix");
  Eigen::BDCSVD<Matrix> svd(b, Eigen::ComputeThinU);
  return SymMatrix::from_symmetric_part(
      svd.matrixU() * svd.singularValues().asDiagonal() *
      svd.matrixU().transpose());
}

double cosine_sim(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeError, "cosine_sim shape mismatch");
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    throw Error(ErrorCode::DegenerateInput, "cosine_sim of zero matrix");
  }
  const double c = a.cwiseProduct(b).sum() / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

double pearson_corr(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeError, "pearson_corr shape mismatch");
  }
  if (a.size() < 2) {
    throw Error(ErrorCode::DegenerateInput, "pearson_corr needs >= 2 entries");
  }
  Matrix ca = a.array() - a.mean();
  Matrix cb = b.array() - b.mean();
  if (ca.norm() == 0.0 || cb.norm() == 0.0) {
    throw Error(ErrorCode::DegenerateInput, "pearson_corr of constant matrix");
  }
  return cosine_sim(ca, cb);
}

// ---- serialization ----------------------------------------------------------

std::string matrix_to_csv(const Matrix& m) {
  std::ostringstream out;
  out.precision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
  return out.str();
}

Matrix matrix_from_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw Error(ErrorCode::ParseError,
                    "non-numeric CSV cell '" + cell + "' at row " +
                        std::to_string(rows.size() + 1));
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorCode::ParseError,
                  "ragged CSV row " + std::to_string(rows.size() + 1));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw Error(ErrorCode::ParseError, "empty CSV matrix");
  }
  Matrix m(rows.size(), rows.front().size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = rows[i][j];
  return m;
}

void save_matrix_csv(const Matrix& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::FormatError, "cannot open " + path + " for writing");
  }
  out << matrix_to_csv(m);
}

Matrix load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::FormatError, "cannot open " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return matrix_from_csv(buf.str());
}

std::string matrix_to_json(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorCode::ShapeError, "JSON matrix form is square-only");
  }
  nlohmann::json j;
  j["dim"] = m.rows();
  std::vector<double> entries;
  entries.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index k = 0; k < m.cols(); ++k)
      entries.push_back(m(i, k));
  j["entries"] = entries;
  return j.dump();
}

Matrix matrix_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  if (!j.contains("dim") || !j.contains("entries")) {
    throw Error(ErrorCode::ParseError, "matrix JSON needs {dim, entries}");
  }
  const auto dim = j["dim"].get<Eigen::Index>();
  const auto entries = j["entries"].get<std::vector<double>>();
  if (dim <= 0 || entries.size() != static_cast<std::size_t>(dim * dim)) {
    throw Error(ErrorCode::ParseError, "matrix JSON entry count mismatch");
  }
  Matrix m(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index k = 0; k < dim; ++k)
      m(i, k) = entries[static_cast<std::size_t>(i * dim + k)];
  return m;
}

}  // namespace factrfm

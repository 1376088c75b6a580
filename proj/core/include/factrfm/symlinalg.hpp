#pragma once

#include <Eigen/Core>

#include <string>

#include "factrfm/error.hpp"

namespace factrfm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense symmetric matrix. Construction enforces symmetry up to
/// 1e-12 * max(1, max|entry|) and rejects non-finite entries; the stored
/// matrix is exactly symmetric (the two triangles are averaged).
class SymMatrix {
 public:
  explicit SymMatrix(Matrix m);

  static SymMatrix identity(Eigen::Index dim);
  static SymMatrix zero(Eigen::Index dim);
  /// Builds from (M + M^T)/2 without the symmetry tolerance check. For
  /// resymmetrizing results of matrix products that are symmetric in exact
  /// arithmetic.
  static SymMatrix from_symmetric_part(const Matrix& m);

  Eigen::Index dim() const { return m_.rows(); }
  const Matrix& mat() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

 private:
  struct Unchecked {};
  SymMatrix(Matrix m, Unchecked) : m_(std::move(m)) {}
  Matrix m_;
};

/// Spectral factorization A = V diag(w) V^T with eigenvalues in descending
/// order and orthonormal eigenvector columns.
struct EigenDecomposition {
  Vector eigenvalues;
  Matrix eigenvectors;

  Matrix reconstruct() const;
};

EigenDecomposition sym_eig(const SymMatrix& a);

/// V max(w, 0)^p V^T. Eigenvalues below -clamp_tol * max(w_max, 0) raise
/// NotPsd; smaller negatives are treated as roundoff and clamped to zero.
SymMatrix psd_power(const SymMatrix& a, double p, double clamp_tol = 1e-8);

/// sqrt(B B^T) = U S U^T for B = U S V^T. Defined (and p.s.d.) for every
/// finite square B, unlike a direct matrix square root.
SymMatrix symmetrized_sqrt(const Matrix& b);

/// Frobenius inner product over the product of Frobenius norms, in [-1, 1].
double cosine_sim(const Matrix& a, const Matrix& b);

/// cosine_sim of the mean-centered flattenings, in [-1, 1]. Invariant under
/// entrywise affine maps a*X + b with a > 0.
double pearson_corr(const Matrix& a, const Matrix& b);

// Row-major CSV and JSON {"dim": d, "entries": [...]} serialization, shared
// by the CLI for plot export. CSV handles rectangular matrices; the JSON
// form is for square matrices only.
std::string matrix_to_csv(const Matrix& m);
Matrix matrix_from_csv(const std::string& text);
void save_matrix_csv(const Matrix& m, const std::string& path);
Matrix load_matrix_csv(const std::string& path);
std::string matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const std::string& text);

}  // namespace factrfm

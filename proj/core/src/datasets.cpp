#include "factrfm/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace factrfm {

void Dataset::validate() const {
  if (X.rows() == 0 || X.cols() == 0 || Y.cols() == 0) {
    throw Error(ErrorCode::InvalidConfig, "dataset has empty dimensions");
  }
  if (Y.rows() != X.rows()) {
    throw Error(ErrorCode::ShapeError, "X/Y row mismatch");
  }
  if (!X.allFinite() || !Y.allFinite()) {
    throw Error(ErrorCode::InvalidMatrix, "dataset has non-finite entries");
  }
  if (weights.size() != 0 && weights.size() != X.rows()) {
    throw Error(ErrorCode::ShapeError, "weight vector length mismatch");
  }
}

void SeparationConfig::validate() const {
  auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!in_unit(mixture_weight) || !in_unit(signal_scale) || !in_unit(weight_decay)) {
    throw Error(ErrorCode::InvalidConfig,
                "separation hyperparameters must lie in (0,1)");
  }
}

double parity_label(const Vector& x, const std::vector<int>& support,
                    bool labels01) {
  double prod = 1.0;
  for (int idx : support) prod *= x(idx);
  const double sign = prod > 0 ? 1.0 : -1.0;
  return labels01 ? (sign > 0 ? 1.0 : 0.0) : sign;
}

namespace {

std::vector<int> sample_without_replacement(int k, int d, std::mt19937_64& rng) {
  std::vector<int> all(d);
  std::iota(all.begin(), all.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, d - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

Dataset sample_parity_points(int n, int d, const std::vector<int>& support,
                             bool labels01, std::mt19937_64& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Dataset out;
  out.X.resize(n, d);
  out.Y.resize(n, 1);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      out.X(i, j) = coin(rng) ? scale : -scale;
    }
    out.Y(i, 0) = parity_label(out.X.row(i), support, labels01);
  }
  return out;
}

}  // namespace

TrainTest gen_sparse_parity(int n, int d, int k, std::uint64_t seed,
                            bool labels01, int test_n) {
  if (k < 1 || k > d || n < 1 || d < 1) {
    throw Error(ErrorCode::InvalidConfig, "need 1 <= k <= d and n >= 1");
  }
  std::mt19937_64 rng(seed);
  const std::vector<int> support = sample_without_replacement(k, d, rng);

  TrainTest tt;
  tt.train = sample_parity_points(n, d, support, labels01, rng);
  tt.test = sample_parity_points(test_n, d, support, labels01, rng);
  for (Dataset* ds : {&tt.train, &tt.test}) {
    ds->meta.task = "sparse-parity";
    ds->meta.seed = seed;
    ds->meta.support = support;
    ds->meta.label_encoding = labels01 ? "zero-one" : "pm-one";
  }
  return tt;
}

TrainTest gen_modular_addition(int modulus, double train_fraction,
                               std::uint64_t seed) {
  if (modulus < 2) {
    throw Error(ErrorCode::InvalidConfig, "modulus must be >= 2");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "train fraction must be in (0,1)");
  }
  const int p = modulus;
  const int total = p * p;
  const int train_n = static_cast<int>(std::floor(train_fraction * total));
  if (train_n < 1 || train_n >= total) {
    throw Error(ErrorCode::InvalidConfig, "degenerate train/test split");
  }

  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  auto fill = [&](Dataset& ds, int begin, int count) {
    ds.X = Matrix::Zero(count, 2 * p);
    ds.Y = Matrix::Zero(count, p);
    for (int i = 0; i < count; ++i) {
      const int pair = order[begin + i];
      const int a = pair / p;
      const int b = pair % p;
      ds.X(i, a) = 1.0;
      ds.X(i, p + b) = 1.0;
      ds.Y(i, (a + b) % p) = 1.0;
    }
    ds.meta.task = "modular-addition";
    ds.meta.seed = seed;
    ds.meta.modulus = p;
    ds.meta.label_encoding = "one-hot";
  };

  TrainTest tt;
  fill(tt.train, 0, train_n);
  fill(tt.test, train_n, total - train_n);
  return tt;
}

Dataset gen_separation(const SeparationConfig& config) {
  config.validate();
  const double p = config.mixture_weight;
  const double tau = config.signal_scale;

  Dataset ds;
  ds.X.resize(82, 4);
  ds.Y.resize(82, 1);
  ds.weights.resize(82);
  int row = 0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c)
        for (int e = 0; e < 3; ++e) {
          ds.X.row(row) << a, b, c, e;
          ds.weights(row) = p / 81.0;
          ++row;
        }
  ds.X.row(row) << 1, 1, 0, 0;
  ds.weights(row) = 1.0 - p;

  for (int i = 0; i < 82; ++i) {
    ds.Y(i, 0) = tau * ds.X(i, 0) * ds.X(i, 1) + ds.X(i, 2) * ds.X(i, 3);
  }
  ds.meta.task = "separation";
  ds.meta.label_encoding = "real";
  ds.meta.mixture_weight = p;
  ds.meta.signal_scale = tau;
  return ds;
}

Dataset gen_deep_linear(int n, int d, int c, std::uint64_t seed) {
  if (n < 1 || d < 1 || c < 1) {
    throw Error(ErrorCode::InvalidConfig, "n, d, c must be positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Dataset ds;
  ds.X.resize(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) ds.X(i, j) = gauss(rng);

  Matrix teacher(c, d);
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < d; ++j) teacher(i, j) = gauss(rng);

  ds.Y = ds.X * teacher.transpose();
  ds.meta.task = "deep-linear";
  ds.meta.seed = seed;
  ds.meta.label_encoding = "real";
  ds.meta.teacher = teacher;
  return ds;
}

TrainTest gen_teacher_classification(int n, int d, int c, int teacher_hidden,
                                     std::uint64_t seed, int test_n) {
  if (n < 1 || d < 1 || c < 2 || teacher_hidden < 1) {
    throw Error(ErrorCode::InvalidConfig, "bad teacher-classification shape");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  auto uniform_layer = [&](int rows, int cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix w(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) w(i, j) = u(rng);
    return w;
  };
  // Teacher logits get a mild scale-up so argmax labels are not dominated
  // by one class.
  Matrix w1 = uniform_layer(teacher_hidden, d) * 2.0;
  Matrix w2 = uniform_layer(c, teacher_hidden) * 2.0;

  auto sample = [&](int count) {
    Dataset ds;
    ds.X.resize(count, d);
    for (int i = 0; i < count; ++i)
      for (int j = 0; j < d; ++j) ds.X(i, j) = gauss(rng);
    Matrix hidden = (ds.X * w1.transpose()).cwiseMax(0.0);
    Matrix logits = hidden * w2.transpose();
    ds.Y = Matrix::Zero(count, c);
    for (int i = 0; i < count; ++i) {
      Eigen::Index best;
      logits.row(i).maxCoeff(&best);
      ds.Y(i, best) = 1.0;
    }
    ds.meta.task = "teacher-classification";
    ds.meta.seed = seed;
    ds.meta.label_encoding = "one-hot";
    return ds;
  };

  TrainTest tt;
  tt.train = sample(n);
  tt.test = sample(test_n > 0 ? test_n : n);
  return tt;
}

// ---- CSV loader -------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

double parse_cell(const std::string& cell, int row, const std::string& col) {
  try {
    std::size_t used = 0;
    double v = std::stod(cell, &used);
    while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, "non-numeric cell '" + cell +
                                           "' at row " + std::to_string(row) +
                                           ", column '" + col + "'");
  }
}

}  // namespace

Dataset load_csv_tabular(const std::string& path, const std::string& label_column,
                         Normalization normalization) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::ParseError, "cannot open " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorCode::ParseError, path + " is empty (header row required)");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end()) {
    throw Error(ErrorCode::InvalidConfig,
                "label column '" + label_column + "' not in header");
  }
  const std::size_t label_idx =
      static_cast<std::size_t>(label_it - header.begin());

  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::ParseError,
                  "ragged row " + std::to_string(lineno) + " in " + path);
    }
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      row[j] = parse_cell(cells[j], lineno, header[j]);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw Error(ErrorCode::ParseError, path + " has no data rows");
  }

  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index d = static_cast<Eigen::Index>(header.size()) - 1;

  Dataset ds;
  ds.X.resize(n, d);
  Vector labels(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index col = 0;
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j == label_idx) {
        labels(i) = rows[i][j];
      } else {
        ds.X(i, col++) = rows[i][j];
      }
    }
  }

  if (normalization == Normalization::ZScore) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double mean = ds.X.col(j).mean();
      const double var = (ds.X.col(j).array() - mean).square().mean();
      const double sd = std::sqrt(var);
      if (sd < 1e-12) {
        ds.X.col(j).setZero();  // constant column: variance floor
      } else {
        ds.X.col(j) = (ds.X.col(j).array() - mean) / sd;
      }
    }
  }

  // One-hot encode when the label alphabet is a small set of integers.
  std::map<double, int> classes;
  bool integral = true;
  for (Eigen::Index i = 0; i < n && integral; ++i) {
    if (std::abs(labels(i) - std::round(labels(i))) > 1e-9) integral = false;
    classes.emplace(labels(i), 0);
    if (classes.size() > 50) integral = false;
  }
  if (integral && classes.size() >= 2) {
    int next = 0;
    for (auto& kv : classes) kv.second = next++;
    ds.Y = Matrix::Zero(n, static_cast<Eigen::Index>(classes.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
      ds.Y(i, classes.at(labels(i))) = 1.0;
    }
    ds.meta.label_encoding = "one-hot";
  } else {
    ds.Y = labels;
    ds.meta.label_encoding = "real";
  }
  ds.meta.task = "csv:" + std::filesystem::path(path).filename().string();
  return ds;
}

// ---- IDX loader -------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) {
    throw Error(ErrorCode::FormatError, "truncated IDX header in " + path);
  }
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

Dataset load_idx_images(const std::string& images_path,
                        const std::string& labels_path, int limit) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw Error(ErrorCode::FormatError, "cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw Error(ErrorCode::FormatError, "cannot open " + labels_path);

  if (read_be32(img, images_path) != 0x00000803u) {
    throw Error(ErrorCode::FormatError, images_path + ": bad image magic");
  }
  const std::uint32_t n_images = read_be32(img, images_path);
  const std::uint32_t rows = read_be32(img, images_path);
  const std::uint32_t cols = read_be32(img, images_path);

  if (read_be32(lab, labels_path) != 0x00000801u) {
    throw Error(ErrorCode::FormatError, labels_path + ": bad label magic");
  }
  const std::uint32_t n_labels = read_be32(lab, labels_path);
  if (n_labels != n_images) {
    throw Error(ErrorCode::FormatError, "image/label count mismatch");
  }

  const std::uint32_t n =
      limit > 0 ? std::min<std::uint32_t>(n_images, static_cast<std::uint32_t>(limit))
                : n_images;
  const std::uint32_t d = rows * cols;
  if (n == 0 || d == 0) {
    throw Error(ErrorCode::FormatError, "empty IDX file");
  }

  std::vector<unsigned char> pixel_buf(d);
  std::vector<unsigned char> label_buf(n);
  lab.read(reinterpret_cast<char*>(label_buf.data()), n);
  if (!lab) throw Error(ErrorCode::FormatError, "truncated labels in " + labels_path);

  Dataset ds;
  ds.X.resize(n, d);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    img.read(reinterpret_cast<char*>(pixel_buf.data()), d);
    if (!img) throw Error(ErrorCode::FormatError, "truncated images in " + images_path);
    for (std::uint32_t j = 0; j < d; ++j) {
      ds.X(i, j) = static_cast<double>(pixel_buf[j]) / 255.0;
    }
    max_label = std::max(max_label, static_cast<int>(label_buf[i]));
  }
  const int c = std::max(max_label + 1, 10);
  ds.Y = Matrix::Zero(n, c);
  for (std::uint32_t i = 0; i < n; ++i) {
    ds.Y(i, label_buf[i]) = 1.0;
  }
  ds.meta.task = "idx:" + std::filesystem::path(images_path).filename().string();
  ds.meta.label_encoding = "one-hot";
  return ds;
}

// ---- persistence ------------------------------------------------------------

std::string task_meta_to_json(const TaskMeta& meta) {
  nlohmann::json j;
  j["task"] = meta.task;
  j["seed"] = meta.seed;
  j["labelEncoding"] = meta.label_encoding;
  if (!meta.support.empty()) j["support"] = meta.support;
  if (meta.modulus > 0) j["modulus"] = meta.modulus;
  if (meta.mixture_weight > 0) j["mixtureWeight"] = meta.mixture_weight;
  if (meta.signal_scale > 0) j["signalScale"] = meta.signal_scale;
  if (meta.teacher.size() > 0) {
    std::vector<double> entries;
    entries.reserve(static_cast<std::size_t>(meta.teacher.size()));
    for (Eigen::Index i = 0; i < meta.teacher.rows(); ++i)
      for (Eigen::Index k = 0; k < meta.teacher.cols(); ++k)
        entries.push_back(meta.teacher(i, k));
    j["teacher"] = {{"rows", meta.teacher.rows()},
                    {"cols", meta.teacher.cols()},
                    {"entries", entries}};
  }
  return j.dump(2);
}

void save_dataset(const Dataset& data, const std::string& dir,
                  const std::string& name) {
  data.validate();
  std::filesystem::create_directories(dir);
  const std::filesystem::path base = std::filesystem::path(dir) / name;
  save_matrix_csv(data.X, base.string() + "_X.csv");
  save_matrix_csv(data.Y, base.string() + "_Y.csv");
  if (data.weights.size() > 0) {
    save_matrix_csv(data.weights, base.string() + "_weights.csv");
  }
  std::ofstream meta(base.string() + ".meta.json");
  if (!meta) {
    throw Error(ErrorCode::FormatError, "cannot write dataset sidecar");
  }
  meta << task_meta_to_json(data.meta) << '\n';
}

}  // namespace factrfm

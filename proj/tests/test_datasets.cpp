#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "factrfm/datasets.hpp"
#include "helpers.hpp"

using namespace factrfm;
using namespace factrfm::testing;

TEST_CASE("sparse parity: k=1 label is the positive-coordinate indicator") {
  TrainTest tt = gen_sparse_parity(200, 8, 1, 42);
  const int s = tt.train.meta.support.at(0);
  for (Eigen::Index i = 0; i < tt.train.n(); ++i) {
    CHECK(tt.train.Y(i, 0) == (tt.train.X(i, s) > 0 ? 1.0 : 0.0));
  }
}

TEST_CASE("sparse parity: full d=4 cube has exactly 8 positive labels at k=2") {
  // brute-force enumeration over all 16 sign patterns
  const std::vector<int> support = {1, 3};
  int positives = 0;
  for (int mask = 0; mask < 16; ++mask) {
    Vector x(4);
    for (int j = 0; j < 4; ++j) x(j) = (mask >> j) & 1 ? 0.5 : -0.5;
    positives += parity_label(x, support, true) == 1.0 ? 1 : 0;
  }
  CHECK(positives == 8);
}

TEST_CASE("sparse parity: label balance on the full cube is 1/2 for d <= 16") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const int d = 2 + static_cast<int>(rng() % 9);  // up to 10 keeps 2^d small
    const int k = 1 + static_cast<int>(rng() % d);
    std::vector<int> support;
    for (int j = 0; j < k; ++j) support.push_back(j);
    long positives = 0;
    const long total = 1L << d;
    for (long mask = 0; mask < total; ++mask) {
      Vector x(d);
      for (int j = 0; j < d; ++j) x(j) = (mask >> j) & 1 ? 1.0 : -1.0;
      positives += parity_label(x, support, true) == 1.0 ? 1 : 0;
    }
    CHECK(positives * 2 == total);
  }
}

TEST_CASE("sparse parity: generators are deterministic and validated") {
  TrainTest a = gen_sparse_parity(50, 20, 3, 99);
  TrainTest b = gen_sparse_parity(50, 20, 3, 99);
  CHECK(a.train.X == b.train.X);
  CHECK(a.test.X == b.test.X);
  CHECK(a.train.meta.support == b.train.meta.support);
  CHECK(a.test.n() == 1000);
  CHECK_THROWS_AS(gen_sparse_parity(10, 4, 5, 0), Error);

  TrainTest pm = gen_sparse_parity(50, 10, 2, 1, /*labels01=*/false);
  for (Eigen::Index i = 0; i < pm.train.n(); ++i) {
    CHECK(std::abs(pm.train.Y(i, 0)) == 1.0);
  }
}

TEST_CASE("modular addition: p=2 truth table") {
  TrainTest tt = gen_modular_addition(2, 0.5, 3);
  CHECK(tt.train.n() == 2);
  CHECK(tt.test.n() == 2);
  // every example encodes (a, b) as two one-hots and the label (a+b) mod 2
  for (const Dataset* ds : {&tt.train, &tt.test}) {
    for (Eigen::Index i = 0; i < ds->n(); ++i) {
      int a = ds->X(i, 0) == 1.0 ? 0 : 1;
      int b = ds->X(i, 2) == 1.0 ? 0 : 1;
      Eigen::Index label;
      ds->Y.row(i).maxCoeff(&label);
      CHECK(static_cast<int>(label) == (a + b) % 2);
    }
  }
}

TEST_CASE("modular addition: encoding and split invariants") {
  TrainTest tt = gen_modular_addition(61, 0.5, 17);
  CHECK(tt.train.n() == 1860);
  CHECK(tt.test.n() == 1861);
  CHECK(tt.train.input_dim() == 122);
  CHECK(tt.train.output_dim() == 61);

  for (const Dataset* ds : {&tt.train, &tt.test}) {
    for (Eigen::Index i = 0; i < ds->n(); ++i) {
      CHECK(ds->X.row(i).sum() == 2.0);
      CHECK(ds->Y.row(i).sum() == 1.0);
    }
  }

  // disjoint and covering over all p^2 pairs
  auto key = [](const Dataset& ds, Eigen::Index i) {
    int a = -1, b = -1;
    for (int j = 0; j < 61; ++j) {
      if (ds.X(i, j) == 1.0) a = j;
      if (ds.X(i, 61 + j) == 1.0) b = j;
    }
    return a * 61 + b;
  };
  std::set<int> seen;
  for (Eigen::Index i = 0; i < tt.train.n(); ++i) seen.insert(key(tt.train, i));
  CHECK(seen.size() == 1860);
  for (Eigen::Index i = 0; i < tt.test.n(); ++i) {
    CHECK(seen.insert(key(tt.test, i)).second);
  }
  CHECK(seen.size() == 3721);
}

TEST_CASE("separation population dataset") {
  SeparationConfig config;
  config.mixture_weight = 1e-5;
  config.signal_scale = 0.02;
  config.weight_decay = 1e-5;
  Dataset ds = gen_separation(config);

  CHECK(ds.n() == 82);
  CHECK(ds.weights.sum() == 1.0);

  // the atom and a lattice point, labels from f*(x) = tau x1 x2 + x3 x4
  CHECK(ds.X.row(81) == Eigen::RowVector4d(1, 1, 0, 0));
  CHECK(ds.Y(81, 0) == doctest::Approx(0.02));
  bool found = false;
  for (int i = 0; i < 81; ++i) {
    if (ds.X.row(i) == Eigen::RowVector4d(0, 0, 1, 1)) {
      CHECK(ds.Y(i, 0) == doctest::Approx(1.0));
      found = true;
    }
  }
  CHECK(found);
  for (int i = 0; i < 82; ++i) {
    for (int j = 0; j < 4; ++j) {
      CHECK((ds.X(i, j) == 0.0 || ds.X(i, j) == 1.0 || ds.X(i, j) == 2.0));
    }
  }

  SeparationConfig bad = config;
  bad.signal_scale = 1.5;
  CHECK_THROWS_AS(gen_separation(bad), Error);
}

TEST_CASE("deep linear data: exact labels and near-isotropic inputs") {
  Dataset ds = gen_deep_linear(5000, 10, 5, 12);
  CHECK(ds.n() == 5000);
  CHECK(ds.meta.teacher.rows() == 5);
  CHECK(ds.meta.teacher.cols() == 10);
  CHECK((ds.Y - ds.X * ds.meta.teacher.transpose()).norm() == 0.0);

  // empirical covariance close to identity: entries are averages of n
  // products with unit variance, so a 3.5 sigma band is 3.5 / sqrt(n)
  Matrix cov = ds.X.transpose() * ds.X / 5000.0;
  CHECK((cov - Matrix::Identity(10, 10)).cwiseAbs().maxCoeff() <
        3.5 / std::sqrt(5000.0));
}

TEST_CASE("teacher classification generator") {
  TrainTest tt = gen_teacher_classification(300, 20, 5, 16, 9, 200);
  CHECK(tt.train.n() == 300);
  CHECK(tt.test.n() == 200);
  CHECK(tt.train.output_dim() == 5);
  for (Eigen::Index i = 0; i < tt.train.n(); ++i) {
    CHECK(tt.train.Y.row(i).sum() == 1.0);
  }
  // labels should not collapse onto a single class
  Vector counts = tt.train.Y.colwise().sum();
  CHECK(counts.maxCoeff() < 250.0);
}

TEST_CASE("CSV loader: hand-written file") {
  const auto dir = std::filesystem::temp_directory_path() / "factrfm_csv_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "tiny.csv";
  {
    std::ofstream out(path);
    out << "a,b,label\n1,2,0\n3,4,1\n5,6,0\n";
  }
  Dataset ds = load_csv_tabular(path.string(), "label", Normalization::None);
  CHECK(ds.n() == 3);
  CHECK(ds.input_dim() == 2);
  CHECK(ds.output_dim() == 2);  // one-hot over {0, 1}
  CHECK(ds.X(1, 0) == 3.0);
  CHECK(ds.Y(1, 1) == 1.0);

  // constant column under z-score becomes zeros
  {
    std::ofstream out(path);
    out << "a,b,label\n7,2,0\n7,4,1\n7,9,1\n";
  }
  Dataset z = load_csv_tabular(path.string(), "label", Normalization::ZScore);
  CHECK(z.X.col(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::abs(z.X.col(1).mean()) < 1e-12);

  {
    std::ofstream out(path);
    out << "a,b,label\n1,2,0\n3,1\n";
  }
  CHECK_THROWS_AS(load_csv_tabular(path.string(), "label", Normalization::None), Error);
  {
    std::ofstream out(path);
    out << "a,b,label\n1,oops,0\n";
  }
  CHECK_THROWS_WITH_AS(load_csv_tabular(path.string(), "label", Normalization::None),
                       doctest::Contains("column 'b'"), Error);
  CHECK_THROWS_AS(load_csv_tabular(path.string(), "missing", Normalization::None), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("CSV loader: iris-like file gets one-hot classes") {
  const auto dir = std::filesystem::temp_directory_path() / "factrfm_csv_test2";
  std::filesystem::create_directories(dir);
  const auto path = dir / "iris_like.csv";
  {
    std::ofstream out(path);
    out << "f0,f1,f2,f3,species\n";
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss;
    for (int i = 0; i < 150; ++i) {
      out << gauss(rng) << ',' << gauss(rng) << ',' << gauss(rng) << ','
          << gauss(rng) << ',' << i % 3 << '\n';
    }
  }
  Dataset ds = load_csv_tabular(path.string(), "species", Normalization::ZScore);
  CHECK(ds.X.rows() == 150);
  CHECK(ds.X.cols() == 4);
  CHECK(ds.Y.rows() == 150);
  CHECK(ds.Y.cols() == 3);
  std::filesystem::remove_all(dir);
}

namespace {

void write_be32(std::ostream& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace

TEST_CASE("IDX loader: synthetic fixture round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "factrfm_idx_test";
  std::filesystem::create_directories(dir);
  const auto images = dir / "imgs";
  const auto labels = dir / "labels";
  {
    std::ofstream out(images, std::ios::binary);
    write_be32(out, 0x00000803u);
    write_be32(out, 2);  // two images
    write_be32(out, 2);  // 2 x 2 pixels
    write_be32(out, 2);
    const unsigned char pix[8] = {0, 255, 128, 64, 255, 255, 0, 0};
    out.write(reinterpret_cast<const char*>(pix), 8);
  }
  {
    std::ofstream out(labels, std::ios::binary);
    write_be32(out, 0x00000801u);
    write_be32(out, 2);
    const unsigned char lab[2] = {3, 7};
    out.write(reinterpret_cast<const char*>(lab), 2);
  }
  Dataset ds = load_idx_images(images.string(), labels.string(), 0);
  CHECK(ds.n() == 2);
  CHECK(ds.input_dim() == 4);
  CHECK(ds.X(0, 0) == 0.0);
  CHECK(ds.X(0, 1) == 1.0);  // pixel 255 -> 1.0
  CHECK(ds.X(0, 2) == doctest::Approx(128.0 / 255.0));
  CHECK(ds.Y(0, 3) == 1.0);
  CHECK(ds.Y(1, 7) == 1.0);

  Dataset limited = load_idx_images(images.string(), labels.string(), 1);
  CHECK(limited.n() == 1);

  // bad magic
  {
    std::ofstream out(images, std::ios::binary);
    write_be32(out, 0x00000802u);
    write_be32(out, 1);
    write_be32(out, 2);
    write_be32(out, 2);
  }
  CHECK_THROWS_AS(load_idx_images(images.string(), labels.string(), 0), Error);

  // truncated pixel payload
  {
    std::ofstream out(images, std::ios::binary);
    write_be32(out, 0x00000803u);
    write_be32(out, 2);
    write_be32(out, 2);
    write_be32(out, 2);
    out.put(1);
  }
  CHECK_THROWS_AS(load_idx_images(images.string(), labels.string(), 0), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("save_dataset writes matrices plus a metadata sidecar") {
  const auto dir = std::filesystem::temp_directory_path() / "factrfm_save_test";
  std::filesystem::remove_all(dir);
  TrainTest tt = gen_sparse_parity(20, 6, 2, 5);
  save_dataset(tt.train, dir.string(), "parity");
  CHECK(load_matrix_csv((dir / "parity_X.csv").string()) == tt.train.X);
  CHECK(load_matrix_csv((dir / "parity_Y.csv").string()) == tt.train.Y);
  std::ifstream meta(dir / "parity.meta.json");
  std::string text((std::istreambuf_iterator<char>(meta)),
                   std::istreambuf_iterator<char>());
  CHECK(text.find("sparse-parity") != std::string::npos);
  CHECK(text.find("support") != std::string::npos);
  std::filesystem::remove_all(dir);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include <Eigen/Dense>

#include "factrfm/datasets.hpp"
#include "factrfm/diagnostics.hpp"
#include "factrfm/nn.hpp"
#include "helpers.hpp"

using namespace factrfm;
using namespace factrfm::testing;

namespace {

MlpModel random_model(const std::vector<int>& dims, Activation act,
                      std::uint64_t seed, bool bias = false) {
  std::vector<Activation> acts(dims.size() - 2, act);
  return MlpModel::init(dims, acts, seed, bias);
}

/// Draws models until every ReLU pre-activation clears the finite-difference
/// step, so the loss is smooth in the probed neighborhood.
MlpModel margin_safe_model(const std::vector<int>& dims, Activation act,
                           const Matrix& x, std::uint64_t& seed,
                           double margin = 1e-3) {
  for (;; ++seed) {
    MlpModel model = random_model(dims, act, seed);
    if (act != Activation::Relu || relu_margin(model, x) > margin) return model;
  }
}

}  // namespace

TEST_CASE("single linear layer gradient by hand") {
  MlpModel model;
  model.weights.push_back((Matrix(1, 2) << 0.5, -1.0).finished());
  model.activations.push_back(Activation::Identity);

  Matrix x(1, 2);
  x << 2.0, 1.0;
  Matrix y(1, 1);
  y << 3.0;
  const double lambda = 0.1;

  FbOptions options;
  options.weight_decay = lambda;
  ForwardBackward fb = forward_backward(model, x, y, options);

  const double yhat = 0.5 * 2.0 - 1.0;
  CHECK(fb.data_loss == doctest::Approx(0.5 * (yhat - 3.0) * (yhat - 3.0)));
  Matrix expected = (yhat - 3.0) * x + lambda * model.weights[0];
  CHECK(rel_error(fb.weight_grads[0], expected) < 1e-14);
}

TEST_CASE("zero weights and zero targets give zero loss and gradients") {
  MlpModel model;
  model.weights.push_back(Matrix::Zero(2, 3));
  model.weights.push_back(Matrix::Zero(1, 2));
  model.activations = {Activation::Relu, Activation::Identity};

  std::mt19937_64 rng(50);
  Matrix x = random_matrix(4, 3, rng);
  Matrix y = Matrix::Zero(4, 1);
  ForwardBackward fb = forward_backward(model, x, y);
  CHECK(fb.data_loss == 0.0);
  CHECK(fb.reg_loss == 0.0);
  CHECK(fb.weight_grads[0].norm() == 0.0);
  CHECK(fb.weight_grads[1].norm() == 0.0);
}

TEST_CASE("parameter gradients match central finite differences") {
  std::uint64_t seed = 60;
  std::mt19937_64 rng(61);
  const double step = 1e-5;
  for (Activation act :
       {Activation::Relu, Activation::Quadratic, Activation::Identity}) {
    CAPTURE(activation_name(act));
    for (int trial = 0; trial < 12; ++trial) {
      Matrix x = random_matrix(6, 4, rng);
      Matrix y = random_matrix(6, 2, rng);
      MlpModel model = margin_safe_model({4, 5, 3, 2}, act, x, seed);
      const double lambda = trial % 2 == 0 ? 0.0 : 1e-2;
      FbOptions options;
      options.weight_decay = lambda;
      ForwardBackward fb = forward_backward(model, x, y, options);

      auto loss = [&]() {
        return forward_backward(model, x, y, options).total_loss();
      };
      for (int l = 0; l < model.num_layers(); ++l) {
        Matrix fd(model.weights[l].rows(), model.weights[l].cols());
        for (Eigen::Index i = 0; i < fd.rows(); ++i)
          for (Eigen::Index j = 0; j < fd.cols(); ++j)
            fd(i, j) = central_difference(loss, model.weights[l](i, j), step);
        CHECK(rel_error(fb.weight_grads[l], fd) <= 1e-5);
      }
      ++seed;
    }
  }
}

TEST_CASE("bundle: chain consistency of loss gradients") {
  std::mt19937_64 rng(62);
  std::uint64_t seed = 70;
  for (int trial = 0; trial < 100; ++trial) {
    Matrix x = random_matrix(5, 3, rng);
    Matrix y = random_matrix(5, 2, rng);
    MlpModel model = random_model({3, 4, 4, 2}, Activation::Quadratic, seed++);
    ForwardBackward fb = forward_backward(model, x, y);
    for (int l = 0; l < model.num_layers(); ++l) {
      const LayerGradients& lg = fb.bundle.layers[l];
      // grad_h loss = W^T grad_{Wh} loss, rowwise
      Matrix expected = lg.dloss_output * model.weights[l];
      CHECK(rel_error(lg.dloss_input, expected) <= 1e-10);
      // grad_h loss = (grad_h f) (dloss/df), per sample
      Matrix yhat = model.forward(x);
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Vector via_jacobian =
            lg.jacobian_input(i) * (yhat.row(i) - y.row(i)).transpose();
        CHECK((lg.dloss_input.row(i).transpose() - via_jacobian).norm() <=
              1e-10 * std::max(1.0, via_jacobian.norm()));
      }
    }
  }
}

TEST_CASE("bundle: layer-input gradients match finite differences") {
  std::uint64_t seed = 80;
  std::mt19937_64 rng(63);
  const double step = 1e-5;
  Matrix x = random_matrix(4, 3, rng);
  Matrix y = random_matrix(4, 2, rng);
  MlpModel model = margin_safe_model({3, 5, 4, 2}, Activation::Relu, x, seed);
  ForwardBackward fb = forward_backward(model, x, y);

  for (int layer = 1; layer <= model.num_layers(); ++layer) {
    const LayerGradients& lg = fb.bundle.layers[layer - 1];
    Matrix h = lg.input;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < h.cols(); ++j) {
        auto local_loss = [&]() {
          Matrix out = forward_from_layer(model, layer, h);
          return 0.5 * (out.row(i) - y.row(i)).squaredNorm();
        };
        const double fd = central_difference(local_loss, h(i, j), step);
        CHECK(lg.dloss_input(i, j) ==
              doctest::Approx(fd).epsilon(1e-4).scale(std::max(1.0, std::abs(fd))));
      }
    }
  }
}

TEST_CASE("non-finite activations raise NumericOverflow") {
  MlpModel model = random_model({2, 3, 1}, Activation::Quadratic, 5);
  model.weights[0] *= 1e200;
  Matrix x(1, 2);
  x << 1.0, 1.0;
  Matrix y(1, 1);
  y << 0.0;
  CHECK_THROWS_WITH_AS(forward_backward(model, x, y),
                       doctest::Contains("NumericOverflow"), Error);
}

TEST_CASE("train: heavy weight decay shrinks the parameters") {
  std::mt19937_64 rng(64);
  Matrix x = random_matrix(30, 4, rng);
  Matrix y = random_matrix(30, 2, rng);
  MlpModel model = random_model({4, 8, 2}, Activation::Relu, 3);
  const double before = std::sqrt(model.weight_norm_sq());

  TrainConfig config;
  config.weight_decay = 10.0;
  config.learning_rate = 0.05;
  config.epochs = 50;
  config.batch_size = 0;
  config.schedule = LrSchedule::Constant;
  TrainResult result = train(model, x, y, config);
  CHECK(std::sqrt(result.model.weight_norm_sq()) < before);
}

TEST_CASE("train: deterministic loss curves for a fixed seed") {
  std::mt19937_64 rng(65);
  Matrix x = random_matrix(40, 5, rng);
  Matrix y = random_matrix(40, 2, rng);
  TrainConfig config;
  config.epochs = 12;
  config.batch_size = 8;
  config.seed = 77;
  config.learning_rate = 0.05;

  TrainResult a = train(random_model({5, 8, 2}, Activation::Relu, 10), x, y, config);
  TrainResult b = train(random_model({5, 8, 2}, Activation::Relu, 10), x, y, config);
  REQUIRE(a.curve.size() == b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].data_loss == b.curve[i].data_loss);
  }
  for (int l = 0; l < a.model.num_layers(); ++l) {
    CHECK(a.model.weights[l] == b.model.weights[l]);
  }
}

TEST_CASE("train: divergence raises with the curve attached") {
  std::mt19937_64 rng(66);
  Matrix x = random_matrix(20, 3, rng, 2.0);
  Matrix y = random_matrix(20, 1, rng);
  MlpModel model = random_model({3, 6, 1}, Activation::Quadratic, 4);
  TrainConfig config;
  config.learning_rate = 1e6;
  config.schedule = LrSchedule::Constant;
  config.epochs = 200;
  config.batch_size = 0;
  config.trace_every = 1;
  CHECK_THROWS_AS(train(model, x, y, config), TrainDivergedError);
}

TEST_CASE("train: deep linear layers become balanced") {
  Dataset data = gen_deep_linear(400, 6, 3, 21);
  TrainConfig config;
  config.optimizer = Optimizer::SgdMomentum;
  config.learning_rate = 5e-3;
  config.momentum = 0.9;
  config.weight_decay = 1e-2;
  config.schedule = LrSchedule::Cosine;
  config.batch_size = 64;
  config.epochs = 800;
  config.seed = 3;
  config.trace_every = 100;

  std::vector<int> dims = {6, 16, 16, 3};
  MlpModel model = MlpModel::init(
      dims, {Activation::Identity, Activation::Identity}, 11);
  TrainResult result = train(std::move(model), data.X, data.Y, config);

  // singular values shared across layers at the weight-decayed optimum
  std::vector<Vector> spectra;
  for (const Matrix& w : result.model.weights) {
    Eigen::JacobiSVD<Matrix> svd(w);
    spectra.push_back(svd.singularValues());
  }
  for (int j = 0; j < 3; ++j) {
    double lo = 1e300, hi = 0;
    for (const auto& s : spectra) {
      lo = std::min(lo, s(j));
      hi = std::max(hi, s(j));
    }
    CHECK((hi - lo) / hi <= 1e-2);
  }
}

TEST_CASE("feature_estimates at an exact ridge critical point: FACT == W^T W") {
  std::mt19937_64 rng(67);
  Matrix x = random_matrix(50, 3, rng);
  Matrix y = random_matrix(50, 2, rng);
  const double lambda = 0.05;

  MlpModel model;
  model.weights.push_back(ridge_regression_optimum(x, y, lambda));
  model.activations.push_back(Activation::Identity);

  auto estimates = feature_estimates(model, x, y, lambda, 1);
  const Matrix& w = model.weights[0];
  for (const auto& est : estimates) {
    if (est.kind == EstimateKind::Fact) {
      CHECK(rel_error(est.matrix, Matrix(w.transpose() * w)) <= 1e-10);
    }
    if (est.kind == EstimateKind::BFact) {
      CHECK(rel_error(est.matrix, Matrix(w * w.transpose())) <= 1e-10);
    }
  }
}

TEST_CASE("feature_estimates: zero loss gradients zero out FACT and eNFA") {
  MlpModel model;
  model.weights.push_back(Matrix::Zero(2, 3));
  model.activations.push_back(Activation::Identity);
  std::mt19937_64 rng(68);
  Matrix x = random_matrix(10, 3, rng);
  Matrix y = Matrix::Zero(10, 2);
  auto estimates = feature_estimates(model, x, y, 1e-3, 1);
  for (const auto& est : estimates) {
    if (est.kind == EstimateKind::Fact || est.kind == EstimateKind::ENfa) {
      CHECK(est.matrix.norm() == 0.0);
    }
  }
  CHECK_THROWS_AS(feature_estimates(model, x, y, 0.0, 1), Error);
}

TEST_CASE("stationarity bound: |W^T W - FACT| <= eps |W| / lambda per layer") {
  // holds at any parameter vector, with eps the layer's gradient norm
  std::mt19937_64 rng(69);
  Matrix x = random_matrix(30, 4, rng);
  Matrix y = random_matrix(30, 2, rng);
  const double lambda = 1e-2;
  for (int trial = 0; trial < 50; ++trial) {
    MlpModel model = random_model({4, 6, 5, 2}, Activation::Quadratic, 100 + trial);
    FbOptions options;
    options.weight_decay = lambda;
    ForwardBackward fb = forward_backward(model, x, y, options);
    for (int layer = 1; layer <= model.num_layers(); ++layer) {
      auto estimates = feature_estimates(model, x, y, lambda, layer);
      const Matrix& w = model.weights[layer - 1];
      const double eps = fb.weight_grads[layer - 1].norm();
      for (const auto& est : estimates) {
        if (est.kind == EstimateKind::Fact) {
          CHECK((Matrix(w.transpose() * w) - est.matrix).norm() <=
                eps * w.norm() / lambda * (1 + 1e-9) + 1e-12);
        }
        if (est.kind == EstimateKind::BFact) {
          CHECK((Matrix(w * w.transpose()) - est.matrix).norm() <=
                eps * w.norm() / lambda * (1 + 1e-9) + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("correlation_report orientation") {
  std::mt19937_64 rng(70);
  MlpModel model = random_model({3, 4, 2}, Activation::Relu, 8);
  const Matrix& w1 = model.weights[0];

  FeatureEstimate exact;
  exact.kind = EstimateKind::Fact;
  exact.layer = 1;
  exact.matrix = w1.transpose() * w1;
  FeatureEstimate negated = exact;
  negated.matrix = -exact.matrix;

  auto rows = correlation_report(model, {exact, negated});
  CHECK(rows[0].pearson_raw == doctest::Approx(1.0));
  CHECK(rows[1].pearson_raw == doctest::Approx(-1.0));
  // the symmetrized square root discards the sign
  CHECK(rows[1].pearson_sqrt == doctest::Approx(1.0));
  const std::string csv = correlation_report_to_csv(rows);
  CHECK(csv.find("FACT") != std::string::npos);
}

TEST_CASE("weighted population loss: two-layer quadratic net stays under the bound") {
  SeparationConfig sep;
  Dataset data = gen_separation(sep);

  TrainConfig config;
  config.optimizer = Optimizer::Adam;
  config.learning_rate = 0.01;
  config.weight_decay = sep.weight_decay;
  config.schedule = LrSchedule::Constant;
  config.batch_size = 0;
  config.epochs = 30000;
  config.seed = 1;
  config.trace_every = 5000;

  MlpModel model = MlpModel::init({4, 10, 1}, {Activation::Quadratic}, 2);
  TrainResult result = train(std::move(model), data.X, data.Y, config,
                             &data.weights);
  const double regularized =
      result.final_data_loss +
      0.5 * sep.weight_decay * result.model.weight_norm_sq();
  CHECK(regularized <= 200 * sep.weight_decay);
}

TEST_CASE("model JSON round trip") {
  MlpModel model = random_model({3, 5, 2}, Activation::Relu, 13, true);
  MlpModel back = model_from_json(model_to_json(model));
  REQUIRE(back.num_layers() == model.num_layers());
  for (int l = 0; l < model.num_layers(); ++l) {
    CHECK(back.weights[l] == model.weights[l]);
    CHECK(back.biases[l] == model.biases[l]);
    CHECK(back.activations[l] == model.activations[l]);
  }
  CHECK_THROWS_AS(model_from_json("{}"), Error);
}

#include "factrfm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace factrfm {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Quadratic: return "quadratic";
    case Activation::Identity: return "identity";
  }
  return "?";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "quadratic") return Activation::Quadratic;
  if (name == "identity") return Activation::Identity;
  throw Error(ErrorCode::InvalidConfig, "unknown activation '" + name + "'");
}

namespace {

Matrix apply_activation(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::Relu: return z.cwiseMax(0.0);
    case Activation::Quadratic: return z.array().square();
    case Activation::Identity: return z;
  }
  return z;
}

Matrix activation_derivative(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::Relu:
      return (z.array() > 0.0).cast<double>();
    case Activation::Quadratic: return 2.0 * z;
    case Activation::Identity: return Matrix::Ones(z.rows(), z.cols());
  }
  return Matrix::Ones(z.rows(), z.cols());
}

}  // namespace

MlpModel MlpModel::init(const std::vector<int>& dims,
                        const std::vector<Activation>& hidden_activations,
                        std::uint64_t seed, bool with_bias) {
  if (dims.size() < 2) {
    throw Error(ErrorCode::InvalidConfig, "need at least one layer");
  }
  if (hidden_activations.size() + 2 != dims.size()) {
    throw Error(ErrorCode::InvalidConfig,
                "expected one activation per hidden layer");
  }
  MlpModel model;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    if (fan_in < 1 || fan_out < 1) {
      throw Error(ErrorCode::InvalidConfig, "layer dims must be positive");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix w(fan_out, fan_in);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = u(rng);
    model.weights.push_back(std::move(w));
    if (with_bias) {
      Vector b(fan_out);
      for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = u(rng);
      model.biases.push_back(std::move(b));
    }
    model.activations.push_back(l + 2 < dims.size() ? hidden_activations[l]
                                                    : Activation::Identity);
  }
  return model;
}

void MlpModel::validate() const {
  if (weights.empty()) {
    throw Error(ErrorCode::InvalidConfig, "model has no layers");
  }
  if (activations.size() != weights.size()) {
    throw Error(ErrorCode::InvalidConfig, "one activation per layer required");
  }
  if (activations.back() != Activation::Identity) {
    throw Error(ErrorCode::InvalidConfig, "output layer must be identity");
  }
  for (std::size_t l = 0; l + 1 < weights.size(); ++l) {
    if (weights[l + 1].cols() != weights[l].rows()) {
      throw Error(ErrorCode::ShapeError, "layer dimension chain broken at " +
                                             std::to_string(l + 1));
    }
  }
  if (!biases.empty() && biases.size() != weights.size()) {
    throw Error(ErrorCode::InvalidConfig, "one bias per layer when enabled");
  }
}

Matrix MlpModel::forward(const Matrix& x) const {
  Matrix h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Matrix z = h * weights[l].transpose();
    if (!biases.empty()) z.rowwise() += biases[l].transpose();
    h = apply_activation(activations[l], z);
  }
  return h;
}

double MlpModel::weight_norm_sq() const {
  double total = 0;
  for (const auto& w : weights) total += w.squaredNorm();
  for (const auto& b : biases) total += b.squaredNorm();
  return total;
}

Matrix LayerGradients::jacobian_input(Eigen::Index sample) const {
  Matrix j(input.cols(), static_cast<Eigen::Index>(dmodel_input.size()));
  for (std::size_t ch = 0; ch < dmodel_input.size(); ++ch)
    j.col(static_cast<Eigen::Index>(ch)) = dmodel_input[ch].row(sample).transpose();
  return j;
}

Matrix LayerGradients::jacobian_output(Eigen::Index sample) const {
  Matrix j(output.cols(), static_cast<Eigen::Index>(dmodel_output.size()));
  for (std::size_t ch = 0; ch < dmodel_output.size(); ++ch)
    j.col(static_cast<Eigen::Index>(ch)) = dmodel_output[ch].row(sample).transpose();
  return j;
}

double ForwardBackward::grad_norm() const {
  double sq = 0;
  for (const auto& g : weight_grads) sq += g.squaredNorm();
  for (const auto& g : bias_grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

ForwardBackward forward_backward(const MlpModel& model, const Matrix& x,
                                 const Matrix& y, const FbOptions& options) {
  model.validate();
  if (x.rows() != y.rows()) {
    throw Error(ErrorCode::ShapeError, "X/Y row mismatch");
  }
  if (x.cols() != model.input_dim() || y.cols() != model.output_dim()) {
    throw Error(ErrorCode::ShapeError, "data does not match model dims");
  }
  const Eigen::Index n = x.rows();
  const int num_layers = model.num_layers();
  const Eigen::Index c = model.output_dim();

  Vector w;
  if (options.sample_weights) {
    if (options.sample_weights->size() != n) {
      throw Error(ErrorCode::ShapeError, "sample weight length mismatch");
    }
    w = *options.sample_weights;
  } else {
    w = Vector::Constant(n, 1.0 / static_cast<double>(n));
  }

  ForwardBackward fb;
  fb.bundle.layers.resize(num_layers);

  // forward, keeping every layer input and pre-activation output
  std::vector<Matrix> pre(num_layers);
  {
    Matrix h = x;
    for (int l = 0; l < num_layers; ++l) {
      fb.bundle.layers[l].input = h;
      Matrix z = h * model.weights[l].transpose();
      if (model.has_bias()) z.rowwise() += model.biases[l].transpose();
      fb.bundle.layers[l].output = z;
      pre[l] = std::move(z);
      h = apply_activation(model.activations[l], pre[l]);
      if (!h.allFinite()) {
        throw Error(ErrorCode::NumericOverflow,
                    "non-finite activations at layer " + std::to_string(l + 1));
      }
    }
    const Matrix& yhat = h;
    fb.data_loss = 0.5 * ((yhat - y).rowwise().squaredNorm().dot(w));
    fb.reg_loss = 0.5 * options.weight_decay * model.weight_norm_sq();

    // backward sweep for the per-sample loss gradients; rows of dz are the
    // unweighted grad_{Wh} loss_i, weights enter only the parameter sums
    Matrix dz = yhat - y;
    fb.weight_grads.resize(num_layers);
    if (model.has_bias()) fb.bias_grads.resize(num_layers);
    for (int l = num_layers - 1; l >= 0; --l) {
      fb.bundle.layers[l].dloss_output = dz;
      fb.weight_grads[l] =
          dz.transpose() * w.asDiagonal() * fb.bundle.layers[l].input +
          options.weight_decay * model.weights[l];
      if (model.has_bias()) {
        fb.bias_grads[l] = dz.transpose() * w +
                           options.weight_decay * model.biases[l];
      }
      Matrix dh = dz * model.weights[l];
      fb.bundle.layers[l].dloss_input = dh;
      if (l > 0) {
        dz = dh.cwiseProduct(
            activation_derivative(model.activations[l - 1], pre[l - 1]));
      }
    }
  }

  if (options.want_jacobians) {
    for (int l = 0; l < num_layers; ++l) {
      fb.bundle.layers[l].dmodel_input.resize(c);
      fb.bundle.layers[l].dmodel_output.resize(c);
    }
    for (Eigen::Index ch = 0; ch < c; ++ch) {
      Matrix jz = Matrix::Zero(n, c);
      jz.col(ch).setOnes();
      for (int l = num_layers - 1; l >= 0; --l) {
        fb.bundle.layers[l].dmodel_output[ch] = jz;
        Matrix jh = jz * model.weights[l];
        fb.bundle.layers[l].dmodel_input[ch] = jh;
        if (l > 0) {
          jz = jh.cwiseProduct(
              activation_derivative(model.activations[l - 1], pre[l - 1]));
        }
      }
    }
  }
  return fb;
}

// ---- training ---------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) {
    throw Error(ErrorCode::InvalidConfig, "learning rate must be positive");
  }
  if (momentum < 0 || momentum >= 1) {
    throw Error(ErrorCode::InvalidConfig, "momentum must be in [0,1)");
  }
  if (weight_decay < 0) {
    throw Error(ErrorCode::InvalidConfig, "weight decay must be >= 0");
  }
  if (epochs < 1) {
    throw Error(ErrorCode::InvalidConfig, "epochs must be >= 1");
  }
  if (trace_every < 1) {
    throw Error(ErrorCode::InvalidConfig, "trace_every must be >= 1");
  }
}

std::string TrainResult::curve_to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,dataLoss,learningRate\n";
  for (const auto& p : curve) {
    out << p.epoch << ',' << p.data_loss << ',' << p.learning_rate << '\n';
  }
  return out.str();
}

namespace {

struct OptimizerState {
  std::vector<Matrix> weight_buf1, weight_buf2;  // momentum / Adam moments
  std::vector<Vector> bias_buf1, bias_buf2;
  long step = 0;
};

void apply_update(MlpModel& model, const ForwardBackward& fb,
                  const TrainConfig& config, double lr, OptimizerState& state) {
  ++state.step;
  const int num_layers = model.num_layers();
  for (int l = 0; l < num_layers; ++l) {
    if (config.optimizer == Optimizer::SgdMomentum) {
      state.weight_buf1[l] = config.momentum * state.weight_buf1[l] + fb.weight_grads[l];
      model.weights[l] -= lr * state.weight_buf1[l];
      if (model.has_bias()) {
        state.bias_buf1[l] = config.momentum * state.bias_buf1[l] + fb.bias_grads[l];
        model.biases[l] -= lr * state.bias_buf1[l];
      }
    } else {
      const double b1 = config.adam_beta1;
      const double b2 = config.adam_beta2;
      const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
      const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
      auto adam = [&](auto& m1, auto& m2, const auto& g, auto& param) {
        m1 = b1 * m1 + (1 - b1) * g;
        m2 = b2 * m2 + (1 - b2) * g.cwiseProduct(g);
        param -= lr * (m1 / corr1).cwiseQuotient(
                          ((m2 / corr2).cwiseSqrt().array() + config.adam_eps).matrix());
      };
      adam(state.weight_buf1[l], state.weight_buf2[l], fb.weight_grads[l],
           model.weights[l]);
      if (model.has_bias()) {
        adam(state.bias_buf1[l], state.bias_buf2[l], fb.bias_grads[l],
             model.biases[l]);
      }
    }
  }
}

}  // namespace

TrainResult train(MlpModel model, const Matrix& x, const Matrix& y,
                  const TrainConfig& config, const Vector* sample_weights,
                  const TrainObserver& observer) {
  config.validate();
  model.validate();
  const Eigen::Index n = x.rows();
  const bool full_batch = config.batch_size <= 0 || config.batch_size >= n;
  if (sample_weights && !full_batch) {
    throw Error(ErrorCode::InvalidConfig,
                "weighted training requires full-batch updates");
  }

  OptimizerState state;
  state.weight_buf1.assign(model.weights.size(), Matrix());
  state.weight_buf2.assign(model.weights.size(), Matrix());
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    state.weight_buf1[l] = Matrix::Zero(model.weights[l].rows(), model.weights[l].cols());
    state.weight_buf2[l] = Matrix::Zero(model.weights[l].rows(), model.weights[l].cols());
  }
  if (model.has_bias()) {
    state.bias_buf1.assign(model.biases.size(), Vector());
    state.bias_buf2.assign(model.biases.size(), Vector());
    for (std::size_t l = 0; l < model.biases.size(); ++l) {
      state.bias_buf1[l] = Vector::Zero(model.biases[l].size());
      state.bias_buf2[l] = Vector::Zero(model.biases[l].size());
    }
  }

  std::mt19937_64 rng(config.seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  FbOptions fb_options;
  fb_options.weight_decay = config.weight_decay;
  fb_options.want_jacobians = false;

  TrainResult result;
  auto full_data_loss = [&]() {
    Matrix yhat = model.forward(x);
    Vector w = sample_weights
                   ? *sample_weights
                   : Vector::Constant(n, 1.0 / static_cast<double>(n));
    return 0.5 * ((yhat - y).rowwise().squaredNorm().dot(w));
  };

  double last_loss = 0;
  double last_grad_norm = -1;
  int epoch = 0;
  for (; epoch < config.epochs; ++epoch) {
    double lr = config.learning_rate;
    if (config.schedule == LrSchedule::Cosine) {
      lr *= 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                  static_cast<double>(config.epochs)));
    }

    if (full_batch) {
      fb_options.sample_weights = sample_weights;
      ForwardBackward fb = forward_backward(model, x, y, fb_options);
      if (!std::isfinite(fb.data_loss)) {
        throw TrainDivergedError("loss became non-finite at epoch " +
                                     std::to_string(epoch),
                                 std::move(result.curve));
      }
      apply_update(model, fb, config, lr, state);
      last_loss = fb.data_loss;
      last_grad_norm = fb.grad_norm();
    } else {
      std::shuffle(order.begin(), order.end(), rng);
      for (Eigen::Index start = 0; start < n; start += config.batch_size) {
        const Eigen::Index count =
            std::min<Eigen::Index>(config.batch_size, n - start);
        std::vector<int> batch(order.begin() + start,
                               order.begin() + start + count);
        Matrix xb = x(batch, Eigen::all);
        Matrix yb = y(batch, Eigen::all);
        fb_options.sample_weights = nullptr;
        ForwardBackward fb = forward_backward(model, xb, yb, fb_options);
        if (!std::isfinite(fb.data_loss)) {
          throw TrainDivergedError("loss became non-finite at epoch " +
                                       std::to_string(epoch),
                                   std::move(result.curve));
        }
        apply_update(model, fb, config, lr, state);
      }
      last_loss = full_data_loss();
      last_grad_norm = -1;
    }

    if (epoch % config.trace_every == 0) {
      result.curve.push_back({epoch, last_loss, lr});
      if (observer) observer(epoch, model);
    }

    if (config.loss_target > 0 && last_loss <= config.loss_target) {
      ++epoch;
      break;
    }
    if (config.grad_target > 0) {
      if (last_grad_norm < 0) {
        FbOptions probe = fb_options;
        probe.sample_weights = sample_weights;
        last_grad_norm = forward_backward(model, x, y, probe).grad_norm();
      }
      if (last_grad_norm <= config.grad_target) {
        ++epoch;
        break;
      }
    }
  }

  result.epochs_run = epoch;
  result.final_data_loss = full_data_loss();
  {
    FbOptions probe = fb_options;
    probe.sample_weights = sample_weights;
    result.final_grad_norm = forward_backward(model, x, y, probe).grad_norm();
  }
  result.curve.push_back({epoch, result.final_data_loss, 0.0});
  result.model = std::move(model);
  return result;
}

// ---- feature estimates ------------------------------------------------------

const char* estimate_kind_name(EstimateKind kind) {
  switch (kind) {
    case EstimateKind::Fact: return "FACT";
    case EstimateKind::BFact: return "bFACT";
    case EstimateKind::Agop: return "AGOP";
    case EstimateKind::BAgop: return "bAGOP";
    case EstimateKind::ENfa: return "eNFA";
    case EstimateKind::BENfa: return "beNFA";
  }
  return "?";
}

bool estimate_is_backward(EstimateKind kind) {
  return kind == EstimateKind::BFact || kind == EstimateKind::BAgop ||
         kind == EstimateKind::BENfa;
}

std::vector<FeatureEstimate> feature_estimates(const MlpModel& model,
                                               const Matrix& x, const Matrix& y,
                                               double weight_decay, int layer,
                                               const Vector* sample_weights) {
  if (layer < 1 || layer > model.num_layers()) {
    throw Error(ErrorCode::InvalidConfig,
                "layer index out of range: " + std::to_string(layer));
  }
  if (!(weight_decay > 0)) {
    throw Error(ErrorCode::FactUndefined,
                "FACT estimates require weight decay > 0");
  }
  FbOptions options;
  options.weight_decay = weight_decay;
  options.sample_weights = sample_weights;
  options.want_jacobians = true;
  ForwardBackward fb = forward_backward(model, x, y, options);
  const LayerGradients& lg = fb.bundle.layers[static_cast<std::size_t>(layer - 1)];

  const Eigen::Index n = x.rows();
  Vector w = sample_weights
                 ? *sample_weights
                 : Vector::Constant(n, 1.0 / static_cast<double>(n));

  auto weighted_cross = [&](const Matrix& a, const Matrix& b) {
    return Matrix(a.transpose() * w.asDiagonal() * b);
  };
  auto weighted_outer_sum = [&](const std::vector<Matrix>& slabs) {
    Matrix sum = Matrix::Zero(slabs.front().cols(), slabs.front().cols());
    for (const Matrix& s : slabs) sum += weighted_cross(s, s);
    return sum;
  };

  std::vector<FeatureEstimate> out;
  auto push = [&](EstimateKind kind, Matrix m) {
    FeatureEstimate est;
    est.kind = kind;
    est.layer = layer;
    est.matrix = std::move(m);
    est.eval_count = n;
    est.weight_decay =
        (kind == EstimateKind::Fact || kind == EstimateKind::BFact) ? weight_decay : 0;
    out.push_back(std::move(est));
  };

  const double inv_lambda = 1.0 / weight_decay;
  push(EstimateKind::Fact, -inv_lambda * weighted_cross(lg.dloss_input, lg.input));
  push(EstimateKind::BFact, -inv_lambda * weighted_cross(lg.output, lg.dloss_output));
  push(EstimateKind::Agop, weighted_outer_sum(lg.dmodel_input));
  push(EstimateKind::BAgop, weighted_outer_sum(lg.dmodel_output));
  push(EstimateKind::ENfa, weighted_cross(lg.dloss_input, lg.dloss_input));
  push(EstimateKind::BENfa, weighted_cross(lg.dloss_output, lg.dloss_output));
  return out;
}

std::vector<CorrelationRow> correlation_report(
    const MlpModel& model, const std::vector<FeatureEstimate>& estimates) {
  std::vector<CorrelationRow> rows;
  for (const FeatureEstimate& est : estimates) {
    const Matrix& w = model.weights[static_cast<std::size_t>(est.layer - 1)];
    const Matrix target = estimate_is_backward(est.kind)
                              ? Matrix(w * w.transpose())
                              : Matrix(w.transpose() * w);
    const bool is_fact =
        est.kind == EstimateKind::Fact || est.kind == EstimateKind::BFact;

    CorrelationRow row;
    row.kind = est.kind;
    row.layer = est.layer;
    auto guarded = [](auto&& fn) {
      try {
        return fn();
      } catch (const Error&) {
        return std::numeric_limits<double>::quiet_NaN();
      }
    };
    row.pearson_raw = guarded([&] { return pearson_corr(est.matrix, target); });
    row.cosine_raw = guarded([&] { return cosine_sim(est.matrix, target); });
    Matrix sqrt_variant;
    try {
      sqrt_variant = is_fact
                         ? symmetrized_sqrt(est.matrix).mat()
                         : psd_power(SymMatrix::from_symmetric_part(est.matrix),
                                     0.5, 1e-6)
                               .mat();
    } catch (const Error&) {
      sqrt_variant = Matrix();
    }
    if (sqrt_variant.size() > 0) {
      row.pearson_sqrt = guarded([&] { return pearson_corr(sqrt_variant, target); });
      row.cosine_sqrt = guarded([&] { return cosine_sim(sqrt_variant, target); });
    } else {
      row.pearson_sqrt = row.cosine_sqrt = std::numeric_limits<double>::quiet_NaN();
    }
    rows.push_back(row);
  }
  return rows;
}

std::string correlation_report_to_csv(const std::vector<CorrelationRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "kind,layer,pearsonRaw,cosineRaw,pearsonSqrt,cosineSqrt\n";
  for (const auto& row : rows) {
    out << estimate_kind_name(row.kind) << ',' << row.layer << ','
        << row.pearson_raw << ',' << row.cosine_raw << ',' << row.pearson_sqrt
        << ',' << row.cosine_sqrt << '\n';
  }
  return out.str();
}

// ---- checkpoints ------------------------------------------------------------

std::string model_to_json(const MlpModel& model) {
  model.validate();
  nlohmann::json layers = nlohmann::json::array();
  for (int l = 0; l < model.num_layers(); ++l) {
    const Matrix& w = model.weights[static_cast<std::size_t>(l)];
    nlohmann::json layer;
    layer["rows"] = w.rows();
    layer["cols"] = w.cols();
    layer["activation"] = activation_name(model.activations[static_cast<std::size_t>(l)]);
    std::vector<double> entries;
    entries.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) entries.push_back(w(i, j));
    layer["weights"] = entries;
    if (model.has_bias()) {
      const Vector& b = model.biases[static_cast<std::size_t>(l)];
      layer["bias"] = std::vector<double>(b.data(), b.data() + b.size());
    }
    layers.push_back(std::move(layer));
  }
  nlohmann::json j;
  j["layers"] = std::move(layers);
  return j.dump();
}

MlpModel model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  if (!j.contains("layers") || !j["layers"].is_array() || j["layers"].empty()) {
    throw Error(ErrorCode::ParseError, "model JSON needs a layers array");
  }
  MlpModel model;
  for (const auto& layer : j["layers"]) {
    const auto rows = layer.at("rows").get<Eigen::Index>();
    const auto cols = layer.at("cols").get<Eigen::Index>();
    const auto entries = layer.at("weights").get<std::vector<double>>();
    if (rows <= 0 || cols <= 0 ||
        entries.size() != static_cast<std::size_t>(rows * cols)) {
      throw Error(ErrorCode::ParseError, "layer weight count mismatch");
    }
    Matrix w(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index k = 0; k < cols; ++k)
        w(i, k) = entries[static_cast<std::size_t>(i * cols + k)];
    model.weights.push_back(std::move(w));
    model.activations.push_back(
        activation_from_name(layer.at("activation").get<std::string>()));
    if (layer.contains("bias")) {
      const auto b = layer["bias"].get<std::vector<double>>();
      model.biases.push_back(
          Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size())));
    }
  }
  model.validate();
  return model;
}

}  // namespace factrfm

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "factrfm/symlinalg.hpp"

namespace factrfm {

enum class Activation { Relu, Quadratic, Identity };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

/// Fully-connected network y = W_L a(... a(W_1 x)). Weights map layer
/// inputs on the right: W_l is (d_l x d_{l-1}) and batches multiply as
/// H W_l^T. The output layer activation must be Identity.
struct MlpModel {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;            // empty when biases are disabled
  std::vector<Activation> activations;   // one per layer

  /// Uniform fan-in initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static MlpModel init(const std::vector<int>& dims,
                       const std::vector<Activation>& hidden_activations,
                       std::uint64_t seed, bool with_bias = false);

  int num_layers() const { return static_cast<int>(weights.size()); }
  Eigen::Index input_dim() const { return weights.front().cols(); }
  Eigen::Index output_dim() const { return weights.back().rows(); }
  bool has_bias() const { return !biases.empty(); }

  Matrix forward(const Matrix& x) const;  // rows are samples
  double weight_norm_sq() const;
  void validate() const;
};

std::string model_to_json(const MlpModel& model);
MlpModel model_from_json(const std::string& text);

/// Everything the feature-estimate formulas consume, captured per layer.
/// Loss gradients are per-sample rows; model Jacobians are kept as one
/// n x dim slab per output channel.
struct LayerGradients {
  Matrix input;          // n x d_{l-1}: h_l(x_i)
  Matrix output;         // n x d_l: W_l h_l(x_i), before the activation
  Matrix dloss_input;    // n x d_{l-1}: rows are grad_h loss_i
  Matrix dloss_output;   // n x d_l: rows are grad_{Wh} loss_i
  std::vector<Matrix> dmodel_input;   // c slabs, each n x d_{l-1}
  std::vector<Matrix> dmodel_output;  // c slabs, each n x d_l

  /// Assembles grad_h f_i (d_{l-1} x c) for one sample.
  Matrix jacobian_input(Eigen::Index sample) const;
  Matrix jacobian_output(Eigen::Index sample) const;
};

struct GradientBundle {
  std::vector<LayerGradients> layers;
};

struct ForwardBackward {
  double data_loss = 0;  // sum_i w_i * 0.5 |f(x_i) - y_i|^2
  double reg_loss = 0;   // (lambda/2) |theta|_F^2
  std::vector<Matrix> weight_grads;
  std::vector<Vector> bias_grads;
  GradientBundle bundle;

  double total_loss() const { return data_loss + reg_loss; }
  double grad_norm() const;
};

struct FbOptions {
  double weight_decay = 0.0;
  const Vector* sample_weights = nullptr;  // null => uniform 1/n
  bool want_jacobians = true;              // model Jacobians cost c backward passes
};

/// Exact loss, gradients of the regularized loss, and the per-layer
/// gradient bundle, in one batched pass. MSE loss only.
ForwardBackward forward_backward(const MlpModel& model, const Matrix& x,
                                 const Matrix& y, const FbOptions& options = {});

enum class Optimizer { SgdMomentum, Adam };
enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  Optimizer optimizer = Optimizer::SgdMomentum;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  LrSchedule schedule = LrSchedule::Cosine;
  int batch_size = 64;     // <= 0 means full batch
  int epochs = 200;
  double loss_target = 0;  // stop once full-train data loss <= target (0 = off)
  double grad_target = 0;  // stop once full gradient norm <= target (0 = off)
  std::uint64_t seed = 0;
  int trace_every = 1;     // epochs between loss-curve records

  void validate() const;
};

struct LossCurvePoint {
  int epoch = 0;
  double data_loss = 0;
  double learning_rate = 0;
};

struct TrainResult {
  MlpModel model;
  std::vector<LossCurvePoint> curve;
  double final_data_loss = 0;
  double final_grad_norm = 0;
  int epochs_run = 0;

  std::string curve_to_csv() const;
};

class TrainDivergedError : public Error {
 public:
  TrainDivergedError(std::string message, std::vector<LossCurvePoint> curve)
      : Error(ErrorCode::Diverged, std::move(message)), curve_(std::move(curve)) {}
  const std::vector<LossCurvePoint>& curve() const { return curve_; }

 private:
  std::vector<LossCurvePoint> curve_;
};

/// Invoked at every loss-curve record point with the current snapshot.
using TrainObserver = std::function<void(int epoch, const MlpModel& model)>;

/// Minibatch training of the weight-decayed MSE loss. Deterministic for a
/// fixed seed and platform. Optional sample weights turn the data term into
/// sum_i w_i loss_i (used with full-batch population training).
TrainResult train(MlpModel model, const Matrix& x, const Matrix& y,
                  const TrainConfig& config,
                  const Vector* sample_weights = nullptr,
                  const TrainObserver& observer = {});

enum class EstimateKind { Fact, BFact, Agop, BAgop, ENfa, BENfa };

const char* estimate_kind_name(EstimateKind kind);
bool estimate_is_backward(EstimateKind kind);

struct FeatureEstimate {
  EstimateKind kind = EstimateKind::Fact;
  int layer = 0;       // 1-based, matching W_1 ... W_L
  Matrix matrix;       // input-side square for forward kinds, output-side for backward
  Eigen::Index eval_count = 0;
  double weight_decay = 0;  // FACT kinds only
};

/// All six feature estimates at one layer:
///   FACT  = -(1/lambda) sum_i w_i (grad_h loss_i) h(x_i)^T
///   bFACT = -(1/lambda) sum_i w_i (W h(x_i)) (grad_{Wh} loss_i)^T
///   AGOP  = sum_i w_i (grad_h f_i)(grad_h f_i)^T        (bAGOP: output side)
///   eNFA  = sum_i w_i (grad_h loss_i)(grad_h loss_i)^T  (beNFA: output side)
/// with w_i = 1/n unless sample weights are given.
std::vector<FeatureEstimate> feature_estimates(const MlpModel& model,
                                               const Matrix& x, const Matrix& y,
                                               double weight_decay, int layer,
                                               const Vector* sample_weights = nullptr);

struct CorrelationRow {
  EstimateKind kind;
  int layer;
  double pearson_raw, cosine_raw;
  double pearson_sqrt, cosine_sqrt;  // symmetrized-sqrt / matrix-sqrt variant
};

/// Compares each estimate against the matching feature matrix (W^T W for
/// forward kinds, W W^T for backward), raw and after the square-root
/// variant: sqrt(E E^T) for FACT kinds, E^{1/2} for the p.s.d. kinds.
std::vector<CorrelationRow> correlation_report(
    const MlpModel& model, const std::vector<FeatureEstimate>& estimates);

std::string correlation_report_to_csv(const std::vector<CorrelationRow>& rows);

}  // namespace factrfm

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "factrfm/datasets.hpp"
#include "factrfm/kernels.hpp"
#include "factrfm/nn.hpp"
#include "factrfm/rfm.hpp"

namespace factrfm {

/// Width-m quadratic network a^T (W x)^2 representing x^T Q x with the
/// balanced cube-root weights a_i = sgn(l_i) |l_i|^{1/3}, w_i = |l_i|^{1/3} v_i,
/// at cost 2 sum |l_i|^{2/3}.
struct MinNormSolution {
  Vector a;       // m
  Matrix w;       // m x d
  double cost = 0;
  int active_neurons = 0;

  double evaluate(const Vector& x) const;
};

MinNormSolution min_norm_quadratic(const SymMatrix& q, int width);

struct SeparationReport {
  double cos_fact_final = 0, cos_fact_best = 0;
  double cos_agop_final = 0, cos_agop_best = 0;  // raw AGOP, s = 1
  double cos_agop_sqrt_final = 0;                // s = 1/2 companion number
  double final_loss = 0;                         // weighted data loss
  double regularized_loss = 0;
  double weight_norm_sq = 0;
  bool degenerate = false;  // network collapsed to ~0, similarities undefined
  std::vector<LossCurvePoint> curve;
  MlpModel model;
};

/// Trains the two-layer quadratic net on the weighted population loss of
/// gen_separation and compares FACT and AGOP against W^T W of the first
/// layer. Best-step values are tracked every probe_every epochs alongside
/// the final-step values.
SeparationReport run_separation_experiment(const SeparationConfig& config,
                                           int width, const TrainConfig& train_config,
                                           int probe_every = 1000);

struct DeepLinearGeometry {
  int input_dim = 10;
  int output_dim = 5;
  int hidden = 64;
  int samples = 2000;
};

struct DeepLinearRow {
  int depth = 0;
  double cos_fact = 0;            // cos(FACT, W_1^T W_1)
  double cos_agop_inv_depth = 0;  // cos(AGOP^{1/L}, W_1^T W_1)
  double cos_agop_sqrt = 0;       // cos(AGOP^{1/2}, W_1^T W_1)
  double balancedness = 0;        // max relative singular-value spread
  double final_loss = 0;
  double grad_norm = 0;
};

/// Per-depth feature comparison for deep linear networks. Depth 1 skips
/// training and uses the closed-form ridge optimum, which is an exact
/// critical point.
std::vector<DeepLinearRow> run_deep_linear_sweep(const std::vector<int>& depths,
                                                 const DeepLinearGeometry& geometry,
                                                 const TrainConfig& train_config,
                                                 std::uint64_t data_seed);

/// Closed-form optimum of 1/n sum 0.5|Wx - y|^2 + (lambda/2)|W|_F^2.
Matrix ridge_regression_optimum(const Matrix& x, const Matrix& y, double lambda);

struct TauKprimeResult {
  std::vector<std::array<double, 2>> pairs;  // (k'(x_i^T M x_j), tau_ij)
  double slope = 0;        // least-squares through the origin, tau on k'
  double r_squared = 0;
  bool constant_tau = false;
};

/// Pairs the two similarity factors of the inner-product-kernel updates:
/// k'(x_i^T M x_j) against tau(x_i, M, x_j) = (1/n) sum_l k'_li k'_lj.
TauKprimeResult tau_vs_kprime(const Matrix& x, const FeatureMatrix& m,
                              const Matrix& alpha, const KernelSpec& spec,
                              int subsample = 0, std::uint64_t seed = 0);

/// Squared Frobenius mass of the support x support block over the total.
double support_concentration(const FeatureMatrix& m, const std::vector<int>& support);

/// 1 - (within-cyclic-diagonal variance / total variance), averaged over the
/// p x p blocks. 1 for exactly block-circulant matrices, about 1/p for i.i.d.
/// noise.
double circulant_score(const Matrix& m, int block_size);
double circulant_score(const FeatureMatrix& m, int block_size);

}  // namespace factrfm

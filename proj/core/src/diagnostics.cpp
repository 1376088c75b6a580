#include "factrfm/diagnostics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace factrfm {

double MinNormSolution::evaluate(const Vector& x) const {
  Vector z = w * x;
  return a.dot(z.cwiseProduct(z));
}

MinNormSolution min_norm_quadratic(const SymMatrix& q, int width) {
  const Eigen::Index d = q.dim();
  if (width < d) {
    throw Error(ErrorCode::InvalidConfig,
                "width must be at least the input dimension");
  }
  EigenDecomposition dec = sym_eig(q);

  MinNormSolution sol;
  sol.a = Vector::Zero(width);
  sol.w = Matrix::Zero(width, d);
  sol.cost = 0;
  const double eig_floor = 1e-14 * std::max(1.0, dec.eigenvalues.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < d; ++i) {
    const double lam = dec.eigenvalues(i);
    if (std::abs(lam) <= eig_floor) continue;
    const double root = std::cbrt(std::abs(lam));
    sol.a(i) = (lam > 0 ? 1.0 : -1.0) * root;
    sol.w.row(i) = root * dec.eigenvectors.col(i).transpose();
    sol.cost += 2.0 * root * root;
    ++sol.active_neurons;
  }
  return sol;
}

// ---- separation experiment ----------------------------------------------------

namespace {

struct SeparationCosines {
  double fact = std::numeric_limits<double>::quiet_NaN();
  double agop = std::numeric_limits<double>::quiet_NaN();
  double agop_sqrt = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;
};

SeparationCosines separation_cosines(const MlpModel& model, const Dataset& data,
                                     double weight_decay) {
  SeparationCosines out;
  const Matrix& w1 = model.weights.front();
  Matrix nfm = w1.transpose() * w1;
  // collapsed network: predictions negligible against the targets, so the
  // similarity scores would compare roundoff noise
  if (model.forward(data.X).norm() <= 1e-3 * data.Y.norm()) {
    out.degenerate = true;
    return out;
  }
  try {
    auto estimates = feature_estimates(model, data.X, data.Y, weight_decay, 1,
                                       &data.weights);
    const Matrix* fact = nullptr;
    const Matrix* agop = nullptr;
    for (const auto& est : estimates) {
      if (est.kind == EstimateKind::Fact) fact = &est.matrix;
      if (est.kind == EstimateKind::Agop) agop = &est.matrix;
    }
    out.fact = cosine_sim(*fact, nfm);
    out.agop = cosine_sim(*agop, nfm);
    out.agop_sqrt = cosine_sim(
        psd_power(SymMatrix::from_symmetric_part(*agop), 0.5, 1e-6).mat(), nfm);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DegenerateInput) {
      out.degenerate = true;
      return out;
    }
    throw;
  }
  return out;
}

}  // namespace

SeparationReport run_separation_experiment(const SeparationConfig& config,
                                           int width, const TrainConfig& train_config,
                                           int probe_every) {
  config.validate();
  if (width < 7) {
    throw Error(ErrorCode::InvalidConfig, "separation net needs width >= 7");
  }
  Dataset data = gen_separation(config);

  TrainConfig tc = train_config;
  tc.weight_decay = config.weight_decay;  // the experiment's lambda wins
  tc.batch_size = 0;                      // population loss, full batch
  tc.trace_every = std::max(1, probe_every);

  MlpModel model = MlpModel::init(
      {4, width, 1}, {Activation::Quadratic}, tc.seed);

  SeparationReport report;
  double best_fact = -std::numeric_limits<double>::infinity();
  double best_agop = std::numeric_limits<double>::infinity();
  auto observer = [&](int, const MlpModel& snapshot) {
    SeparationCosines c = separation_cosines(snapshot, data, config.weight_decay);
    if (!c.degenerate) {
      best_fact = std::max(best_fact, c.fact);
      best_agop = std::min(best_agop, c.agop);
    }
  };

  TrainResult trained = train(std::move(model), data.X, data.Y, tc,
                              &data.weights, observer);

  SeparationCosines final = separation_cosines(trained.model, data,
                                               config.weight_decay);
  report.degenerate = final.degenerate;
  report.cos_fact_final = final.fact;
  report.cos_agop_final = final.agop;
  report.cos_agop_sqrt_final = final.agop_sqrt;
  report.cos_fact_best = std::max(best_fact, final.degenerate ? best_fact : final.fact);
  report.cos_agop_best = std::min(best_agop, final.degenerate ? best_agop : final.agop);
  report.final_loss = trained.final_data_loss;
  report.weight_norm_sq = trained.model.weight_norm_sq();
  report.regularized_loss =
      trained.final_data_loss + 0.5 * config.weight_decay * report.weight_norm_sq;
  report.curve = trained.curve;
  report.model = std::move(trained.model);
  return report;
}

// ---- deep linear sweep --------------------------------------------------------

Matrix ridge_regression_optimum(const Matrix& x, const Matrix& y, double lambda) {
  if (x.rows() != y.rows()) {
    throw Error(ErrorCode::ShapeError, "X/Y row mismatch");
  }
  const double n = static_cast<double>(x.rows());
  Matrix a = x.transpose() * x / n;
  a.diagonal().array() += lambda;
  Matrix rhs = x.transpose() * y / n;  // d x c
  return a.ldlt().solve(rhs).transpose();
}

namespace {

/// Largest relative per-index spread of singular values across layers,
/// over the leading min-dimension indices shared by every layer.
double layer_balancedness(const MlpModel& model) {
  if (model.num_layers() < 2) return 0.0;
  Eigen::Index shared = std::numeric_limits<Eigen::Index>::max();
  std::vector<Vector> spectra;
  for (const Matrix& w : model.weights) {
    Eigen::JacobiSVD<Matrix> svd(w);
    spectra.push_back(svd.singularValues());
    shared = std::min(shared, spectra.back().size());
  }
  double worst = 0;
  for (Eigen::Index j = 0; j < shared; ++j) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0;
    for (const Vector& s : spectra) {
      lo = std::min(lo, s(j));
      hi = std::max(hi, s(j));
    }
    if (hi > 0) worst = std::max(worst, (hi - lo) / hi);
  }
  return worst;
}

}  // namespace

std::vector<DeepLinearRow> run_deep_linear_sweep(const std::vector<int>& depths,
                                                 const DeepLinearGeometry& geometry,
                                                 const TrainConfig& train_config,
                                                 std::uint64_t data_seed) {
  if (depths.empty()) {
    throw Error(ErrorCode::InvalidConfig, "no depths requested");
  }
  for (int depth : depths) {
    if (depth < 1) {
      throw Error(ErrorCode::InvalidConfig, "depths must be >= 1");
    }
  }
  Dataset data = gen_deep_linear(geometry.samples, geometry.input_dim,
                                 geometry.output_dim, data_seed);

  std::vector<DeepLinearRow> rows;
  for (int depth : depths) {
    MlpModel model;
    TrainResult trained;
    if (depth == 1) {
      model.weights.push_back(
          ridge_regression_optimum(data.X, data.Y, train_config.weight_decay));
      model.activations.push_back(Activation::Identity);
      trained.model = model;
      trained.final_data_loss =
          0.5 * (data.X * model.weights[0].transpose() - data.Y)
                    .rowwise().squaredNorm().mean();
      FbOptions probe;
      probe.weight_decay = train_config.weight_decay;
      trained.final_grad_norm =
          forward_backward(model, data.X, data.Y, probe).grad_norm();
    } else {
      std::vector<int> dims;
      dims.push_back(geometry.input_dim);
      for (int l = 0; l < depth - 1; ++l) dims.push_back(geometry.hidden);
      dims.push_back(geometry.output_dim);
      std::vector<Activation> acts(static_cast<std::size_t>(depth - 1),
                                   Activation::Identity);
      model = MlpModel::init(dims, acts, train_config.seed + depth);
      trained = train(std::move(model), data.X, data.Y, train_config);
    }

    auto estimates = feature_estimates(trained.model, data.X, data.Y,
                                       train_config.weight_decay, 1);
    const Matrix* fact = nullptr;
    const Matrix* agop = nullptr;
    for (const auto& est : estimates) {
      if (est.kind == EstimateKind::Fact) fact = &est.matrix;
      if (est.kind == EstimateKind::Agop) agop = &est.matrix;
    }
    const Matrix& w1 = trained.model.weights.front();
    Matrix nfm = w1.transpose() * w1;

    DeepLinearRow row;
    row.depth = depth;
    row.cos_fact = cosine_sim(*fact, nfm);
    SymMatrix agop_sym = SymMatrix::from_symmetric_part(*agop);
    row.cos_agop_inv_depth =
        cosine_sim(psd_power(agop_sym, 1.0 / depth, 1e-6).mat(), nfm);
    row.cos_agop_sqrt = cosine_sim(psd_power(agop_sym, 0.5, 1e-6).mat(), nfm);
    row.balancedness = layer_balancedness(trained.model);
    row.final_loss = trained.final_data_loss;
    row.grad_norm = trained.final_grad_norm;
    rows.push_back(row);
  }
  return rows;
}

// ---- tau vs k' ----------------------------------------------------------------

TauKprimeResult tau_vs_kprime(const Matrix& x, const FeatureMatrix& m,
                              const Matrix& alpha, const KernelSpec& spec,
                              int subsample, std::uint64_t seed) {
  if (spec.family != KernelFamily::InnerProduct) {
    throw Error(ErrorCode::UnsupportedKernel,
                "tau/k' comparison is defined for inner-product kernels");
  }
  if (alpha.rows() != x.rows()) {
    throw Error(ErrorCode::ShapeError, "alpha/train row mismatch");
  }
  const Eigen::Index n = x.rows();
  Matrix kp = (x * m.mat() * x.transpose())
                  .unaryExpr([&](double v) { return scalar_k_prime(spec.scalar_fn, v); });
  Matrix tau = kp.transpose() * kp / static_cast<double>(n);
  // the defining sum is symmetric in (i, j); make that exact
  tau = tau.selfadjointView<Eigen::Upper>();

  std::vector<std::pair<Eigen::Index, Eigen::Index>> index_pairs;
  index_pairs.reserve(static_cast<std::size_t>(n) * (n + 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) index_pairs.emplace_back(i, j);
  if (subsample > 0 &&
      static_cast<std::size_t>(subsample) < index_pairs.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(index_pairs.begin(), index_pairs.end(), rng);
    index_pairs.resize(static_cast<std::size_t>(subsample));
  }

  TauKprimeResult result;
  result.pairs.reserve(index_pairs.size());
  double sxx = 0, sxy = 0;
  for (auto [i, j] : index_pairs) {
    const double kv = kp(i, j);
    const double tv = tau(i, j);
    result.pairs.push_back({kv, tv});
    sxx += kv * kv;
    sxy += kv * tv;
  }
  result.slope = sxx > 0 ? sxy / sxx : 0.0;

  double mean_tau = 0;
  for (const auto& p : result.pairs) mean_tau += p[1];
  mean_tau /= static_cast<double>(result.pairs.size());
  double ss_tot = 0, ss_res = 0;
  for (const auto& p : result.pairs) {
    ss_tot += (p[1] - mean_tau) * (p[1] - mean_tau);
    ss_res += (p[1] - result.slope * p[0]) * (p[1] - result.slope * p[0]);
  }
  if (ss_tot <= 0) {
    result.constant_tau = true;
    result.r_squared = std::numeric_limits<double>::quiet_NaN();
  } else {
    result.r_squared = 1.0 - ss_res / ss_tot;
  }
  return result;
}

// ---- structure scores -----------------------------------------------------------

double support_concentration(const FeatureMatrix& m, const std::vector<int>& support) {
  if (support.empty()) {
    throw Error(ErrorCode::InvalidConfig, "support set is empty");
  }
  for (int idx : support) {
    if (idx < 0 || idx >= m.dim()) {
      throw Error(ErrorCode::InvalidConfig, "support index out of range");
    }
  }
  const double total = m.mat().squaredNorm();
  if (total == 0) {
    throw Error(ErrorCode::DegenerateInput, "support concentration of zero matrix");
  }
  double block = 0;
  for (int i : support)
    for (int j : support) block += m.mat()(i, j) * m.mat()(i, j);
  return block / total;
}

double circulant_score(const Matrix& m, int block_size) {
  const Eigen::Index p = block_size;
  if (p < 2 || m.rows() != m.cols() || m.rows() % p != 0) {
    throw Error(ErrorCode::InvalidConfig,
                "dimension is not divisible into blocks of the given size");
  }
  const Eigen::Index blocks = m.rows() / p;
  double score_sum = 0;
  for (Eigen::Index br = 0; br < blocks; ++br) {
    for (Eigen::Index bc = 0; bc < blocks; ++bc) {
      Matrix block = m.block(br * p, bc * p, p, p);
      const double mean_all = block.mean();
      const double var_total = (block.array() - mean_all).square().mean();
      if (var_total <= 0) {
        score_sum += 1.0;  // constant block
        continue;
      }
      // variance within each cyclic diagonal g = (j - i) mod p, averaged
      double within = 0;
      for (Eigen::Index g = 0; g < p; ++g) {
        double sum = 0, sum_sq = 0;
        for (Eigen::Index i = 0; i < p; ++i) {
          const double v = block(i, (i + g) % p);
          sum += v;
          sum_sq += v * v;
        }
        const double mean_g = sum / static_cast<double>(p);
        within += sum_sq / static_cast<double>(p) - mean_g * mean_g;
      }
      within /= static_cast<double>(p);
      score_sum += 1.0 - std::min(1.0, std::max(0.0, within / var_total));
    }
  }
  return score_sum / static_cast<double>(blocks * blocks);
}

double circulant_score(const FeatureMatrix& m, int block_size) {
  return circulant_score(m.mat(), block_size);
}

}  // namespace factrfm

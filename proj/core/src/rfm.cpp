#include "factrfm/rfm.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <sstream>

namespace factrfm {

const char* update_rule_name(UpdateRule rule) {
  switch (rule) {
    case UpdateRule::Nfa: return "nfa";
    case UpdateRule::FactPlain: return "fact-plain";
    case UpdateRule::FactGeom: return "fact-geom";
  }
  return "?";
}

UpdateRule update_rule_from_name(const std::string& name) {
  if (name == "nfa") return UpdateRule::Nfa;
  if (name == "fact-plain") return UpdateRule::FactPlain;
  if (name == "fact-geom") return UpdateRule::FactGeom;
  throw Error(ErrorCode::InvalidConfig, "unknown update rule '" + name + "'");
}

void RfmConfig::validate() const {
  kernel.validate();
  if (iterations < 0) {
    throw Error(ErrorCode::InvalidConfig, "iterations must be >= 0");
  }
  if (!(nfa_power > 0)) {
    throw Error(ErrorCode::InvalidConfig, "nfa power must be positive");
  }
  if (ridge < 0) {
    throw Error(ErrorCode::InvalidConfig, "ridge must be >= 0");
  }
  if (ridge == 0) {
    if (!allow_zero_ridge) {
      throw Error(ErrorCode::InvalidConfig,
                  "ridge = 0 requires the explicit allow flag");
    }
    if (rule != UpdateRule::Nfa && iterations > 0) {
      throw Error(ErrorCode::InvalidConfig,
                  "FACT update rules are undefined at ridge = 0");
    }
  }
}

std::string RfmTrace::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,trainLoss,testLoss,trainAcc,testAcc,"
         "estMinEig,estMaxEig,mFrobenius\n";
  for (const auto& r : records) {
    out << r.iteration << ',' << r.train_loss << ',' << r.test_loss << ','
        << r.train_acc << ',' << r.test_acc << ',' << r.est_min_eig << ','
        << r.est_max_eig << ',' << r.m_frobenius << '\n';
  }
  return out.str();
}

DualSolution solve_krr(const Matrix& k, const Matrix& y, double ridge) {
  if (k.rows() != k.cols()) {
    throw Error(ErrorCode::ShapeError, "kernel matrix must be square");
  }
  if (y.rows() != k.rows()) {
    throw Error(ErrorCode::ShapeError, "kernel/target row mismatch");
  }
  if (ridge < 0) {
    throw Error(ErrorCode::InvalidConfig, "ridge must be >= 0");
  }
  const double n = static_cast<double>(k.rows());
  Matrix system = k;
  system.diagonal().array() += n * ridge;

  Eigen::LDLT<Matrix> ldlt(system);
  DualSolution dual;
  dual.alpha = ldlt.solve(y);
  dual.ridge = ridge;
  dual.residual = (system * dual.alpha - y).norm() / std::max(1.0, y.norm());
  if (ldlt.info() != Eigen::Success || !dual.alpha.allFinite() ||
      dual.residual > 1e-8) {
    throw Error(ErrorCode::SingularKernel,
                "kernel system not solvable (relative residual " +
                    std::to_string(dual.residual) + ")");
  }
  return dual;
}

Matrix predict(const KernelSpec& spec, const FeatureMatrix& m,
               const Matrix& x_train, const Matrix& alpha,
               const Matrix& x_query) {
  if (alpha.rows() != x_train.rows()) {
    throw Error(ErrorCode::ShapeError, "alpha/train row mismatch");
  }
  return gram(spec, m, x_query, x_train) * alpha;
}

namespace {

/// Pairwise coefficient matrix C of the predictor gradient: the gradient of
/// the kernel in its first argument is
///   distance families   grad K(e, x_j) = C_ej * M (e - x_j)
///   inner product       grad K(e, x_j) = C_ej * M x_j
/// with rows indexed by eval points and columns by training points.
Matrix grad_coefficients(const KernelSpec& spec, const FeatureMatrix& m,
                         const Matrix& x_eval, const Matrix& x) {
  switch (spec.family) {
    case KernelFamily::MahalanobisGaussian: {
      const double l2 = spec.bandwidth * spec.bandwidth;
      return (-1.0 / l2) * gram(spec, m, x_eval, x);
    }
    case KernelFamily::MahalanobisLaplace: {
      Matrix q = pairwise_mahalanobis_sq(m, x_eval, x);
      Matrix c(q.rows(), q.cols());
      const double bw = spec.bandwidth;
      for (Eigen::Index i = 0; i < q.rows(); ++i) {
        for (Eigen::Index j = 0; j < q.cols(); ++j) {
          const double qd = q(i, j);
          // gradient convention at coincident points: zero
          c(i, j) = qd == 0.0 ? 0.0
                              : -std::exp(-std::sqrt(qd) / bw) /
                                    (bw * std::sqrt(qd));
        }
      }
      return c;
    }
    case KernelFamily::InnerProduct: {
      Matrix t = x_eval * m.mat() * x.transpose();
      return t.unaryExpr(
          [&](double v) { return scalar_k_prime(spec.scalar_fn, v); });
    }
  }
  throw Error(ErrorCode::UnsupportedKernel, "unhandled kernel family");
}

}  // namespace

// The per-point Jacobian of the predictor is J_e = M (e u_e^T - V_e) for
// distance kernels and J_e = M V_e for inner-product kernels, with
// u_e = sum_j C_ej alpha_j and V_e = sum_j C_ej x_j alpha_j^T. Summing
// J_e J_e^T over eval points collapses into Gram-sized sandwiches, which is
// what makes T=75-iteration runs affordable:
//   sum_e V_e V_e^T           = X^T [(C^T C) . (alpha alpha^T)] X
//   sum_e e (V_e u_e)^T       = Xe^T [C . (U alpha^T)] X
//   sum_e |u_e|^2 e e^T       = Xe^T diag(|u_e|^2) Xe
// (. is the entrywise product; U = C alpha).
SymMatrix compute_agop(const KernelSpec& spec, const FeatureMatrix& m,
                       const Matrix& x, const Matrix& alpha,
                       const Matrix& x_eval) {
  spec.validate();
  if (alpha.rows() != x.rows()) {
    throw Error(ErrorCode::ShapeError, "alpha/train row mismatch");
  }
  if (x_eval.cols() != x.cols()) {
    throw Error(ErrorCode::ShapeError, "eval/train column mismatch");
  }
  const double n_eval = static_cast<double>(x_eval.rows());
  Matrix c = grad_coefficients(spec, m, x_eval, x);
  Matrix core =
      x.transpose() *
      ((c.transpose() * c).cwiseProduct(alpha * alpha.transpose()) * x);
  if (spec.is_distance_family()) {
    Matrix u = c * alpha;  // n_eval x channels
    Vector usq = u.rowwise().squaredNorm();
    Matrix cross = x_eval.transpose() * (c.cwiseProduct(u * alpha.transpose()) * x);
    core += x_eval.transpose() * usq.asDiagonal() * x_eval - cross -
            cross.transpose();
  }
  Matrix agop = m.mat() * core * m.mat() / n_eval;
  return SymMatrix::from_symmetric_part(agop);
}

// FACT for the kernel predictor, evaluated over the training set. Same
// collapse as compute_agop with P = C . (alpha alpha^T):
//   inner product   FACT = M X^T P^T X
//   distance        FACT = M X^T (diag(P 1) - P^T) X
Matrix compute_fact(const KernelSpec& spec, const FeatureMatrix& m,
                    const Matrix& x, const DualSolution& dual) {
  spec.validate();
  if (!(dual.ridge > 0)) {
    throw Error(ErrorCode::FactUndefined,
                "FACT requires a ridge-regularized dual solution");
  }
  if (dual.alpha.rows() != x.rows()) {
    throw Error(ErrorCode::ShapeError, "alpha/train row mismatch");
  }
  Matrix c = grad_coefficients(spec, m, x, x);
  Matrix p = c.cwiseProduct(dual.alpha * dual.alpha.transpose());
  if (spec.is_distance_family()) {
    Vector row_sums = p.rowwise().sum();
    return m.mat() *
           (x.transpose() * (row_sums.asDiagonal() * x - p.transpose() * x));
  }
  return m.mat() * (x.transpose() * (p.transpose() * x));
}

FeatureMatrix update_feature_matrix(UpdateRule rule, const FeatureMatrix& m,
                                    const Matrix& estimate, double nfa_power) {
  if (!estimate.allFinite()) {
    throw Error(ErrorCode::InvalidMatrix, "update estimate has non-finite entries");
  }
  switch (rule) {
    case UpdateRule::Nfa:
      return FeatureMatrix(
          psd_power(SymMatrix::from_symmetric_part(estimate), nfa_power));
    case UpdateRule::FactPlain:
      return FeatureMatrix(symmetrized_sqrt(estimate));
    case UpdateRule::FactGeom: {
      // (FACT M M FACT^T)^{1/4} = ((B B^T)^{1/2})^{1/2} for B = FACT * M
      SymMatrix half = symmetrized_sqrt(estimate * m.mat());
      return FeatureMatrix(psd_power(half, 0.5));
    }
  }
  throw Error(ErrorCode::InvalidConfig, "unhandled update rule");
}

double classification_accuracy(const Matrix& predicted, const Matrix& truth,
                               ClassifyRule rule) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols()) {
    throw Error(ErrorCode::ShapeError, "prediction/truth shape mismatch");
  }
  if (rule == ClassifyRule::Auto) {
    rule = truth.cols() > 1 ? ClassifyRule::Argmax : ClassifyRule::Threshold01;
  }
  if (rule == ClassifyRule::None) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  const Eigen::Index n = predicted.rows();
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    bool ok = false;
    switch (rule) {
      case ClassifyRule::Argmax: {
        Eigen::Index a, b;
        predicted.row(i).maxCoeff(&a);
        truth.row(i).maxCoeff(&b);
        ok = a == b;
        break;
      }
      case ClassifyRule::Threshold01:
        ok = (predicted(i, 0) >= 0.5) == (truth(i, 0) >= 0.5);
        break;
      case ClassifyRule::SignPm1:
        ok = (predicted(i, 0) >= 0.0) == (truth(i, 0) >= 0.0);
        break;
      default:
        break;
    }
    correct += ok ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

namespace {

double mse_loss(const Matrix& predicted, const Matrix& truth) {
  return 0.5 * (predicted - truth).squaredNorm() /
         static_cast<double>(truth.rows());
}

}  // namespace

RfmResult rfm_fit(const Matrix& x, const Matrix& y, const Matrix& x_test,
                  const Matrix& y_test, const RfmConfig& config) {
  config.validate();
  if (x.rows() != y.rows() || x_test.rows() != y_test.rows() ||
      x.cols() != x_test.cols() || y.cols() != y_test.cols()) {
    throw Error(ErrorCode::ShapeError, "train/test shape mismatch");
  }

  FeatureMatrix m = FeatureMatrix::identity(x.cols());
  RfmTrace trace;

  for (int t = 0;; ++t) {
    Matrix k = gram(config.kernel, m, x, x);
    DualSolution dual = solve_krr(k, y, config.ridge);

    RfmIterationRecord rec;
    rec.iteration = t;
    Matrix yhat_train = k * dual.alpha;
    Matrix yhat_test = predict(config.kernel, m, x, dual.alpha, x_test);
    rec.train_loss = mse_loss(yhat_train, y);
    rec.test_loss = mse_loss(yhat_test, y_test);
    rec.train_acc = classification_accuracy(yhat_train, y, config.classify);
    rec.test_acc = classification_accuracy(yhat_test, y_test, config.classify);
    rec.m_frobenius = m.mat().norm();
    if (config.store_feature_matrices) rec.feature_matrix = m.mat();

    const bool early_stop = config.early_stop_test_acc &&
                            rec.test_acc >= *config.early_stop_test_acc;
    if (t == config.iterations || early_stop) {
      trace.records.push_back(std::move(rec));
      return RfmResult{std::move(m), std::move(dual), std::move(trace)};
    }

    Matrix estimate = config.rule == UpdateRule::Nfa
                          ? compute_agop(config.kernel, m, x, dual.alpha, x).mat()
                          : compute_fact(config.kernel, m, x, dual);
    {
      EigenDecomposition dec = sym_eig(SymMatrix::from_symmetric_part(estimate));
      rec.est_max_eig = dec.eigenvalues(0);
      rec.est_min_eig = dec.eigenvalues(dec.eigenvalues.size() - 1);
    }
    trace.records.push_back(std::move(rec));

    m = update_feature_matrix(config.rule, m, estimate, config.nfa_power);
    if (!m.mat().allFinite() || m.mat().norm() > config.divergence_norm_cap) {
      throw RfmDivergedError("feature matrix norm exceeded " +
                                 std::to_string(config.divergence_norm_cap) +
                                 " at iteration " + std::to_string(t),
                             std::move(trace));
    }
  }
}

}  // namespace factrfm

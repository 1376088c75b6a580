#pragma once

#include <optional>
#include <string>
#include <vector>

#include "factrfm/kernels.hpp"

namespace factrfm {

/// Kernel ridge regression solution: (K + n*ridge*I) alpha = Y.
struct DualSolution {
  Matrix alpha;       // n x c
  double ridge = 0;   // the lambda that produced alpha
  double residual = 0;  // relative residual of the linear solve
};

enum class UpdateRule { Nfa, FactPlain, FactGeom };

const char* update_rule_name(UpdateRule rule);
UpdateRule update_rule_from_name(const std::string& name);

/// Decision rule used to score predictions in the fit trace.
enum class ClassifyRule { Auto, None, Threshold01, SignPm1, Argmax };

struct RfmConfig {
  UpdateRule rule = UpdateRule::FactGeom;
  double nfa_power = 0.5;          // s in M <- AGOP^s
  int iterations = 1;              // T; 0 = plain kernel regression at M = I
  double ridge = 1e-3;
  bool allow_zero_ridge = false;   // lambda = 0 only with this flag, NFA only
  KernelSpec kernel;
  std::optional<double> early_stop_test_acc;
  ClassifyRule classify = ClassifyRule::Auto;
  bool store_feature_matrices = false;
  double divergence_norm_cap = 1e12;

  void validate() const;
};

struct RfmIterationRecord {
  int iteration = 0;
  double train_loss = 0, test_loss = 0;
  double train_acc = 0, test_acc = 0;
  // eigenvalue range of the symmetrized update estimate (FACT or AGOP)
  double est_min_eig = 0, est_max_eig = 0;
  double m_frobenius = 0;
  std::optional<Matrix> feature_matrix;
};

struct RfmTrace {
  std::vector<RfmIterationRecord> records;

  std::string to_csv() const;
};

struct RfmResult {
  FeatureMatrix feature_matrix;
  DualSolution dual;
  RfmTrace trace;
};

/// Thrown when ||M_t||_F exceeds the divergence cap; carries the trace
/// accumulated so far.
class RfmDivergedError : public Error {
 public:
  RfmDivergedError(std::string message, RfmTrace trace)
      : Error(ErrorCode::Diverged, std::move(message)), trace_(std::move(trace)) {}
  const RfmTrace& trace() const { return trace_; }

 private:
  RfmTrace trace_;
};

DualSolution solve_krr(const Matrix& k, const Matrix& y, double ridge);

Matrix predict(const KernelSpec& spec, const FeatureMatrix& m,
               const Matrix& x_train, const Matrix& alpha,
               const Matrix& x_query);

/// Average gradient outer product of the kernel predictor over x_eval:
/// (1/n_eval) sum_i sum_ch (grad f_ch)(grad f_ch)^T at x_i.
SymMatrix compute_agop(const KernelSpec& spec, const FeatureMatrix& m,
                       const Matrix& x, const Matrix& alpha,
                       const Matrix& x_eval);

/// FACT matrix of the kernel predictor,
///   sum_{i,j} (grad_x K_M(x, x_j)|_{x_i}) (alpha_j . alpha_i) x_i^T,
/// equal to -(1/(n*ridge)) sum_i (grad_x loss_i) x_i^T for a ridge solution.
/// Not symmetric in general.
Matrix compute_fact(const KernelSpec& spec, const FeatureMatrix& m,
                    const Matrix& x, const DualSolution& dual);

/// One feature-matrix update:
///   NFA        M <- (AGOP)^s
///   FactPlain  M <- (FACT FACT^T)^{1/2}
///   FactGeom   M <- (FACT M M FACT^T)^{1/4}
FeatureMatrix update_feature_matrix(UpdateRule rule, const FeatureMatrix& m,
                                    const Matrix& estimate, double nfa_power);

RfmResult rfm_fit(const Matrix& x, const Matrix& y, const Matrix& x_test,
                  const Matrix& y_test, const RfmConfig& config);

/// Fraction of correct predictions under the given decision rule.
double classification_accuracy(const Matrix& predicted, const Matrix& truth,
                               ClassifyRule rule);

}  // namespace factrfm

#pragma once

#include <string>

#include "factrfm/symlinalg.hpp"

namespace factrfm {

enum class KernelFamily { MahalanobisGaussian, MahalanobisLaplace, InnerProduct };
enum class ScalarFn { Exp, Square, Identity };

const char* kernel_family_name(KernelFamily family);
const char* scalar_fn_name(ScalarFn fn);

/// A kernel evaluated in the metric of a learned feature matrix M:
///   gaussian   K_M(x, x') = exp(-q / (2 L^2)),   q = (x-x')^T M (x-x')
///   laplace    K_M(x, x') = exp(-sqrt(q) / L)
///   inner      K_M(x, x') = k(x^T M x')          k in {exp, t^2, t}
struct KernelSpec {
  KernelFamily family = KernelFamily::MahalanobisGaussian;
  double bandwidth = 1.0;             // distance families only
  ScalarFn scalar_fn = ScalarFn::Exp; // inner-product family only

  static KernelSpec gaussian(double bandwidth);
  static KernelSpec laplace(double bandwidth);
  static KernelSpec inner_product(ScalarFn fn);

  bool is_distance_family() const { return family != KernelFamily::InnerProduct; }
  void validate() const;
};

std::string kernel_spec_to_json(const KernelSpec& spec);
KernelSpec kernel_spec_from_json(const std::string& text);

double scalar_k(ScalarFn fn, double t);
double scalar_k_prime(ScalarFn fn, double t);

/// Positive semi-definite feature matrix M = W^T W. Construction checks
/// smallest eigenvalue >= -1e-8 * largest.
class FeatureMatrix {
 public:
  explicit FeatureMatrix(SymMatrix m);
  static FeatureMatrix identity(Eigen::Index dim);

  Eigen::Index dim() const { return m_.dim(); }
  const SymMatrix& sym() const { return m_; }
  const Matrix& mat() const { return m_.mat(); }

 private:
  SymMatrix m_;
};

/// Squared Mahalanobis distances (x_i - x'_j)^T M (x_i - x'_j), clamped at 0
/// against roundoff.
Matrix pairwise_mahalanobis_sq(const FeatureMatrix& m, const Matrix& x,
                               const Matrix& xp);

/// Gram matrix K_M(X, X'): entry (i, j) couples row i of x with row j of xp.
Matrix gram(const KernelSpec& spec, const FeatureMatrix& m, const Matrix& x,
            const Matrix& xp);

/// Analytic gradient of K_M(x, x_j) in x. The Laplace kernel is not
/// differentiable at x = x_j; the zero vector is returned there.
Vector kernel_grad(const KernelSpec& spec, const FeatureMatrix& m,
                   const Vector& x, const Vector& xj);

}  // namespace factrfm

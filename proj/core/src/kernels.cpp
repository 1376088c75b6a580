#include "factrfm/kernels.hpp"

#include <Eigen/Dense>

#include <cmath>

#include <nlohmann/json.hpp>

namespace factrfm {

const char* kernel_family_name(KernelFamily family) {
  switch (family) {
    case KernelFamily::MahalanobisGaussian: return "gaussian";
    case KernelFamily::MahalanobisLaplace: return "laplace";
    case KernelFamily::InnerProduct: return "inner-product";
  }
  return "?";
}

const char* scalar_fn_name(ScalarFn fn) {
  switch (fn) {
    case ScalarFn::Exp: return "exp";
    case ScalarFn::Square: return "square";
    case ScalarFn::Identity: return "identity";
  }
  return "?";
}

KernelSpec KernelSpec::gaussian(double bandwidth) {
  KernelSpec s;
  s.family = KernelFamily::MahalanobisGaussian;
  s.bandwidth = bandwidth;
  s.validate();
  return s;
}

KernelSpec KernelSpec::laplace(double bandwidth) {
  KernelSpec s;
  s.family = KernelFamily::MahalanobisLaplace;
  s.bandwidth = bandwidth;
  s.validate();
  return s;
}

KernelSpec KernelSpec::inner_product(ScalarFn fn) {
  KernelSpec s;
  s.family = KernelFamily::InnerProduct;
  s.scalar_fn = fn;
  return s;
}

void KernelSpec::validate() const {
  if (is_distance_family() && !(bandwidth > 0)) {
    throw Error(ErrorCode::InvalidConfig,
                "bandwidth must be positive for distance kernels");
  }
}

std::string kernel_spec_to_json(const KernelSpec& spec) {
  nlohmann::json j;
  j["family"] = kernel_family_name(spec.family);
  if (spec.is_distance_family()) {
    j["bandwidth"] = spec.bandwidth;
  } else {
    j["scalarFn"] = scalar_fn_name(spec.scalar_fn);
  }
  return j.dump();
}

KernelSpec kernel_spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  KernelSpec spec;
  const std::string family = j.value("family", "");
  if (family == "gaussian") {
    spec.family = KernelFamily::MahalanobisGaussian;
  } else if (family == "laplace") {
    spec.family = KernelFamily::MahalanobisLaplace;
  } else if (family == "inner-product") {
    spec.family = KernelFamily::InnerProduct;
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown kernel family '" + family + "'");
  }
  if (spec.is_distance_family()) {
    if (!j.contains("bandwidth")) {
      throw Error(ErrorCode::InvalidConfig, "distance kernel needs bandwidth");
    }
    spec.bandwidth = j["bandwidth"].get<double>();
  } else {
    const std::string fn = j.value("scalarFn", "");
    if (fn == "exp") spec.scalar_fn = ScalarFn::Exp;
    else if (fn == "square") spec.scalar_fn = ScalarFn::Square;
    else if (fn == "identity") spec.scalar_fn = ScalarFn::Identity;
    else throw Error(ErrorCode::InvalidConfig, "unknown scalarFn '" + fn + "'");
  }
  spec.validate();
  return spec;
}

double scalar_k(ScalarFn fn, double t) {
  switch (fn) {
    case ScalarFn::Exp: return std::exp(t);
    case ScalarFn::Square: return t * t;
    case ScalarFn::Identity: return t;
  }
  return 0;
}

double scalar_k_prime(ScalarFn fn, double t) {
  switch (fn) {
    case ScalarFn::Exp: return std::exp(t);
    case ScalarFn::Square: return 2 * t;
    case ScalarFn::Identity: return 1;
  }
  return 0;
}

FeatureMatrix::FeatureMatrix(SymMatrix m) : m_(std::move(m)) {
  EigenDecomposition dec = sym_eig(m_);
  const double w_max = std::max(dec.eigenvalues(0), 0.0);
  const double w_min = dec.eigenvalues(dec.eigenvalues.size() - 1);
  if (w_min < -1e-8 * w_max) {
    throw Error(ErrorCode::NotPsd,
                "feature matrix has eigenvalue " + std::to_string(w_min));
  }
}

FeatureMatrix FeatureMatrix::identity(Eigen::Index dim) {
  return FeatureMatrix(SymMatrix::identity(dim));
}

namespace {

void check_dims(const FeatureMatrix& m, const Matrix& x, const Matrix& xp) {
  if (x.cols() != m.dim() || xp.cols() != m.dim()) {
    throw Error(ErrorCode::ShapeError,
                "input column count does not match feature matrix dim");
  }
}

}  // namespace

Matrix pairwise_mahalanobis_sq(const FeatureMatrix& m, const Matrix& x,
                               const Matrix& xp) {
  check_dims(m, x, xp);
  Matrix xm = x * m.mat();
  Vector r = xm.cwiseProduct(x).rowwise().sum();
  Vector rp = (xp * m.mat()).cwiseProduct(xp).rowwise().sum();
  Matrix q = (-2.0 * (xm * xp.transpose())).eval();
  q.colwise() += r;
  q.rowwise() += rp.transpose();
  return q.cwiseMax(0.0);
}

Matrix gram(const KernelSpec& spec, const FeatureMatrix& m, const Matrix& x,
            const Matrix& xp) {
  spec.validate();
  check_dims(m, x, xp);
  switch (spec.family) {
    case KernelFamily::MahalanobisGaussian: {
      const double inv = 1.0 / (2.0 * spec.bandwidth * spec.bandwidth);
      return (-inv * pairwise_mahalanobis_sq(m, x, xp)).array().exp();
    }
    case KernelFamily::MahalanobisLaplace: {
      const double inv = 1.0 / spec.bandwidth;
      return (-inv * pairwise_mahalanobis_sq(m, x, xp).cwiseSqrt()).array().exp();
    }
    case KernelFamily::InnerProduct: {
      Matrix t = x * m.mat() * xp.transpose();
      return t.unaryExpr([&](double v) { return scalar_k(spec.scalar_fn, v); });
    }
  }
  throw Error(ErrorCode::UnsupportedKernel, "unhandled kernel family");
}

Vector kernel_grad(const KernelSpec& spec, const FeatureMatrix& m,
                   const Vector& x, const Vector& xj) {
  spec.validate();
  if (x.size() != m.dim() || xj.size() != m.dim()) {
    throw Error(ErrorCode::ShapeError, "kernel_grad dimension mismatch");
  }
  const double bw = spec.bandwidth;
  switch (spec.family) {
    case KernelFamily::MahalanobisGaussian: {
      Vector md = m.mat() * (x - xj);
      const double q = std::max((x - xj).dot(md), 0.0);
      const double k = std::exp(-q / (2 * bw * bw));
      return (-k / (bw * bw)) * md;
    }
    case KernelFamily::MahalanobisLaplace: {
      Vector md = m.mat() * (x - xj);
      const double q = std::max((x - xj).dot(md), 0.0);
      if (q == 0.0) return Vector::Zero(x.size());
      const double k = std::exp(-std::sqrt(q) / bw);
      return (-k / (bw * std::sqrt(q))) * md;
    }
    case KernelFamily::InnerProduct: {
      Vector mxj = m.mat() * xj;
      return scalar_k_prime(spec.scalar_fn, x.dot(mxj)) * mxj;
    }
  }
  throw Error(ErrorCode::UnsupportedKernel, "unhandled kernel family");
}

}  // namespace factrfm

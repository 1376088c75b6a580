#pragma once

#include <cstdint>
#include <functional>
#include <random>

#include "factrfm/nn.hpp"
#include "factrfm/symlinalg.hpp"

namespace factrfm::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols,
                            std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gauss(rng);
  return m;
}

inline SymMatrix random_symmetric(Eigen::Index dim, std::mt19937_64& rng,
                                  double scale = 1.0) {
  Matrix m = random_matrix(dim, dim, rng, scale);
  return SymMatrix::from_symmetric_part(m);
}

inline SymMatrix random_psd(Eigen::Index dim, std::mt19937_64& rng,
                            double scale = 1.0) {
  Matrix b = random_matrix(dim, dim + 2, rng, scale);
  return SymMatrix::from_symmetric_part(b * b.transpose() /
                                        static_cast<double>(dim));
}

inline double rel_error(const Matrix& got, const Matrix& expected) {
  const double denom = std::max(1e-300, expected.norm());
  return (got - expected).norm() / denom;
}

/// Central finite difference of a scalar function along one coordinate of a
/// mutable parameter buffer.
inline double central_difference(const std::function<double()>& eval,
                                 double& param, double step) {
  const double saved = param;
  param = saved + step;
  const double up = eval();
  param = saved - step;
  const double down = eval();
  param = saved;
  return (up - down) / (2.0 * step);
}

/// Runs the tail of a network starting from the input of layer `layer`
/// (1-based). Used to finite-difference the per-layer bundle gradients.
inline Matrix forward_from_layer(const MlpModel& model, int layer,
                                 const Matrix& h_in) {
  Matrix h = h_in;
  for (int l = layer - 1; l < model.num_layers(); ++l) {
    Matrix z = h * model.weights[static_cast<std::size_t>(l)].transpose();
    if (model.has_bias())
      z.rowwise() += model.biases[static_cast<std::size_t>(l)].transpose();
    switch (model.activations[static_cast<std::size_t>(l)]) {
      case Activation::Relu: h = z.cwiseMax(0.0); break;
      case Activation::Quadratic: h = z.array().square(); break;
      case Activation::Identity: h = z; break;
    }
  }
  return h;
}

/// Smallest |pre-activation| in front of any ReLU; finite differences are
/// only trusted when this margin exceeds the step size.
inline double relu_margin(const MlpModel& model, const Matrix& x) {
  double margin = std::numeric_limits<double>::infinity();
  Matrix h = x;
  for (int l = 0; l < model.num_layers(); ++l) {
    Matrix z = h * model.weights[static_cast<std::size_t>(l)].transpose();
    if (model.has_bias())
      z.rowwise() += model.biases[static_cast<std::size_t>(l)].transpose();
    if (model.activations[static_cast<std::size_t>(l)] == Activation::Relu) {
      margin = std::min(margin, z.cwiseAbs().minCoeff());
      h = z.cwiseMax(0.0);
    } else if (model.activations[static_cast<std::size_t>(l)] == Activation::Quadratic) {
      h = z.array().square();
    } else {
      h = z;
    }
  }
  return margin;
}

}  // namespace factrfm::testing

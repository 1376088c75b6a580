#include <benchmark/benchmark.h>

#include <random>

#include "factrfm/datasets.hpp"
#include "factrfm/nn.hpp"
#include "factrfm/rfm.hpp"

using namespace factrfm;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gauss(rng);
  return m;
}

void bm_gram_gaussian(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  Matrix x = random_matrix(n, 64, 1);
  FeatureMatrix m = FeatureMatrix::identity(64);
  KernelSpec spec = KernelSpec::gaussian(3.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(gram(spec, m, x, x));
  }
}
BENCHMARK(bm_gram_gaussian)->Arg(256)->Arg(1024);

void bm_solve_krr(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  Matrix x = random_matrix(n, 32, 2);
  Matrix y = random_matrix(n, 4, 3);
  Matrix k = gram(KernelSpec::gaussian(3.0), FeatureMatrix::identity(32), x, x);
  for (auto _ : state) {
    benchmark::DoNotOptimize(solve_krr(k, y, 1e-3));
  }
}
BENCHMARK(bm_solve_krr)->Arg(256)->Arg(1024);

void bm_compute_agop(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  Matrix x = random_matrix(n, 64, 4);
  Matrix alpha = random_matrix(n, 8, 5);
  FeatureMatrix m = FeatureMatrix::identity(64);
  KernelSpec spec = KernelSpec::gaussian(3.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(compute_agop(spec, m, x, alpha, x));
  }
}
BENCHMARK(bm_compute_agop)->Arg(256)->Arg(1024);

void bm_compute_fact(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  Matrix x = random_matrix(n, 64, 6);
  Matrix y = random_matrix(n, 8, 7);
  FeatureMatrix m = FeatureMatrix::identity(64);
  KernelSpec spec = KernelSpec::gaussian(3.0);
  DualSolution dual = solve_krr(gram(spec, m, x, x), y, 1e-3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(compute_fact(spec, m, x, dual));
  }
}
BENCHMARK(bm_compute_fact)->Arg(256)->Arg(1024);

void bm_psd_power(benchmark::State& state) {
  const Eigen::Index d = state.range(0);
  Matrix b = random_matrix(d, d + 4, 8);
  SymMatrix a = SymMatrix::from_symmetric_part(b * b.transpose());
  for (auto _ : state) {
    benchmark::DoNotOptimize(psd_power(a, 0.5));
  }
}
BENCHMARK(bm_psd_power)->Arg(64)->Arg(256);

void bm_forward_backward(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  Matrix x = random_matrix(n, 50, 9);
  Matrix y = random_matrix(n, 10, 10);
  MlpModel model = MlpModel::init({50, 256, 256, 10},
                                  {Activation::Relu, Activation::Relu}, 11);
  FbOptions options;
  options.weight_decay = 1e-4;
  options.want_jacobians = false;
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward_backward(model, x, y, options));
  }
}
BENCHMARK(bm_forward_backward)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();

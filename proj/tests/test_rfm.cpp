#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include <Eigen/Dense>

#include "factrfm/datasets.hpp"
#include "factrfm/rfm.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace factrfm;
using namespace factrfm::testing;

namespace {

struct Instance {
  Matrix x, y;
  FeatureMatrix m = FeatureMatrix::identity(1);
};

Instance random_instance(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d,
                         Eigen::Index c) {
  Instance inst;
  inst.x = random_matrix(n, d, rng, 0.6);
  inst.y = random_matrix(n, c, rng);
  inst.m = FeatureMatrix{random_psd(d, rng)};
  return inst;
}

}  // namespace

TEST_CASE("solve_krr closed-form cases") {
  Matrix y(2, 1);
  y << 3, -1;
  DualSolution a0 = solve_krr(Matrix::Identity(2, 2), y, 0.0);
  CHECK(rel_error(a0.alpha, y) < 1e-14);

  DualSolution a1 = solve_krr(Matrix::Identity(2, 2), y, 1.0);
  CHECK(rel_error(a1.alpha, Matrix(y / 3.0)) < 1e-14);  // (I + 2*1*I)^{-1} y
}

TEST_CASE("solve_krr matches an independent dense solve") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix k = random_psd(5, rng).mat();
    Matrix y = random_matrix(5, 2, rng);
    const double ridge = 1e-3;
    DualSolution dual = solve_krr(k, y, ridge);
    Matrix system = k + 5 * ridge * Matrix::Identity(5, 5);
    Matrix expected = system.fullPivLu().solve(y);
    CHECK(rel_error(dual.alpha, expected) <= 1e-10);
    CHECK((system * dual.alpha - y).norm() <= 1e-8 * std::max(1.0, y.norm()));
  }
}

TEST_CASE("solve_krr reports singular systems") {
  Matrix k = Matrix::Zero(3, 3);
  Matrix y(3, 1);
  y << 1, 2, 3;
  CHECK_THROWS_AS(solve_krr(k, y, 0.0), Error);
  CHECK_THROWS_AS(solve_krr(Matrix::Zero(3, 2), y, 1.0), Error);
}

TEST_CASE("predict: identity-gram shortcut and single point") {
  // orthonormal rows with the plain inner-product kernel give K = I
  std::mt19937_64 rng(32);
  Matrix x = Matrix::Identity(3, 3);
  Matrix alpha = random_matrix(3, 2, rng);
  KernelSpec spec = KernelSpec::inner_product(ScalarFn::Identity);
  Matrix out = predict(spec, FeatureMatrix::identity(3), x, alpha, x);
  CHECK(rel_error(out, alpha) < 1e-14);

  Matrix x1(1, 3);
  x1 << 0.5, -1.0, 2.0;
  Matrix a1(1, 1);
  a1 << 1.5;
  Matrix q(1, 3);
  q << 1.0, 1.0, 1.0;
  Matrix pred = predict(spec, FeatureMatrix::identity(3), x1, a1, q);
  CHECK(pred(0, 0) == doctest::Approx((q * x1.transpose())(0, 0) * 1.5));
}

TEST_CASE("predict matches the naive double loop") {
  std::mt19937_64 rng(33);
  for (const KernelSpec& spec :
       {KernelSpec::gaussian(1.2), KernelSpec::laplace(0.9),
        KernelSpec::inner_product(ScalarFn::Exp)}) {
    Instance inst = random_instance(rng, 8, 3, 2);
    Matrix alpha = random_matrix(8, 2, rng);
    Matrix xq = random_matrix(5, 3, rng);
    Matrix fast = predict(spec, inst.m, inst.x, alpha, xq);
    Matrix slow = predict_loop(spec, inst.m, inst.x, alpha, xq);
    CHECK(rel_error(fast, slow) <= 1e-12);
  }
}

TEST_CASE("compute_agop: zero coefficients give the zero matrix") {
  std::mt19937_64 rng(34);
  Instance inst = random_instance(rng, 6, 3, 2);
  Matrix agop = compute_agop(KernelSpec::gaussian(1.0), inst.m, inst.x,
                             Matrix::Zero(6, 2), inst.x).mat();
  CHECK(agop.norm() == 0.0);
}

TEST_CASE("compute_agop equals the per-pair kernel_grad route") {
  std::mt19937_64 rng(35);
  for (const KernelSpec& spec :
       {KernelSpec::gaussian(1.4), KernelSpec::laplace(1.1),
        KernelSpec::inner_product(ScalarFn::Exp),
        KernelSpec::inner_product(ScalarFn::Square),
        KernelSpec::inner_product(ScalarFn::Identity)}) {
    CAPTURE(kernel_family_name(spec.family));
    for (int trial = 0; trial < 10; ++trial) {
      Instance inst = random_instance(rng, 9, 3, 2);
      Matrix alpha = random_matrix(9, 2, rng);
      Matrix x_eval = random_matrix(6, 3, rng, 0.6);
      Matrix fast = compute_agop(spec, inst.m, inst.x, alpha, x_eval).mat();
      Matrix slow = agop_loop(spec, inst.m, inst.x, alpha, x_eval);
      CHECK(rel_error(fast, slow) <= 1e-10);
    }
  }
}

TEST_CASE("compute_agop matches finite-difference predictor gradients") {
  std::mt19937_64 rng(36);
  KernelSpec spec = KernelSpec::gaussian(1.0);
  Instance inst = random_instance(rng, 10, 3, 2);
  Matrix alpha = random_matrix(10, 2, rng);

  const double step = 1e-5;
  Matrix agop_fd = Matrix::Zero(3, 3);
  for (Eigen::Index i = 0; i < 10; ++i) {
    Matrix jac(3, 2);
    for (int k = 0; k < 3; ++k) {
      Matrix up = inst.x.row(i), down = inst.x.row(i);
      up(0, k) += step;
      down(0, k) -= step;
      jac.row(k) = (predict(spec, inst.m, inst.x, alpha, up) -
                    predict(spec, inst.m, inst.x, alpha, down)) /
                   (2 * step);
    }
    agop_fd += jac * jac.transpose();
  }
  agop_fd /= 10.0;
  Matrix agop = compute_agop(spec, inst.m, inst.x, alpha, inst.x).mat();
  CHECK(rel_error(agop, agop_fd) <= 1e-4);
}

TEST_CASE("compute_fact: zero coefficients give the zero matrix") {
  std::mt19937_64 rng(37);
  Instance inst = random_instance(rng, 6, 3, 2);
  DualSolution dual;
  dual.alpha = Matrix::Zero(6, 2);
  dual.ridge = 1e-3;
  Matrix fact = compute_fact(KernelSpec::gaussian(1.0), inst.m, inst.x, dual);
  CHECK(fact.norm() == 0.0);
}

TEST_CASE("compute_fact requires a positive ridge") {
  std::mt19937_64 rng(38);
  Instance inst = random_instance(rng, 5, 3, 1);
  DualSolution dual;
  dual.alpha = random_matrix(5, 1, rng);
  dual.ridge = 0.0;
  CHECK_THROWS_AS(compute_fact(KernelSpec::gaussian(1.0), inst.m, inst.x, dual),
                  Error);
}

TEST_CASE("compute_fact equals the per-pair and residual routes") {
  std::mt19937_64 rng(39);
  for (const KernelSpec& spec :
       {KernelSpec::gaussian(1.4), KernelSpec::laplace(1.0),
        KernelSpec::inner_product(ScalarFn::Exp),
        KernelSpec::inner_product(ScalarFn::Square)}) {
    CAPTURE(kernel_family_name(spec.family));
    for (int trial = 0; trial < 8; ++trial) {
      Instance inst = random_instance(rng, 9, 3, 2);
      const double ridge = 1e-2;
      Matrix k = gram(spec, inst.m, inst.x, inst.x);
      DualSolution dual = solve_krr(k, inst.y, ridge);

      Matrix fast = compute_fact(spec, inst.m, inst.x, dual);
      Matrix pair = fact_pair_loop(spec, inst.m, inst.x, dual.alpha);
      CHECK(rel_error(fast, pair) <= 1e-10);

      Matrix residual =
          fact_residual_loop(spec, inst.m, inst.x, inst.y, dual.alpha, ridge);
      CHECK(rel_error(fast, residual) <= 1e-10);
    }
  }
}

TEST_CASE("dual coefficients satisfy alpha_i = -(1/(n lambda)) (yhat_i - y_i)") {
  std::mt19937_64 rng(40);
  for (const KernelSpec& spec :
       {KernelSpec::gaussian(1.2), KernelSpec::inner_product(ScalarFn::Exp)}) {
    for (int trial = 0; trial < 20; ++trial) {
      Instance inst = random_instance(rng, 12, 4, 3);
      const double ridge = 5e-3;
      Matrix k = gram(spec, inst.m, inst.x, inst.x);
      DualSolution dual = solve_krr(k, inst.y, ridge);
      Matrix yhat = k * dual.alpha;
      Matrix reconstructed = -(yhat - inst.y) / (12.0 * ridge);
      CHECK(rel_error(dual.alpha, reconstructed) <= 1e-10);
    }
  }
}

TEST_CASE("inner-product kernels: FACT M^T and AGOP double-sum identities") {
  std::mt19937_64 rng(41);
  for (ScalarFn fn : {ScalarFn::Exp, ScalarFn::Square}) {
    CAPTURE(scalar_fn_name(fn));
    KernelSpec spec = KernelSpec::inner_product(fn);
    Instance inst = random_instance(rng, 20, 4, 2);
    const double ridge = 1e-2;
    Matrix k = gram(spec, inst.m, inst.x, inst.x);
    DualSolution dual = solve_krr(k, inst.y, ridge);

    Matrix fact_mt = compute_fact(spec, inst.m, inst.x, dual) *
                     inst.m.mat().transpose();
    Matrix expected_fact = fact_mt_double_sum(fn, inst.m, inst.x, dual.alpha);
    CHECK(rel_error(fact_mt, expected_fact) <= 1e-8);

    Matrix agop = compute_agop(spec, inst.m, inst.x, dual.alpha, inst.x).mat();
    Matrix expected_agop = agop_tau_double_sum(fn, inst.m, inst.x, dual.alpha);
    CHECK(rel_error(agop, expected_agop) <= 1e-8);
  }
}

TEST_CASE("compute_agop single-point rank-one pattern") {
  // one training point, identity scalar function: the Jacobian is constant
  // equal to M x1 alpha1^T, so AGOP = (alpha1 . alpha1) M x1 x1^T M
  Matrix x1(1, 3);
  x1 << 0.4, -0.2, 1.0;
  Matrix a1(1, 1);
  a1 << 2.0;
  std::mt19937_64 rng(42);
  FeatureMatrix m{random_psd(3, rng)};
  Matrix agop = compute_agop(KernelSpec::inner_product(ScalarFn::Identity), m,
                             x1, a1, x1).mat();
  Matrix expected = 4.0 * (m.mat() * x1.transpose()) * (x1 * m.mat());
  CHECK(rel_error(agop, expected) <= 1e-12);
}

TEST_CASE("update_feature_matrix examples") {
  std::mt19937_64 rng(43);
  SymMatrix m_psd = random_psd(4, rng);
  FeatureMatrix m{m_psd};

  // stated fixed point: estimate == M
  Matrix geom = update_feature_matrix(UpdateRule::FactGeom, m, m.mat(), 0.5).mat();
  CHECK(rel_error(geom, m.mat()) <= 1e-8);

  Matrix diag(2, 2);
  diag << 4, 0, 0, 1;
  Matrix nfa = update_feature_matrix(UpdateRule::Nfa, FeatureMatrix::identity(2),
                                     diag, 1.0).mat();
  CHECK(rel_error(nfa, diag) <= 1e-12);

  Matrix plain = update_feature_matrix(UpdateRule::FactPlain,
                                       FeatureMatrix::identity(3),
                                       Matrix(-Matrix::Identity(3, 3)), 0.5).mat();
  CHECK(rel_error(plain, Matrix::Identity(3, 3)) <= 1e-12);

  Matrix inf = Matrix::Constant(2, 2, std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(update_feature_matrix(UpdateRule::FactPlain,
                                        FeatureMatrix::identity(2), inf, 0.5),
                  Error);
}

TEST_CASE("all update rules are fixed at M when the estimate equals M") {
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 100; ++trial) {
    FeatureMatrix m{random_psd(4, rng)};
    for (UpdateRule rule :
         {UpdateRule::Nfa, UpdateRule::FactPlain, UpdateRule::FactGeom}) {
      Matrix next = update_feature_matrix(rule, m, m.mat(), 1.0).mat();
      CHECK(rel_error(next, m.mat()) <= 1e-8);
    }
  }
}

TEST_CASE("rfm config validation") {
  RfmConfig config;
  config.kernel = KernelSpec::gaussian(1.0);
  config.iterations = -1;
  CHECK_THROWS_AS(config.validate(), Error);
  config.iterations = 2;
  config.ridge = 0;
  CHECK_THROWS_AS(config.validate(), Error);
  config.allow_zero_ridge = true;
  config.rule = UpdateRule::FactGeom;
  CHECK_THROWS_AS(config.validate(), Error);
  config.rule = UpdateRule::Nfa;
  CHECK_NOTHROW(config.validate());
  CHECK(update_rule_from_name("fact-geom") == UpdateRule::FactGeom);
  CHECK_THROWS_AS(update_rule_from_name("boost"), Error);
}

TEST_CASE("rfm_fit with T=0 is plain kernel regression at M = I") {
  std::mt19937_64 rng(45);
  TrainTest tt = gen_sparse_parity(60, 8, 2, 46, true, 40);
  RfmConfig config;
  config.kernel = KernelSpec::gaussian(2.0);
  config.rule = UpdateRule::FactGeom;
  config.iterations = 0;
  config.ridge = 1e-3;

  RfmResult result = rfm_fit(tt.train.X, tt.train.Y, tt.test.X, tt.test.Y, config);
  CHECK(result.trace.records.size() == 1);
  CHECK(rel_error(result.feature_matrix.mat(), Matrix::Identity(8, 8)) == 0.0);

  Matrix k = gram(config.kernel, FeatureMatrix::identity(8), tt.train.X, tt.train.X);
  DualSolution direct = solve_krr(k, tt.train.Y, config.ridge);
  CHECK(rel_error(result.dual.alpha, direct.alpha) < 1e-14);
}

TEST_CASE("rfm_fit keeps M symmetric p.s.d. at every iteration") {
  TrainTest tt = gen_sparse_parity(80, 10, 2, 47, true, 30);
  for (UpdateRule rule :
       {UpdateRule::Nfa, UpdateRule::FactPlain, UpdateRule::FactGeom}) {
    RfmConfig config;
    config.kernel = KernelSpec::gaussian(3.0);
    config.rule = rule;
    config.iterations = 3;
    config.ridge = 1e-3;
    config.store_feature_matrices = true;
    RfmResult result = rfm_fit(tt.train.X, tt.train.Y, tt.test.X, tt.test.Y, config);
    CHECK(result.trace.records.size() == 4);
    for (const auto& rec : result.trace.records) {
      REQUIRE(rec.feature_matrix.has_value());
      EigenDecomposition dec =
          sym_eig(SymMatrix::from_symmetric_part(*rec.feature_matrix));
      CHECK(dec.eigenvalues(dec.eigenvalues.size() - 1) >=
            -1e-8 * std::max(dec.eigenvalues(0), 0.0));
    }
  }
}

TEST_CASE("rfm_fit early stop and divergence guard") {
  TrainTest tt = gen_sparse_parity(100, 8, 1, 48, true, 50);
  RfmConfig config;
  config.kernel = KernelSpec::gaussian(2.0);
  config.rule = UpdateRule::FactGeom;
  config.iterations = 10;
  config.ridge = 1e-4;
  config.early_stop_test_acc = 1.0;
  RfmResult result = rfm_fit(tt.train.X, tt.train.Y, tt.test.X, tt.test.Y, config);
  CHECK(result.trace.records.size() < 11);
  CHECK(result.trace.records.back().test_acc == 1.0);

  config.early_stop_test_acc.reset();
  config.divergence_norm_cap = 1e-9;  // force the guard on the first update
  try {
    rfm_fit(tt.train.X, tt.train.Y, tt.test.X, tt.test.Y, config);
    FAIL("expected divergence");
  } catch (const RfmDivergedError& e) {
    CHECK(e.code() == ErrorCode::Diverged);
    CHECK(e.trace().records.size() == 1);
  }
}

TEST_CASE("trace CSV has one row per completed iteration") {
  TrainTest tt = gen_sparse_parity(40, 6, 2, 49, true, 20);
  RfmConfig config;
  config.kernel = KernelSpec::gaussian(2.0);
  config.iterations = 2;
  config.ridge = 1e-3;
  RfmResult result = rfm_fit(tt.train.X, tt.train.Y, tt.test.X, tt.test.Y, config);
  const std::string csv = result.trace.to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 records
  CHECK(csv.find("trainLoss") != std::string::npos);
}

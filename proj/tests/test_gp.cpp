#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mbc/gp.hpp"
#include "oracles.hpp"

using namespace mbc;

namespace {

KernelSpec rbf_only(double var, double ls) {
  KernelSpec s;
  s.rbf_variance = var;
  s.rbf_lengthscale = ls;
  s.lin_variance = 1e-30;  // negligible
  s.lin_offset = 0.0;
  s.noise_variance = 1e-2;
  return s;
}

TrainingWindow grid_window(int n, double dt, double t0, const std::vector<double>& values) {
  TrainingWindow w;
  for (int i = 0; i < n; ++i) w.times.push_back(t0 + dt * i);
  w.values = values;
  return w;
}

}  // namespace

TEST_CASE("kernel_eval matches the compound RBF+linear form") {
  KernelSpec s = rbf_only(1.0, 1.0);
  CHECK(kernel_eval(s, 3.0, 3.0) == doctest::Approx(1.0).epsilon(1e-12));

  KernelSpec lin;
  lin.rbf_variance = 1e-12;
  lin.rbf_lengthscale = 1.0;
  lin.lin_variance = 2.0;
  lin.lin_offset = 0.0;
  lin.noise_variance = 1e-2;
  CHECK(kernel_eval(lin, 2.0, 3.0) ==
        doctest::Approx(12.0 + 1e-12 * std::exp(-0.5)).epsilon(1e-14));

  // exp(-(2)^2 / (2*4))
  CHECK(kernel_eval(rbf_only(1.0, 2.0), 0.0, 2.0) ==
        doctest::Approx(0.60653065971263342).epsilon(1e-12));
}

TEST_CASE("kernel_eval is exactly symmetric") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 200; ++i) {
    auto inst = oracle::random_instance(rng);
    const double a = u(rng), b = u(rng);
    CHECK(kernel_eval(inst.spec, a, b) == kernel_eval(inst.spec, b, a));
    CHECK(kernel_eval(inst.spec, a, a) >= inst.spec.rbf_variance - 1e-15);
  }
}

TEST_CASE("gram_matrix examples") {
  KernelSpec s = rbf_only(1.0, 1.0);
  s.noise_variance = 0.1;

  const double single[] = {0.0};
  auto k1 = gram_matrix(s, single, true);
  CHECK(k1(0, 0) == doctest::Approx(1.1).epsilon(1e-14));

  // zero lag: off-diagonal equals diagonal minus noise
  const double dup[] = {2.0, 2.0};
  auto k2 = gram_matrix(s, dup, true);
  CHECK(k2(0, 1) == doctest::Approx(k2(0, 0) - s.noise_variance).epsilon(1e-14));

  const double pair[] = {0.0, 1.0};
  auto k3 = gram_matrix(rbf_only(1.0, 1.0), pair, false);
  CHECK(k3(0, 0) == doctest::Approx(1.0));
  CHECK(k3(0, 1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(k3(1, 0) == k3(0, 1));
}

TEST_CASE("gram matrices admit Cholesky with noise >= 1e-8") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> nd(1, 20);
  for (int rep = 0; rep < 100; ++rep) {
    auto inst = oracle::random_instance(rng, 1, 15);
    inst.spec.noise_variance = std::max(inst.spec.noise_variance, 1e-8);
    std::vector<double> times;
    const int n = nd(rng);
    for (int i = 0; i < n; ++i) times.push_back(0.1 * i);
    CHECK_NOTHROW(cholesky_with_jitter(gram_matrix(inst.spec, times, true)));
  }
}

TEST_CASE("cholesky_with_jitter rejects an indefinite matrix") {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  CHECK_THROWS_AS(cholesky_with_jitter(m), CholeskyFailure);

  // a rank-deficient gram matrix is rescued by the jitter policy
  KernelSpec s = rbf_only(1.0, 1.0);
  const double dup[] = {1.0, 1.0, 1.0};
  CHECK_NOTHROW(cholesky_with_jitter(gram_matrix(s, dup, false)));
}

TEST_CASE("posterior_predict on a constant window returns the constant") {
  auto w = grid_window(10, 0.1, 4.0, std::vector<double>(10, 5.0));
  KernelSpec s = rbf_only(1.0, 1.0);
  s.lin_variance = 0.5;
  const double q[] = {4.35, 4.9, 5.4};
  auto post = posterior_predict(s, w, q);
  for (double m : post.mean) CHECK(m == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("posterior_predict matches the dense-inverse oracle") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    auto inst = oracle::random_instance(rng, 5, 15);
    std::vector<double> q;
    std::uniform_real_distribution<double> u(-0.5, 2.0);
    for (int i = 0; i < 3; ++i) q.push_back(inst.window.times.front() + u(rng));
    auto got = posterior_predict(inst.spec, inst.window, q);
    auto want = oracle::posterior(inst.spec, inst.window, q);
    GpPredictor pred(inst.spec, inst.window);
    const double sd = pred.standardization().std;
    for (std::size_t i = 0; i < q.size(); ++i) {
      CHECK(std::abs(got.mean[i] - want.mean[i]) <= 1e-8 * std::max(1.0, std::abs(want.mean[i])));
      // variance is a difference of two same-scale terms; 1e-8 is relative
      // to that scale, the prior variance
      const double tq = q[i] - inst.window.times.front();
      const double prior = sd * sd * kernel_eval(inst.spec, tq, tq);
      CHECK(std::abs(got.variance[i] - want.variance[i]) <= 1e-8 * std::max(1.0, prior));
    }
  }
}

TEST_CASE("posterior_predict interpolates the window in the small-noise limit") {
  std::vector<double> vals;
  for (int i = 0; i < 10; ++i) vals.push_back(std::sin(0.7 * i) + 2.0);
  auto w = grid_window(10, 0.1, 0.0, vals);
  KernelSpec s = rbf_only(1.0, 0.5);
  s.noise_variance = 1e-10;
  auto post = posterior_predict(s, w, w.times);
  for (std::size_t i = 0; i < vals.size(); ++i) {
    CHECK(post.mean[i] == doctest::Approx(vals[i]).epsilon(1e-4));
  }
}

TEST_CASE("posterior variance never exceeds the prior variance") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1.0, 3.0);
  for (int rep = 0; rep < 50; ++rep) {
    auto inst = oracle::random_instance(rng, 4, 12);
    GpPredictor pred(inst.spec, inst.window);
    const auto& st = pred.standardization();
    for (int i = 0; i < 5; ++i) {
      const double t = inst.window.times.front() + u(rng);
      const double tq = t - inst.window.times.front();
      const double prior = st.std * st.std * kernel_eval(inst.spec, tq, tq);
      CHECK(pred.variance_at(t) <= prior + 1e-9);
    }
  }
}

TEST_CASE("log marginal likelihood: single standardized point") {
  // K = k(0,0) + noise = 0.6 + 0.4 = 1 => -0.5*ln(2*pi)
  KernelSpec s = rbf_only(0.6, 1.0);
  s.noise_variance = 0.4;
  const double t[] = {0.0};
  const double v[] = {0.0};
  CHECK(log_marginal_likelihood_raw(s, t, v) ==
        doctest::Approx(-0.91893853320467274).epsilon(1e-12));
}

TEST_CASE("log_marginal_likelihood matches the dense oracle") {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 50; ++rep) {
    auto inst = oracle::random_instance(rng, 8, 8);
    CHECK(log_marginal_likelihood(inst.spec, inst.window) ==
          doctest::Approx(oracle::lml(inst.spec, inst.window)).epsilon(1e-9));
  }
}

TEST_CASE("scaling values by 10 and noise by 100 shifts LML by -n*ln(10)") {
  std::mt19937_64 rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    auto inst = oracle::random_instance(rng, 6, 12);
    const double lml1 = log_marginal_likelihood(inst.spec, inst.window);
    TrainingWindow scaled = inst.window;
    for (double& v : scaled.values) v *= 10.0;
    KernelSpec s2 = inst.spec;
    s2.noise_variance *= 100.0;
    const double lml2 = log_marginal_likelihood(s2, scaled);
    const double n = static_cast<double>(inst.window.times.size());
    CHECK(lml2 - lml1 == doctest::Approx(-n * std::log(10.0)).epsilon(1e-9));
  }
}

TEST_CASE("analytic LML gradient matches central finite differences") {
  std::mt19937_64 rng(41);
  int checked = 0;
  for (int rep = 0; rep < 30; ++rep) {
    auto inst = oracle::random_instance_well_conditioned(rng);
    const Eigen::Vector4d a = lml_gradient(inst.spec, inst.window);
    const Eigen::Vector4d fd = oracle::fd_lml_gradient(inst.spec, inst.window);
    for (int i = 0; i < 4; ++i) {
      const double denom = std::max({std::abs(a[i]), std::abs(fd[i]), 1e-3});
      CHECK(std::abs(a[i] - fd[i]) / denom < 1e-4);
      ++checked;
    }
  }
  CHECK(checked == 120);
}

TEST_CASE("fit recovers a linear trend and extrapolates it") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> jitter(0.0, 1e-4);
  TrainingWindow w;
  const double a = 2.0, b = 5.0;
  for (int i = 0; i < 10; ++i) {
    const double t = 0.1 * i;
    w.times.push_back(t);
    w.values.push_back(a * t + b + jitter(rng));
  }
  FitConfig cfg;
  cfg.seed = 3;
  auto spec = fit_hyperparameters(w, cfg);
  const double tq[] = {w.times.back() + 1.0};
  auto post = posterior_predict(spec, w, tq);
  const double target = a * tq[0] + b;
  CHECK(std::abs(post.mean[0] - target) < 0.05 * std::abs(target));
}

TEST_CASE("fit on a constant window predicts the constant at any horizon") {
  auto w = grid_window(10, 0.1, 2.0, std::vector<double>(10, -3.25));
  FitConfig cfg;
  auto spec = fit_hyperparameters(w, cfg);
  const double tq[] = {3.0, 7.5, 30.0};
  auto post = posterior_predict(spec, w, tq);
  for (double m : post.mean) CHECK(m == doctest::Approx(-3.25).epsilon(1e-3));
}

TEST_CASE("fit result beats every start point and sits at a stationary point") {
  std::mt19937_64 rng(29);
  auto inst = oracle::random_instance_well_conditioned(rng, 10, 10);
  FitConfig cfg;
  cfg.seed = 19;
  auto spec = fit_hyperparameters(inst.window, cfg);
  const double best = log_marginal_likelihood(spec, inst.window);
  for (const auto& s0 : fit_start_points(inst.window, cfg)) {
    double at_start;
    try {
      at_start = log_marginal_likelihood(s0, inst.window);
    } catch (const CholeskyFailure&) {
      continue;
    }
    CHECK(best >= at_start - 1e-9);
  }

  // projected gradient at the optimum: components pressing against a bound
  // are excluded, interior components must be close to zero and FD-verified
  const Eigen::Vector4d g = lml_gradient(spec, inst.window);
  const Eigen::Vector4d fd = oracle::fd_lml_gradient(spec, inst.window);
  const double params[4] = {spec.rbf_variance, spec.rbf_lengthscale, spec.lin_variance,
                            spec.noise_variance};
  const double lo[4] = {cfg.var_lo, cfg.lengthscale_lo, cfg.var_lo, cfg.noise_lo};
  const double hi[4] = {cfg.var_hi, cfg.lengthscale_hi, cfg.var_hi, cfg.noise_hi};
  for (int i = 0; i < 4; ++i) {
    const bool at_lo = params[i] <= lo[i] * (1.0 + 1e-9) && g[i] < 0.0;
    const bool at_hi = params[i] >= hi[i] * (1.0 - 1e-9) && g[i] > 0.0;
    if (at_lo || at_hi) continue;
    CHECK(std::abs(g[i]) < 1e-3);
    CHECK(std::abs(g[i] - fd[i]) < 1e-4 * std::max({std::abs(g[i]), std::abs(fd[i]), 1e-3}));
  }
}

TEST_CASE("degenerate inputs raise the documented errors") {
  TrainingWindow w;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  w.times = {0.0, 0.0};
  w.values = {1.0, 2.0};
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);

  KernelSpec s;
  s.rbf_variance = -1.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

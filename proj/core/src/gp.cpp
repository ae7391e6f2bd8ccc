#include "mbc/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mbc/util.hpp"

namespace mbc {

namespace {

constexpr double kStdFloor = 1e-6;
constexpr double kJitterStart = 1e-10;
constexpr double kJitterMax = 1e-4;
constexpr double kLog2Pi = 1.8378770664093454836;

// One window mapped into the space inference runs in: times re-based to the
// window start, values standardized, noise rescaled by the window variance.
struct StandardizedProblem {
  std::vector<double> tau;
  Eigen::VectorXd z;
  Standardization st;
  double noise_eff = 0.0;  // noise_variance / st.std^2
};

StandardizedProblem standardize(const KernelSpec& spec, const TrainingWindow& train) {
  train.validate();
  StandardizedProblem p;
  const double base = train.times.front();
  p.tau.resize(train.times.size());
  for (std::size_t i = 0; i < train.times.size(); ++i) p.tau[i] = train.times[i] - base;
  p.st = window_standardization(train.values);
  p.z.resize(static_cast<Eigen::Index>(train.values.size()));
  for (std::size_t i = 0; i < train.values.size(); ++i) {
    p.z[static_cast<Eigen::Index>(i)] = (train.values[i] - p.st.mean) / p.st.std;
  }
  p.noise_eff = spec.noise_variance / (p.st.std * p.st.std);
  return p;
}

Eigen::MatrixXd signal_gram(const KernelSpec& spec, std::span<const double> tau) {
  const auto n = static_cast<Eigen::Index>(tau.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = kernel_eval(spec, tau[static_cast<std::size_t>(i)],
                                   tau[static_cast<std::size_t>(j)]);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

double lml_from_pieces(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& z) {
  const auto n = z.size();
  const Eigen::VectorXd alpha = llt.solve(z);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) logdet += std::log(llt.matrixLLT()(i, i));
  logdet *= 2.0;
  return -0.5 * z.dot(alpha) - 0.5 * logdet - 0.5 * static_cast<double>(n) * kLog2Pi;
}

}  // namespace

void KernelSpec::validate() const {
  auto bad = [](double v) { return !(v > 0.0) || !std::isfinite(v); };
  if (bad(rbf_variance) || bad(rbf_lengthscale) || bad(lin_variance) || bad(noise_variance) ||
      !std::isfinite(lin_offset)) {
    throw std::invalid_argument("KernelSpec: variances and lengthscale must be positive finite");
  }
}

void TrainingWindow::validate() const {
  if (times.size() != values.size() || times.empty()) {
    throw std::invalid_argument("TrainingWindow: times/values size mismatch or empty");
  }
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) {
      throw std::invalid_argument("TrainingWindow: times must be strictly increasing");
    }
  }
}

double kernel_eval(const KernelSpec& spec, double t1, double t2) {
  const double d = t1 - t2;
  const double ls2 = spec.rbf_lengthscale * spec.rbf_lengthscale;
  const double rbf = spec.rbf_variance * std::exp(-d * d / (2.0 * ls2));
  // grouped so the value is bit-identical under argument swap
  const double lin = spec.lin_variance * ((t1 - spec.lin_offset) * (t2 - spec.lin_offset));
  return rbf + lin;
}

Eigen::MatrixXd gram_matrix(const KernelSpec& spec, std::span<const double> times,
                            bool with_noise) {
  if (times.empty()) throw std::invalid_argument("gram_matrix: empty times");
  Eigen::MatrixXd k = signal_gram(spec, times);
  if (with_noise) k.diagonal().array() += spec.noise_variance;
  return k;
}

Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(Eigen::MatrixXd k) {
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() == Eigen::Success) return llt;
  for (double jitter = kJitterStart; jitter <= kJitterMax * 1.0000001; jitter *= 10.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    llt.compute(kj);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw CholeskyFailure("gram matrix not positive-definite after jitter escalation");
}

Standardization window_standardization(std::span<const double> values) {
  Standardization st;
  st.mean = mean_of(values);
  st.std = std::max(stddev_of(values), kStdFloor);
  return st;
}

GpPredictor::GpPredictor(const KernelSpec& spec, const TrainingWindow& train) : spec_(spec) {
  spec.validate();
  auto p = standardize(spec, train);
  t_base_ = train.times.front();
  st_ = p.st;
  tau_ = std::move(p.tau);
  Eigen::MatrixXd k = signal_gram(spec_, tau_);
  k.diagonal().array() += p.noise_eff;
  auto llt = cholesky_with_jitter(std::move(k));
  lower_ = llt.matrixL();
  alpha_ = llt.solve(p.z);
}

// Scalar accumulation in ascending index order; the simulator relies on this
// being bit-identical between batched and one-at-a-time queries.
double GpPredictor::mean_at(double t) const {
  const double tq = t - t_base_;
  double acc = 0.0;
  for (std::size_t j = 0; j < tau_.size(); ++j) {
    acc += kernel_eval(spec_, tq, tau_[j]) * alpha_[static_cast<Eigen::Index>(j)];
  }
  return st_.mean + st_.std * acc;
}

double GpPredictor::variance_at(double t) const {
  const double tq = t - t_base_;
  const auto n = static_cast<Eigen::Index>(tau_.size());
  Eigen::VectorXd kstar(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    kstar[j] = kernel_eval(spec_, tq, tau_[static_cast<std::size_t>(j)]);
  }
  lower_.triangularView<Eigen::Lower>().solveInPlace(kstar);
  double var = kernel_eval(spec_, tq, tq) - kstar.squaredNorm();
  if (var < 0.0) var = 0.0;
  return st_.std * st_.std * var;
}

Posterior GpPredictor::predict(std::span<const double> times) const {
  Posterior out;
  out.mean.reserve(times.size());
  out.variance.reserve(times.size());
  for (double t : times) {
    out.mean.push_back(mean_at(t));
    out.variance.push_back(variance_at(t));
  }
  return out;
}

Posterior posterior_predict(const KernelSpec& spec, const TrainingWindow& train,
                            std::span<const double> query_times) {
  if (query_times.empty()) throw std::invalid_argument("posterior_predict: empty query");
  GpPredictor pred(spec, train);
  return pred.predict(query_times);
}

double log_marginal_likelihood(const KernelSpec& spec, const TrainingWindow& train) {
  spec.validate();
  auto p = standardize(spec, train);
  Eigen::MatrixXd k = signal_gram(spec, p.tau);
  k.diagonal().array() += p.noise_eff;
  auto llt = cholesky_with_jitter(std::move(k));
  const double n = static_cast<double>(p.tau.size());
  return lml_from_pieces(llt, p.z) - n * std::log(p.st.std);
}

double log_marginal_likelihood_raw(const KernelSpec& spec, std::span<const double> times,
                                   std::span<const double> values) {
  spec.validate();
  if (times.size() != values.size() || times.empty()) {
    throw std::invalid_argument("log_marginal_likelihood_raw: bad inputs");
  }
  Eigen::MatrixXd k = gram_matrix(spec, times, /*with_noise=*/true);
  auto llt = cholesky_with_jitter(std::move(k));
  Eigen::VectorXd z(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) z[static_cast<Eigen::Index>(i)] = values[i];
  return lml_from_pieces(llt, z);
}

Eigen::Vector4d lml_gradient(const KernelSpec& spec, const TrainingWindow& train) {
  spec.validate();
  auto p = standardize(spec, train);
  const auto n = static_cast<Eigen::Index>(p.tau.size());

  const double ls = spec.rbf_lengthscale;
  Eigen::MatrixXd e(n, n);   // exp(-d^2/(2 ls^2))
  Eigen::MatrixXd d2(n, n);  // squared time lags
  Eigen::VectorXd tc(n);     // tau - lin_offset
  for (Eigen::Index i = 0; i < n; ++i) {
    tc[i] = p.tau[static_cast<std::size_t>(i)] - spec.lin_offset;
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double d = p.tau[static_cast<std::size_t>(i)] - p.tau[static_cast<std::size_t>(j)];
      d2(i, j) = d2(j, i) = d * d;
      const double v = std::exp(-d * d / (2.0 * ls * ls));
      e(i, j) = e(j, i) = v;
    }
  }

  Eigen::MatrixXd k = spec.rbf_variance * e + spec.lin_variance * (tc * tc.transpose());
  k.diagonal().array() += p.noise_eff;
  auto llt = cholesky_with_jitter(std::move(k));
  const Eigen::VectorXd alpha = llt.solve(p.z);
  const Eigen::MatrixXd kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::MatrixXd a = alpha * alpha.transpose() - kinv;

  // d LML / d log(theta) = theta/2 * tr(A dK/dtheta)
  Eigen::Vector4d g;
  g[0] = 0.5 * spec.rbf_variance * a.cwiseProduct(e).sum();
  g[1] = 0.5 * spec.rbf_variance * a.cwiseProduct(e.cwiseProduct(d2)).sum() / (ls * ls);
  g[2] = 0.5 * spec.lin_variance * a.cwiseProduct(tc * tc.transpose()).sum();
  g[3] = 0.5 * p.noise_eff * a.trace();
  return g;
}

std::vector<KernelSpec> fit_start_points(const TrainingWindow& train, const FitConfig& config) {
  train.validate();
  const double span = std::max(train.times.back() - train.times.front(), 0.1);
  auto clamp = [](double v, double lo, double hi) { return std::min(std::max(v, lo), hi); };

  std::vector<KernelSpec> starts;
  const int n = std::max(config.restarts, 1);
  for (int r = 0; r < n; ++r) {
    KernelSpec s;
    s.lin_offset = 0.0;
    if (r == 0) {
      s.rbf_variance = 1.0;
      s.rbf_lengthscale = clamp(span, config.lengthscale_lo, config.lengthscale_hi);
      s.lin_variance = 1.0;
      s.noise_variance = clamp(1e-2, config.noise_lo, config.noise_hi);
    } else if (r == 1) {
      // long-lengthscale start: favors smooth trend extrapolation
      s.rbf_variance = 1.0;
      s.rbf_lengthscale = clamp(3.0 * span, config.lengthscale_lo, config.lengthscale_hi);
      s.lin_variance = 0.1;
      s.noise_variance = clamp(1e-3, config.noise_lo, config.noise_hi);
    } else {
      std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(r)));
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      auto log_uniform = [&](double lo, double hi) {
        return std::exp(std::log(lo) + u01(rng) * (std::log(hi) - std::log(lo)));
      };
      s.rbf_variance = log_uniform(1e-2, 1e2);
      s.rbf_lengthscale = log_uniform(std::max(config.lengthscale_lo, 0.1 * span),
                                      std::min(config.lengthscale_hi, 30.0 * span));
      s.lin_variance = log_uniform(1e-2, 1e2);
      s.noise_variance = log_uniform(std::max(config.noise_lo, 1e-5),
                                     std::min(config.noise_hi, 1e-1));
    }
    starts.push_back(s);
  }
  return starts;
}

namespace {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

struct LogSpace {
  Vec4 lo, hi;

  Vec4 clamp(Vec4 u) const {
    for (int i = 0; i < 4; ++i) u[i] = std::min(std::max(u[i], lo[i]), hi[i]);
    return u;
  }
};

KernelSpec spec_from_log(const Vec4& u) {
  KernelSpec s;
  s.rbf_variance = std::exp(u[0]);
  s.rbf_lengthscale = std::exp(u[1]);
  s.lin_variance = std::exp(u[2]);
  s.noise_variance = std::exp(u[3]);
  s.lin_offset = 0.0;
  return s;
}

// Objective is -LML; returns false when the Cholesky fails at this point.
bool eval_objective(const TrainingWindow& train, const Vec4& u, double& f, Vec4& g) {
  const KernelSpec s = spec_from_log(u);
  try {
    f = -log_marginal_likelihood(s, train);
    g = -lml_gradient(s, train);
  } catch (const CholeskyFailure&) {
    return false;
  }
  return std::isfinite(f) && g.allFinite();
}

// Projected BFGS descent over the box; returns true when the start was usable.
bool bfgs_in_box(const TrainingWindow& train, const LogSpace& box, int max_iters,
                 double grad_tol, Vec4& u, double& f) {
  u = box.clamp(u);
  Vec4 g;
  if (!eval_objective(train, u, f, g)) return false;

  Mat4 h = Mat4::Identity();
  for (int iter = 0; iter < max_iters; ++iter) {
    Vec4 pg = g;
    for (int i = 0; i < 4; ++i) {
      const bool at_lo = u[i] <= box.lo[i] + 1e-12 && g[i] > 0.0;
      const bool at_hi = u[i] >= box.hi[i] - 1e-12 && g[i] < 0.0;
      if (at_lo || at_hi) pg[i] = 0.0;
    }
    if (pg.lpNorm<Eigen::Infinity>() < grad_tol) break;

    Vec4 d = -(h * g);
    if (d.dot(g) >= 0.0) d = -g;

    double step = 1.0;
    bool accepted = false;
    Vec4 u_new, g_new, s;
    double f_new = 0.0;
    for (int ls = 0; ls < 40; ++ls) {
      u_new = box.clamp(u + step * d);
      s = u_new - u;
      if (s.lpNorm<Eigen::Infinity>() < 1e-15) break;
      const double slope = g.dot(s);
      if (eval_objective(train, u_new, f_new, g_new) &&
          f_new <= f + 1e-4 * std::min(slope, 0.0) && f_new < f) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    const Vec4 y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      const Mat4 id = Mat4::Identity();
      const double rho = 1.0 / sy;
      h = (id - rho * s * y.transpose()) * h * (id - rho * y * s.transpose()) +
          rho * s * s.transpose();
    }
    u = u_new;
    f = f_new;
    g = g_new;
  }
  return true;
}

}  // namespace

KernelSpec fit_hyperparameters(const TrainingWindow& train, const FitConfig& config) {
  train.validate();
  LogSpace box;
  box.lo << std::log(config.var_lo), std::log(config.lengthscale_lo), std::log(config.var_lo),
      std::log(config.noise_lo);
  box.hi << std::log(config.var_hi), std::log(config.lengthscale_hi), std::log(config.var_hi),
      std::log(config.noise_hi);

  const auto starts = fit_start_points(train, config);
  bool any = false;
  double best_f = std::numeric_limits<double>::infinity();
  Vec4 best_u = Vec4::Zero();
  for (const auto& s0 : starts) {
    Vec4 u;
    u << std::log(s0.rbf_variance), std::log(s0.rbf_lengthscale), std::log(s0.lin_variance),
        std::log(s0.noise_variance);
    double f = 0.0;
    if (!bfgs_in_box(train, box, config.max_iters, config.grad_tol, u, f)) continue;
    any = true;
    if (f < best_f) {
      best_f = f;
      best_u = u;
    }
  }
  if (!any) throw FitDegenerate("all fit restarts failed Cholesky");
  return spec_from_log(best_u);
}

}  // namespace mbc

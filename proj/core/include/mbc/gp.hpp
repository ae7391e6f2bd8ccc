#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "mbc/errors.hpp"

namespace mbc {

/// Hyperparameters of the compound RBF + linear kernel plus observation
/// noise. The signal terms (rbf_variance, rbf_lengthscale, lin_variance,
/// lin_offset) live in the standardized space a training window is mapped
/// into before inference; noise_variance is observation noise in the
/// channel's original units and is rescaled by the window variance
/// internally.
struct KernelSpec {
  double rbf_variance = 1.0;
  double rbf_lengthscale = 1.0;  // seconds
  double lin_variance = 1.0;
  double lin_offset = 0.0;  // seconds
  double noise_variance = 1e-2;

  void validate() const;  // throws std::invalid_argument on non-positive variances
};

/// The most recent equally spaced samples of one channel.
struct TrainingWindow {
  std::vector<double> times;   // seconds, strictly increasing
  std::vector<double> values;  // channel units

  void validate() const;
};

struct Posterior {
  std::vector<double> mean;
  std::vector<double> variance;  // latent-function variance, >= 0
};

struct FitConfig {
  int restarts = 4;
  int max_iters = 200;
  double var_lo = 1e-6;
  double var_hi = 1e3;
  double lengthscale_lo = 0.05;
  double lengthscale_hi = 100.0;
  double noise_lo = 1e-6;
  double noise_hi = 1.0;
  double grad_tol = 1e-5;
  std::uint64_t seed = 0;
};

/// k(t1,t2) = rbf_variance * exp(-(t1-t2)^2 / (2 ls^2))
///          + lin_variance * (t1-c) * (t2-c)
double kernel_eval(const KernelSpec& spec, double t1, double t2);

/// Dense Gram matrix K[i,j] = k(t_i, t_j); adds noise_variance*I when
/// with_noise is set. Times are taken as already re-based.
Eigen::MatrixXd gram_matrix(const KernelSpec& spec, std::span<const double> times,
                            bool with_noise);

/// LLT with the escalating-jitter policy: on failure add 1e-10 to the
/// diagonal, escalate x10 up to 1e-4, then throw CholeskyFailure.
Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(Eigen::MatrixXd k);

/// Per-window affine map: z = (y - mean) / std, std floored at 1e-6.
struct Standardization {
  double mean = 0.0;
  double std = 1.0;
};
Standardization window_standardization(std::span<const double> values);

/// A kernel conditioned on one training window. Times are re-based so the
/// window starts at 0 and values standardized; predictions are mapped back
/// to original units. Immutable after construction; cheap repeated queries.
class GpPredictor {
 public:
  GpPredictor(const KernelSpec& spec, const TrainingWindow& train);

  double mean_at(double t) const;
  double variance_at(double t) const;
  Posterior predict(std::span<const double> times) const;

  const Standardization& standardization() const { return st_; }
  double time_base() const { return t_base_; }

 private:
  KernelSpec spec_;
  double t_base_;
  Standardization st_;
  std::vector<double> tau_;  // re-based training times
  Eigen::VectorXd alpha_;    // K^-1 z
  Eigen::MatrixXd lower_;    // Cholesky factor of K
};

Posterior posterior_predict(const KernelSpec& spec, const TrainingWindow& train,
                            std::span<const double> query_times);

/// Log marginal likelihood of the window under the spec, reported in the
/// channel's original units (the standardization Jacobian -n*log(std) is
/// included).
double log_marginal_likelihood(const KernelSpec& spec, const TrainingWindow& train);

/// Variant with no re-basing or standardization: values are taken as-is and
/// noise_variance is applied directly.
double log_marginal_likelihood_raw(const KernelSpec& spec, std::span<const double> times,
                                   std::span<const double> values);

/// Gradient of log_marginal_likelihood w.r.t. the log of
/// (rbf_variance, rbf_lengthscale, lin_variance, noise_variance).
Eigen::Vector4d lml_gradient(const KernelSpec& spec, const TrainingWindow& train);

/// Multi-start bounded quasi-Newton ascent of the log marginal likelihood
/// over log-parameters. lin_offset is pinned to 0 (the re-based first
/// timestamp). Throws FitDegenerate when every restart fails.
KernelSpec fit_hyperparameters(const TrainingWindow& train, const FitConfig& config);

/// The multi-start initial points used by fit_hyperparameters, exposed so
/// callers can verify the fit beats every start.
std::vector<KernelSpec> fit_start_points(const TrainingWindow& train, const FitConfig& config);

}  // namespace mbc

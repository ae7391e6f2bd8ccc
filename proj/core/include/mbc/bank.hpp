#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mbc/geo.hpp"
#include "mbc/gp.hpp"

namespace mbc {

enum class Scheme { Direct, Indirect };

/// How reuse candidates are screened before ranking by persistency.
enum class ReuseEval { FirstStep, FixedOneSecond };

const char* scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& s);

/// The two per-channel kernels of one bank entry.
/// Direct: a = X-ENU, b = Y-ENU. Indirect: a = speed, b = heading.
struct ChannelSpecs {
  KernelSpec a;
  KernelSpec b;
};

struct BankEntry {
  int id = 0;
  Scheme scheme = Scheme::Indirect;
  ChannelSpecs specs;
  std::string created_trip;
  double created_t0 = 0.0;
  int use_count = 1;  // creation counts as first use
  double total_persistency_s = 0.0;
};

/// Append-only collection of fitted kernels, shared across a corpus build.
struct KernelBank {
  Scheme scheme = Scheme::Indirect;
  bool hybrid = false;
  double pte_threshold_m = 0.5;
  int tw = 10;
  std::vector<BankEntry> entries;

  int size() const { return static_cast<int>(entries.size()); }
  /// Throws DataError when the entry's scheme does not match the bank's.
  void append(BankEntry entry);
};

enum class SelectionKind { BankEntry, ConstantVelocity, NewlyFitted };

struct ModelSelection {
  SelectionKind source = SelectionKind::NewlyFitted;
  int entry_id = -1;  // -1 for ConstantVelocity
  double t0 = 0.0;
  double persistency_s = 0.0;
  int steps = 0;                                   // samples served, violation included
  std::vector<std::pair<double, double>> pte_trace;  // (t, PTE); only the last may violate
};

/// Transmitter-side snapshot at a decision point: anchor state plus the TW
/// conditioning windows per channel (both end exactly at t0).
struct Anchor {
  double x0 = 0.0, y0 = 0.0;
  double v0 = 0.0, theta0 = 0.0;
  double t0 = 0.0;
};

struct PredictorState {
  Scheme scheme = Scheme::Indirect;
  Anchor anchor;
  TrainingWindow channel_a;  // direct: X, indirect: speed
  TrainingWindow channel_b;  // direct: Y, indirect: heading
};

PredictorState make_predictor_state(const Trajectory& traj, int idx0, int tw, Scheme scheme);

/// Position forecasts for one candidate conditioned at an anchor. Indirect
/// forecasts integrate the GP channel means step by step, so queries must be
/// issued at increasing times.
class PositionPredictor {
 public:
  static PositionPredictor constant_velocity(const Anchor& anchor, Scheme scheme);
  static PositionPredictor gp(Scheme scheme, const ChannelSpecs& specs,
                              const PredictorState& state);

  std::pair<double, double> advance_to(double t);

  /// Channel estimates at the last advanced time: (X,Y) for direct,
  /// (speed, heading) for indirect. A receiver keeps these as its rolling
  /// window material.
  std::pair<double, double> last_channels() const { return {last_a_, last_b_}; }

 private:
  PositionPredictor() = default;
  bool cv_ = false;
  Scheme scheme_ = Scheme::Indirect;
  Anchor anchor_;
  std::optional<GpPredictor> gp_a_, gp_b_;
  double last_a_ = 0.0, last_b_ = 0.0;
  // dead-reckoning state for the indirect scheme
  double x_ = 0.0, y_ = 0.0, gx_prev_ = 0.0, gy_prev_ = 0.0, t_prev_ = 0.0;
};

struct BuildConfig {
  Scheme scheme = Scheme::Indirect;
  bool hybrid = false;
  double pte_threshold_m = 0.5;
  int tw = 10;
  double horizon_cap_s = 10.0;
  ReuseEval reuse_eval = ReuseEval::FirstStep;
  FitConfig fit;
  std::uint64_t seed = 0;
};

/// Eq-style position tracking error: 2-D Euclidean distance in meters.
double compute_pte(double x_pred, double y_pred, double x_true, double y_true);

/// Trapezoidal dead reckoning. speed/heading hold predictions at
/// t0+dt, ..., t0+m*dt; (v0, theta0) anchor the t0 integrand. Outputs are
/// the positions at those same times.
void integrate_position(std::span<const double> speed_pred,
                        std::span<const double> heading_pred, double x0, double y0, double v0,
                        double theta0, double dt, std::vector<double>& x_out,
                        std::vector<double>& y_out);

/// Steps the candidate forward from t0 one sample at a time until the first
/// PTE above the threshold, the horizon cap, or trip end. nullopt = the
/// constant-velocity candidate.
ModelSelection evaluate_model(const std::optional<ChannelSpecs>& candidate,
                              const Trajectory& traj, double t0, const BuildConfig& config);

struct UpdateEvent {
  int event_idx = 0;
  double data_time_s = 0.0;
  std::string trip_id;
  SelectionKind kind = SelectionKind::NewlyFitted;
  int entry_id = -1;
  double persistency_s = 0.0;
  int bank_size = 0;
  int update_count = 0;
  double gen_ratio = 0.0;
};

struct RunMetrics {
  std::vector<UpdateEvent> events;
};

/// One model-update decision: screen every bank entry (plus CV when hybrid)
/// on the first prediction step, rank survivors by realized persistency, or
/// fit and append a new entry when nothing passes. Returns the selection and
/// whether the bank grew.
std::pair<ModelSelection, bool> select_or_create(KernelBank& bank, const Trajectory& traj,
                                                 int idx0, const BuildConfig& config);

/// Variant with an explicit conditioning state for candidate ranking (the
/// transmitter's shadow passes the windows the receiver will use). Creation
/// always fits and evaluates on the true windows, which a NewKernel packet
/// ships.
std::pair<ModelSelection, bool> select_or_create(KernelBank& bank, const Trajectory& traj,
                                                 int idx0, const BuildConfig& config,
                                                 const PredictorState& cond_state);

/// Selection against a frozen bank: same screen-then-rank policy but no
/// creation; when nothing passes the screen the least-bad candidate (lowest
/// first-step PTE) is returned. cond_state supplies the conditioning windows
/// (the transmitter's shadow passes the windows the receiver will use).
ModelSelection select_frozen(const KernelBank& bank, const Trajectory& traj, int idx0,
                             const BuildConfig& config, const PredictorState& cond_state);

std::pair<KernelBank, RunMetrics> build_bank(std::span<const Trajectory> trips,
                                             const BuildConfig& config);

struct PersistencySummary {
  double mean_s = 0.0;
  double bin_width_s = 0.1;
  std::vector<int> histogram;  // [k] counts persistency in [k*w, (k+1)*w)
};
PersistencySummary persistency_stats(const RunMetrics& metrics);

void save_bank_json(const KernelBank& bank, const std::filesystem::path& path);
KernelBank load_bank_json(const std::filesystem::path& path);
void save_metrics_csv(const RunMetrics& metrics, const std::filesystem::path& path);

}  // namespace mbc

#pragma once

#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mbc/bank.hpp"

namespace mbc {

enum class PacketKind { KernelId, NewKernel, CvTag };
enum class PacketReason { Initial, Violation, Refresh };

/// When model packets carry the TW conditioning window. NewKernel packets and
/// trip-bootstrap packets always ship it; KernelId packets otherwise ship only
/// the anchor and the receiver reconstructs the window from its own running
/// prediction.
enum class WindowShipping { NewKernelOnly, Always };

const char* packet_kind_name(PacketKind k);

struct PacketPayload {
  PacketKind kind = PacketKind::CvTag;
  PacketReason reason = PacketReason::Violation;
  int kernel_id = -1;
  Anchor anchor;
  double trigger_pte_m = 0.0;
  std::optional<ChannelSpecs> specs;  // NewKernel only
  // shipped conditioning window (empty when not shipped)
  std::vector<double> win_t, win_a, win_b;

  long payload_bytes(int tw) const;
};

struct TripPackets {
  std::string trip_id;
  std::vector<PacketPayload> packets;
};

struct ChannelMetrics {
  std::string trip_id;
  int packets = 0;
  double span_s = 0.0;
  double packets_per_s = 0.0;
  double mean_inter_packet_s = 0.0;
  long payload_bytes_total = 0;
  double max_receiver_pte_m = 0.0;
};

struct ReceiverTracePoint {
  double t = 0.0;
  double x_est = 0.0;
  double y_est = 0.0;
  double pte_m = 0.0;
};

/// The tracking endpoint: a pure function of the packet sequence and its own
/// sample clock. Used identically by the transmitter's shadow copy, the
/// simulator and the standalone replay.
class Receiver {
 public:
  Receiver(Scheme scheme, int tw, std::map<int, ChannelSpecs> distributed_bank = {});

  void on_packet(const PacketPayload& packet);
  /// Advances to sample time t and returns the position estimate. Call with
  /// strictly increasing t.
  std::pair<double, double> step(double t);

  bool has_model() const { return active_.has_value(); }
  /// True when the self-reconstructed window (tw-1 own estimates plus the
  /// anchor) would be available for a packet anchored at t0.
  bool can_self_condition(double t0) const;
  /// The conditioning state an anchor-only packet would produce: the last
  /// tw-1 own channel estimates before t0 plus the anchor values at t0. The
  /// transmitter's shadow uses this to rank candidates faithfully.
  PredictorState self_conditioning_state(const Anchor& anchor) const;

 private:
  Scheme scheme_;
  int tw_;
  std::map<int, ChannelSpecs> known_specs_;
  std::optional<PositionPredictor> active_;
  struct BufEntry {
    double t, a, b;
  };
  std::deque<BufEntry> buffer_;  // own channel estimates at past sample times
};

struct SimOptions {
  BuildConfig build;  // scheme/hybrid must match the bank
  bool growing = false;
  WindowShipping shipping = WindowShipping::NewKernelOnly;
};

struct LinkResult {
  TripPackets packets;
  ChannelMetrics metrics;
  std::vector<ReceiverTracePoint> trace;
  std::vector<ModelSelection> selections;  // persistency as realized on the link
};

/// Replays one trip through the transmitter: the shadow receiver tracks the
/// packet stream, a packet is emitted whenever its position error exceeds the
/// threshold (growing mode also refreshes at the persistency horizon so the
/// packet sequence matches build_bank's update events). The bank grows only
/// in growing mode.
LinkResult simulate_link(const Trajectory& traj, KernelBank& bank, const SimOptions& options);

struct SimRun {
  std::vector<LinkResult> trips;
  ChannelMetrics overall;
};
SimRun simulate_corpus(std::span<const Trajectory> trips, KernelBank& bank,
                       const SimOptions& options);

/// Standalone reconstruction of the receiver estimates from the packet log
/// alone (plus the distributed bank when packets reference ids not carried in
/// the log). Bit-identical to the trace simulate_link produced.
std::vector<ReceiverTracePoint> replay_receiver(const TripPackets& packets,
                                                const Trajectory& traj, Scheme scheme, int tw,
                                                std::map<int, ChannelSpecs> distributed_bank = {});

// ---- experiment sweeps ----

struct SweepConfig {
  std::vector<std::pair<Scheme, bool>> schemes;  // (scheme, hybrid)
  std::vector<double> thresholds;
  std::vector<int> tws;
  std::vector<std::uint64_t> shuffle_seeds;
  BuildConfig base;
};

struct SweepCell {
  std::string study;  // "grid", "tw" or "shuffle"
  Scheme scheme = Scheme::Indirect;
  bool hybrid = false;
  double threshold_m = 0.5;
  int tw = 10;
  std::uint64_t shuffle_seed = 0;
  double mean_mp_s = 0.0;
  int final_bank_size = 0;
  int updates = 0;
  std::vector<UpdateEvent> events;
};

/// Grid study (schemes x thresholds), training-window study and trip-order
/// shuffle study over one corpus. Deterministic given config and seeds.
std::vector<SweepCell> sweep(std::span<const Trajectory> corpus, const SweepConfig& config);

std::vector<Trajectory> shuffled_corpus(std::span<const Trajectory> corpus,
                                        std::uint64_t seed);

// ---- file formats ----

/// Per-trip packet log CSV: t,kind,kernel_id,trigger_pte_m,x0,y0,v0,theta0
void save_packet_log_csv(const TripPackets& packets, const std::filesystem::path& path);

/// Full-precision payload dump for replay (anchor, specs, windows).
void save_packets_json(std::span<const TripPackets> trips, const std::filesystem::path& path);
std::vector<TripPackets> load_packets_json(const std::filesystem::path& path);

void save_receiver_trace_csv(std::span<const ReceiverTracePoint> trace,
                             const std::filesystem::path& path);

}  // namespace mbc

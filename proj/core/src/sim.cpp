#include "mbc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mbc/util.hpp"

namespace mbc {

const char* packet_kind_name(PacketKind k) {
  switch (k) {
    case PacketKind::KernelId: return "kernel_id";
    case PacketKind::NewKernel: return "new_kernel";
    case PacketKind::CvTag: return "cv_tag";
  }
  return "?";
}

// Nominal over-the-air sizes: 4-byte id/tag, float32 anchor (5 fields),
// float64 hyperparameters (2 specs x 5), float32 window samples when shipped.
long PacketPayload::payload_bytes(int tw) const {
  constexpr long kAnchor = 20;
  const long window = win_t.empty() ? 0 : 2L * tw * 4;
  switch (kind) {
    case PacketKind::KernelId: return 4 + kAnchor + window;
    case PacketKind::NewKernel: return 2 * 5 * 8 + kAnchor + window;
    case PacketKind::CvTag: return 4 + kAnchor;
  }
  return 0;
}

Receiver::Receiver(Scheme scheme, int tw, std::map<int, ChannelSpecs> distributed_bank)
    : scheme_(scheme), tw_(tw), known_specs_(std::move(distributed_bank)) {}

bool Receiver::can_self_condition(double t0) const {
  int before = 0;
  for (const auto& e : buffer_) {
    if (e.t < t0 - 1e-12) ++before;
  }
  return before >= tw_ - 1;
}

PredictorState Receiver::self_conditioning_state(const Anchor& anchor) const {
  if (!can_self_condition(anchor.t0)) {
    throw DataError("receiver cannot reconstruct the conditioning window");
  }
  PredictorState st;
  st.scheme = scheme_;
  st.anchor = anchor;
  std::vector<BufEntry> before;
  for (const auto& e : buffer_) {
    if (e.t < anchor.t0 - 1e-12) before.push_back(e);
  }
  const double a0 = scheme_ == Scheme::Direct ? anchor.x0 : anchor.v0;
  const double b0 = scheme_ == Scheme::Direct ? anchor.y0 : anchor.theta0;
  for (std::size_t i = before.size() - static_cast<std::size_t>(tw_ - 1); i < before.size();
       ++i) {
    st.channel_a.times.push_back(before[i].t);
    st.channel_a.values.push_back(before[i].a);
    st.channel_b.times.push_back(before[i].t);
    st.channel_b.values.push_back(before[i].b);
  }
  st.channel_a.times.push_back(anchor.t0);
  st.channel_a.values.push_back(a0);
  st.channel_b.times.push_back(anchor.t0);
  st.channel_b.values.push_back(b0);
  return st;
}

void Receiver::on_packet(const PacketPayload& packet) {
  if (packet.kind == PacketKind::NewKernel) {
    if (!packet.specs) throw DataError("NewKernel packet without specs");
    known_specs_[packet.kernel_id] = *packet.specs;
  }

  PredictorState st;
  bool have_state = false;
  if (packet.kind != PacketKind::CvTag) {
    if (!packet.win_t.empty()) {
      st.scheme = scheme_;
      st.anchor = packet.anchor;
      st.channel_a.times = packet.win_t;
      st.channel_a.values = packet.win_a;
      st.channel_b.times = packet.win_t;
      st.channel_b.values = packet.win_b;
    } else {
      st = self_conditioning_state(packet.anchor);
    }
    have_state = true;
  }

  // the anchor carries exact channel values at t0; adopt them in the buffer
  const double a0 = scheme_ == Scheme::Direct ? packet.anchor.x0 : packet.anchor.v0;
  const double b0 = scheme_ == Scheme::Direct ? packet.anchor.y0 : packet.anchor.theta0;
  while (!buffer_.empty() && buffer_.back().t > packet.anchor.t0 - 1e-12) buffer_.pop_back();
  buffer_.push_back({packet.anchor.t0, a0, b0});

  if (packet.kind == PacketKind::CvTag) {
    active_ = PositionPredictor::constant_velocity(packet.anchor, scheme_);
    return;
  }
  const auto it = known_specs_.find(packet.kernel_id);
  if (it == known_specs_.end()) {
    throw DataError("packet references unknown kernel id " + std::to_string(packet.kernel_id));
  }
  (void)have_state;
  active_ = PositionPredictor::gp(scheme_, it->second, st);
}

std::pair<double, double> Receiver::step(double t) {
  if (!active_) throw DataError("receiver stepped before any packet");
  const auto pos = active_->advance_to(t);
  const auto ch = active_->last_channels();
  buffer_.push_back({t, ch.first, ch.second});
  while (buffer_.size() > static_cast<std::size_t>(tw_) + 4) buffer_.pop_front();
  return pos;
}

namespace {

int horizon_steps_of(const BuildConfig& cfg) {
  return std::max(1, static_cast<int>(std::llround(cfg.horizon_cap_s * 10.0)));
}

std::map<int, ChannelSpecs> specs_map(const KernelBank& bank) {
  std::map<int, ChannelSpecs> m;
  for (const auto& e : bank.entries) m[e.id] = e.specs;
  return m;
}

struct LinkDriver {
  const Trajectory& traj;
  KernelBank& bank;
  const SimOptions& opt;
  Receiver rx;
  LinkResult res;
  int last_idx;  // sample index of the current anchor

  LinkDriver(const Trajectory& t, KernelBank& b, const SimOptions& o)
      : traj(t), bank(b), opt(o), rx(b.scheme, o.build.tw, specs_map(b)), last_idx(o.build.tw) {}

  void emit(int idx0, PacketReason reason, double trigger_pte) {
    const BuildConfig& cfg = opt.build;
    const PredictorState truth_state = make_predictor_state(traj, idx0, cfg.tw, cfg.scheme);

    // shadow fidelity: rank candidates with the windows the receiver will
    // actually condition on for an anchor-only packet
    const bool ship_for_id = opt.shipping == WindowShipping::Always ||
                             !rx.can_self_condition(truth_state.anchor.t0);
    PredictorState cond = truth_state;
    if (!ship_for_id) cond = rx.self_conditioning_state(truth_state.anchor);
    ModelSelection sel = opt.growing
                             ? select_or_create(bank, traj, idx0, cfg, cond).first
                             : select_frozen(bank, traj, idx0, cfg, cond);

    PacketPayload pkt;
    pkt.reason = reason;
    pkt.trigger_pte_m = trigger_pte;
    pkt.anchor = truth_state.anchor;
    pkt.kernel_id = sel.entry_id;
    switch (sel.source) {
      case SelectionKind::NewlyFitted:
        pkt.kind = PacketKind::NewKernel;
        pkt.specs = bank.entries[static_cast<std::size_t>(sel.entry_id)].specs;
        break;
      case SelectionKind::BankEntry:
        pkt.kind = PacketKind::KernelId;
        break;
      case SelectionKind::ConstantVelocity:
        pkt.kind = PacketKind::CvTag;
        break;
    }
    const bool ship =
        pkt.kind == PacketKind::NewKernel ||
        (pkt.kind == PacketKind::KernelId && (opt.shipping == WindowShipping::Always ||
                                              !rx.can_self_condition(truth_state.anchor.t0)));
    if (ship) {
      pkt.win_t = truth_state.channel_a.times;
      pkt.win_a = truth_state.channel_a.values;
      pkt.win_b = truth_state.channel_b.values;
    }
    res.packets.packets.push_back(pkt);
    rx.on_packet(res.packets.packets.back());
    res.selections.push_back(std::move(sel));
    last_idx = idx0;
  }

  void close_selection(int end_idx) {
    if (res.selections.empty()) return;
    auto& sel = res.selections.back();
    sel.persistency_s = traj.t[end_idx] - traj.t[last_idx];
    sel.steps = end_idx - last_idx;
  }
};

}  // namespace

LinkResult simulate_link(const Trajectory& traj, KernelBank& bank, const SimOptions& options) {
  const BuildConfig& cfg = options.build;
  if (bank.scheme != cfg.scheme || bank.hybrid != cfg.hybrid) {
    throw ConfigError("simulate_link: bank scheme/hybrid does not match the configuration");
  }
  const int n = static_cast<int>(traj.size());
  const int tw = cfg.tw;
  if (n < 2 * tw) throw TooShort("trip '" + traj.trip_id + "' shorter than 2*TW");
  const int horizon = horizon_steps_of(cfg);

  LinkDriver d(traj, bank, options);
  d.res.packets.trip_id = traj.trip_id;
  d.emit(tw, PacketReason::Initial, 0.0);

  for (int i = tw + 1; i <= n - 1; ++i) {
    const double t = traj.t[i];
    const auto [x, y] = d.rx.step(t);
    const double pte = compute_pte(x, y, traj.x_enu[i], traj.y_enu[i]);
    d.res.trace.push_back({t, x, y, pte});

    const bool violated = pte > cfg.pte_threshold_m;
    const bool refresh = options.growing && (i - d.last_idx) >= horizon;
    if ((violated || refresh) && i <= n - 2) {
      d.close_selection(i);
      d.emit(i, violated ? PacketReason::Violation : PacketReason::Refresh, pte);
    }
  }
  d.close_selection(n - 1);

  ChannelMetrics& m = d.res.metrics;
  m.trip_id = traj.trip_id;
  m.packets = static_cast<int>(d.res.packets.packets.size());
  m.span_s = traj.t[n - 1] - traj.t[tw];
  m.packets_per_s = m.span_s > 0.0 ? m.packets / m.span_s : 0.0;
  double psum = 0.0;
  for (const auto& s : d.res.selections) psum += s.persistency_s;
  m.mean_inter_packet_s = d.res.selections.empty() ? 0.0 : psum / d.res.selections.size();
  for (const auto& p : d.res.packets.packets) m.payload_bytes_total += p.payload_bytes(tw);
  for (const auto& tp : d.res.trace) m.max_receiver_pte_m = std::max(m.max_receiver_pte_m, tp.pte_m);
  return std::move(d.res);
}

SimRun simulate_corpus(std::span<const Trajectory> trips, KernelBank& bank,
                       const SimOptions& options) {
  SimRun run;
  double span = 0.0, bytes = 0.0, psum = 0.0;
  int packets = 0, selections = 0;
  for (const auto& traj : trips) {
    run.trips.push_back(simulate_link(traj, bank, options));
    const auto& r = run.trips.back();
    span += r.metrics.span_s;
    bytes += static_cast<double>(r.metrics.payload_bytes_total);
    packets += r.metrics.packets;
    for (const auto& s : r.selections) psum += s.persistency_s;
    selections += static_cast<int>(r.selections.size());
    run.overall.max_receiver_pte_m =
        std::max(run.overall.max_receiver_pte_m, r.metrics.max_receiver_pte_m);
  }
  run.overall.trip_id = "overall";
  run.overall.packets = packets;
  run.overall.span_s = span;
  run.overall.packets_per_s = span > 0.0 ? packets / span : 0.0;
  run.overall.mean_inter_packet_s = selections > 0 ? psum / selections : 0.0;
  run.overall.payload_bytes_total = static_cast<long>(bytes);
  return run;
}

std::vector<ReceiverTracePoint> replay_receiver(const TripPackets& packets,
                                                const Trajectory& traj, Scheme scheme, int tw,
                                                std::map<int, ChannelSpecs> distributed_bank) {
  Receiver rx(scheme, tw, std::move(distributed_bank));
  std::vector<ReceiverTracePoint> trace;
  std::size_t next_pkt = 0;
  const int n = static_cast<int>(traj.size());
  auto deliver_up_to = [&](double t) {
    while (next_pkt < packets.packets.size() &&
           packets.packets[next_pkt].anchor.t0 <= t + 1e-9) {
      rx.on_packet(packets.packets[next_pkt]);
      ++next_pkt;
    }
  };
  // same order as the link: the estimate at a packet's anchor sample is made
  // with the previous model, the packet takes effect afterwards
  deliver_up_to(traj.t[tw]);
  for (int i = tw + 1; i <= n - 1; ++i) {
    const double t = traj.t[i];
    const auto [x, y] = rx.step(t);
    trace.push_back({t, x, y, compute_pte(x, y, traj.x_enu[i], traj.y_enu[i])});
    deliver_up_to(t);
  }
  return trace;
}

std::vector<Trajectory> shuffled_corpus(std::span<const Trajectory> corpus,
                                        std::uint64_t seed) {
  std::vector<Trajectory> out(corpus.begin(), corpus.end());
  if (seed == 0) return out;  // seed 0 keeps the given order
  std::mt19937_64 rng(seed);
  for (std::size_t i = out.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(out[i - 1], out[j]);
  }
  return out;
}

std::vector<SweepCell> sweep(std::span<const Trajectory> corpus, const SweepConfig& config) {
  std::vector<SweepCell> cells;
  auto run_cell = [&](const std::string& study, Scheme scheme, bool hybrid, double threshold,
                      int tw, std::uint64_t shuffle_seed) {
    BuildConfig cfg = config.base;
    cfg.scheme = scheme;
    cfg.hybrid = hybrid;
    cfg.pte_threshold_m = threshold;
    cfg.tw = tw;
    const auto trips = shuffled_corpus(corpus, shuffle_seed);
    auto [bank, metrics] = build_bank(trips, cfg);
    SweepCell cell;
    cell.study = study;
    cell.scheme = scheme;
    cell.hybrid = hybrid;
    cell.threshold_m = threshold;
    cell.tw = tw;
    cell.shuffle_seed = shuffle_seed;
    cell.final_bank_size = bank.size();
    cell.updates = static_cast<int>(metrics.events.size());
    cell.mean_mp_s = persistency_stats(metrics).mean_s;
    cell.events = std::move(metrics.events);
    cells.push_back(std::move(cell));
  };

  for (const auto& [scheme, hybrid] : config.schemes) {
    for (double th : config.thresholds) {
      run_cell("grid", scheme, hybrid, th, config.base.tw, 0);
    }
  }
  for (int tw : config.tws) {
    if (tw == config.base.tw) continue;  // covered by the grid when present
    run_cell("tw", Scheme::Indirect, true, config.base.pte_threshold_m, tw, 0);
  }
  for (std::uint64_t seed : config.shuffle_seeds) {
    run_cell("shuffle", Scheme::Indirect, true, config.base.pte_threshold_m, config.base.tw,
             seed);
    run_cell("shuffle", Scheme::Indirect, false, config.base.pte_threshold_m, config.base.tw,
             seed);
  }
  return cells;
}

void save_packet_log_csv(const TripPackets& packets, const std::filesystem::path& path) {
  std::ostringstream ss;
  ss << "t,kind,kernel_id,trigger_pte_m,x0,y0,v0,theta0\n";
  for (const auto& p : packets.packets) {
    ss << fmt_double(p.anchor.t0) << ',' << packet_kind_name(p.kind) << ',' << p.kernel_id << ','
       << fmt_double(p.trigger_pte_m) << ',' << fmt_double(p.anchor.x0) << ','
       << fmt_double(p.anchor.y0) << ',' << fmt_double(p.anchor.v0) << ','
       << fmt_double(p.anchor.theta0) << '\n';
  }
  write_text_file(path, ss.str());
}

namespace {

nlohmann::json spec_to_json(const KernelSpec& s) {
  return {{"rbf_variance", s.rbf_variance},
          {"rbf_lengthscale", s.rbf_lengthscale},
          {"lin_variance", s.lin_variance},
          {"lin_offset", s.lin_offset},
          {"noise_variance", s.noise_variance}};
}

KernelSpec spec_from_json(const nlohmann::json& j) {
  KernelSpec s;
  s.rbf_variance = j.at("rbf_variance").get<double>();
  s.rbf_lengthscale = j.at("rbf_lengthscale").get<double>();
  s.lin_variance = j.at("lin_variance").get<double>();
  s.lin_offset = j.at("lin_offset").get<double>();
  s.noise_variance = j.at("noise_variance").get<double>();
  return s;
}

const char* reason_name(PacketReason r) {
  switch (r) {
    case PacketReason::Initial: return "initial";
    case PacketReason::Violation: return "violation";
    case PacketReason::Refresh: return "refresh";
  }
  return "?";
}

PacketReason reason_from_name(const std::string& s) {
  if (s == "initial") return PacketReason::Initial;
  if (s == "violation") return PacketReason::Violation;
  if (s == "refresh") return PacketReason::Refresh;
  throw DataError("unknown packet reason '" + s + "'");
}

PacketKind kind_from_name(const std::string& s) {
  if (s == "kernel_id") return PacketKind::KernelId;
  if (s == "new_kernel") return PacketKind::NewKernel;
  if (s == "cv_tag") return PacketKind::CvTag;
  throw DataError("unknown packet kind '" + s + "'");
}

}  // namespace

void save_packets_json(std::span<const TripPackets> trips, const std::filesystem::path& path) {
  nlohmann::json root;
  root["trips"] = nlohmann::json::array();
  for (const auto& tp : trips) {
    nlohmann::json jt;
    jt["trip_id"] = tp.trip_id;
    jt["packets"] = nlohmann::json::array();
    for (const auto& p : tp.packets) {
      nlohmann::json jp;
      jp["kind"] = packet_kind_name(p.kind);
      jp["reason"] = reason_name(p.reason);
      jp["kernel_id"] = p.kernel_id;
      jp["trigger_pte_m"] = p.trigger_pte_m;
      jp["anchor"] = {{"x0", p.anchor.x0},
                      {"y0", p.anchor.y0},
                      {"v0", p.anchor.v0},
                      {"theta0", p.anchor.theta0},
                      {"t0", p.anchor.t0}};
      if (p.specs) {
        jp["specs"] = {{"a", spec_to_json(p.specs->a)}, {"b", spec_to_json(p.specs->b)}};
      }
      if (!p.win_t.empty()) {
        jp["win_t"] = p.win_t;
        jp["win_a"] = p.win_a;
        jp["win_b"] = p.win_b;
      }
      jt["packets"].push_back(std::move(jp));
    }
    root["trips"].push_back(std::move(jt));
  }
  write_text_file(path, root.dump() + "\n");
}

std::vector<TripPackets> load_packets_json(const std::filesystem::path& path) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  std::vector<TripPackets> out;
  try {
    for (const auto& jt : root.at("trips")) {
      TripPackets tp;
      tp.trip_id = jt.at("trip_id").get<std::string>();
      for (const auto& jp : jt.at("packets")) {
        PacketPayload p;
        p.kind = kind_from_name(jp.at("kind").get<std::string>());
        p.reason = reason_from_name(jp.at("reason").get<std::string>());
        p.kernel_id = jp.at("kernel_id").get<int>();
        p.trigger_pte_m = jp.at("trigger_pte_m").get<double>();
        const auto& ja = jp.at("anchor");
        p.anchor = {ja.at("x0").get<double>(), ja.at("y0").get<double>(),
                    ja.at("v0").get<double>(), ja.at("theta0").get<double>(),
                    ja.at("t0").get<double>()};
        if (jp.contains("specs")) {
          p.specs = ChannelSpecs{spec_from_json(jp["specs"].at("a")),
                                 spec_from_json(jp["specs"].at("b"))};
        }
        if (jp.contains("win_t")) {
          p.win_t = jp["win_t"].get<std::vector<double>>();
          p.win_a = jp["win_a"].get<std::vector<double>>();
          p.win_b = jp["win_b"].get<std::vector<double>>();
        }
        tp.packets.push_back(std::move(p));
      }
      out.push_back(std::move(tp));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return out;
}

void save_receiver_trace_csv(std::span<const ReceiverTracePoint> trace,
                             const std::filesystem::path& path) {
  std::ostringstream ss;
  ss << "t,x_est,y_est,pte_m\n";
  for (const auto& p : trace) {
    ss << fmt_double(p.t) << ',' << fmt_double(p.x_est) << ',' << fmt_double(p.y_est) << ','
       << fmt_double(p.pte_m) << '\n';
  }
  write_text_file(path, ss.str());
}

}  // namespace mbc

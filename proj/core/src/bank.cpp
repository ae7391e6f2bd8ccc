#include "mbc/bank.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mbc/util.hpp"

namespace mbc {

const char* scheme_name(Scheme s) { return s == Scheme::Direct ? "direct" : "indirect"; }

Scheme scheme_from_name(const std::string& s) {
  if (s == "direct") return Scheme::Direct;
  if (s == "indirect") return Scheme::Indirect;
  throw DataError("unknown scheme '" + s + "'");
}

void KernelBank::append(BankEntry entry) {
  if (entry.scheme != scheme) {
    throw DataError("bank scheme mismatch: cannot append a " +
                    std::string(scheme_name(entry.scheme)) + " entry to a " +
                    scheme_name(scheme) + " bank");
  }
  if (entry.id != size()) throw DataError("bank entry ids must be dense from 0");
  entries.push_back(std::move(entry));
}

double compute_pte(double x_pred, double y_pred, double x_true, double y_true) {
  return std::hypot(x_pred - x_true, y_pred - y_true);
}

void integrate_position(std::span<const double> speed_pred,
                        std::span<const double> heading_pred, double x0, double y0, double v0,
                        double theta0, double dt, std::vector<double>& x_out,
                        std::vector<double>& y_out) {
  if (speed_pred.size() != heading_pred.size()) {
    throw std::invalid_argument("integrate_position: channel length mismatch");
  }
  x_out.clear();
  y_out.clear();
  x_out.reserve(speed_pred.size());
  y_out.reserve(speed_pred.size());
  double x = x0, y = y0;
  double gx_prev = v0 * std::cos(theta0);
  double gy_prev = v0 * std::sin(theta0);
  for (std::size_t k = 0; k < speed_pred.size(); ++k) {
    const double gx = speed_pred[k] * std::cos(heading_pred[k]);
    const double gy = speed_pred[k] * std::sin(heading_pred[k]);
    x += dt * (0.5 * (gx_prev + gx));
    y += dt * (0.5 * (gy_prev + gy));
    gx_prev = gx;
    gy_prev = gy;
    x_out.push_back(x);
    y_out.push_back(y);
  }
}

PredictorState make_predictor_state(const Trajectory& traj, int idx0, int tw, Scheme scheme) {
  const int n = static_cast<int>(traj.size());
  if (idx0 < tw - 1 || idx0 > n - 1) {
    throw InsufficientHistory("need " + std::to_string(tw) + " samples ending at index " +
                              std::to_string(idx0) + " of trip '" + traj.trip_id + "'");
  }
  PredictorState st;
  st.scheme = scheme;
  st.anchor = {traj.x_enu[idx0], traj.y_enu[idx0], traj.speed[idx0],
               traj.heading_unwrapped[idx0], traj.t[idx0]};
  const int lo = idx0 - tw + 1;
  for (int i = lo; i <= idx0; ++i) {
    st.channel_a.times.push_back(traj.t[i]);
    st.channel_b.times.push_back(traj.t[i]);
    if (scheme == Scheme::Direct) {
      st.channel_a.values.push_back(traj.x_enu[i]);
      st.channel_b.values.push_back(traj.y_enu[i]);
    } else {
      st.channel_a.values.push_back(traj.speed[i]);
      st.channel_b.values.push_back(traj.heading_unwrapped[i]);
    }
  }
  return st;
}

PositionPredictor PositionPredictor::constant_velocity(const Anchor& anchor, Scheme scheme) {
  PositionPredictor p;
  p.cv_ = true;
  p.scheme_ = scheme;
  p.anchor_ = anchor;
  p.gx_prev_ = anchor.v0 * std::cos(anchor.theta0);
  p.gy_prev_ = anchor.v0 * std::sin(anchor.theta0);
  return p;
}

PositionPredictor PositionPredictor::gp(Scheme scheme, const ChannelSpecs& specs,
                                        const PredictorState& state) {
  PositionPredictor p;
  p.scheme_ = scheme;
  p.anchor_ = state.anchor;
  p.gp_a_.emplace(specs.a, state.channel_a);
  p.gp_b_.emplace(specs.b, state.channel_b);
  if (scheme == Scheme::Indirect) {
    p.x_ = state.anchor.x0;
    p.y_ = state.anchor.y0;
    p.gx_prev_ = state.anchor.v0 * std::cos(state.anchor.theta0);
    p.gy_prev_ = state.anchor.v0 * std::sin(state.anchor.theta0);
    p.t_prev_ = state.anchor.t0;
  }
  return p;
}

std::pair<double, double> PositionPredictor::advance_to(double t) {
  if (cv_) {
    const double dt = t - anchor_.t0;
    const double x = anchor_.x0 + gx_prev_ * dt;
    const double y = anchor_.y0 + gy_prev_ * dt;
    if (scheme_ == Scheme::Direct) {
      last_a_ = x;
      last_b_ = y;
    } else {
      last_a_ = anchor_.v0;
      last_b_ = anchor_.theta0;
    }
    return {x, y};
  }
  if (scheme_ == Scheme::Direct) {
    last_a_ = gp_a_->mean_at(t);
    last_b_ = gp_b_->mean_at(t);
    return {last_a_, last_b_};
  }
  // indirect: trapezoidal dead reckoning over the predicted channels
  const double v = gp_a_->mean_at(t);
  const double th = gp_b_->mean_at(t);
  last_a_ = v;
  last_b_ = th;
  const double gx = v * std::cos(th);
  const double gy = v * std::sin(th);
  const double dt = t - t_prev_;
  x_ += dt * (0.5 * (gx_prev_ + gx));
  y_ += dt * (0.5 * (gy_prev_ + gy));
  gx_prev_ = gx;
  gy_prev_ = gy;
  t_prev_ = t;
  return {x_, y_};
}

namespace {

int horizon_steps_of(const BuildConfig& cfg) {
  return std::max(1, static_cast<int>(std::llround(cfg.horizon_cap_s * 10.0)));
}

struct CandidateEval {
  int entry_id;  // -1 = constant velocity
  PositionPredictor pred;
  std::vector<std::pair<double, double>> trace;
  int steps = 0;
  bool violated = false;

  CandidateEval(int id, PositionPredictor p) : entry_id(id), pred(std::move(p)) {}

  // Extends the trace up to max_steps total; latches after a violation.
  void extend(const Trajectory& traj, int idx0, double threshold, int max_steps) {
    if (violated) return;
    const int n = static_cast<int>(traj.size());
    while (steps < max_steps && idx0 + steps + 1 <= n - 1) {
      const int k = steps + 1;
      const double t = traj.t[idx0 + k];
      const auto [xp, yp] = pred.advance_to(t);
      const double pte = compute_pte(xp, yp, traj.x_enu[idx0 + k], traj.y_enu[idx0 + k]);
      trace.emplace_back(t, pte);
      steps = k;
      if (pte > threshold) {
        violated = true;
        break;
      }
    }
  }
};

int find_sample_index(const Trajectory& traj, double t0) {
  const auto it = std::lower_bound(traj.t.begin(), traj.t.end(), t0 - 1e-6);
  if (it == traj.t.end() || std::abs(*it - t0) > 1e-6) {
    throw DataError("t0 is not a sample time of trip '" + traj.trip_id + "'");
  }
  return static_cast<int>(it - traj.t.begin());
}

ModelSelection selection_from(const CandidateEval& ev, const Trajectory& traj, int idx0) {
  ModelSelection sel;
  sel.entry_id = ev.entry_id;
  sel.source = ev.entry_id < 0 ? SelectionKind::ConstantVelocity : SelectionKind::BankEntry;
  sel.t0 = traj.t[idx0];
  sel.steps = ev.steps;
  sel.persistency_s = traj.t[idx0 + ev.steps] - traj.t[idx0];
  sel.pte_trace = ev.trace;
  return sel;
}

FitConfig per_channel_fit(const BuildConfig& cfg, const std::string& trip_id, int idx0,
                          int channel) {
  FitConfig f = cfg.fit;
  f.seed = mix_seed(mix_seed(cfg.seed, fnv1a64(trip_id)),
                    static_cast<std::uint64_t>(idx0) * 2 + static_cast<std::uint64_t>(channel));
  return f;
}

}  // namespace

ModelSelection evaluate_model(const std::optional<ChannelSpecs>& candidate,
                              const Trajectory& traj, double t0, const BuildConfig& config) {
  const int idx0 = find_sample_index(traj, t0);
  const int n = static_cast<int>(traj.size());
  if (idx0 > n - 2) throw InsufficientHistory("no samples after t0 in '" + traj.trip_id + "'");
  const PredictorState state = make_predictor_state(traj, idx0, config.tw, config.scheme);

  CandidateEval ev(-1, candidate
                           ? PositionPredictor::gp(config.scheme, *candidate, state)
                           : PositionPredictor::constant_velocity(state.anchor, config.scheme));
  ev.extend(traj, idx0, config.pte_threshold_m, horizon_steps_of(config));
  ModelSelection sel = selection_from(ev, traj, idx0);
  if (candidate) sel.source = SelectionKind::BankEntry;
  return sel;
}

std::pair<ModelSelection, bool> select_or_create(KernelBank& bank, const Trajectory& traj,
                                                 int idx0, const BuildConfig& config) {
  return select_or_create(bank, traj, idx0, config,
                          make_predictor_state(traj, idx0, config.tw, config.scheme));
}

std::pair<ModelSelection, bool> select_or_create(KernelBank& bank, const Trajectory& traj,
                                                 int idx0, const BuildConfig& config,
                                                 const PredictorState& cond_state) {
  const int n = static_cast<int>(traj.size());
  if (idx0 > n - 2) throw InsufficientHistory("no samples after t0 in '" + traj.trip_id + "'");
  const int horizon = horizon_steps_of(config);
  const int screen_steps = config.reuse_eval == ReuseEval::FirstStep ? 1 : 10;

  std::vector<CandidateEval> cands;
  cands.reserve(bank.entries.size() + 1);
  for (const auto& e : bank.entries) {
    cands.emplace_back(e.id, PositionPredictor::gp(config.scheme, e.specs, cond_state));
  }
  if (bank.hybrid) {
    cands.emplace_back(-1,
                       PositionPredictor::constant_velocity(cond_state.anchor, config.scheme));
  }

  const CandidateEval* best = nullptr;
  for (auto& ev : cands) {
    ev.extend(traj, idx0, config.pte_threshold_m, screen_steps);
    if (ev.violated) continue;
    ev.extend(traj, idx0, config.pte_threshold_m, horizon);
    // rank by persistency; ties prefer CV, then the lowest id
    if (!best || ev.steps > best->steps ||
        (ev.steps == best->steps &&
         (ev.entry_id < 0 || (best->entry_id >= 0 && ev.entry_id < best->entry_id)))) {
      best = &ev;
    }
  }

  if (best) {
    ModelSelection sel = selection_from(*best, traj, idx0);
    if (sel.source == SelectionKind::BankEntry) {
      auto& entry = bank.entries[static_cast<std::size_t>(sel.entry_id)];
      entry.use_count += 1;
      entry.total_persistency_s += sel.persistency_s;
    }
    return {sel, false};
  }

  // nothing passed the screen: fit a new entry on the true TW window ending
  // here (a NewKernel packet ships this window, so receiver conditioning
  // matches the fit regardless of the ranking state)
  const PredictorState state = make_predictor_state(traj, idx0, config.tw, config.scheme);
  ChannelSpecs specs;
  specs.a = fit_hyperparameters(state.channel_a, per_channel_fit(config, traj.trip_id, idx0, 0));
  specs.b = fit_hyperparameters(state.channel_b, per_channel_fit(config, traj.trip_id, idx0, 1));

  BankEntry entry;
  entry.id = bank.size();
  entry.scheme = config.scheme;
  entry.specs = specs;
  entry.created_trip = traj.trip_id;
  entry.created_t0 = traj.t[idx0];
  entry.use_count = 1;

  CandidateEval ev(entry.id, PositionPredictor::gp(config.scheme, specs, state));
  ev.extend(traj, idx0, config.pte_threshold_m, horizon);
  ModelSelection sel = selection_from(ev, traj, idx0);
  sel.source = SelectionKind::NewlyFitted;
  entry.total_persistency_s = sel.persistency_s;
  bank.append(std::move(entry));
  return {sel, true};
}

ModelSelection select_frozen(const KernelBank& bank, const Trajectory& traj, int idx0,
                             const BuildConfig& config, const PredictorState& cond_state) {
  const int n = static_cast<int>(traj.size());
  if (idx0 > n - 2) throw InsufficientHistory("no samples after t0 in '" + traj.trip_id + "'");
  if (bank.entries.empty() && !bank.hybrid) {
    throw DataError("frozen selection needs a non-empty bank or hybrid mode");
  }
  const int horizon = horizon_steps_of(config);
  const int screen_steps = config.reuse_eval == ReuseEval::FirstStep ? 1 : 10;

  std::vector<CandidateEval> cands;
  cands.reserve(bank.entries.size() + 1);
  for (const auto& e : bank.entries) {
    cands.emplace_back(e.id, PositionPredictor::gp(config.scheme, e.specs, cond_state));
  }
  if (bank.hybrid) {
    cands.emplace_back(-1,
                       PositionPredictor::constant_velocity(cond_state.anchor, config.scheme));
  }

  const CandidateEval* best = nullptr;
  for (auto& ev : cands) {
    ev.extend(traj, idx0, config.pte_threshold_m, screen_steps);
    if (ev.violated) continue;
    ev.extend(traj, idx0, config.pte_threshold_m, horizon);
    if (!best || ev.steps > best->steps ||
        (ev.steps == best->steps &&
         (ev.entry_id < 0 || (best->entry_id >= 0 && ev.entry_id < best->entry_id)))) {
      best = &ev;
    }
  }
  if (!best) {
    // nothing passes and the bank cannot grow: least-bad first step
    for (const auto& ev : cands) {
      if (!best || ev.trace.front().second < best->trace.front().second) best = &ev;
    }
  }
  return selection_from(*best, traj, idx0);
}

std::pair<KernelBank, RunMetrics> build_bank(std::span<const Trajectory> trips,
                                             const BuildConfig& config) {
  if (trips.empty()) throw DataError("build_bank: no trips");
  KernelBank bank;
  bank.scheme = config.scheme;
  bank.hybrid = config.hybrid;
  bank.pte_threshold_m = config.pte_threshold_m;
  bank.tw = config.tw;

  RunMetrics metrics;
  double completed_time = 0.0;
  int update_count = 0;

  for (const auto& traj : trips) {
    const int n = static_cast<int>(traj.size());
    int idx0 = config.tw;  // first decision once TW history exists
    while (idx0 <= n - 2) {
      auto [sel, grew] = select_or_create(bank, traj, idx0, config);
      ++update_count;
      UpdateEvent ev;
      ev.event_idx = update_count - 1;
      ev.data_time_s = completed_time + (traj.t[idx0] - traj.t.front());
      ev.trip_id = traj.trip_id;
      ev.kind = sel.source;
      ev.entry_id = sel.entry_id;
      ev.persistency_s = sel.persistency_s;
      ev.bank_size = bank.size();
      ev.update_count = update_count;
      ev.gen_ratio = static_cast<double>(bank.size()) / update_count;
      metrics.events.push_back(std::move(ev));
      idx0 += sel.steps;
      (void)grew;
    }
    completed_time += traj.duration_s();
  }
  return {std::move(bank), std::move(metrics)};
}

PersistencySummary persistency_stats(const RunMetrics& metrics) {
  if (metrics.events.empty()) throw EmptyMetrics("persistency_stats: no selections recorded");
  PersistencySummary s;
  double sum = 0.0;
  double max_p = 0.0;
  for (const auto& e : metrics.events) {
    sum += e.persistency_s;
    max_p = std::max(max_p, e.persistency_s);
  }
  s.mean_s = sum / static_cast<double>(metrics.events.size());
  s.histogram.assign(static_cast<std::size_t>(max_p / s.bin_width_s) + 1, 0);
  for (const auto& e : metrics.events) {
    auto bin = static_cast<std::size_t>(e.persistency_s / s.bin_width_s);
    bin = std::min(bin, s.histogram.size() - 1);
    ++s.histogram[bin];
  }
  return s;
}

namespace {

void append_spec_json(std::ostringstream& ss, const KernelSpec& spec) {
  ss << "{\"rbf_variance\":" << fmt_double(spec.rbf_variance)
     << ",\"rbf_lengthscale\":" << fmt_double(spec.rbf_lengthscale)
     << ",\"lin_variance\":" << fmt_double(spec.lin_variance)
     << ",\"lin_offset\":" << fmt_double(spec.lin_offset)
     << ",\"noise_variance\":" << fmt_double(spec.noise_variance) << "}";
}

std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

}  // namespace

void save_bank_json(const KernelBank& bank, const std::filesystem::path& path) {
  std::ostringstream ss;
  ss << "[\n";
  bool first = true;
  for (const auto& e : bank.entries) {
    const char* names[2];
    if (bank.scheme == Scheme::Direct) {
      names[0] = "x";
      names[1] = "y";
    } else {
      names[0] = "speed";
      names[1] = "heading";
    }
    const KernelSpec* specs[2] = {&e.specs.a, &e.specs.b};
    for (int c = 0; c < 2; ++c) {
      if (!first) ss << ",\n";
      first = false;
      ss << "  {\"id\":" << e.id << ",\"scheme\":\"" << scheme_name(e.scheme)
         << "\",\"channel\":\"" << names[c] << "\",\"spec\":";
      append_spec_json(ss, *specs[c]);
      ss << ",\"created_at\":{\"trip_id\":\"" << json_escape(e.created_trip)
         << "\",\"t0\":" << fmt_double(e.created_t0) << "}"
         << ",\"use_count\":" << e.use_count
         << ",\"total_persistency_s\":" << fmt_double(e.total_persistency_s) << "}";
    }
  }
  ss << "\n]\n";
  write_text_file(path, ss.str());
}

KernelBank load_bank_json(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw DataError(path.string() + ": bank file must be a JSON array");

  KernelBank bank;
  std::map<int, BankEntry> by_id;
  std::map<int, int> channels_seen;
  bool scheme_set = false;
  try {
    for (const auto& row : j) {
      const int id = row.at("id").get<int>();
      const Scheme scheme = scheme_from_name(row.at("scheme").get<std::string>());
      if (!scheme_set) {
        bank.scheme = scheme;
        scheme_set = true;
      } else if (scheme != bank.scheme) {
        throw DataError(path.string() + ": mixed schemes in bank file");
      }
      const std::string channel = row.at("channel").get<std::string>();
      int cidx;
      if (bank.scheme == Scheme::Direct) {
        if (channel == "x") cidx = 0;
        else if (channel == "y") cidx = 1;
        else throw DataError(path.string() + ": channel '" + channel + "' in a direct bank");
      } else {
        if (channel == "speed") cidx = 0;
        else if (channel == "heading") cidx = 1;
        else throw DataError(path.string() + ": channel '" + channel + "' in an indirect bank");
      }
      KernelSpec spec;
      const auto& js = row.at("spec");
      spec.rbf_variance = js.at("rbf_variance").get<double>();
      spec.rbf_lengthscale = js.at("rbf_lengthscale").get<double>();
      spec.lin_variance = js.at("lin_variance").get<double>();
      spec.lin_offset = js.at("lin_offset").get<double>();
      spec.noise_variance = js.at("noise_variance").get<double>();
      spec.validate();

      auto& entry = by_id[id];
      entry.id = id;
      entry.scheme = scheme;
      entry.created_trip = row.at("created_at").at("trip_id").get<std::string>();
      entry.created_t0 = row.at("created_at").at("t0").get<double>();
      entry.use_count = row.at("use_count").get<int>();
      entry.total_persistency_s = row.at("total_persistency_s").get<double>();
      (cidx == 0 ? entry.specs.a : entry.specs.b) = spec;
      channels_seen[id] |= 1 << cidx;
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }

  int expect = 0;
  for (auto& [id, entry] : by_id) {
    if (id != expect++) throw DataError(path.string() + ": entry ids not dense from 0");
    if (channels_seen[id] != 3) {
      throw DataError(path.string() + ": entry " + std::to_string(id) +
                      " is missing a channel spec");
    }
    bank.entries.push_back(std::move(entry));
  }
  return bank;
}

void save_metrics_csv(const RunMetrics& metrics, const std::filesystem::path& path) {
  std::ostringstream ss;
  ss << "event_idx,data_time_s,trip_id,source,persistency_s,bank_size,update_count,gen_ratio\n";
  for (const auto& e : metrics.events) {
    std::string source;
    switch (e.kind) {
      case SelectionKind::ConstantVelocity: source = "cv"; break;
      case SelectionKind::BankEntry: source = "reuse:" + std::to_string(e.entry_id); break;
      case SelectionKind::NewlyFitted: source = "new:" + std::to_string(e.entry_id); break;
    }
    ss << e.event_idx << ',' << fmt_double(e.data_time_s) << ',' << e.trip_id << ',' << source
       << ',' << fmt_double(e.persistency_s) << ',' << e.bank_size << ',' << e.update_count
       << ',' << fmt_double(e.gen_ratio) << '\n';
  }
  write_text_file(path, ss.str());
}

}  // namespace mbc

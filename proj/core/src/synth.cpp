#include "mbc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "mbc/errors.hpp"
#include "mbc/util.hpp"

namespace mbc {

namespace {

constexpr double kDt = 0.1;
constexpr double kPi = std::numbers::pi;

// Analytic speed/heading over one segment given the entry state.
struct SegmentProfile {
  const Segment* seg;
  double t_begin;
  double v0;
  double th0;

  // Accel/Brake are jerk-limited: the instantaneous rate eases in and out
  // as rate*(1-cos(2*pi*tau/d))/2, so `rate` is the peak and rate/2 the mean.
  double ramp_delta(double tau) const {
    const double d = seg->duration_s;
    return 0.5 * seg->rate * (tau - d / (2.0 * kPi) * std::sin(2.0 * kPi * tau / d));
  }

  double speed_at(double tau) const {
    switch (seg->kind) {
      case ManeuverKind::Cruise:
      case ManeuverKind::TurnArc:
        return v0;
      case ManeuverKind::Accel:
        return v0 + ramp_delta(tau);
      case ManeuverKind::Brake:
        return std::max(v0 - ramp_delta(tau), 0.0);
      case ManeuverKind::LaneChange:
        return v0;
      case ManeuverKind::Stop:
        return 0.0;
    }
    return v0;
  }

  double heading_at(double tau) const {
    switch (seg->kind) {
      case ManeuverKind::Cruise:
      case ManeuverKind::Accel:
      case ManeuverKind::Brake:
      case ManeuverKind::Stop:
        return th0;
      case ManeuverKind::TurnArc:
        return seg->radius > 0.0 ? th0 + seg->dir * (v0 / seg->radius) * tau : th0;
      case ManeuverKind::LaneChange: {
        const double d = seg->duration_s;
        if (v0 <= 0.1) return th0;
        const double amp = seg->lateral / (v0 * d);
        return th0 + amp * (1.0 - std::cos(2.0 * kPi * tau / d));
      }
    }
    return th0;
  }

  double kink_tau() const { return -1.0; }
};

struct MotionModel {
  std::vector<SegmentProfile> profiles;
  std::vector<SegmentState> boundaries;
  double total = 0.0;

  explicit MotionModel(const ManeuverScript& script) {
    double t = 0.0, x = 0.0, y = 0.0;
    double v = script.start_speed_mps;
    double th = script.start_heading_rad;
    boundaries.push_back({t, x, y, th, v});
    for (const auto& seg : script.segments) {
      SegmentProfile p{&seg, t, v, th};
      profiles.push_back(p);
      const double d = seg.duration_s;
      auto [dx, dy] = integrate_profile(p, 0.0, d);
      x += dx;
      y += dy;
      t += d;
      v = p.speed_at(d);
      th = p.heading_at(d);
      boundaries.push_back({t, x, y, th, v});
    }
    total = t;
  }

  // Composite Simpson on smooth pieces; substep <= 1 ms.
  static std::pair<double, double> integrate_profile(const SegmentProfile& p, double a,
                                                     double b) {
    double sx = 0.0, sy = 0.0;
    const double kink = p.kink_tau();
    std::vector<std::pair<double, double>> pieces;
    if (kink > a && kink < b) {
      pieces = {{a, kink}, {kink, b}};
    } else {
      pieces = {{a, b}};
    }
    for (auto [lo, hi] : pieces) {
      const double len = hi - lo;
      if (len <= 0.0) continue;
      int m = static_cast<int>(std::ceil(len / 0.001));
      m += m % 2;  // Simpson needs an even count
      m = std::max(m, 2);
      const double h = len / m;
      double ax = 0.0, ay = 0.0;
      for (int i = 0; i <= m; ++i) {
        const double tau = lo + h * i;
        const double v = p.speed_at(tau);
        const double th = p.heading_at(tau);
        const double w = (i == 0 || i == m) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        ax += w * v * std::cos(th);
        ay += w * v * std::sin(th);
      }
      sx += ax * h / 3.0;
      sy += ay * h / 3.0;
    }
    return {sx, sy};
  }

  const SegmentProfile& profile_at(double t) const {
    for (std::size_t i = profiles.size(); i-- > 0;) {
      if (t >= profiles[i].t_begin - 1e-12) return profiles[i];
    }
    return profiles.front();
  }

  double speed_at(double t) const {
    const auto& p = profile_at(t);
    return p.speed_at(std::min(t - p.t_begin, p.seg->duration_s));
  }

  double heading_at(double t) const {
    const auto& p = profile_at(t);
    return p.heading_at(std::min(t - p.t_begin, p.seg->duration_s));
  }

  std::pair<double, double> advance(double a, double b) const {
    double x = 0.0, y = 0.0;
    double cur = a;
    while (cur < b - 1e-12) {
      const auto& p = profile_at(cur);
      const double seg_end = p.t_begin + p.seg->duration_s;
      const double stop = std::min(seg_end, b);
      auto [dx, dy] = integrate_profile(p, cur - p.t_begin, stop - p.t_begin);
      x += dx;
      y += dy;
      cur = stop;
    }
    return {x, y};
  }
};

}  // namespace

double ManeuverScript::total_duration_s() const {
  double t = 0.0;
  for (const auto& s : segments) t += s.duration_s;
  return t;
}

void ManeuverScript::validate() const {
  if (segments.empty()) throw std::invalid_argument("ManeuverScript: no segments");
  for (const auto& s : segments) {
    if (!(s.duration_s > 0.0)) throw std::invalid_argument("ManeuverScript: segment duration <= 0");
  }
  if (total_duration_s() < 30.0) {
    throw std::invalid_argument("ManeuverScript: total duration must be >= 30 s");
  }
}

GeneratedTrip generate_trip_detailed(const ManeuverScript& script) {
  script.validate();
  MotionModel model(script);

  GeneratedTrip out;
  out.boundaries = model.boundaries;
  Trajectory& tr = out.trajectory;
  tr.trip_id = script.trip_id;

  const int n = static_cast<int>(std::floor(model.total / kDt + 1e-9)) + 1;
  std::mt19937_64 rng(script.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  double x = 0.0, y = 0.0;
  double prev_t = 0.0;
  for (int k = 0; k < n; ++k) {
    const double t = k * kDt;
    if (k > 0) {
      auto [dx, dy] = model.advance(prev_t, t);
      x += dx;
      y += dy;
    }
    prev_t = t;
    const double nx = gauss(rng) * script.noise.pos_sigma_m;
    const double ny = gauss(rng) * script.noise.pos_sigma_m;
    const double nv = gauss(rng) * script.noise.speed_sigma_mps;
    const double nh = gauss(rng) * script.noise.heading_sigma_rad;
    tr.t.push_back(t);
    tr.x_enu.push_back(x + nx);
    tr.y_enu.push_back(y + ny);
    tr.speed.push_back(std::max(model.speed_at(t) + nv, 0.0));
    tr.heading_unwrapped.push_back(model.heading_at(t) + nh);
  }
  return out;
}

Trajectory generate_trip(const ManeuverScript& script) {
  return generate_trip_detailed(script).trajectory;
}

namespace {

struct ScriptBuilder {
  std::mt19937_64 rng;
  ManeuverScript script;
  double v = 0.0;  // tracks exact speed through the script

  explicit ScriptBuilder(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }
  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }
  double pick_of(std::initializer_list<double> xs) {
    return *(xs.begin() + pick(static_cast<int>(xs.size())));
  }

  void cruise(double dur) { script.segments.push_back({ManeuverKind::Cruise, dur}); }

  void arc(double radius, double dir, double dur) {
    Segment s{ManeuverKind::TurnArc, dur};
    s.radius = radius;
    s.dir = dir;
    script.segments.push_back(s);
  }

  // cruise with road-curvature texture: shallow alternating arcs
  void drift_cruise(double dur) {
    double left = dur;
    double dir = pick(2) == 0 ? 1.0 : -1.0;
    while (left > 1.0) {
      const double piece = std::min(uniform(2.5, 5.0), left);
      if (pick(3) == 0) {
        cruise(piece);
      } else {
        arc(log_uniform(150.0, 1100.0), dir, piece);
        dir = -dir;
      }
      left -= piece;
    }
    if (left > 0.0) cruise(left);
  }

  void accel_to(double target, double mean_rate) {
    if (target <= v + 0.01) return;
    Segment s{ManeuverKind::Accel, (target - v) / mean_rate};
    s.rate = 2.0 * mean_rate;
    script.segments.push_back(s);
    v = target;
  }

  void brake_to(double target, double mean_rate) {
    if (target >= v - 0.01) return;
    Segment s{ManeuverKind::Brake, (v - target) / mean_rate};
    s.rate = 2.0 * mean_rate;
    script.segments.push_back(s);
    v = target;
  }

  void turn(double cruise_speed) {
    const double radius = log_uniform(8.5, 90.0);
    // lateral-acceleration cap ~3 m/s^2 sets the comfortable turn speed
    const double v_turn = std::min(v, std::sqrt(3.0 * radius));
    brake_to(v_turn, log_uniform(0.5, 1.5));
    const double dir = pick(2) == 0 ? 1.0 : -1.0;
    // staircase steering transition approximates a clothoid entry/exit
    arc(6.0 * radius, dir, 0.6);
    arc(3.0 * radius, dir, 0.6);
    arc(1.5 * radius, dir, 0.6);
    const double angle = uniform(kPi / 6.0, kPi / 2.0);
    arc(radius, dir, angle * radius / std::max(v_turn, 1.0));
    arc(1.5 * radius, dir, 0.6);
    arc(3.0 * radius, dir, 0.6);
    arc(6.0 * radius, dir, 0.6);
    accel_to(cruise_speed * uniform(0.85, 1.1), pick_of({0.4, 0.7, 1.0}));
  }

  void speed_dip() {
    const double drop = uniform(0.25, 0.5) * v;
    const double floor_v = std::max(v - drop, 3.0);
    const double restore = v;
    brake_to(floor_v, log_uniform(0.3, 1.5));
    cruise(uniform(1.0, 2.5));
    accel_to(restore * uniform(0.9, 1.05), pick_of({0.3, 0.6, 1.0}));
  }

  void lane_change() {
    Segment s{ManeuverKind::LaneChange, uniform(3.0, 5.0)};
    s.lateral = pick(2) == 0 ? 3.5 : -3.5;
    script.segments.push_back(s);
  }

  void full_stop(double cruise_speed) {
    brake_to(0.0, pick_of({0.6, 1.0, 1.6}));
    script.segments.push_back({ManeuverKind::Stop, uniform(2.0, 5.0)});
    accel_to(cruise_speed * uniform(0.85, 1.05), pick_of({0.4, 0.7, 1.0}));
  }

  void turn_with_radius(double radius, double cruise_speed, double dir, double angle) {
    const double v_turn = std::min(v, std::sqrt(3.0 * radius));
    brake_to(v_turn, log_uniform(0.5, 1.5));
    arc(6.0 * radius, dir, 0.6);
    arc(3.0 * radius, dir, 0.6);
    arc(1.5 * radius, dir, 0.6);
    arc(radius, dir, angle * radius / std::max(v_turn, 1.0));
    arc(1.5 * radius, dir, 0.6);
    arc(3.0 * radius, dir, 0.6);
    arc(6.0 * radius, dir, 0.6);
    accel_to(cruise_speed * uniform(0.85, 1.1), pick_of({0.4, 0.7, 1.0}));
  }

  // samples the extreme corners of the maneuver envelope so the behavior
  // vocabulary is exercised early in a corpus
  void vocabulary_tour(double cruise_speed) {
    turn_with_radius(8.5, cruise_speed, 1.0, kPi / 2.5);
    cruise(2.0);
    const double restore = v;
    brake_to(std::max(v * 0.5, 3.0), 3.0);
    cruise(1.5);
    accel_to(restore, 1.0);
    turn_with_radius(90.0, cruise_speed, -1.0, kPi / 5.0);
    lane_change();
    cruise(2.0);
    full_stop(cruise_speed);
  }
};

ManeuverScript build_default_script(int index, std::uint64_t seed) {
  ScriptBuilder b(mix_seed(seed, static_cast<std::uint64_t>(index)));
  char id[32];
  std::snprintf(id, sizeof id, "synth_%03d", index);
  b.script.trip_id = id;
  b.script.seed = mix_seed(seed, 1000 + static_cast<std::uint64_t>(index));
  b.script.start_heading_rad = b.uniform(0.0, 2.0 * kPi);
  const double v_c = b.uniform(10.0, 30.0);
  b.v = v_c;
  b.script.start_speed_mps = v_c;

  const double target_total = b.uniform(55.0, 70.0);
  b.cruise(b.uniform(4.0, 8.0));
  const bool tour = index % 6 == 0;  // guarantees a trip with every kind
  int guard = 0;
  while (b.script.total_duration_s() < target_total - 8.0 && ++guard < 40) {
    if (tour && guard == 1) {
      b.vocabulary_tour(v_c);
    } else {
      switch (b.pick(6)) {
        case 0:
        case 1: b.turn(v_c); break;
        case 2: b.speed_dip(); break;
        case 3:
        case 4: b.lane_change(); break;
        case 5: b.full_stop(v_c); break;
      }
    }
    b.drift_cruise(b.uniform(3.0, 6.5));
  }
  const double remain = std::max(target_total - b.script.total_duration_s(), 0.5);
  b.drift_cruise(remain < 1.5 ? remain + 1.5 : remain);
  return b.script;
}

ManeuverScript build_three_regime_script(int index, std::uint64_t seed) {
  ScriptBuilder b(mix_seed(seed, 0x3000 + static_cast<std::uint64_t>(index)));
  char id[32];
  std::snprintf(id, sizeof id, "regime_%03d", index);
  b.script.trip_id = id;
  b.script.seed = mix_seed(seed, 0x3000 + 1000 + static_cast<std::uint64_t>(index));
  b.script.start_heading_rad = b.uniform(0.0, 2.0 * kPi);
  const double v_c = b.uniform(12.0, 25.0);
  b.v = v_c;
  b.script.start_speed_mps = v_c;

  const double target_total = b.uniform(50.0, 70.0);
  int guard = 0;
  while (b.script.total_duration_s() < target_total - 6.0 && ++guard < 40) {
    b.drift_cruise(b.uniform(5.0, 9.0));
    if (b.pick(2) == 0) {
      b.turn(v_c);
    } else {
      b.speed_dip();
    }
  }
  b.cruise(std::max(target_total - b.script.total_duration_s(), 1.0));
  return b.script;
}

}  // namespace

std::vector<ManeuverScript> make_corpus_scripts(int n_trips, CorpusPreset preset,
                                                std::uint64_t seed) {
  if (n_trips < 1) throw std::invalid_argument("make_corpus_scripts: n_trips must be >= 1");
  std::vector<ManeuverScript> out;
  out.reserve(static_cast<std::size_t>(n_trips));
  for (int i = 0; i < n_trips; ++i) {
    out.push_back(preset == CorpusPreset::Default ? build_default_script(i, seed)
                                                  : build_three_regime_script(i, seed));
  }
  return out;
}

std::vector<Trajectory> generate_corpus(int n_trips, CorpusPreset preset, std::uint64_t seed) {
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(n_trips));
  for (const auto& script : make_corpus_scripts(n_trips, preset, seed)) {
    out.push_back(generate_trip(script));
  }
  return out;
}

const char* maneuver_kind_name(ManeuverKind k) {
  switch (k) {
    case ManeuverKind::Cruise: return "cruise";
    case ManeuverKind::Accel: return "accel";
    case ManeuverKind::Brake: return "brake";
    case ManeuverKind::TurnArc: return "turn_arc";
    case ManeuverKind::LaneChange: return "lane_change";
    case ManeuverKind::Stop: return "stop";
  }
  return "?";
}

namespace {

ManeuverKind kind_from_name(const std::string& s) {
  for (ManeuverKind k : {ManeuverKind::Cruise, ManeuverKind::Accel, ManeuverKind::Brake,
                         ManeuverKind::TurnArc, ManeuverKind::LaneChange, ManeuverKind::Stop}) {
    if (s == maneuver_kind_name(k)) return k;
  }
  throw SchemaError("unknown maneuver kind '" + s + "'");
}

}  // namespace

ManeuverScript read_script_json(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  ManeuverScript s;
  try {
    s.trip_id = j.value("trip_id", std::string("synth"));
    s.seed = j.value("seed", std::uint64_t{0});
    s.start_speed_mps = j.value("start_speed_mps", 15.0);
    s.start_heading_rad = j.value("start_heading_rad", 0.0);
    if (j.contains("noise")) {
      s.noise.pos_sigma_m = j["noise"].value("pos_sigma_m", s.noise.pos_sigma_m);
      s.noise.speed_sigma_mps = j["noise"].value("speed_sigma_mps", s.noise.speed_sigma_mps);
      s.noise.heading_sigma_rad = j["noise"].value("heading_sigma_rad", s.noise.heading_sigma_rad);
    }
    for (const auto& js : j.at("segments")) {
      Segment seg;
      seg.kind = kind_from_name(js.at("kind").get<std::string>());
      seg.duration_s = js.at("duration_s").get<double>();
      seg.rate = js.value("rate", 0.0);
      seg.radius = js.value("radius", 0.0);
      seg.dir = js.value("dir", 1.0);
      seg.lateral = js.value("lateral", 3.5);
      s.segments.push_back(seg);
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  return s;
}

void write_script_json(const ManeuverScript& script, const std::filesystem::path& path) {
  nlohmann::json j;
  j["trip_id"] = script.trip_id;
  j["seed"] = script.seed;
  j["start_speed_mps"] = script.start_speed_mps;
  j["start_heading_rad"] = script.start_heading_rad;
  j["noise"] = {{"pos_sigma_m", script.noise.pos_sigma_m},
                {"speed_sigma_mps", script.noise.speed_sigma_mps},
                {"heading_sigma_rad", script.noise.heading_sigma_rad}};
  j["segments"] = nlohmann::json::array();
  for (const auto& seg : script.segments) {
    nlohmann::json js;
    js["kind"] = maneuver_kind_name(seg.kind);
    js["duration_s"] = seg.duration_s;
    if (seg.kind == ManeuverKind::Accel || seg.kind == ManeuverKind::Brake) js["rate"] = seg.rate;
    if (seg.kind == ManeuverKind::TurnArc) {
      js["radius"] = seg.radius;
      js["dir"] = seg.dir;
    }
    if (seg.kind == ManeuverKind::LaneChange) js["lateral"] = seg.lateral;
    j["segments"].push_back(js);
  }
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace mbc

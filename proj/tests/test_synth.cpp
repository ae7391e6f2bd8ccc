#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>
#include <sstream>

#include "mbc/bank.hpp"
#include "mbc/synth.hpp"
#include "mbc/util.hpp"

using namespace mbc;

namespace {

constexpr double kPi = std::numbers::pi;

ManeuverScript noiseless(std::vector<Segment> segs, double v0, double th0 = 0.0) {
  ManeuverScript s;
  s.trip_id = "test";
  s.segments = std::move(segs);
  s.noise = {0.0, 0.0, 0.0};
  s.start_speed_mps = v0;
  s.start_heading_rad = th0;
  return s;
}

}  // namespace

TEST_CASE("cruise covers exactly speed times duration") {
  auto script = noiseless({{ManeuverKind::Cruise, 10.0}, {ManeuverKind::Cruise, 20.1}}, 15.0);
  const auto trip = generate_trip_detailed(script);
  CHECK(trip.boundaries[1].x == doctest::Approx(150.0).epsilon(1e-12));
  CHECK(std::abs(trip.boundaries[1].y) < 1e-12);
  // sample 100 sits exactly at the 10 s boundary
  CHECK(trip.trajectory.x_enu[100] == doctest::Approx(150.0).epsilon(1e-9));
}

TEST_CASE("turn arc geometry: end heading and chord") {
  const double radius = 20.0, v = 10.0;
  const double angle = kPi / 2.0;
  Segment turn{ManeuverKind::TurnArc, angle * radius / v};
  turn.radius = radius;
  turn.dir = 1.0;
  auto script = noiseless({{ManeuverKind::Cruise, 5.0}, turn, {ManeuverKind::Cruise, 30.0}}, v,
                          0.3);
  const auto trip = generate_trip_detailed(script);
  const auto& b1 = trip.boundaries[1];  // turn entry
  const auto& b2 = trip.boundaries[2];  // turn exit
  CHECK(b2.heading - b1.heading == doctest::Approx(kPi / 2.0).epsilon(1e-9));
  const double chord = std::hypot(b2.x - b1.x, b2.y - b1.y);
  CHECK(chord == doctest::Approx(radius * std::sqrt(2.0)).epsilon(1e-7 / chord));
}

TEST_CASE("same seed regenerates the identical CSV byte for byte") {
  namespace fs = std::filesystem;
  auto scripts = make_corpus_scripts(2, CorpusPreset::Default, 99);
  const fs::path dir = fs::temp_directory_path() / "mbc_synth_test";
  fs::create_directories(dir);
  write_trajectory_csv(generate_trip(scripts[1]), dir / "a.csv");
  write_trajectory_csv(generate_trip(scripts[1]), dir / "b.csv");
  CHECK(read_text_file(dir / "a.csv") == read_text_file(dir / "b.csv"));
  CHECK(!read_text_file(dir / "a.csv").empty());
  fs::remove_all(dir);
}

TEST_CASE("default corpus: size, duration budget, maneuver coverage") {
  const auto scripts = make_corpus_scripts(26, CorpusPreset::Default, 7);
  CHECK(scripts.size() == 26);
  double total = 0.0;
  bool some_trip_has_all = false;
  for (const auto& s : scripts) {
    s.validate();
    total += s.total_duration_s();
    std::set<ManeuverKind> kinds;
    for (const auto& seg : s.segments) kinds.insert(seg.kind);
    if (kinds.size() == 6) some_trip_has_all = true;
  }
  CHECK(total >= 1500.0);
  CHECK(some_trip_has_all);

  const auto one = make_corpus_scripts(1, CorpusPreset::Default, 7);
  CHECK(one.size() == 1);

  // regeneration is deterministic
  const auto again = make_corpus_scripts(26, CorpusPreset::Default, 7);
  for (std::size_t i = 0; i < scripts.size(); ++i) {
    CHECK(scripts[i].segments.size() == again[i].segments.size());
    CHECK(scripts[i].seed == again[i].seed);
  }
  const auto t1 = generate_trip(scripts[3]);
  const auto t2 = generate_trip(again[3]);
  for (std::size_t i = 0; i < t1.size(); ++i) {
    CHECK(t1.x_enu[i] == t2.x_enu[i]);
  }
}

TEST_CASE("zero-noise trips recover the scripted channels exactly") {
  auto scripts = make_corpus_scripts(4, CorpusPreset::Default, 13);
  for (auto& s : scripts) {
    s.noise = {0.0, 0.0, 0.0};
    const auto trip = generate_trip(s);
    // channels as emitted are the scripted profiles; check self-consistency
    // by reconstructing positions from them via the integrator
    const int n = static_cast<int>(trip.size());
    for (int start = 10; start + 10 < n; start += 40) {
      std::vector<double> sp(trip.speed.begin() + start + 1, trip.speed.begin() + start + 11);
      std::vector<double> hd(trip.heading_unwrapped.begin() + start + 1,
                             trip.heading_unwrapped.begin() + start + 11);
      std::vector<double> x, y;
      integrate_position(sp, hd, trip.x_enu[start], trip.y_enu[start], trip.speed[start],
                         trip.heading_unwrapped[start], 0.1, x, y);
      for (int k = 0; k < 10; ++k) {
        CHECK(compute_pte(x[k], y[k], trip.x_enu[start + 1 + k], trip.y_enu[start + 1 + k]) <
              0.02);
      }
    }
  }
}

TEST_CASE("default noise keeps position jitter well under the 0.2 m threshold") {
  NoiseSpec noise;
  CHECK(noise.pos_sigma_m <= 0.05);
  CHECK(4.0 * noise.pos_sigma_m <= 0.2);
}

TEST_CASE("script JSON round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mbc_synth_json";
  fs::create_directories(dir);
  auto scripts = make_corpus_scripts(1, CorpusPreset::Default, 21);
  write_script_json(scripts[0], dir / "s.json");
  const auto back = read_script_json(dir / "s.json");
  CHECK(back.trip_id == scripts[0].trip_id);
  CHECK(back.seed == scripts[0].seed);
  REQUIRE(back.segments.size() == scripts[0].segments.size());
  for (std::size_t i = 0; i < back.segments.size(); ++i) {
    CHECK(back.segments[i].kind == scripts[0].segments[i].kind);
    CHECK(back.segments[i].duration_s == scripts[0].segments[i].duration_s);
  }
  const auto a = generate_trip(scripts[0]);
  const auto b = generate_trip(back);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.x_enu[i] == b.x_enu[i]);
  fs::remove_all(dir);
}

TEST_CASE("invalid scripts are rejected") {
  ManeuverScript s;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.segments.push_back({ManeuverKind::Cruise, 10.0});
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);  // under 30 s
  s.segments.push_back({ManeuverKind::Cruise, -1.0});
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

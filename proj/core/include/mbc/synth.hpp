#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mbc/geo.hpp"

namespace mbc {

enum class ManeuverKind { Cruise, Accel, Brake, TurnArc, LaneChange, Stop };

/// One scripted maneuver. Speed and heading profiles over the segment are
/// analytic functions of the entry state:
///   Cruise      hold speed and heading
///   Accel       v0 + rate*tau
///   Brake       max(v0 - rate*tau, 0)
///   TurnArc     constant speed, yaw rate dir*v0/radius
///   LaneChange  S-shaped heading deviation moving `lateral` meters sideways
///   Stop        v = 0
struct Segment {
  ManeuverKind kind = ManeuverKind::Cruise;
  double duration_s = 1.0;
  double rate = 0.0;     // m/s^2, Accel/Brake
  double radius = 0.0;   // m, TurnArc
  double dir = 1.0;      // +1 left, -1 right, TurnArc
  double lateral = 3.5;  // m, LaneChange (signed)
};

struct NoiseSpec {
  double pos_sigma_m = 0.05;
  double speed_sigma_mps = 0.05;
  double heading_sigma_rad = 0.004;
};

struct ManeuverScript {
  std::string trip_id = "synth";
  std::vector<Segment> segments;
  NoiseSpec noise;
  std::uint64_t seed = 0;
  double start_speed_mps = 15.0;
  double start_heading_rad = 0.0;

  double total_duration_s() const;
  void validate() const;  // durations positive, total >= 30 s
};

/// Exact state at a segment boundary, before noise.
struct SegmentState {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
};

struct GeneratedTrip {
  Trajectory trajectory;
  std::vector<SegmentState> boundaries;  // segments.size() + 1 entries
};

/// 10 Hz trajectory whose noise-free positions are the (high-order
/// quadrature) integral of the scripted speed and heading; channel noise is
/// injected afterwards, deterministically from the script seed.
Trajectory generate_trip(const ManeuverScript& script);
GeneratedTrip generate_trip_detailed(const ManeuverScript& script);

enum class CorpusPreset {
  Default,      // full maneuver mix
  ThreeRegime,  // cruise / turn / brake patterns only
};

std::vector<ManeuverScript> make_corpus_scripts(int n_trips, CorpusPreset preset,
                                                std::uint64_t seed);
std::vector<Trajectory> generate_corpus(int n_trips, CorpusPreset preset, std::uint64_t seed);

/// Script file IO: a JSON list of segment objects plus start state and noise.
ManeuverScript read_script_json(const std::filesystem::path& path);
void write_script_json(const ManeuverScript& script, const std::filesystem::path& path);

const char* maneuver_kind_name(ManeuverKind k);

}  // namespace mbc

#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbc/errors.hpp"

namespace mbc {

/// One CSV row of a trip file. Exactly one position form is present:
/// geodetic (lat/lon/alt, degrees/meters) or pre-converted ENU (meters).
struct RawTripRecord {
  double t = 0.0;  // seconds
  std::optional<double> lat, lon, alt;
  std::optional<double> x_enu, y_enu;
  std::optional<double> speed;      // m/s
  std::optional<double> heading;    // radians once parsed
  std::optional<double> yaw_rate;   // rad/s
  std::optional<double> accel_lon;  // m/s^2
};

/// Uniformly sampled trip segment in the local ENU frame, 10 Hz nominal.
struct Trajectory {
  std::string trip_id;
  std::vector<double> t;
  std::vector<double> x_enu;
  std::vector<double> y_enu;
  std::vector<double> speed;
  std::vector<double> heading_unwrapped;

  std::size_t size() const { return t.size(); }
  double duration_s() const { return t.empty() ? 0.0 : t.back() - t.front(); }
};

struct TripRank {
  std::string trip_id;
  double duration_s = 0.0;
  int stop_count = 0;  // speed < 0.5 m/s sustained >= 2 s
  double std_heading = 0.0;
  double std_accel = 0.0;
  double std_yaw = 0.0;
  double composite_score = 0.0;
};

struct GeodeticOrigin {
  double lat = 0.0;  // degrees
  double lon = 0.0;
  double alt = 0.0;  // meters
};

/// WGS-84 geodetic to local East-North-Up via ECEF. Origin maps to (0,0,0).
std::array<double, 3> geodetic_to_enu(double lat_deg, double lon_deg, double alt_m,
                                      const GeodeticOrigin& origin);

/// Inverse of geodetic_to_enu (iterative ECEF-to-geodetic step); returns
/// (lat_deg, lon_deg, alt_m).
std::array<double, 3> enu_to_geodetic(double x, double y, double z,
                                      const GeodeticOrigin& origin);

/// Removes 2*pi discontinuities in place, anchored at the first element.
void unwrap_angles(std::vector<double>& angles);

/// Splits a record sequence wherever consecutive timestamps are more than
/// max_gap_s apart. Never interpolates.
std::vector<std::vector<RawTripRecord>> split_at_gaps(std::span<const RawTripRecord> records,
                                                      double max_gap_s = 0.5);

/// Builds a Trajectory from one gap-free record segment. Missing speed or
/// heading channels are derived from positions by central differences.
/// Throws TooShort when fewer than 2*tw records remain and GapTooLarge when
/// the segment still contains a gap.
Trajectory extract_channels(std::span<const RawTripRecord> records, const std::string& trip_id,
                            int tw = 10);

struct IngestResult {
  std::vector<Trajectory> segments;
  int dropped_short = 0;
  std::vector<std::string> warnings;
};

/// Gap-splits, drops too-short remnants, extracts channels. Segment ids are
/// trip_id, trip_id#1, ... when a trip splits.
IngestResult ingest_records(std::span<const RawTripRecord> records, const std::string& trip_id,
                            int tw = 10);

/// Ranks descending by composite score: the sum of per-criterion z-scores of
/// duration, stop count and the standard deviations of heading, longitudinal
/// acceleration and yaw rate. Ties break on trip_id.
std::vector<TripRank> rank_trips(std::span<const Trajectory> trips);

/// Reads a trip CSV (header required). Accepts the geodetic schema
/// t,lat,lon,alt[,speed][,heading][,yaw_rate][,accel_lon] or the
/// pre-converted t,x_enu,y_enu[,speed][,heading]. Angles in files are
/// degrees. Throws SchemaError with file and line.
std::vector<RawTripRecord> read_trip_csv(const std::filesystem::path& path);

/// Writes the pre-converted schema with speed and heading columns.
void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path);

void validate_records(std::span<const RawTripRecord> records, const std::string& context);

}  // namespace mbc

#include "mbc/geo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mbc/util.hpp"

namespace mbc {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kWgs84A = 6378137.0;
constexpr double kWgs84F = 1.0 / 298.257223563;
constexpr double kWgs84E2 = kWgs84F * (2.0 - kWgs84F);

std::array<double, 3> geodetic_to_ecef(double lat_deg, double lon_deg, double alt_m) {
  const double lat = lat_deg * kDegToRad;
  const double lon = lon_deg * kDegToRad;
  const double slat = std::sin(lat), clat = std::cos(lat);
  const double n = kWgs84A / std::sqrt(1.0 - kWgs84E2 * slat * slat);
  return {(n + alt_m) * clat * std::cos(lon), (n + alt_m) * clat * std::sin(lon),
          (n * (1.0 - kWgs84E2) + alt_m) * slat};
}

std::array<double, 3> ecef_to_geodetic(const std::array<double, 3>& p) {
  const double x = p[0], y = p[1], z = p[2];
  const double lon = std::atan2(y, x);
  const double rho = std::hypot(x, y);
  double lat = std::atan2(z, rho * (1.0 - kWgs84E2));
  double alt = 0.0;
  for (int i = 0; i < 12; ++i) {
    const double slat = std::sin(lat);
    const double n = kWgs84A / std::sqrt(1.0 - kWgs84E2 * slat * slat);
    alt = rho / std::cos(lat) - n;
    lat = std::atan2(z, rho * (1.0 - kWgs84E2 * n / (n + alt)));
  }
  return {lat / kDegToRad, lon / kDegToRad, alt};
}

}  // namespace

std::array<double, 3> geodetic_to_enu(double lat_deg, double lon_deg, double alt_m,
                                      const GeodeticOrigin& origin) {
  const auto p = geodetic_to_ecef(lat_deg, lon_deg, alt_m);
  const auto p0 = geodetic_to_ecef(origin.lat, origin.lon, origin.alt);
  const double dx = p[0] - p0[0], dy = p[1] - p0[1], dz = p[2] - p0[2];
  const double lat = origin.lat * kDegToRad, lon = origin.lon * kDegToRad;
  const double sl = std::sin(lon), cl = std::cos(lon);
  const double sp = std::sin(lat), cp = std::cos(lat);
  return {-sl * dx + cl * dy,
          -sp * cl * dx - sp * sl * dy + cp * dz,
          cp * cl * dx + cp * sl * dy + sp * dz};
}

std::array<double, 3> enu_to_geodetic(double x, double y, double z,
                                      const GeodeticOrigin& origin) {
  const auto p0 = geodetic_to_ecef(origin.lat, origin.lon, origin.alt);
  const double lat = origin.lat * kDegToRad, lon = origin.lon * kDegToRad;
  const double sl = std::sin(lon), cl = std::cos(lon);
  const double sp = std::sin(lat), cp = std::cos(lat);
  const std::array<double, 3> ecef{p0[0] - sl * x - sp * cl * y + cp * cl * z,
                                   p0[1] + cl * x - sp * sl * y + cp * sl * z,
                                   p0[2] + cp * y + sp * z};
  return ecef_to_geodetic(ecef);
}

void unwrap_angles(std::vector<double>& angles) {
  constexpr double pi = std::numbers::pi;
  double offset = 0.0;
  for (std::size_t i = 1; i < angles.size(); ++i) {
    const double raw = angles[i] + offset;
    double d = raw - angles[i - 1];
    while (d > pi) {
      offset -= 2.0 * pi;
      d -= 2.0 * pi;
    }
    while (d < -pi) {
      offset += 2.0 * pi;
      d += 2.0 * pi;
    }
    angles[i] += offset;
  }
}

void validate_records(std::span<const RawTripRecord> records, const std::string& context) {
  if (records.empty()) throw DataError("no records in " + context);
  std::vector<double> dts;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (i > 0) {
      if (!(r.t > records[i - 1].t)) {
        throw DataError("timestamps not strictly increasing in " + context);
      }
      dts.push_back(r.t - records[i - 1].t);
    }
    if (r.lat && (*r.lat < -90.0 || *r.lat > 90.0)) {
      throw DataError("latitude out of range in " + context);
    }
    if (r.lon && (*r.lon < -180.0 || *r.lon > 180.0)) {
      throw DataError("longitude out of range in " + context);
    }
  }
  if (!dts.empty()) {
    std::nth_element(dts.begin(), dts.begin() + dts.size() / 2, dts.end());
    const double med = dts[dts.size() / 2];
    if (med < 0.09 || med > 0.11) {
      throw DataError("median sample spacing " + fmt_double(med) + " s outside [0.09,0.11] in " +
                      context);
    }
  }
}

std::vector<std::vector<RawTripRecord>> split_at_gaps(std::span<const RawTripRecord> records,
                                                      double max_gap_s) {
  std::vector<std::vector<RawTripRecord>> out;
  std::vector<RawTripRecord> cur;
  for (const auto& r : records) {
    if (!cur.empty() && r.t - cur.back().t > max_gap_s) {
      out.push_back(std::move(cur));
      cur.clear();
    }
    cur.push_back(r);
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Trajectory extract_channels(std::span<const RawTripRecord> records, const std::string& trip_id,
                            int tw) {
  const std::size_t n = records.size();
  if (n < 2 * static_cast<std::size_t>(tw)) {
    throw TooShort("segment '" + trip_id + "' has " + std::to_string(n) + " samples, needs " +
                   std::to_string(2 * tw));
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (records[i].t - records[i - 1].t > 0.5) {
      throw GapTooLarge("segment '" + trip_id + "' contains a gap > 0.5 s");
    }
  }

  Trajectory tr;
  tr.trip_id = trip_id;
  tr.t.reserve(n);
  tr.x_enu.reserve(n);
  tr.y_enu.reserve(n);

  const bool geodetic = records.front().lat.has_value();
  GeodeticOrigin origin;
  if (geodetic) {
    origin = {*records.front().lat, *records.front().lon, records.front().alt.value_or(0.0)};
  }
  for (const auto& r : records) {
    tr.t.push_back(r.t);
    if (geodetic) {
      if (!r.lat || !r.lon) throw DataError("mixed position schemas in '" + trip_id + "'");
      const auto enu = geodetic_to_enu(*r.lat, *r.lon, r.alt.value_or(0.0), origin);
      tr.x_enu.push_back(enu[0]);
      tr.y_enu.push_back(enu[1]);
    } else {
      if (!r.x_enu || !r.y_enu) throw DataError("mixed position schemas in '" + trip_id + "'");
      tr.x_enu.push_back(*r.x_enu);
      tr.y_enu.push_back(*r.y_enu);
    }
  }

  const bool has_speed = records.front().speed.has_value();
  const bool has_heading = records.front().heading.has_value();

  // central differences, one-sided at the ends
  auto diff_at = [&](const std::vector<double>& v, std::size_t i, double& d, double& dt) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = i + 1 == n ? n - 1 : i + 1;
    d = v[hi] - v[lo];
    dt = tr.t[hi] - tr.t[lo];
  };

  tr.speed.reserve(n);
  tr.heading_unwrapped.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (has_speed) {
      tr.speed.push_back(*records[i].speed);
    } else {
      double dx, dy, dt;
      diff_at(tr.x_enu, i, dx, dt);
      double dy2, dt2;
      diff_at(tr.y_enu, i, dy2, dt2);
      dy = dy2;
      tr.speed.push_back(std::hypot(dx, dy) / dt);
    }
    if (has_heading) {
      tr.heading_unwrapped.push_back(*records[i].heading);
    } else {
      double dx, dy, dt;
      diff_at(tr.x_enu, i, dx, dt);
      diff_at(tr.y_enu, i, dy, dt);
      tr.heading_unwrapped.push_back(std::atan2(dy, dx));
    }
  }
  unwrap_angles(tr.heading_unwrapped);
  return tr;
}

IngestResult ingest_records(std::span<const RawTripRecord> records, const std::string& trip_id,
                            int tw) {
  IngestResult res;
  auto segments = split_at_gaps(records);
  if (segments.size() > 1) {
    res.warnings.push_back("trip '" + trip_id + "' split into " +
                           std::to_string(segments.size()) + " segments at gaps > 0.5 s");
  }
  int idx = 0;
  for (const auto& seg : segments) {
    const std::string seg_id = idx == 0 ? trip_id : trip_id + "#" + std::to_string(idx);
    ++idx;
    if (seg.size() < 2 * static_cast<std::size_t>(tw)) {
      ++res.dropped_short;
      res.warnings.push_back("segment '" + seg_id + "' too short (" +
                             std::to_string(seg.size()) + " samples), dropped");
      continue;
    }
    res.segments.push_back(extract_channels(seg, seg_id, tw));
  }
  return res;
}

namespace {

std::vector<double> rate_of(const std::vector<double>& v, const std::vector<double>& t) {
  std::vector<double> out;
  if (v.size() < 2) return out;
  out.reserve(v.size() - 1);
  for (std::size_t i = 1; i < v.size(); ++i) out.push_back((v[i] - v[i - 1]) / (t[i] - t[i - 1]));
  return out;
}

int count_stops(const Trajectory& tr) {
  int stops = 0;
  std::size_t i = 0;
  while (i < tr.size()) {
    if (tr.speed[i] < 0.5) {
      std::size_t j = i;
      while (j < tr.size() && tr.speed[j] < 0.5) ++j;
      if (tr.t[j - 1] - tr.t[i] >= 2.0) ++stops;
      i = j;
    } else {
      ++i;
    }
  }
  return stops;
}

}  // namespace

std::vector<TripRank> rank_trips(std::span<const Trajectory> trips) {
  if (trips.empty()) throw DataError("rank_trips: empty collection");

  std::vector<TripRank> ranks;
  ranks.reserve(trips.size());
  for (const auto& tr : trips) {
    TripRank r;
    r.trip_id = tr.trip_id;
    r.duration_s = tr.duration_s();
    r.stop_count = count_stops(tr);
    r.std_heading = stddev_of(tr.heading_unwrapped);
    const auto accel = rate_of(tr.speed, tr.t);
    const auto yaw = rate_of(tr.heading_unwrapped, tr.t);
    r.std_accel = stddev_of(accel);
    r.std_yaw = stddev_of(yaw);
    ranks.push_back(r);
  }

  // composite = sum of per-criterion z-scores across the collection
  auto add_zscores = [&](auto getter) {
    std::vector<double> vals;
    vals.reserve(ranks.size());
    for (const auto& r : ranks) vals.push_back(getter(r));
    const double m = mean_of(vals);
    const double s = stddev_of(vals);
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      ranks[i].composite_score += s > 0.0 ? (vals[i] - m) / s : 0.0;
    }
  };
  add_zscores([](const TripRank& r) { return r.duration_s; });
  add_zscores([](const TripRank& r) { return static_cast<double>(r.stop_count); });
  add_zscores([](const TripRank& r) { return r.std_heading; });
  add_zscores([](const TripRank& r) { return r.std_accel; });
  add_zscores([](const TripRank& r) { return r.std_yaw; });

  std::sort(ranks.begin(), ranks.end(), [](const TripRank& a, const TripRank& b) {
    if (a.composite_score != b.composite_score) return a.composite_score > b.composite_score;
    return a.trip_id < b.trip_id;
  });
  return ranks;
}

namespace {

const std::vector<std::string> kGeodeticCols = {"t",       "lat",     "lon",      "alt",
                                                "speed",   "heading", "yaw_rate", "accel_lon"};
const std::vector<std::string> kEnuCols = {"t", "x_enu", "y_enu", "speed", "heading"};

}  // namespace

std::vector<RawTripRecord> read_trip_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path.string() + ":1: empty file");
  const auto header = split_csv_line(line);

  bool geodetic;
  const std::vector<std::string>* allowed;
  if (header.size() >= 4 && header[0] == "t" && header[1] == "lat") {
    geodetic = true;
    allowed = &kGeodeticCols;
  } else if (header.size() >= 3 && header[0] == "t" && header[1] == "x_enu") {
    geodetic = false;
    allowed = &kEnuCols;
  } else {
    throw SchemaError(path.string() + ":1: unrecognized header '" + line + "'");
  }
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i >= allowed->size() || header[i] != (*allowed)[i]) {
      throw SchemaError(path.string() + ":1: unexpected column '" + header[i] + "'");
    }
  }

  std::vector<RawTripRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(header.size()) + " columns, got " +
                        std::to_string(cells.size()));
    }
    const std::string ctx = path.string() + ":" + std::to_string(lineno);
    RawTripRecord r;
    r.t = parse_double(cells[0], ctx);
    std::size_t i = 1;
    if (geodetic) {
      r.lat = parse_double(cells[i++], ctx);
      r.lon = parse_double(cells[i++], ctx);
      r.alt = parse_double(cells[i++], ctx);
    } else {
      r.x_enu = parse_double(cells[i++], ctx);
      r.y_enu = parse_double(cells[i++], ctx);
    }
    if (i < cells.size()) r.speed = parse_double(cells[i++], ctx);
    if (i < cells.size()) r.heading = parse_double(cells[i++], ctx) * kDegToRad;
    if (geodetic && i < cells.size()) r.yaw_rate = parse_double(cells[i++], ctx) * kDegToRad;
    if (geodetic && i < cells.size()) r.accel_lon = parse_double(cells[i++], ctx);
    out.push_back(r);
  }
  if (out.empty()) throw SchemaError(path.string() + ": no data rows");
  return out;
}

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
  std::ostringstream ss;
  ss << "t,x_enu,y_enu,speed,heading\n";
  for (std::size_t i = 0; i < traj.size(); ++i) {
    ss << fmt_double(traj.t[i]) << ',' << fmt_double(traj.x_enu[i]) << ','
       << fmt_double(traj.y_enu[i]) << ',' << fmt_double(traj.speed[i]) << ','
       << fmt_double(traj.heading_unwrapped[i] / kDegToRad) << '\n';
  }
  write_text_file(path, ss.str());
}

}  // namespace mbc

#include "nsgp/field_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "nsgp/csv.hpp"
#include "nsgp/error.hpp"

namespace nsgp {
namespace {

struct LocationKey {
  bool operator()(const Location& a, const Location& b) const { return location_less(a, b); }
};

struct Row {
  long day;
  Location loc;
  double value;
};

std::vector<Row> read_rows(std::istream& in, std::string_view source) {
  auto table = csv::read(in, source);
  const auto c_day = table.column("day");
  const auto c_lon = table.column("lon");
  const auto c_lat = table.column("lat");
  const auto c_val = table.column("value");
  std::vector<Row> rows;
  rows.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    const std::string ctx = std::string(source) + " row " + std::to_string(i + 1);
    rows.push_back({csv::parse_long(r[c_day], ctx), {csv::parse_double(r[c_lon], ctx),
                                                     csv::parse_double(r[c_lat], ctx)},
                    csv::parse_double(r[c_val], ctx)});
  }
  if (rows.empty()) throw Error(ErrorCode::EmptyInput, std::string(source) + ": no data rows");
  return rows;
}

std::optional<double> uniform_step(std::vector<double> coords) {
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  if (coords.size() < 2) return std::nullopt;
  const double step = (coords.back() - coords.front()) / static_cast<double>(coords.size() - 1);
  for (std::size_t i = 1; i < coords.size(); ++i) {
    if (std::abs(coords[i] - coords[i - 1] - step) > 1e-9 * std::max(1.0, std::abs(step)))
      return std::nullopt;
  }
  return step;
}

}  // namespace

double distance(const Location& a, const Location& b) { return std::sqrt(squared_distance(a, b)); }

bool location_less(const Location& a, const Location& b) {
  if (a.lat != b.lat) return a.lat < b.lat;
  return a.lon < b.lon;
}

std::size_t SpaceTimeField::day_index(long day) const {
  auto it = std::lower_bound(days.begin(), days.end(), day);
  if (it == days.end() || *it != day)
    throw Error(ErrorCode::IndexOutOfRange, "day " + std::to_string(day) + " not in field");
  return static_cast<std::size_t>(it - days.begin());
}

SpaceTimeField make_field(std::vector<Location> locations, std::vector<long> days,
                          Eigen::MatrixXd values) {
  if (locations.empty() || days.empty()) throw Error(ErrorCode::EmptyInput, "empty field");
  if (static_cast<std::size_t>(values.rows()) != locations.size() ||
      static_cast<std::size_t>(values.cols()) != days.size())
    throw Error(ErrorCode::GeometryMismatch, "value matrix does not match locations x days");
  if (!values.allFinite()) throw Error(ErrorCode::ParseError, "field contains non-finite values");
  if (!std::is_sorted(days.begin(), days.end()) ||
      std::adjacent_find(days.begin(), days.end()) != days.end())
    throw Error(ErrorCode::InvalidArgument, "days must be strictly increasing");
  std::set<Location, LocationKey> seen(locations.begin(), locations.end());
  if (seen.size() != locations.size())
    throw Error(ErrorCode::DuplicateLocations, "field locations are not unique");

  SpaceTimeField field;
  std::vector<double> lons, lats;
  for (const auto& l : locations) {
    lons.push_back(l.lon);
    lats.push_back(l.lat);
  }
  auto lon_step = uniform_step(lons);
  auto lat_step = uniform_step(lats);
  if (lon_step && lat_step && std::abs(*lon_step - *lat_step) <= 1e-9 * *lon_step)
    field.grid_spacing = *lon_step;
  field.locations = std::move(locations);
  field.days = std::move(days);
  field.values = std::move(values);
  return field;
}

std::vector<Location> MonitorSet::distinct_sites() const {
  std::vector<Location> out;
  std::set<Location, LocationKey> seen;
  for (const auto& r : records)
    if (seen.insert(r.site).second) out.push_back(r.site);
  return out;
}

SpaceTimeField parse_gridded_csv(std::istream& in, std::string_view source) {
  auto rows = read_rows(in, source);

  std::map<Location, std::size_t, LocationKey> loc_index;
  std::set<long> day_set;
  for (const auto& r : rows) {
    loc_index.emplace(r.loc, 0);
    day_set.insert(r.day);
  }
  std::vector<Location> locations;
  locations.reserve(loc_index.size());
  for (auto& [loc, idx] : loc_index) {
    idx = locations.size();
    locations.push_back(loc);
  }
  std::vector<long> days(day_set.begin(), day_set.end());

  const auto n = static_cast<Eigen::Index>(locations.size());
  const auto p = static_cast<Eigen::Index>(days.size());
  Eigen::MatrixXd values(n, p);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> filled =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, p, false);
  for (const auto& r : rows) {
    const auto i = static_cast<Eigen::Index>(loc_index.at(r.loc));
    const auto t = static_cast<Eigen::Index>(
        std::lower_bound(days.begin(), days.end(), r.day) - days.begin());
    if (filled(i, t)) {
      std::ostringstream msg;
      msg << source << ": duplicate cell day=" << r.day << " lon=" << r.loc.lon
          << " lat=" << r.loc.lat;
      throw Error(ErrorCode::DuplicateRecord, msg.str());
    }
    filled(i, t) = true;
    values(i, t) = r.value;
  }
  for (Eigen::Index t = 0; t < p; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!filled(i, t)) {
        std::ostringstream msg;
        msg << source << ": cell lon=" << locations[i].lon << " lat=" << locations[i].lat
            << " missing on day " << days[t];
        throw Error(ErrorCode::MissingCell, msg.str());
      }
    }
  }
  return make_field(std::move(locations), std::move(days), std::move(values));
}

SpaceTimeField load_gridded_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_gridded_csv(in, path.string());
}

void write_gridded_csv(const std::filesystem::path& path, const SpaceTimeField& field) {
  auto out = csv::open_for_write(path);
  out << "day,lon,lat,value\n";
  for (std::size_t t = 0; t < field.p(); ++t) {
    for (std::size_t i = 0; i < field.n(); ++i) {
      out << field.days[t] << ',' << csv::format(field.locations[i].lon) << ','
          << csv::format(field.locations[i].lat) << ','
          << csv::format(field.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)))
          << '\n';
    }
  }
}

MonitorSet parse_monitor_csv(std::istream& in, std::string_view source) {
  auto rows = read_rows(in, source);
  MonitorSet set;
  set.records.reserve(rows.size());
  std::set<std::tuple<long, double, double>> seen;
  for (const auto& r : rows) {
    if (!seen.emplace(r.day, r.loc.lat, r.loc.lon).second) {
      std::ostringstream msg;
      msg << source << ": duplicate record day=" << r.day << " lon=" << r.loc.lon
          << " lat=" << r.loc.lat;
      throw Error(ErrorCode::DuplicateRecord, msg.str());
    }
    set.records.push_back({r.day, r.loc, r.value});
  }
  return set;
}

MonitorSet load_monitor_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_monitor_csv(in, path.string());
}

void write_monitor_csv(const std::filesystem::path& path, const MonitorSet& set) {
  auto out = csv::open_for_write(path);
  out << "day,lon,lat,value\n";
  for (const auto& r : set.records) {
    out << r.day << ',' << csv::format(r.site.lon) << ',' << csv::format(r.site.lat) << ','
        << csv::format(r.value) << '\n';
  }
}

SpaceTimeField log_transform(SpaceTimeField field) {
  if ((field.values.array() <= 0.0).any())
    throw Error(ErrorCode::DomainError, "log transform needs strictly positive field values");
  field.values = field.values.array().log().matrix();
  return field;
}

MonitorSet log_transform(MonitorSet set) {
  for (auto& r : set.records) {
    if (!(r.value > 0.0))
      throw Error(ErrorCode::DomainError, "log transform needs strictly positive monitor values (day " +
                                              std::to_string(r.day) + ")");
    r.value = std::log(r.value);
  }
  return set;
}

std::size_t nearest_index(std::span<const Location> candidates, const Location& s) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyInput, "nearest_index: no candidates");
  std::size_t best = 0;
  double best_d = squared_distance(candidates[0], s);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double d = squared_distance(candidates[i], s);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

std::size_t nearest_cell(const SpaceTimeField& field, const Location& s) {
  return nearest_index(field.locations, s);
}

}  // namespace nsgp

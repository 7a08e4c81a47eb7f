#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace nsgp {

// Coordinates on the plane; geographic fields use (lon, lat) in degrees and
// distances are plain Euclidean on those numbers.
struct Location {
  double lon = 0.0;
  double lat = 0.0;

  friend bool operator==(const Location&, const Location&) = default;
};

inline double squared_distance(const Location& a, const Location& b) {
  const double dx = a.lon - b.lon;
  const double dy = a.lat - b.lat;
  return dx * dx + dy * dy;
}

double distance(const Location& a, const Location& b);

// Lexicographic by (lat, lon).
bool location_less(const Location& a, const Location& b);

// Gridded values over n locations (rows) and p days (columns).
struct SpaceTimeField {
  std::vector<Location> locations;
  std::vector<long> days;
  Eigen::MatrixXd values;
  std::optional<double> grid_spacing;

  std::size_t n() const { return locations.size(); }
  std::size_t p() const { return days.size(); }
  // Column of `day`, or IndexOutOfRange.
  std::size_t day_index(long day) const;
};

// Validates shape, uniqueness and finiteness; sets grid_spacing when the
// locations form a regular grid with equal lon/lat steps.
SpaceTimeField make_field(std::vector<Location> locations, std::vector<long> days,
                          Eigen::MatrixXd values);

struct MonitorRecord {
  long day = 0;
  Location site;
  double value = 0.0;
};

struct MonitorSet {
  std::vector<MonitorRecord> records;

  std::vector<Location> distinct_sites() const;  // first-appearance order
};

SpaceTimeField load_gridded_csv(const std::filesystem::path& path);
SpaceTimeField parse_gridded_csv(std::istream& in, std::string_view source = "<stream>");
void write_gridded_csv(const std::filesystem::path& path, const SpaceTimeField& field);

MonitorSet load_monitor_csv(const std::filesystem::path& path);
MonitorSet parse_monitor_csv(std::istream& in, std::string_view source = "<stream>");
void write_monitor_csv(const std::filesystem::path& path, const MonitorSet& set);

// Natural log of every value. Throws DomainError on a non-positive value.
SpaceTimeField log_transform(SpaceTimeField field);
MonitorSet log_transform(MonitorSet set);

// Index minimising Euclidean distance; ties go to the lowest index.
std::size_t nearest_index(std::span<const Location> candidates, const Location& s);
std::size_t nearest_cell(const SpaceTimeField& field, const Location& s);

}  // namespace nsgp

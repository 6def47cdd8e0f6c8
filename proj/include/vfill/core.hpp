#pragma once

// Numeric substrate: a uniform time grid over [0, T] and rate profiles on it.
//
// Units are fixed throughout the library:
//   rates          kW
//   time           hours
//   energy         kWh           (inner product of a rate with the unit profile)
//   squared norms  kW^2 h
//
// Integrals over [0, T] are left-Riemann sums with uniform width dt. Every
// reduction runs in ascending slot (and load) index order so results are
// bit-reproducible regardless of how callers schedule the work.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vfill {

class TimeGrid {
 public:
  TimeGrid(double horizon_hours, std::size_t slots);

  double horizon_hours() const noexcept { return horizon_; }
  std::size_t slots() const noexcept { return slots_; }
  double dt() const noexcept { return dt_; }

  friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

 private:
  double horizon_;
  std::size_t slots_;
  double dt_;
};

/// Rate profile on a TimeGrid, one finite value (kW) per slot.
class Profile {
 public:
  explicit Profile(const TimeGrid& grid);  // all zeros
  Profile(const TimeGrid& grid, std::vector<double> values);
  Profile(const TimeGrid& grid, double constant);

  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t t) const { return values_[t]; }
  double& operator[](std::size_t t) { return values_[t]; }

  Profile& operator+=(const Profile& other);
  Profile& operator-=(const Profile& other);
  Profile& operator*=(double s);

  // Bitwise comparison of values and grid.
  friend bool operator==(const Profile&, const Profile&) = default;

 private:
  TimeGrid grid_;
  std::vector<double> values_;
};

Profile operator+(Profile a, const Profile& b);
Profile operator-(Profile a, const Profile& b);
Profile operator*(double s, Profile a);

/// Throws DimensionError unless both profiles live on the same grid.
void require_same_grid(const Profile& a, const Profile& b, const char* what);

/// dt * sum_t f_t g_t  (kW^2 h)
double inner(const Profile& f, const Profile& g);

/// Squared l2 norm <f, f>.
double norm2(const Profile& f);
/// sqrt(norm2(f)).
double norm(const Profile& f);

/// Integral dt * sum_t f_t  (kWh for a rate profile).
double integral(const Profile& f);

/// Time average (1/T) * integral(f).
double time_average(const Profile& f);

/// b + sum of xs, summed pointwise in index order.
Profile aggregate(const Profile& b, std::span<const Profile> xs);

enum class ObjectiveKind { Flatten, Track };

struct Objective {
  ObjectiveKind kind = ObjectiveKind::Flatten;
  std::optional<Profile> target;

  static Objective flatten() { return {}; }
  static Objective track(Profile target);
};

/// Base load the flattening machinery should see: b for Flatten, b - G for Track.
/// Tracking a target under quadratic cost is exactly flattening b - G.
Profile effective_base(const Profile& b, const Objective& obj);

/// ||b + sum xs||^2 for Flatten, ||b + sum xs - G||^2 for Track.
double objective_value(const Profile& b, std::span<const Profile> xs, const Objective& obj);

/// V(d) = (1/T) ||d||^2 - mean(d)^2, computed in centered form.
double variance(const Profile& d);

// ---- CSV ------------------------------------------------------------------

// Profile CSV: header `slot,value_kw`, one row per slot.
void write_profile_csv(std::ostream& os, const Profile& p, const std::string& value_header = "value_kw");
Profile read_profile_csv(std::istream& is, const TimeGrid& grid, const std::string& value_header = "value_kw");

// Grid CSV: header `horizon_hours,slots` and a single data row.
void write_grid_csv(std::ostream& os, const TimeGrid& grid);
TimeGrid read_grid_csv(std::istream& is);

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);
/// Strict parse of a whole token as a double; nullopt on any trailing junk.
std::optional<double> parse_double(std::string_view text);

}  // namespace vfill

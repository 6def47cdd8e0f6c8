#include "vfill/core.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "vfill/error.hpp"

namespace vfill {

TimeGrid::TimeGrid(double horizon_hours, std::size_t slots)
    : horizon_(horizon_hours), slots_(slots), dt_(0.0) {
  if (!(horizon_hours > 0.0) || !std::isfinite(horizon_hours))
    throw ConfigError("time grid: horizon_hours must be finite and > 0");
  if (slots < 1) throw ConfigError("time grid: slots must be >= 1");
  dt_ = horizon_hours / static_cast<double>(slots);
}

Profile::Profile(const TimeGrid& grid) : grid_(grid), values_(grid.slots(), 0.0) {}

Profile::Profile(const TimeGrid& grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.slots())
    throw DimensionError("profile has " + std::to_string(values_.size()) + " values, grid has " +
                         std::to_string(grid_.slots()) + " slots");
  for (std::size_t t = 0; t < values_.size(); ++t)
    if (!std::isfinite(values_[t]))
      throw ConfigError("profile value at slot " + std::to_string(t) + " is not finite");
}

Profile::Profile(const TimeGrid& grid, double constant)
    : grid_(grid), values_(grid.slots(), constant) {}

void require_same_grid(const Profile& a, const Profile& b, const char* what) {
  if (!(a.grid() == b.grid()))
    throw DimensionError(std::string(what) + ": profiles are on different time grids");
}

Profile& Profile::operator+=(const Profile& other) {
  require_same_grid(*this, other, "profile +=");
  for (std::size_t t = 0; t < values_.size(); ++t) values_[t] += other.values_[t];
  return *this;
}

Profile& Profile::operator-=(const Profile& other) {
  require_same_grid(*this, other, "profile -=");
  for (std::size_t t = 0; t < values_.size(); ++t) values_[t] -= other.values_[t];
  return *this;
}

Profile& Profile::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

Profile operator+(Profile a, const Profile& b) { return a += b; }
Profile operator-(Profile a, const Profile& b) { return a -= b; }
Profile operator*(double s, Profile a) { return a *= s; }

double inner(const Profile& f, const Profile& g) {
  require_same_grid(f, g, "inner");
  double sum = 0.0;
  const auto fv = f.values();
  const auto gv = g.values();
  for (std::size_t t = 0; t < fv.size(); ++t) sum += fv[t] * gv[t];
  return f.grid().dt() * sum;
}

double norm2(const Profile& f) { return inner(f, f); }

double norm(const Profile& f) { return std::sqrt(norm2(f)); }

double integral(const Profile& f) {
  double sum = 0.0;
  for (double v : f.values()) sum += v;
  return f.grid().dt() * sum;
}

double time_average(const Profile& f) { return integral(f) / f.grid().horizon_hours(); }

Profile aggregate(const Profile& b, std::span<const Profile> xs) {
  Profile d = b;
  for (const Profile& x : xs) d += x;
  return d;
}

Objective Objective::track(Profile target) {
  Objective o;
  o.kind = ObjectiveKind::Track;
  o.target = std::move(target);
  return o;
}

Profile effective_base(const Profile& b, const Objective& obj) {
  if (obj.kind == ObjectiveKind::Flatten) return b;
  if (!obj.target) throw ConfigError("track objective requires a target profile");
  require_same_grid(b, *obj.target, "track objective");
  return b - *obj.target;
}

double objective_value(const Profile& b, std::span<const Profile> xs, const Objective& obj) {
  return norm2(aggregate(effective_base(b, obj), xs));
}

double variance(const Profile& d) {
  const auto v = d.values();
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  // dt / T == 1 / S on a uniform grid.
  return ss / n;
}

// ---- text helpers ----------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) return std::nullopt;
  return v;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string strip(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  while (!s.empty() && s.front() == ' ') s.erase(s.begin());
  return s;
}

}  // namespace

void write_profile_csv(std::ostream& os, const Profile& p, const std::string& value_header) {
  os << "slot," << value_header << '\n';
  for (std::size_t t = 0; t < p.size(); ++t) os << t << ',' << format_double(p[t]) << '\n';
}

Profile read_profile_csv(std::istream& is, const TimeGrid& grid, const std::string& value_header) {
  std::string line;
  if (!std::getline(is, line) || strip(line) != "slot," + value_header)
    throw ParseError("line 1: expected header 'slot," + value_header + "'");
  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = strip(line);
    if (line.empty()) continue;
    auto cols = split_csv(line);
    if (cols.size() != 2) throw ParseError("line " + std::to_string(lineno) + ": expected 2 columns");
    auto v = parse_double(cols[1]);
    if (!v) throw ParseError("line " + std::to_string(lineno) + ": unparsable number '" + cols[1] + "'");
    values.push_back(*v);
  }
  if (values.size() != grid.slots())
    throw ParseError("line " + std::to_string(lineno + 1) + ": expected " + std::to_string(grid.slots()) +
                     " rows, found " + std::to_string(values.size()));
  return Profile(grid, std::move(values));
}

void write_grid_csv(std::ostream& os, const TimeGrid& grid) {
  os << "horizon_hours,slots\n" << format_double(grid.horizon_hours()) << ',' << grid.slots() << '\n';
}

TimeGrid read_grid_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || strip(line) != "horizon_hours,slots")
    throw ParseError("line 1: expected header 'horizon_hours,slots'");
  if (!std::getline(is, line)) throw ParseError("line 2: missing grid row");
  auto cols = split_csv(strip(line));
  if (cols.size() != 2) throw ParseError("line 2: expected 2 columns");
  auto h = parse_double(cols[0]);
  auto s = parse_double(cols[1]);
  if (!h || !s || *s < 1 || std::floor(*s) != *s) throw ParseError("line 2: malformed grid row");
  return TimeGrid(*h, static_cast<std::size_t>(*s));
}

}  // namespace vfill

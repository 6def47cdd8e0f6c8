#include "manifest.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>

#include "vfill/error.hpp"

namespace vfill::cli {

namespace {

std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

double to_real(const std::string& key, const std::string& v) {
  const auto d = parse_double(v);
  if (!d) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return *d;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string str(bool b) { return b ? "true" : "false"; }

struct Field {
  std::function<void(RunManifest&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunManifest&)> get;
};

template <typename T>
Field real_field(T RunManifest::*m) {
  return {[m](RunManifest& r, const std::string& k, const std::string& v) { r.*m = to_real(k, v); },
          [m](const RunManifest& r) { return format_double(r.*m); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      {"horizon_hours", real_field(&RunManifest::horizon_hours)},
      {"slots",
       {[](RunManifest& r, const std::string& k, const std::string& v) { r.slots = to_int<std::size_t>(k, v); },
        [](const RunManifest& r) { return std::to_string(r.slots); }}},
      {"households",
       {[](RunManifest& r, const std::string& k, const std::string& v) { r.fleet.households = to_int<std::size_t>(k, v); },
        [](const RunManifest& r) { return std::to_string(r.fleet.households); }}},
      {"penetration",
       {[](RunManifest& r, const std::string& k, const std::string& v) { r.fleet.penetration = to_real(k, v); },
        [](const RunManifest& r) { return format_double(r.fleet.penetration); }}},
      {"ev_rate_kw",
       {[](RunManifest& r, const std::string& k, const std::string& v) { r.fleet.ev_rate_kw = to_real(k, v); },
        [](const RunManifest& r) { return format_double(r.fleet.ev_rate_kw); }}},
      {"ev_duration_hours",
       {[](RunManifest& r, const std::string& k, const std::string& v) { r.fleet.ev_duration_hours = to_real(k, v); },
        [](const RunManifest& r) { return format_double(r.fleet.ev_duration_hours); }}},
      {"first_start_slot",
       {[](RunManifest& r, const std::string& k, const std::string& v) {
          r.fleet.first_start_slot = to_int<std::size_t>(k, v);
        },
        [](const RunManifest& r) { return std::to_string(r.fleet.first_start_slot); }}},
      {"last_start_slot",
       {[](RunManifest& r, const std::string& k, const std::string& v) {
          r.fleet.last_start_slot = to_int<std::size_t>(k, v);
        },
        [](const RunManifest& r) { return std::to_string(r.fleet.last_start_slot); }}},
      {"rate_spread", real_field(&RunManifest::rate_spread)},
      {"duration_spread", real_field(&RunManifest::duration_spread)},
      {"fleet_seed",
       {[](RunManifest& r, const std::string& k, const std::string& v) { r.fleet_seed = to_int<std::uint64_t>(k, v); },
        [](const RunManifest& r) { return std::to_string(r.fleet_seed); }}},
      {"baseload",
       {[](RunManifest& r, const std::string&, const std::string& v) { r.baseload = v; },
        [](const RunManifest& r) { return r.baseload; }}},
      {"baseload_scale", real_field(&RunManifest::baseload_scale)},
      {"objective",
       {[](RunManifest& r, const std::string& k, const std::string& v) {
          if (v != "flatten" && v.rfind("track:", 0) != 0)
            throw ConfigError(k + ": expected flatten or track:<path>, got '" + v + "'");
          r.objective = v;
        },
        [](const RunManifest& r) { return r.objective; }}},
      {"seed",
       {[](RunManifest& r, const std::string& k, const std::string& v) { r.seed = to_int<std::uint64_t>(k, v); },
        [](const RunManifest& r) { return std::to_string(r.seed); }}},
      {"iterations",
       {[](RunManifest& r, const std::string& k, const std::string& v) { r.iterations = to_int<std::size_t>(k, v); },
        [](const RunManifest& r) { return std::to_string(r.iterations); }}},
      {"epsilon", real_field(&RunManifest::epsilon)},
      {"stop_on_tolerance",
       {[](RunManifest& r, const std::string& k, const std::string& v) { r.stop_on_tolerance = to_bool(k, v); },
        [](const RunManifest& r) { return str(r.stop_on_tolerance); }}},
      {"threads",
       {[](RunManifest& r, const std::string& k, const std::string& v) { r.threads = to_int<unsigned>(k, v); },
        [](const RunManifest& r) { return std::to_string(r.threads); }}},
      {"out",
       {[](RunManifest& r, const std::string&, const std::string& v) { r.out = v; },
        [](const RunManifest& r) { return r.out.string(); }}},
      {"emit_trajectory",
       {[](RunManifest& r, const std::string& k, const std::string& v) { r.emit_trajectory = to_bool(k, v); },
        [](const RunManifest& r) { return str(r.emit_trajectory); }}},
      {"emit_profiles",
       {[](RunManifest& r, const std::string& k, const std::string& v) { r.emit_profiles = to_bool(k, v); },
        [](const RunManifest& r) { return str(r.emit_profiles); }}},
      {"emit_report",
       {[](RunManifest& r, const std::string& k, const std::string& v) { r.emit_report = to_bool(k, v); },
        [](const RunManifest& r) { return str(r.emit_report); }}},
  };
  return f;
}

const Field& field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return f;
  throw ConfigError("unknown manifest key '" + key + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

std::vector<std::string> RunManifest::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.first);
  return out;
}

void RunManifest::set(const std::string& key, const std::string& value) { field(key).set(*this, key, trim(value)); }

std::string RunManifest::get(const std::string& key) const { return field(key).get(*this); }

void RunManifest::write(std::ostream& os) const {
  for (const auto& [k, f] : fields()) os << k << '=' << f.get(*this) << '\n';
}

TimeGrid RunManifest::grid() const { return TimeGrid(horizon_hours, slots); }

CaseStudy RunManifest::build() const {
  FleetSpec spec = fleet;
  if (rate_spread != 0.0 || duration_spread != 0.0) spec.heterogeneity = Heterogeneity{rate_spread, duration_spread, fleet_seed, {}};
  BaseLoadSpec base;
  base.per_household_scale = baseload_scale;
  if (baseload != "synthetic") base.source = resolve(base_dir, baseload);
  return build_case_study(spec, base, grid());
}

Objective RunManifest::build_objective(const TimeGrid& g) const {
  if (objective == "flatten") return Objective::flatten();
  const auto path = resolve(base_dir, objective.substr(6));
  std::ifstream in(path);
  if (!in) throw ConfigError("objective: cannot open target profile '" + path.string() + "'");
  return Objective::track(read_profile_csv(in, g));
}

EngineConfig RunManifest::engine() const {
  EngineConfig cfg;
  cfg.master_seed = seed;
  cfg.max_iterations = iterations;
  cfg.epsilon = epsilon;
  cfg.stop_on_tolerance = stop_on_tolerance;
  cfg.threads = threads;
  cfg.record_profiles = emit_profiles;
  return cfg;
}

RunManifest parse_manifest(std::istream& is, const std::string& origin) {
  RunManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + " line " + std::to_string(lineno) + ": expected key=value");
    try {
      m.set(trim(body.substr(0, eq)), body.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest '" + path.string() + "'");
  RunManifest m = parse_manifest(in, path.string());
  m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return m;
}

}  // namespace vfill::cli

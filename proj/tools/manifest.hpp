#pragma once

// Run manifest: one key=value pair per line, '#' starts a comment. Every key
// has a matching command-line flag (--key, underscores become dashes).

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "vfill/engine.hpp"
#include "vfill/scenario.hpp"

namespace vfill::cli {

struct RunManifest {
  double horizon_hours = 24.0;
  std::size_t slots = 96;
  FleetSpec fleet;
  double rate_spread = 0.0;
  double duration_spread = 0.0;
  std::uint64_t fleet_seed = 0;
  std::string baseload = "synthetic";  // or a CSV path (slot,kw_per_household)
  double baseload_scale = 1.0;
  std::string objective = "flatten";   // or track:<path to slot,value_kw CSV>
  std::uint64_t seed = 0;
  std::size_t iterations = 20;
  double epsilon = 1e-6;
  bool stop_on_tolerance = false;
  unsigned threads = 1;
  std::filesystem::path out = "out";
  bool emit_trajectory = true;
  bool emit_profiles = false;
  bool emit_report = true;

  /// Relative paths in a manifest file resolve against this directory.
  std::filesystem::path base_dir = ".";

  static std::vector<std::string> keys();
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  void write(std::ostream& os) const;

  TimeGrid grid() const;
  CaseStudy build() const;
  Objective build_objective(const TimeGrid& grid) const;
  EngineConfig engine() const;
};

/// Parses a manifest file. Unknown keys and malformed values raise ConfigError naming the line.
RunManifest read_manifest(const std::filesystem::path& path);
RunManifest parse_manifest(std::istream& is, const std::string& origin = "manifest");

}  // namespace vfill::cli

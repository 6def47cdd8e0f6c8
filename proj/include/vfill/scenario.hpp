#pragma once

// Experiment inputs: EV fleets, residential base load, and the canonical
// 24 h / 96 slot case study (3.3 kW for 4 h, starts 20:00 .. 16:00).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vfill/core.hpp"
#include "vfill/engine.hpp"

namespace vfill {

/// Per-EV multipliers drawn uniformly from [1 - spread, 1 + spread].
/// Durations are rounded to whole slots after scaling.
struct Heterogeneity {
  double rate_spread = 0.0;
  double duration_spread = 0.0;
  std::uint64_t seed = 0;
  /// Explicit per-EV (rate, duration) multipliers, applied before the random ones.
  std::vector<std::pair<double, double>> overrides;
};

struct FleetSpec {
  std::size_t households = 1000;
  double penetration = 1.0;        // EVs per household
  double ev_rate_kw = 3.3;
  double ev_duration_hours = 4.0;
  std::size_t first_start_slot = 0;
  std::size_t last_start_slot = 80;
  std::optional<Heterogeneity> heterogeneity;

  std::size_t ev_count() const;
};

/// Anchors for the synthetic residential curve, in kW per household. Slots
/// refer to a 96-slot day starting at 20:00 and are rescaled to other grids.
struct SyntheticBaseLoad {
  double evening_peak_kw = 1.25;
  double valley_kw = 0.55;
  double morning_peak_kw = 1.0;
  double midday_kw = 0.8;
  double evening_slot = 0;
  double valley_slot = 30;
  double morning_slot = 48;
  double midday_slot = 68;
};

struct BaseLoadSpec {
  std::variant<SyntheticBaseLoad, std::filesystem::path> source = SyntheticBaseLoad{};
  double per_household_scale = 1.0;
};

struct CaseStudy {
  TimeGrid grid;
  Profile base;                  // aggregate inelastic load (kW)
  std::vector<LoadSpec> loads;   // finite EV loads, c_i = X_i
};

/// Canonical day: 24 h in 96 slots of 15 minutes.
TimeGrid canonical_grid();

CaseStudy build_case_study(const FleetSpec& spec, const BaseLoadSpec& base, const TimeGrid& grid = canonical_grid());

/// Per-household base load: header `slot,kw_per_household`, one row per slot,
/// nonnegative values.
Profile load_baseload_csv(const std::filesystem::path& path, const TimeGrid& grid);
Profile read_baseload_csv(std::istream& is, const TimeGrid& grid);
void write_baseload_csv(std::ostream& os, const Profile& per_household);

/// Smooth periodic double-hump curve through the four anchors (cosine
/// interpolation between consecutive anchors, wrapping across the seam).
Profile synth_baseload(const TimeGrid& grid, const SyntheticBaseLoad& params = {});

/// Fleet manifest CSV: id,rate_kw,duration_hours,first_start_slot,last_start_slot,members
void write_fleet_manifest(std::ostream& os, const CaseStudy& cs);

}  // namespace vfill

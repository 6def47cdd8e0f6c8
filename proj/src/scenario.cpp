#include "vfill/scenario.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>

#include "vfill/error.hpp"

namespace vfill {

std::size_t FleetSpec::ev_count() const {
  if (!(penetration >= 0.0)) throw ConfigError("fleet: penetration must be >= 0");
  return static_cast<std::size_t>(std::llround(static_cast<double>(households) * penetration));
}

TimeGrid canonical_grid() { return TimeGrid(24.0, 96); }

namespace {

double uniform01(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

std::shared_ptr<const FinitePulseSet> pulse_set_for(double rate, double duration_hours, std::size_t first,
                                                    std::size_t last, const TimeGrid& grid, const char* who) {
  const auto len = static_cast<std::size_t>(std::llround(duration_hours / grid.dt()));
  if (len == 0 || len > grid.slots())
    throw ConfigError(std::string(who) + ": ev_duration_hours does not fit the horizon");
  if (first > last) throw ConfigError(std::string(who) + ": first_start_slot exceeds last_start_slot");
  if (last + len > grid.slots())
    throw ConfigError(std::string(who) + ": last_start_slot " + std::to_string(last) +
                      " leaves no room for the charging pulse before the horizon ends");
  const auto starts = start_range(first, last);
  return std::make_shared<const FinitePulseSet>(
      make_pulse_set(rate, static_cast<double>(len) * grid.dt(), starts, grid));
}

}  // namespace

CaseStudy build_case_study(const FleetSpec& spec, const BaseLoadSpec& base, const TimeGrid& grid) {
  if (!(spec.ev_rate_kw > 0.0)) throw ConfigError("fleet: ev_rate_kw must be > 0");
  const std::size_t n = spec.ev_count();

  Profile per_household = std::holds_alternative<SyntheticBaseLoad>(base.source)
                              ? synth_baseload(grid, std::get<SyntheticBaseLoad>(base.source))
                              : load_baseload_csv(std::get<std::filesystem::path>(base.source), grid);
  Profile b = (static_cast<double>(spec.households) * base.per_household_scale) * per_household;

  CaseStudy cs{grid, std::move(b), {}};
  if (n == 0) return cs;

  std::shared_ptr<const FinitePulseSet> shared;
  if (!spec.heterogeneity)
    shared = pulse_set_for(spec.ev_rate_kw, spec.ev_duration_hours, spec.first_start_slot, spec.last_start_slot, grid,
                           "fleet");
  cs.loads.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::shared_ptr<const FinitePulseSet> set = shared;
    if (spec.heterogeneity) {
      const Heterogeneity& het = *spec.heterogeneity;
      double rate_mult = 1.0;
      double dur_mult = 1.0;
      if (i < het.overrides.size()) std::tie(rate_mult, dur_mult) = het.overrides[i];
      std::seed_seq seq{static_cast<std::uint32_t>(het.seed), static_cast<std::uint32_t>(het.seed >> 32),
                        static_cast<std::uint32_t>(i)};
      std::mt19937_64 gen(seq);
      rate_mult *= 1.0 + het.rate_spread * (2.0 * uniform01(gen) - 1.0);
      dur_mult *= 1.0 + het.duration_spread * (2.0 * uniform01(gen) - 1.0);
      const double duration = spec.ev_duration_hours * dur_mult;
      const auto len = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(duration / grid.dt())));
      if (len > grid.slots()) throw ConfigError("fleet: jittered duration of EV " + std::to_string(i) + " exceeds horizon");
      const std::size_t last = std::min(spec.last_start_slot, grid.slots() - len);
      set = pulse_set_for(spec.ev_rate_kw * rate_mult, static_cast<double>(len) * grid.dt(),
                          std::min(spec.first_start_slot, last), last, grid, "fleet");
    }
    cs.loads.push_back(LoadSpec::finite(static_cast<int>(i), std::move(set)));
  }
  return cs;
}

Profile read_baseload_csv(std::istream& is, const TimeGrid& grid) {
  Profile p = read_profile_csv(is, grid, "kw_per_household");
  for (std::size_t t = 0; t < p.size(); ++t)
    if (p[t] < 0.0)
      throw ParseError("line " + std::to_string(t + 2) + ": negative base load " + format_double(p[t]));
  return p;
}

Profile load_baseload_csv(const std::filesystem::path& path, const TimeGrid& grid) {
  std::ifstream in(path);
  if (!in) throw ConfigError("base load file not readable: " + path.string());
  try {
    return read_baseload_csv(in, grid);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_baseload_csv(std::ostream& os, const Profile& per_household) {
  write_profile_csv(os, per_household, "kw_per_household");
}

Profile synth_baseload(const TimeGrid& grid, const SyntheticBaseLoad& p) {
  for (double v : {p.evening_peak_kw, p.valley_kw, p.morning_peak_kw, p.midday_kw})
    if (!(v >= 0.0)) throw ConfigError("synthetic base load: anchor levels must be >= 0");
  const double S = static_cast<double>(grid.slots());
  const double scale = S / 96.0;
  struct Anchor {
    double pos;
    double level;
  };
  std::array<Anchor, 4> anchors{{{p.evening_slot * scale, p.evening_peak_kw},
                                 {p.valley_slot * scale, p.valley_kw},
                                 {p.morning_slot * scale, p.morning_peak_kw},
                                 {p.midday_slot * scale, p.midday_kw}}};
  for (auto& a : anchors) a.pos = std::fmod(std::fmod(a.pos, S) + S, S);
  std::sort(anchors.begin(), anchors.end(), [](const Anchor& a, const Anchor& b) { return a.pos < b.pos; });

  Profile out(grid);
  for (std::size_t t = 0; t < grid.slots(); ++t) {
    const double x = static_cast<double>(t);
    // Segment [anchors[j], anchors[j+1]) with wraparound past the last anchor.
    std::size_t j = anchors.size() - 1;
    for (std::size_t a = 0; a < anchors.size(); ++a)
      if (anchors[a].pos <= x) j = a;
    const Anchor& lo = anchors[j];
    const Anchor& hi = anchors[(j + 1) % anchors.size()];
    double span = hi.pos - lo.pos;
    double off = x - lo.pos;
    if (span <= 0.0) span += S;
    if (off < 0.0) off += S;
    const double s = span > 0.0 ? off / span : 0.0;
    out[t] = lo.level + (hi.level - lo.level) * 0.5 * (1.0 - std::cos(std::numbers::pi * s));
  }
  return out;
}

void write_fleet_manifest(std::ostream& os, const CaseStudy& cs) {
  os << "id,rate_kw,duration_hours,first_start_slot,last_start_slot,members\n";
  for (const LoadSpec& l : cs.loads) {
    const FinitePulseSet& set = l.finite_set();
    auto first_on = [](const Profile& y) {
      for (std::size_t t = 0; t < y.size(); ++t)
        if (y[t] != 0.0) return t;
      return y.size();
    };
    const double rate = set.rate_bound();
    os << l.id << ',' << format_double(rate) << ',' << format_double(set.energy() / rate) << ','
       << first_on(set.member(0)) << ',' << first_on(set.member(set.size() - 1)) << ',' << set.size() << '\n';
  }
}

}  // namespace vfill

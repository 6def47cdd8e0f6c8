#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vfill/error.hpp"
#include "vfill/scenario.hpp"

using namespace vfill;

namespace {

std::string baseload_text(std::size_t rows, double value = 1.0) {
  std::ostringstream os;
  os << "slot,kw_per_household\n";
  for (std::size_t t = 0; t < rows; ++t) os << t << ',' << value << '\n';
  return os.str();
}

}  // namespace

TEST_CASE("canonical case study") {
  const CaseStudy cs = build_case_study(FleetSpec{}, BaseLoadSpec{});
  CHECK(cs.grid == TimeGrid(24.0, 96));
  REQUIRE(cs.loads.size() == 1000);
  for (const LoadSpec& l : cs.loads) {
    CHECK(l.finite_set().size() == 81);
    CHECK(l.c == doctest::Approx(13.2));
    CHECK(l.finite_set().sqnorm() == doctest::Approx(43.56));
  }
  CHECK(cs.loads.front().id == 0);
  CHECK(cs.loads.back().id == 999);
  const Profile per = synth_baseload(cs.grid);
  for (std::size_t t = 0; t < 96; ++t) CHECK(cs.base[t] == doctest::Approx(1000 * per[t]).epsilon(1e-14));
}

TEST_CASE("penetration sets the EV count") {
  CHECK(build_case_study(FleetSpec{.households = 1000, .penetration = 0.0}, BaseLoadSpec{}).loads.empty());
  CHECK(build_case_study(FleetSpec{.households = 1000, .penetration = 0.2}, BaseLoadSpec{}).loads.size() == 200);
  CHECK(build_case_study(FleetSpec{.households = 10, .penetration = 0.25}, BaseLoadSpec{}).loads.size() == 3);
  CHECK_THROWS_AS(FleetSpec{.penetration = -0.1}.ev_count(), ConfigError);
}

TEST_CASE("fleet configuration errors") {
  CHECK_THROWS_AS(build_case_study(FleetSpec{.ev_rate_kw = 0.0}, BaseLoadSpec{}), ConfigError);
  CHECK_THROWS_AS(build_case_study(FleetSpec{.last_start_slot = 81}, BaseLoadSpec{}), ConfigError);
  CHECK_THROWS_AS(build_case_study(FleetSpec{.first_start_slot = 50, .last_start_slot = 40}, BaseLoadSpec{}),
                  ConfigError);
  CHECK_THROWS_AS(build_case_study(FleetSpec{.ev_duration_hours = 30.0}, BaseLoadSpec{}), ConfigError);
}

TEST_CASE("heterogeneity overrides") {
  FleetSpec spec{.households = 3, .penetration = 1.0};
  spec.heterogeneity = Heterogeneity{.overrides = {{2.0, 1.0}, {1.0, 2.0}}};
  const CaseStudy cs = build_case_study(spec, BaseLoadSpec{});
  REQUIRE(cs.loads.size() == 3);
  const FinitePulseSet& fast = cs.loads[0].finite_set();
  CHECK(fast.energy() == doctest::Approx(2 * 13.2));
  CHECK(fast.sqnorm() == doctest::Approx(4 * 43.56));
  CHECK(fast.size() == 81);
  CHECK(cs.loads[0].c == doctest::Approx(2 * 13.2));
  const FinitePulseSet& slow = cs.loads[1].finite_set();
  CHECK(slow.energy() == doctest::Approx(2 * 13.2));
  CHECK(slow.sqnorm() == doctest::Approx(2 * 43.56));
  CHECK(slow.size() == 65);
  CHECK(cs.loads[2].finite_set().energy() == doctest::Approx(13.2));
}

TEST_CASE("random heterogeneity is deterministic per seed") {
  FleetSpec spec{.households = 50, .penetration = 1.0};
  spec.heterogeneity = Heterogeneity{.rate_spread = 0.3, .duration_spread = 0.25, .seed = 4};
  const CaseStudy a = build_case_study(spec, BaseLoadSpec{});
  const CaseStudy b = build_case_study(spec, BaseLoadSpec{});
  spec.heterogeneity->seed = 5;
  const CaseStudy c = build_case_study(spec, BaseLoadSpec{});
  bool differs = false;
  std::size_t distinct_rates = 0;
  for (std::size_t i = 0; i < a.loads.size(); ++i) {
    CHECK(a.loads[i].finite_set().digest() == b.loads[i].finite_set().digest());
    differs |= a.loads[i].finite_set().digest() != c.loads[i].finite_set().digest();
    const double rate = a.loads[i].finite_set().rate_bound();
    CHECK(rate >= 3.3 * 0.7 - 1e-12);
    CHECK(rate <= 3.3 * 1.3 + 1e-12);
    distinct_rates += rate != 3.3;
    CHECK(validate_a1a4(a.loads[i].finite_set(), 1e-9).passed);
  }
  CHECK(differs);
  CHECK(distinct_rates > 40);
}

TEST_CASE("synthetic base load shape") {
  const TimeGrid g = canonical_grid();
  const Profile p = synth_baseload(g);
  const SyntheticBaseLoad anchors;
  CHECK(p[0] == doctest::Approx(anchors.evening_peak_kw));
  CHECK(p[30] == doctest::Approx(anchors.valley_kw));
  CHECK(p[48] == doctest::Approx(anchors.morning_peak_kw));
  CHECK(p[68] == doctest::Approx(anchors.midday_kw));
  const auto v = p.values();
  CHECK(*std::min_element(v.begin(), v.end()) == doctest::Approx(anchors.valley_kw));
  CHECK(*std::max_element(v.begin(), v.end()) == doctest::Approx(anchors.evening_peak_kw));
  // Smooth: no jump larger than the steepest cosine segment allows.
  for (std::size_t t = 0; t < 96; ++t) CHECK(std::abs(p[(t + 1) % 96] - p[t]) < 0.06);
  // Coarser grids place anchors at proportional slots.
  const Profile coarse = synth_baseload(TimeGrid(24.0, 48));
  CHECK(coarse[15] == doctest::Approx(anchors.valley_kw));
  CHECK_THROWS_AS(synth_baseload(g, SyntheticBaseLoad{.valley_kw = -1.0}), ConfigError);
}

TEST_CASE("base load CSV") {
  const TimeGrid g = canonical_grid();
  std::istringstream ok(baseload_text(96, 0.75));
  CHECK(read_baseload_csv(ok, g) == Profile(g, 0.75));

  std::istringstream short_file(baseload_text(95));
  CHECK_THROWS_WITH_AS(read_baseload_csv(short_file, g), doctest::Contains("line 97"), ParseError);

  std::string text = baseload_text(96);
  text.replace(text.find("\n5,1\n"), 5, "\n5,-0.2\n");
  std::istringstream negative(text);
  CHECK_THROWS_WITH_AS(read_baseload_csv(negative, g), doctest::Contains("line 7"), ParseError);

  text = baseload_text(96);
  text.replace(text.find("\n9,1\n"), 5, "\n9,abc\n");
  std::istringstream junk(text);
  CHECK_THROWS_WITH_AS(read_baseload_csv(junk, g), doctest::Contains("line 11"), ParseError);

  std::ostringstream out;
  write_baseload_csv(out, synth_baseload(g));
  std::istringstream back(out.str());
  CHECK(read_baseload_csv(back, g) == synth_baseload(g));

  CHECK_THROWS_AS(load_baseload_csv("/nonexistent/base.csv", g), ConfigError);
}

TEST_CASE("base load file source") {
  const auto dir = std::filesystem::temp_directory_path() / "vfill_scenario_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "flat.csv";
  std::ofstream(path) << baseload_text(96, 0.5);
  const CaseStudy cs =
      build_case_study(FleetSpec{.households = 10, .penetration = 0.5}, BaseLoadSpec{path, 2.0});
  CHECK(cs.base == Profile(canonical_grid(), 10.0));
  CHECK(cs.loads.size() == 5);
  std::filesystem::remove_all(dir);
}

TEST_CASE("fleet manifest") {
  const CaseStudy cs = build_case_study(FleetSpec{.households = 2, .penetration = 1.0}, BaseLoadSpec{});
  std::ostringstream os;
  write_fleet_manifest(os, cs);
  CHECK(os.str() ==
        "id,rate_kw,duration_hours,first_start_slot,last_start_slot,members\n"
        "0,3.3,4,0,80,81\n"
        "1,3.3,4,0,80,81\n");
}

#include <doctest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "vfill/error.hpp"
#include "vfill/feasible.hpp"

using namespace vfill;

namespace {

const TimeGrid kDay(24.0, 96);

double q_value(const Profile& z, const Profile& h, const Profile& x_prev, double c) {
  const Profile d = z - x_prev;
  return 2.0 * c * inner(h, z) + norm2(d);
}

}  // namespace

TEST_CASE("canonical pulse set") {
  const auto starts = start_range(0, 80);
  const FinitePulseSet set = make_pulse_set(3.3, 4.0, starts, kDay);
  CHECK(set.size() == 81);
  CHECK(set.energy() == doctest::Approx(13.2).epsilon(1e-12));
  CHECK(set.sqnorm() == doctest::Approx(43.56).epsilon(1e-12));
  CHECK(set.rate_bound() == 3.3);
  CHECK(set.nonnegative());
  for (std::size_t k = 0; k < set.size(); ++k) {
    CHECK(set.member(k)[k] == 3.3);
    CHECK(set.member(k)[k + 15] == 3.3);
    if (k > 0) CHECK(set.member(k)[k - 1] == 0.0);
    if (k + 16 < 96) CHECK(set.member(k)[k + 16] == 0.0);
  }
  CHECK(validate_a1a4(set, 1e-9).passed);
}

TEST_CASE("pulse set edge cases") {
  const std::vector<std::size_t> one{5};
  CHECK(make_pulse_set(3.3, 4.0, one, kDay).size() == 1);
  const std::vector<std::size_t> zero{0};
  const FinitePulseSet full = make_pulse_set(2.0, 24.0, zero, kDay);
  CHECK(full.member(0) == Profile(kDay, 2.0));
}

TEST_CASE("pulse set errors") {
  const std::vector<std::size_t> late{0, 81};
  try {
    make_pulse_set(3.3, 4.0, late, kDay);
    FAIL("expected InfeasibleError");
  } catch (const InfeasibleError& e) {
    CHECK(std::string(e.what()).find("81") != std::string::npos);
  }
  const std::vector<std::size_t> unordered{3, 2};
  CHECK_THROWS_AS(make_pulse_set(3.3, 4.0, unordered, kDay), ConfigError);
  const std::vector<std::size_t> none;
  CHECK_THROWS_AS(make_pulse_set(3.3, 4.0, none, kDay), ConfigError);
  const std::vector<std::size_t> ok{0};
  CHECK_THROWS_AS(make_pulse_set(3.3, 4.1, ok, kDay), ConfigError);
}

TEST_CASE("finite set invariants") {
  const TimeGrid g(2.0, 2);
  CHECK_THROWS_AS(FinitePulseSet::from_members({}), ConfigError);
  CHECK_THROWS_AS(FinitePulseSet::from_members({Profile(g, {1, 0}), Profile(g, {1, 0})}), ConfigError);
  CHECK_THROWS_AS(FinitePulseSet::from_members({Profile(g, {1, 0}), Profile(TimeGrid(2.0, 1), {1})}), DimensionError);
  const FinitePulseSet s = FinitePulseSet::from_members({Profile(g, {1, 0}), Profile(g, {0, 1})});
  CHECK(s.find(Profile(g, {0, 1})) == 1u);
  CHECK_FALSE(s.find(Profile(g, {0, 1.01})));
  CHECK(s.find(Profile(g, {0, 1.01}), 0.02) == 1u);
  CHECK(s.gram(0, 1) == 0.0);
  CHECK(s.gram(1, 1) == 1.0);
}

TEST_CASE("A4 perturbation is reported at first order") {
  const TimeGrid g(24.0, 96);
  const FinitePulseSet base = make_pulse_set(3.3, 4.0, start_range(0, 3), g);
  std::vector<Profile> members(base.members().begin(), base.members().end());
  for (std::size_t t = 0; t < 96; ++t)
    if (members[2][t] != 0.0) members[2][t] = 3.3 + 1e-3;
  const FinitePulseSet bent(members, base.energy(), base.sqnorm(), base.rate_bound());
  const ValidationReport r = validate_a1a4(bent, 1e-9);
  CHECK_FALSE(r.passed);
  const double direct = norm2(members[2]) - 43.56;
  CHECK(r.max_sqnorm_error == doctest::Approx(direct).epsilon(1e-9));
  CHECK(r.max_sqnorm_error == doctest::Approx(2 * 3.3 * 1e-3 * 4.0).epsilon(1e-3));
  CHECK(r.worst_member == 2u);
  CHECK(r.max_rate_excess == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("exact integer set passes with zero tolerance and reports ramps") {
  const TimeGrid g(8.0, 8);
  const FinitePulseSet s = make_pulse_set(2.0, 3.0, start_range(0, 5), g);
  const ValidationReport r = validate_a1a4(s, 0.0);
  CHECK(r.passed);
  CHECK(r.max_ramp == 2.0);
}

TEST_CASE("convex set validation") {
  const TimeGrid g(2.0, 2);
  CHECK_THROWS_AS(ConvexChargeSet(Profile(g, {1, 1}), 2.5), InfeasibleError);
  CHECK_THROWS_AS(ConvexChargeSet(Profile(g, {1, 1}), -0.1), InfeasibleError);
  CHECK_THROWS_AS(ConvexChargeSet(Profile(g, {-1, 1}), 0.0), InfeasibleError);
  const ConvexChargeSet s(Profile(g, {1, 1}), 1.0);
  CHECK(s.contains(Profile(g, {0.5, 0.5})));
  CHECK_FALSE(s.contains(Profile(g, {0.5, 0.6})));
  CHECK(s.scaled(2.0).energy() == 2.0);
  CHECK(s.scaled(2.0).caps() == Profile(g, {2, 2}));
}

TEST_CASE("projection examples") {
  const TimeGrid g(2.0, 2);
  const ConvexChargeSet s(Profile(g, {1, 1}), 1.0);
  CHECK(project_convex(Profile(g, {2, 0}), s)[0] == doctest::Approx(1.0));
  CHECK(project_convex(Profile(g, {2, 0}), s)[1] == doctest::Approx(0.0));
  const Profile inside(g, {0.25, 0.75});
  const Profile p = project_convex(inside, s);
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-12));

  const TimeGrid g6(3.0, 6);
  const ConvexChargeSet wide(Profile(g6, 1e6), 6.0);
  const Profile z(g6, {0.3, 1.0, 2.0, 0.7, 5.0, 1.0});
  const Profile x = project_convex(z, wide);
  const double shift = (integral(z) - 6.0) / (g6.dt() * 6.0);
  for (std::size_t t = 0; t < 6; ++t) CHECK(x[t] == doctest::Approx(z[t] - shift).epsilon(1e-10));
  const Profile clipped = project_convex(Profile(g6, {0.3, -1.0, 2.0, 0.7, 5.0, 1.0}), ConvexChargeSet(Profile(g6, 1e6), 4.0));
  const Profile expect(g6, {0.1, 0.0, 1.8, 0.5, 4.8, 0.8});
  for (std::size_t t = 0; t < 6; ++t) CHECK(clipped[t] == doctest::Approx(expect[t]).epsilon(1e-10));
}

TEST_CASE("projection matches the active-set oracle") {
  std::mt19937_64 gen(11);
  for (int r = 0; r < 100; ++r) {
    const std::size_t S = 1 + r % 6;
    const TimeGrid g(inst::uniform(gen, 1.0, 6.0), S);
    const ConvexChargeSet set = inst::random_convex(g, gen);
    Profile z(g);
    for (std::size_t t = 0; t < S; ++t) z[t] = inst::uniform(gen, -4.0, 6.0);
    const Profile x = project_convex(z, set);
    const Profile ref = oracle::qp_projection(z, set.caps(), set.energy());
    CHECK(norm(x - ref) <= 1e-8);
    CHECK(set.contains(x, 1e-10));
    CHECK(std::abs(integral(x) - set.energy()) <= 1e-10 * std::max(1.0, set.energy()));
    CHECK(norm(project_convex(x, set) - x) <= 1e-10);
  }
}

TEST_CASE("hull: trivial cases") {
  const FinitePulseSet set = make_pulse_set(3.3, 4.0, start_range(0, 80), kDay);
  const HullResult r = hull_minimize(Profile(kDay), set.member(7), 13.2, set);
  CHECK(r.theta.is_degenerate_at(7));
  CHECK(r.z_star == set.member(7));

  const std::vector<std::size_t> one{3};
  const FinitePulseSet single = make_pulse_set(3.3, 4.0, one, kDay);
  std::mt19937_64 gen(12);
  const HullResult s = hull_minimize(inst::random_base(kDay, 1.0, gen), Profile(kDay), 5.0, single);
  CHECK(s.theta.weights == std::vector<double>{1.0});
  CHECK(s.z_star == single.member(0));
}

TEST_CASE("hull: two members follow the scalar closed form") {
  std::mt19937_64 gen(13);
  const TimeGrid g(6.0, 6);
  for (int r = 0; r < 200; ++r) {
    const FinitePulseSet set = inst::random_pulses(g, 2, 3, gen);
    if (set.size() < 2) continue;
    Profile h(g), x_prev(g);
    for (std::size_t t = 0; t < 6; ++t) {
      h[t] = inst::uniform(gen, -2.0, 2.0);
      x_prev[t] = r % 2 ? set.member(0)[t] : inst::uniform(gen, 0.0, 3.0);
    }
    const double c = inst::uniform(gen, 0.1, 3.0);
    const Profile delta = set.member(1) - set.member(0);
    const double t_star = -(c * inner(h, delta) + inner(set.member(0) - x_prev, delta)) / norm2(delta);
    const double w = std::clamp(t_star, 0.0, 1.0);
    const HullResult res = hull_minimize(h, x_prev, c, set);
    const Profile z = set.member(0) + w * delta;
    // Snapping may replace a near-vertex answer by the vertex itself.
    if (norm(res.z_star - z) > 1e-7) {
      CHECK(res.theta.weights[1] == doctest::Approx(w).epsilon(1e-8));
    }
    CHECK(norm(res.z_star - z) <= 2e-7);
  }
}

TEST_CASE("hull: optimality, consistency and degeneracy") {
  std::mt19937_64 gen(14);
  for (int r = 0; r < 150; ++r) {
    const std::size_t S = 2 + r % 5;
    const TimeGrid g(static_cast<double>(S), S);
    const FinitePulseSet set = r % 2 ? inst::random_pulses(g, 6, S, gen) : inst::random_permutations(g, 6, r % 3 == 0, gen);
    Profile h(g);
    for (std::size_t t = 0; t < S; ++t) h[t] = inst::uniform(gen, -3.0, 3.0);
    const std::size_t prev = std::uniform_int_distribution<std::size_t>(0, set.size() - 1)(gen);
    const double c = inst::uniform(gen, 0.05, 2.0);
    const HullResult res = hull_minimize(h, set.member(prev), c, set, {}, prev);
    validate_distribution(res.theta);
    Profile mean(g);
    for (std::size_t k = 0; k < set.size(); ++k) mean += res.theta.weights[k] * set.member(k);
    CHECK(norm(mean - res.z_star) <= 1e-9);
    CHECK(q_value(res.z_star, h, set.member(prev), c) <= q_value(set.member(prev), h, set.member(prev), c));
    const auto kkt = oracle::hull_kkt_min(h, set.member(prev), c, set);
    CHECK(res.objective == doctest::Approx(kkt.value).epsilon(1e-7));
    if (set.find(res.z_star, 1e-7)) CHECK(res.theta.support_size() == 1);
  }
}

TEST_CASE("sampling") {
  const Distribution d = Distribution::degenerate(4, 2);
  for (double u : {0.0, 0.3, 0.999999}) CHECK(sample(d, u) == 2);
  const Distribution half{{0.5, 0.5}};
  CHECK(sample(half, 0.25) == 0);
  CHECK(sample(half, 0.75) == 1);
  const Distribution skip{{0.0, 1.0, 0.0}};
  CHECK(sample(skip, 0.0) == 1);
}

TEST_CASE("sample frequencies are within three sigma") {
  const Distribution theta{{0.1, 0.05, 0.4, 0.0, 0.3, 0.15}};
  std::mt19937_64 gen(15);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int N = 100000;
  std::vector<int> count(theta.size());
  for (int i = 0; i < N; ++i) ++count[sample(theta, u(gen))];
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double p = theta.weights[k];
    const double sigma = std::sqrt(N * p * (1 - p));
    CHECK(std::abs(count[k] - N * p) <= 3 * sigma);
  }
  CHECK(count[3] == 0);
}

TEST_CASE("stay probability and distributions") {
  CHECK(stay_probability(Distribution::degenerate(3, 1), 1) == 1.0);
  CHECK(stay_probability(Distribution{{0.7, 0.3}}, 0) == 0.7);
  CHECK(stay_probability(Distribution::uniform(5), 3) == doctest::Approx(0.2));
  CHECK_THROWS_AS(stay_probability(Distribution::uniform(2), 2), PreconditionError);
  CHECK_THROWS_AS(validate_distribution(Distribution{{0.5, 0.4}}), PreconditionError);
  CHECK_THROWS_AS(validate_distribution(Distribution{{1.2, -0.2}}), PreconditionError);
  CHECK(Distribution{{0.0, 0.5, 0.5}}.support_size() == 2);
}

TEST_CASE("pulse set serialization round trip") {
  const FinitePulseSet set = make_pulse_set(3.3, 4.0, start_range(10, 20), kDay);
  std::stringstream mat, meta;
  write_pulse_set(mat, meta, set);
  CHECK(mat.str().rfind("s0,s1,", 0) == 0);
  const FinitePulseSet back = read_pulse_set(mat, meta);
  CHECK(back.size() == set.size());
  CHECK(back.digest() == set.digest());
  CHECK(back.energy() == set.energy());
  CHECK(back.sqnorm() == set.sqnorm());
  CHECK(back.rate_bound() == set.rate_bound());
}

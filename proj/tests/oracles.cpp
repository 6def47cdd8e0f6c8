#include "oracles.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace oracle {

Profile qp_projection(const Profile& z, const Profile& caps, double energy) {
  const std::size_t S = z.size();
  const double dt = z.grid().dt();
  std::size_t total = 1;
  for (std::size_t t = 0; t < S; ++t) total *= 3;
  double best = std::numeric_limits<double>::infinity();
  Profile best_x(z.grid());
  std::vector<int> state(S);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t t = 0; t < S; ++t) {
      state[t] = static_cast<int>(c % 3);
      c /= 3;
    }
    double fixed = 0.0, free_sum = 0.0;
    std::size_t nfree = 0;
    for (std::size_t t = 0; t < S; ++t) {
      if (state[t] == 1) fixed += caps[t];
      if (state[t] == 2) {
        free_sum += z[t];
        ++nfree;
      }
    }
    double lambda = 0.0;
    if (nfree == 0) {
      if (std::abs(dt * fixed - energy) > 1e-12 * (1.0 + energy)) continue;
    } else {
      lambda = (free_sum + fixed - energy / dt) / static_cast<double>(nfree);
    }
    Profile x(z.grid());
    bool feasible = true;
    for (std::size_t t = 0; t < S && feasible; ++t) {
      if (state[t] == 0) x[t] = 0.0;
      if (state[t] == 1) x[t] = caps[t];
      if (state[t] == 2) {
        x[t] = z[t] - lambda;
        feasible = x[t] >= -1e-12 && x[t] <= caps[t] + 1e-12;
      }
    }
    if (!feasible) continue;
    double dist = 0.0;
    for (std::size_t t = 0; t < S; ++t) dist += dt * (x[t] - z[t]) * (x[t] - z[t]);
    if (dist < best) {
      best = dist;
      best_x = x;
    }
  }
  if (!std::isfinite(best)) throw std::runtime_error("qp_projection: empty set");
  return best_x;
}

double slot_inner(const Profile& f, const Profile& g) {
  double s = 0.0;
  for (std::size_t t = 0; t < f.size(); ++t) s += f.grid().dt() * f[t] * g[t];
  return s;
}

double hull_objective(const std::vector<double>& theta, const Profile& h, const Profile& x_prev, double c,
                      const vfill::FinitePulseSet& set) {
  Profile z(h.grid());
  for (std::size_t k = 0; k < set.size(); ++k)
    for (std::size_t t = 0; t < z.size(); ++t) z[t] += theta[k] * set.member(k)[t];
  Profile diff = z - x_prev;
  return 2.0 * c * slot_inner(h, z) + slot_inner(diff, diff);
}

namespace {

void grid_walk(std::size_t k, std::size_t left, std::size_t steps, std::vector<double>& theta, double& best,
               const Profile& h, const Profile& x_prev, double c, const vfill::FinitePulseSet& set) {
  const std::size_t m = set.size();
  if (k + 1 == m) {
    theta[k] = static_cast<double>(left) / static_cast<double>(steps);
    best = std::min(best, hull_objective(theta, h, x_prev, c, set));
    return;
  }
  for (std::size_t j = 0; j <= left; ++j) {
    theta[k] = static_cast<double>(j) / static_cast<double>(steps);
    grid_walk(k + 1, left - j, steps, theta, best, h, x_prev, c, set);
  }
}

}  // namespace

double hull_grid_min(const Profile& h, const Profile& x_prev, double c, const vfill::FinitePulseSet& set, double step) {
  const auto steps = static_cast<std::size_t>(std::llround(1.0 / step));
  std::vector<double> theta(set.size(), 0.0);
  double best = std::numeric_limits<double>::infinity();
  grid_walk(0, steps, steps, theta, best, h, x_prev, c, set);
  return best;
}

HullKkt hull_kkt_min(const Profile& h, const Profile& x_prev, double c, const vfill::FinitePulseSet& set) {
  const std::size_t m = set.size();
  const std::size_t S = h.size();
  const double dt = h.grid().dt();
  // Q(theta) = theta' G theta + a' theta + const with G = Y' W Y, a = Y' W (2c h - 2 x_prev).
  Eigen::MatrixXd Y(S, m);
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t t = 0; t < S; ++t) Y(t, k) = set.member(k)[t];
  Eigen::VectorXd lin(S);
  for (std::size_t t = 0; t < S; ++t) lin(t) = 2.0 * c * h[t] - 2.0 * x_prev[t];
  const Eigen::MatrixXd G = dt * Y.transpose() * Y;
  const Eigen::VectorXd a = dt * Y.transpose() * lin;

  HullKkt best;
  best.value = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 1; mask < (std::size_t{1} << m); ++mask) {
    std::vector<std::size_t> sup;
    for (std::size_t k = 0; k < m; ++k)
      if (mask >> k & 1U) sup.push_back(k);
    const std::size_t q = sup.size();
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(q + 1, q + 1);
    Eigen::VectorXd rhs(q + 1);
    for (std::size_t i = 0; i < q; ++i) {
      for (std::size_t j = 0; j < q; ++j) K(i, j) = 2.0 * G(sup[i], sup[j]);
      K(i, q) = 1.0;
      K(q, i) = 1.0;
      rhs(i) = -a(sup[i]);
    }
    rhs(q) = 1.0;
    const Eigen::VectorXd sol = K.completeOrthogonalDecomposition().solve(rhs);
    if ((K * sol - rhs).norm() > 1e-9 * (1.0 + rhs.norm())) continue;
    std::vector<double> theta(m, 0.0);
    bool ok = true;
    for (std::size_t i = 0; i < q; ++i) {
      if (sol(i) < -1e-12) ok = false;
      theta[sup[i]] = std::max(0.0, sol(i));
    }
    if (!ok) continue;
    const double v = hull_objective(theta, h, x_prev, c, set);
    if (v < best.value) {
      best.value = v;
      best.theta = theta;
    }
  }
  return best;
}

namespace {

void nest(std::size_t i, const std::vector<const vfill::FinitePulseSet*>& sets, const Profile& partial, double& best) {
  if (i == sets.size()) {
    best = std::min(best, slot_inner(partial, partial));
    return;
  }
  for (std::size_t k = 0; k < sets[i]->size(); ++k) nest(i + 1, sets, partial + sets[i]->member(k), best);
}

void outcomes(std::size_t i, const std::vector<const vfill::FinitePulseSet*>& sets,
              const std::vector<vfill::Distribution>& thetas, const Profile& partial, double prob, double& acc) {
  if (i == sets.size()) {
    acc += prob * slot_inner(partial, partial);
    return;
  }
  for (std::size_t k = 0; k < sets[i]->size(); ++k) {
    const double w = thetas[i].weights[k];
    if (w > 0.0) outcomes(i + 1, sets, thetas, partial + sets[i]->member(k), prob * w, acc);
  }
}

}  // namespace

double nested_optimum(const std::vector<const vfill::FinitePulseSet*>& sets, const Profile& b) {
  double best = std::numeric_limits<double>::infinity();
  nest(0, sets, b, best);
  return best;
}

double enumerated_expectation(const std::vector<const vfill::FinitePulseSet*>& sets,
                              const std::vector<vfill::Distribution>& thetas, const Profile& b) {
  double acc = 0.0;
  outcomes(0, sets, thetas, b, 1.0, acc);
  return acc;
}

}  // namespace oracle

namespace inst {

double uniform(std::mt19937_64& gen, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(gen);
}

Profile random_base(const TimeGrid& grid, double level, std::mt19937_64& gen) {
  const double a1 = uniform(gen, 0.1, 0.4), a2 = uniform(gen, 0.0, 0.2);
  const double p1 = uniform(gen, 0.0, 6.3), p2 = uniform(gen, 0.0, 6.3);
  Profile b(grid);
  const double S = static_cast<double>(grid.slots());
  for (std::size_t t = 0; t < grid.slots(); ++t) {
    const double x = 2.0 * std::numbers::pi * static_cast<double>(t) / S;
    b[t] = level * (1.0 + a1 * std::cos(x + p1) + a2 * std::cos(2.0 * x + p2) + uniform(gen, -0.05, 0.05));
  }
  return b;
}

vfill::ConvexChargeSet random_convex(const TimeGrid& grid, std::mt19937_64& gen) {
  const std::size_t S = grid.slots();
  std::uniform_int_distribution<std::size_t> pick(0, S - 1);
  std::size_t lo = pick(gen), hi = pick(gen);
  if (lo > hi) std::swap(lo, hi);
  Profile caps(grid);
  for (std::size_t t = lo; t <= hi; ++t) caps[t] = uniform(gen, 0.5, 5.0);
  const double energy = uniform(gen, 0.1, 0.9) * vfill::integral(caps);
  return vfill::ConvexChargeSet(caps, energy);
}

vfill::FinitePulseSet random_pulses(const TimeGrid& grid, std::size_t m, std::size_t max_len, std::mt19937_64& gen) {
  const std::size_t S = grid.slots();
  const std::size_t len = std::uniform_int_distribution<std::size_t>(1, std::min(max_len, S))(gen);
  std::vector<std::size_t> starts(S - len + 1);
  std::iota(starts.begin(), starts.end(), 0);
  std::shuffle(starts.begin(), starts.end(), gen);
  starts.resize(std::min(m, starts.size()));
  std::sort(starts.begin(), starts.end());
  const double rate = uniform(gen, 1.0, 5.0);
  return vfill::make_pulse_set(rate, static_cast<double>(len) * grid.dt(), starts, grid);
}

vfill::FinitePulseSet random_permutations(const TimeGrid& grid, std::size_t m, bool signed_values,
                                          std::mt19937_64& gen) {
  const std::size_t S = grid.slots();
  std::vector<double> base(S);
  for (double& v : base) v = signed_values ? uniform(gen, -3.0, 3.0) : uniform(gen, 0.0, 3.0);
  std::vector<Profile> members;
  std::vector<double> perm = base;
  for (int attempt = 0; members.size() < m && attempt < 1000; ++attempt) {
    std::shuffle(perm.begin(), perm.end(), gen);
    Profile p(grid, perm);
    if (std::find(members.begin(), members.end(), p) == members.end()) members.push_back(p);
  }
  return vfill::FinitePulseSet::from_members(std::move(members));
}

}  // namespace inst

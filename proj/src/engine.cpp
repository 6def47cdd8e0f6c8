#include "vfill/engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>
#include <thread>

#include "vfill/error.hpp"
#include "vfill/rng.hpp"

namespace vfill {

LoadSpec LoadSpec::convex(int id, ConvexChargeSet set, std::optional<double> c) {
  const double w = c.value_or(set.energy());
  return LoadSpec{id, std::move(set), w};
}

LoadSpec LoadSpec::finite(int id, std::shared_ptr<const FinitePulseSet> set, std::optional<double> c) {
  if (!set) throw ConfigError("load " + std::to_string(id) + ": null pulse set");
  const double w = c.value_or(set->energy());
  return LoadSpec{id, std::move(set), w};
}

double LoadSpec::energy() const { return is_finite() ? finite_set().energy() : convex_set().energy(); }

const TimeGrid& LoadSpec::grid() const { return is_finite() ? finite_set().grid() : convex_set().grid(); }

const char* to_string(Termination t) {
  switch (t) {
    case Termination::Tolerance: return "tolerance";
    case Termination::FixedPoint: return "fixed-point";
    case Termination::MaxIter: return "max-iterations";
  }
  return "unknown";
}

Profile coordinator_signal(const Profile& b, std::span<const Profile> xs, double C) {
  if (!(C > 0.0)) throw ConfigError("coordinator signal: total weight C must be > 0");
  Profile g = aggregate(b, xs);
  g *= 1.0 / C;
  return g;
}

Profile convex_load_update(const Profile& g, const Profile& x_prev, const ConvexChargeSet& set, double c) {
  require_same_grid(g, x_prev, "convex load update");
  Profile z = x_prev;
  z -= c * g;
  return project_convex(z, set);
}

FiniteUpdate finite_load_update(const Profile& g, double C, const Profile& x_prev, const FinitePulseSet& set, double c,
                                double draw, const HullOptions& opts, std::optional<std::size_t> prev_member) {
  if (!(C > c))
    throw ConfigError("finite load update: C = " + format_double(C) + " must exceed c = " + format_double(c) +
                      " (a lone finite load has no peers to average against)");
  Profile h = C * g;
  h -= x_prev;
  h *= 1.0 / (C - c);
  HullResult hull = hull_minimize(h, x_prev, c, set, opts, prev_member);
  const std::size_t idx = sample(hull.theta, draw);
  return FiniteUpdate{set.member(idx), idx, hull.theta, std::move(h), std::move(hull)};
}

HullResult finite_hull(const LoadSpec& load, const Profile& g, double C, const Profile& x_prev,
                       std::optional<std::size_t> prev_member, const HullOptions& opts) {
  if (!(C > load.c))
    throw ConfigError("finite load update: C = " + format_double(C) + " must exceed c = " + format_double(load.c) +
                      " (a lone finite load has no peers to average against)");
  Profile h = C * g;
  h -= x_prev;
  h *= 1.0 / (C - load.c);
  return hull_minimize(h, x_prev, load.c, load.finite_set(), opts, prev_member);
}

LoadStep finite_step(const LoadSpec& load, const HullResult& hull, std::optional<std::size_t> prev_member,
                     std::uint64_t master_seed, std::size_t k) {
  const FinitePulseSet& set = load.finite_set();
  const double draw = keyed_uniform(master_seed, static_cast<std::uint64_t>(load.id), k);
  const std::size_t idx = sample(hull.theta, draw);
  const double stay = prev_member ? stay_probability(hull.theta, *prev_member) : 0.0;
  double second = 0.0;
  for (std::size_t j = 0; j < hull.theta.size(); ++j)
    if (hull.theta.weights[j] != 0.0) second += hull.theta.weights[j] * set.gram(j, j);
  return LoadStep{set.member(idx), idx, hull.theta, stay, hull.z_star, second};
}

LoadStep load_step(const LoadSpec& load, const Profile& g, double C, const Profile& x_prev,
                   std::optional<std::size_t> prev_member, std::uint64_t master_seed, std::size_t k,
                   const HullOptions& opts) {
  if (!load.is_finite()) {
    Profile x = convex_load_update(g, x_prev, load.convex_set(), load.c);
    const double stay = (x == x_prev) ? 1.0 : 0.0;
    const double sq = norm2(x);
    Profile mean = x;
    return LoadStep{std::move(x), std::nullopt, Distribution{}, stay, std::move(mean), sq};
  }
  return finite_step(load, finite_hull(load, g, C, x_prev, prev_member, opts), prev_member, master_seed, k);
}

double escape_probability(std::span<const Distribution> thetas, std::span<const std::size_t> prev_indices) {
  if (thetas.size() != prev_indices.size())
    throw DimensionError("escape_probability: " + std::to_string(thetas.size()) + " distributions vs " +
                         std::to_string(prev_indices.size()) + " indices");
  double stay = 1.0;
  for (std::size_t i = 0; i < thetas.size(); ++i) stay *= stay_probability(thetas[i], prev_indices[i]);
  return std::clamp(1.0 - stay, 0.0, 1.0);
}

double expected_next_objective(const Profile& b, std::span<const Profile> xs_prev, std::span<const Distribution> thetas,
                               std::span<const FinitePulseSet* const> sets) {
  const std::size_t n = xs_prev.size();
  if (thetas.size() != n || sets.size() != n) throw DimensionError("expected_next_objective: list lengths differ");
  Profile shifted = aggregate(b, xs_prev);  // d + sum E dx_i
  double spread = 0.0;                      // sum E||dx_i||^2 - ||E dx_i||^2
  for (std::size_t i = 0; i < n; ++i) {
    const FinitePulseSet& set = *sets[i];
    const auto prev = set.find(xs_prev[i]);
    if (!prev) throw PreconditionError("expected_next_objective: load " + std::to_string(i) +
                                       " previous profile is not an admissible member");
    if (thetas[i].size() != set.size())
      throw DimensionError("expected_next_objective: distribution size differs from member count for load " +
                           std::to_string(i));
    Profile mean(b.grid());
    double mean_norm_term = 0.0;  // sum_k theta_k ||y_k||^2
    for (std::size_t k = 0; k < set.size(); ++k) {
      const double w = thetas[i].weights[k];
      if (w == 0.0) continue;
      const auto y = set.member(k).values();
      for (std::size_t t = 0; t < y.size(); ++t) mean[t] += w * y[t];
      mean_norm_term += w * set.gram(k, k);
    }
    Profile dmean = mean - xs_prev[i];
    shifted += dmean;
    const double e_sq = mean_norm_term + norm2(xs_prev[i]) - 2.0 * inner(mean, xs_prev[i]);
    spread += e_sq - norm2(dmean);
  }
  return norm2(shifted) + spread;
}

double expected_objective_from_moments(const Profile& b, std::span<const LoadStep> steps) {
  Profile d = b;
  double spread = 0.0;
  for (const LoadStep& s : steps) {
    d += s.mean;
    spread += s.second_moment - norm2(s.mean);
  }
  return norm2(d) + spread;
}

// ---- coordinator bookkeeping -------------------------------------------------

CoordinatorLoop::CoordinatorLoop(Profile effective_base, std::vector<double> weights, std::vector<bool> finite_kinds,
                                 const EngineConfig& cfg)
    : b_(std::move(effective_base)),
      c_(std::move(weights)),
      finite_(std::move(finite_kinds)),
      cfg_(cfg),
      g_(b_.grid()) {
  if (c_.empty()) throw ConfigError("coordinator: no loads");
  if (finite_.size() != c_.size()) throw ConfigError("coordinator: weight and kind lists differ in length");
  if (!(cfg_.epsilon > 0.0)) throw ConfigError("engine: epsilon must be > 0");
  if (cfg_.max_iterations < 1) throw ConfigError("engine: max_iterations must be >= 1");
  for (double c : c_) C_ += c;
  xs_.assign(c_.size(), Profile(b_.grid()));
  members_.assign(c_.size(), std::nullopt);
  current_objective_ = norm2(aggregate(b_, xs_));
}

void CoordinatorLoop::set_initial(std::vector<Profile> xs, std::vector<std::optional<std::size_t>> members) {
  if (xs.size() != c_.size() || members.size() != c_.size())
    throw DimensionError("coordinator: initial state has the wrong number of loads");
  xs_ = std::move(xs);
  members_ = std::move(members);
  current_objective_ = norm2(aggregate(b_, xs_));
}

const Profile& CoordinatorLoop::next_signal() {
  ++k_;
  if (k_ > 1) g_prev_ = g_;
  g_ = coordinator_signal(b_, xs_, C_);
  return g_;
}

std::optional<Termination> CoordinatorLoop::absorb(std::vector<LoadStep> steps) {
  if (steps.size() != xs_.size())
    throw DimensionError("coordinator: expected " + std::to_string(xs_.size()) + " load updates, got " +
                         std::to_string(steps.size()));
  IterationRecord rec{.k = k_, .g = g_, .prior_objective = current_objective_};

  double stay = 1.0;
  bool all_finite_fixed = true;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    stay *= steps[i].stay_probability;
    if (!finite_[i] || steps[i].stay_probability != 1.0) all_finite_fixed = false;
    if (!(steps[i].x == xs_[i])) ++rec.profiles_changed;
  }
  rec.escape_probability = std::clamp(1.0 - stay, 0.0, 1.0);
  if (cfg_.record_diagnostics) rec.expected_next_objective = expected_objective_from_moments(b_, steps);

  for (std::size_t i = 0; i < steps.size(); ++i) {
    xs_[i] = std::move(steps[i].x);
    members_[i] = steps[i].member;
  }
  current_objective_ = norm2(aggregate(b_, xs_));
  rec.objective = current_objective_;
  traj_.records.push_back(std::move(rec));
  if (cfg_.record_profiles) traj_.profile_history.push_back(xs_);

  if (all_finite_fixed) return Termination::FixedPoint;
  if (cfg_.stop_on_tolerance && g_prev_ && norm(g_ - *g_prev_) < cfg_.epsilon) return Termination::Tolerance;
  if (k_ >= cfg_.max_iterations) return Termination::MaxIter;
  return std::nullopt;
}

Trajectory CoordinatorLoop::finish(Termination reason) && {
  traj_.final_profiles = xs_;
  traj_.final_members = members_;
  traj_.terminated_by = reason;
  return std::move(traj_);
}

// ---- in-process runner ---------------------------------------------------------

void validate_fleet(std::span<const LoadSpec> loads, const Profile& b) {
  if (loads.empty()) throw ConfigError("engine: at least one load is required");
  double C = 0.0;
  for (const LoadSpec& l : loads) {
    if (!(l.c > 0.0) || !std::isfinite(l.c))
      throw ConfigError("load " + std::to_string(l.id) + ": update weight c must be finite and > 0");
    if (!(l.grid() == b.grid())) throw ConfigError("load " + std::to_string(l.id) + ": grid differs from base load");
    C += l.c;
  }
  for (std::size_t i = 0; i < loads.size(); ++i)
    for (std::size_t j = i + 1; j < loads.size(); ++j)
      if (loads[i].id == loads[j].id) throw ConfigError("duplicate load id " + std::to_string(loads[i].id));
  for (const LoadSpec& l : loads)
    if (l.is_finite() && !(C > l.c))
      throw ConfigError("load " + std::to_string(l.id) +
                        ": a finite load needs other loads with positive weight (sum of the other c_j is zero)");
}

namespace {

CoordinatorLoop make_loop(std::span<const LoadSpec> loads, const Profile& b, const EngineConfig& cfg,
                          const Objective& obj) {
  validate_fleet(loads, b);
  std::vector<double> weights;
  std::vector<bool> kinds;
  for (const LoadSpec& l : loads) {
    weights.push_back(l.c);
    kinds.push_back(l.is_finite());
  }
  return CoordinatorLoop(effective_base(b, obj), std::move(weights), std::move(kinds), cfg);
}

Trajectory drive(std::span<const LoadSpec> loads, CoordinatorLoop loop, const EngineConfig& cfg) {
  const std::size_t n = loads.size();
  for (;;) {
    const Profile& g = loop.next_signal();
    const std::size_t k = loop.iteration();
    const auto& xs = loop.profiles();
    const auto& members = loop.members();
    std::vector<std::optional<LoadStep>> slots(n);
    // Finite loads sharing a set, a weight and a previous profile face the same
    // hull problem; solve it once per group.
    auto work = [&](std::size_t lo, std::size_t hi) {
      std::map<std::tuple<const FinitePulseSet*, double, std::vector<double>>, HullResult> solved;
      for (std::size_t i = lo; i < hi; ++i) {
        const LoadSpec& l = loads[i];
        if (!l.is_finite()) {
          slots[i] = load_step(l, g, loop.total_weight(), xs[i], members[i], cfg.master_seed, k, cfg.hull);
          continue;
        }
        auto key = std::make_tuple(&l.finite_set(), l.c, std::vector<double>(xs[i].values().begin(), xs[i].values().end()));
        auto it = solved.find(key);
        if (it == solved.end())
          it = solved.emplace(key, finite_hull(l, g, loop.total_weight(), xs[i], members[i], cfg.hull)).first;
        slots[i] = finite_step(l, it->second, members[i], cfg.master_seed, k);
      }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(n)));
    if (threads == 1) {
      work(0, n);
    } else {
      std::vector<std::jthread> pool;
      std::vector<std::exception_ptr> errors(threads);
      for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
          try {
            work(n * t / threads, n * (t + 1) / threads);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      pool.clear();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    std::vector<LoadStep> steps;
    steps.reserve(n);
    for (auto& s : slots) steps.push_back(std::move(*s));
    if (auto stop = loop.absorb(std::move(steps))) return std::move(loop).finish(*stop);
  }
}

}  // namespace

Trajectory run(std::span<const LoadSpec> loads, const Profile& b, const EngineConfig& cfg, const Objective& obj) {
  std::vector<Profile> zeros(loads.size(), Profile(b.grid()));
  return run_from(loads, b, cfg, obj, std::move(zeros));
}

Trajectory run_from(std::span<const LoadSpec> loads, const Profile& b, const EngineConfig& cfg, const Objective& obj,
                    std::vector<Profile> initial) {
  CoordinatorLoop loop = make_loop(loads, b, cfg, obj);
  std::vector<std::optional<std::size_t>> members(loads.size());
  for (std::size_t i = 0; i < loads.size(); ++i) {
    require_same_grid(initial.at(i), b, "initial profile");
    if (loads[i].is_finite()) members[i] = loads[i].finite_set().find(initial[i]);
  }
  loop.set_initial(std::move(initial), std::move(members));
  return drive(loads, std::move(loop), cfg);
}

}  // namespace vfill

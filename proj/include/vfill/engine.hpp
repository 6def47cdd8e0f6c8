#pragma once

// The iterative coordinator / load protocol.
//
// Every iteration k the coordinator turns the previous tentative profiles into
// a broadcast signal g = (b + sum x) / C with C = sum c_i. Convex loads answer
// with a projected step, finite loads solve a quadratic over the convex hull
// of their admissible profiles and sample from the resulting distribution.
// The coordinator logic does not depend on the load kind.

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "vfill/core.hpp"
#include "vfill/feasible.hpp"

namespace vfill {

struct LoadSpec {
  int id = 0;
  std::variant<ConvexChargeSet, std::shared_ptr<const FinitePulseSet>> set;
  double c = 1.0;  // update weight, > 0

  /// c defaults to the load's energy request X_i.
  static LoadSpec convex(int id, ConvexChargeSet set, std::optional<double> c = std::nullopt);
  static LoadSpec finite(int id, std::shared_ptr<const FinitePulseSet> set, std::optional<double> c = std::nullopt);

  bool is_finite() const noexcept { return set.index() == 1; }
  const ConvexChargeSet& convex_set() const { return std::get<0>(set); }
  const FinitePulseSet& finite_set() const { return *std::get<1>(set); }
  double energy() const;
  const TimeGrid& grid() const;
};

enum class Termination { Tolerance, FixedPoint, MaxIter };
const char* to_string(Termination t);

struct EngineConfig {
  double epsilon = 1e-6;            // stop once ||g^(k) - g^(k-1)|| < epsilon (k >= 2)
  std::size_t max_iterations = 1000;
  std::uint64_t master_seed = 0;
  bool record_diagnostics = true;   // exact expected next objective per iteration
  bool stop_on_tolerance = true;    // the signal-difference rule; the fixed-point stop is always active
  bool record_profiles = false;     // keep every tentative profile of every iteration
  unsigned threads = 1;             // per-load updates within an iteration
  HullOptions hull;
};

/// Diagnostics for iteration k (g^(k) was computed from x^(k-1), then every
/// load produced x^(k)).
struct IterationRecord {
  std::size_t k = 0;
  Profile g;
  double prior_objective = 0.0;            // L_{k-1}
  double objective = 0.0;                  // L_k
  double escape_probability = 0.0;         // P{x^(k) != x^(k-1) | x^(k-1)}
  double expected_next_objective = std::numeric_limits<double>::quiet_NaN();  // E[L_k | x^(k-1)]
  std::size_t profiles_changed = 0;
};

struct Trajectory {
  std::vector<IterationRecord> records;
  std::vector<Profile> final_profiles;
  std::vector<std::optional<std::size_t>> final_members;  // member index per finite load
  Termination terminated_by = Termination::MaxIter;
  std::vector<std::vector<Profile>> profile_history;      // filled when record_profiles
};

/// What a load reports back after one update. Enough for the coordinator to
/// reproduce every per-iteration diagnostic without knowing the load's kind.
struct LoadStep {
  Profile x;                                 // new tentative profile
  std::optional<std::size_t> member;         // index into the finite set
  Distribution theta;                        // empty for convex loads
  double stay_probability = 0.0;             // P{x_new == x_prev}
  Profile mean;                              // E[x_new | state]
  double second_moment = 0.0;                // E||x_new||^2
};

/// g = (b + sum xs) / C.
Profile coordinator_signal(const Profile& b, std::span<const Profile> xs, double C);

/// argmin_x 2c <g, x> + ||x - x_prev||^2 over the set, i.e. project(x_prev - c g).
Profile convex_load_update(const Profile& g, const Profile& x_prev, const ConvexChargeSet& set, double c);

struct FiniteUpdate {
  Profile x_new;
  std::size_t index = 0;
  Distribution theta;
  Profile h;            // (g C - x_prev) / (C - c)
  HullResult hull;
};

/// Computes h = (g C - x_prev) / (C - c), minimizes the hull quadratic and
/// samples with the supplied uniform draw. Throws ConfigError when C <= c.
FiniteUpdate finite_load_update(const Profile& g, double C, const Profile& x_prev, const FinitePulseSet& set, double c,
                                double draw, const HullOptions& opts = {},
                                std::optional<std::size_t> prev_member = std::nullopt);

/// Hull subproblem of a finite load: h = (g C - x_prev) / (C - c), then hull_minimize.
HullResult finite_hull(const LoadSpec& load, const Profile& g, double C, const Profile& x_prev,
                       std::optional<std::size_t> prev_member, const HullOptions& opts = {});

/// Samples the finite load's next profile from a solved hull problem.
LoadStep finite_step(const LoadSpec& load, const HullResult& hull, std::optional<std::size_t> prev_member,
                     std::uint64_t master_seed, std::size_t k);

/// One protocol step for a single load; the draw is keyed by (seed, id, k).
LoadStep load_step(const LoadSpec& load, const Profile& g, double C, const Profile& x_prev,
                   std::optional<std::size_t> prev_member, std::uint64_t master_seed, std::size_t k,
                   const HullOptions& opts = {});

/// 1 - prod_i theta_i[prev_i]; loads are sampled independently.
double escape_probability(std::span<const Distribution> thetas, std::span<const std::size_t> prev_indices);

/// Exact E[L_k | x^(k-1)] for an all-finite fleet:
/// ||d + sum E dx_i||^2 + sum_i (E||dx_i||^2 - ||E dx_i||^2) with d = b + sum x_prev.
/// Every x_prev[i] must be a member of sets[i].
double expected_next_objective(const Profile& b, std::span<const Profile> xs_prev, std::span<const Distribution> thetas,
                               std::span<const FinitePulseSet* const> sets);

/// Same expectation from per-load first and second moments:
/// ||b + sum mean_i||^2 + sum_i (second_i - ||mean_i||^2).
double expected_objective_from_moments(const Profile& b, std::span<const LoadStep> steps);

/// Shared bookkeeping of the coordinator role. engine::run and the networked
/// coordinator both drive this class, which is what makes their trajectories
/// bit-identical.
class CoordinatorLoop {
 public:
  CoordinatorLoop(Profile effective_base, std::vector<double> weights, std::vector<bool> finite_kinds,
                  const EngineConfig& cfg);

  double total_weight() const noexcept { return C_; }
  std::size_t iteration() const noexcept { return k_; }
  const std::vector<Profile>& profiles() const noexcept { return xs_; }
  const std::vector<std::optional<std::size_t>>& members() const noexcept { return members_; }

  /// Advances to the next iteration and returns its broadcast signal.
  const Profile& next_signal();

  /// Absorbs the load answers for the current iteration; returns the
  /// termination reason once a stopping rule fires.
  std::optional<Termination> absorb(std::vector<LoadStep> steps);

  Trajectory finish(Termination reason) &&;

  /// Seeds the tentative profiles (default: zeros, as the algorithm prescribes).
  void set_initial(std::vector<Profile> xs, std::vector<std::optional<std::size_t>> members);

 private:
  Profile b_;
  std::vector<double> c_;
  std::vector<bool> finite_;
  EngineConfig cfg_;
  double C_ = 0.0;
  std::size_t k_ = 0;
  std::vector<Profile> xs_;
  std::vector<std::optional<std::size_t>> members_;
  double current_objective_ = 0.0;
  Profile g_;
  std::optional<Profile> g_prev_;
  Trajectory traj_;
};

/// Runs the protocol from x^(0) = 0 until a stopping rule fires. Fully
/// deterministic given (loads, b, cfg, obj).
Trajectory run(std::span<const LoadSpec> loads, const Profile& b, const EngineConfig& cfg,
               const Objective& obj = Objective::flatten());

/// As run(), but starting from the given profiles instead of zeros.
Trajectory run_from(std::span<const LoadSpec> loads, const Profile& b, const EngineConfig& cfg, const Objective& obj,
                    std::vector<Profile> initial);

/// Throws ConfigError for fleets the protocol cannot run (empty fleet,
/// c <= 0, grid mismatch, a finite load holding all of C).
void validate_fleet(std::span<const LoadSpec> loads, const Profile& b);

}  // namespace vfill

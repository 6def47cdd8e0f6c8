#pragma once

// Verification tools for finite-load outcomes: equilibrium checks, an
// exhaustive global optimum for small instances, and suboptimality bounds.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vfill/core.hpp"
#include "vfill/feasible.hpp"

namespace vfill {

struct BestResponse {
  std::size_t index = 0;
  double value = 0.0;  // <b + sum_{j != i} x_j, y_index>
};

/// argmin over members y of <b + sum_{j != i} x_j, y>, lowest index on ties.
/// With equal member norms this is the best response in the game where each
/// load minimizes <b + sum_j x_j, x_i>.
BestResponse best_response(std::size_t i, std::span<const Profile> xs, const Profile& b, const FinitePulseSet& set);

struct NashReport {
  bool is_equilibrium = true;
  double worst_violation = 0.0;  // kW^2 h
  std::optional<std::size_t> violating_load;
  double tolerance = 0.0;        // absolute threshold that was applied
  std::string summary() const;
};

/// Equilibrium iff for every i, <r_i, x_i> <= <r_i, y> + tol_abs for every
/// member y, where r_i = b + sum_{j != i} x_j and tol_abs = tol * (1 + L).
/// Throws PreconditionError naming the load when xs[i] is not a member.
NashReport is_nash(std::span<const Profile> xs, std::span<const FinitePulseSet* const> sets, const Profile& b,
                   double tol = 1e-9);

struct OptimumResult {
  std::vector<std::size_t> choice;
  double value = 0.0;
};

/// Exact minimum of ||b_eff + sum x_i||^2 over the product of the member
/// sets by enumeration. Throws OracleTooLargeError when prod m_i > cap.
OptimumResult brute_force_optimum(std::span<const FinitePulseSet* const> sets, const Profile& b,
                                  const Objective& obj = Objective::flatten(), std::uint64_t cap = 10'000'000);

struct GapCheck {
  double gap = 0.0;    // L(x_s) - L(x*)
  double bound = 0.0;  // 2 sum Y (nonnegative members) or 4 sum Y
  bool ok = false;
  OptimumResult optimum;
};

GapCheck suboptimality_gap_check(std::span<const Profile> x_s, std::span<const FinitePulseSet* const> sets,
                                 const Profile& b, const Objective& obj = Objective::flatten(),
                                 std::uint64_t cap = 10'000'000);

/// sum_i Y_i over the sets.
double total_sqnorm(std::span<const FinitePulseSet* const> sets);

struct BoundReport {
  double absolute_bound = 0.0;       // 2 sum Y
  double ratio_bound = 0.0;          // absolute_bound / optimum_lower_bound
  double optimum_lower_bound = 0.0;  // T * mean(d)^2 <= ||b + sum x*||^2
  std::string summary() const;
  static std::string csv_header();
  std::string csv_row() const;
};

/// Computable upper bound on the suboptimality ratio of any stationary
/// profile: 2 sum Y / (T mean(d)^2). The mean of d = b + sum x does not
/// depend on which members are chosen since every member carries the same
/// energy; T mean(d)^2 lower-bounds the optimal objective (Jensen).
BoundReport subopt_ratio_bound(std::span<const FinitePulseSet* const> sets, const Profile& b);

}  // namespace vfill

#pragma once

// Constraint sets for elastic loads.
//
//  * ConvexChargeSet: per-slot rate caps intersected with a fixed-energy
//    hyperplane. Loads of this kind take a projected-gradient step.
//  * FinitePulseSet: an explicit list of admissible profiles sharing energy
//    and squared norm (the EV "fixed pulse, free start" case). Loads of this
//    kind solve a quadratic over the convex hull of the members and sample.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vfill/core.hpp"

namespace vfill {

class ConvexChargeSet {
 public:
  /// caps: per-slot maximum rate (kW, zero outside the availability window);
  /// energy: required delivered energy (kWh). Throws InfeasibleError when
  /// 0 <= energy <= integral(caps) fails or a cap is negative.
  ConvexChargeSet(Profile caps, double energy);

  const Profile& caps() const noexcept { return caps_; }
  double energy() const noexcept { return energy_; }
  const TimeGrid& grid() const noexcept { return caps_.grid(); }

  /// Pointwise scaling of the set (caps and energy multiplied by s > 0).
  ConvexChargeSet scaled(double s) const;

  bool contains(const Profile& x, double tol = 1e-9) const;

 private:
  Profile caps_;
  double energy_;
};

class FinitePulseSet {
 public:
  /// Members must be nonempty, share one grid and be pairwise distinct.
  /// energy / sqnorm / rate_bound are the declared A3 / A4 / A1 constants;
  /// use validate_a1a4 to check the members against them.
  FinitePulseSet(std::vector<Profile> members, double energy, double sqnorm, double rate_bound);

  /// Declared constants taken from the first member (energy, sqnorm) and the
  /// largest absolute rate over all members.
  static FinitePulseSet from_members(std::vector<Profile> members);

  std::size_t size() const noexcept { return members_.size(); }
  const Profile& member(std::size_t k) const { return members_.at(k); }
  std::span<const Profile> members() const noexcept { return members_; }
  const TimeGrid& grid() const noexcept { return members_.front().grid(); }

  double energy() const noexcept { return energy_; }
  double sqnorm() const noexcept { return sqnorm_; }
  double rate_bound() const noexcept { return rate_bound_; }

  /// Gram matrix entry <y_j, y_k>, precomputed at construction.
  double gram(std::size_t j, std::size_t k) const { return gram_[j * members_.size() + k]; }

  bool nonnegative() const noexcept { return nonnegative_; }

  /// Index of the member equal to x (sup-norm distance <= tol), lowest index first.
  std::optional<std::size_t> find(const Profile& x, double tol = 0.0) const;

  /// 64-bit FNV-1a digest over the grid and member values.
  std::uint64_t digest() const noexcept { return digest_; }

 private:
  std::vector<Profile> members_;
  double energy_;
  double sqnorm_;
  double rate_bound_;
  std::vector<double> gram_;
  bool nonnegative_ = true;
  std::uint64_t digest_ = 0;
};

/// Probability weights over the members of a FinitePulseSet.
struct Distribution {
  std::vector<double> weights;

  static Distribution degenerate(std::size_t m, std::size_t k);
  static Distribution uniform(std::size_t m);

  std::size_t size() const noexcept { return weights.size(); }
  bool is_degenerate_at(std::size_t k) const;
  /// Number of strictly positive weights.
  std::size_t support_size() const;
};

/// Throws PreconditionError unless weights are nonnegative and sum to 1 within 1e-12.
void validate_distribution(const Distribution& d);

/// One member per start slot: `rate` on [start, start + duration) and zero elsewhere.
FinitePulseSet make_pulse_set(double rate_kw, double duration_hours,
                              std::span<const std::size_t> allowed_start_slots, const TimeGrid& grid);

/// Every slot in [first, last] inclusive.
std::vector<std::size_t> start_range(std::size_t first, std::size_t last);

struct ValidationReport {
  bool passed = true;
  double max_rate_excess = 0.0;    // A1: max(|y_t| - rate_bound, 0)
  double max_energy_error = 0.0;   // A3: max |integral(y) - energy|
  double max_sqnorm_error = 0.0;   // A4: max |norm2(y) - sqnorm|
  double max_ramp = 0.0;           // A2: max |y_{t+1} - y_t|, reported only
  std::optional<std::size_t> worst_member;
  std::string summary() const;
};

/// Checks A1, A3 and A4 on every member against tol (absolute for A1,
/// relative to the declared constant for A3 / A4). A2 is reported, not enforced.
ValidationReport validate_a1a4(const FinitePulseSet& set, double tol);

/// Euclidean projection of z onto a ConvexChargeSet:
/// x_t = clip(z_t - lambda, 0, caps_t) with the scalar dual lambda chosen so
/// that the energy constraint holds.
Profile project_convex(const Profile& z, const ConvexChargeSet& set);

struct HullOptions {
  /// Frank-Wolfe duality gap target, relative: gap <= gap_tolerance * (1 + |Q|).
  double gap_tolerance = 1e-8;
  /// A minimizer closer than this (root norm) to a member is reported as that member.
  double snap_tolerance = 1e-7;
  std::size_t max_iterations = 200000;
};

struct HullResult {
  Profile z_star;
  Distribution theta;
  double objective = 0.0;  // Q(z_star)
  double gap = 0.0;        // final duality gap
  std::size_t iterations = 0;
};

/// Minimizes Q(z) = 2 c <h, z> + ||z - x_prev||^2 over the convex hull of the
/// members and returns hull weights realizing the minimizer. When x_prev is a
/// member (prev_member may name it to skip the search), the solver starts from
/// it so Q(z_star) <= Q(x_prev) holds exactly.
HullResult hull_minimize(const Profile& h, const Profile& x_prev, double c, const FinitePulseSet& set,
                         const HullOptions& opts = {}, std::optional<std::size_t> prev_member = std::nullopt);

/// Inverse-CDF sampling in index order; u in [0, 1).
std::size_t sample(const Distribution& theta, double u);

/// theta[prev_index]; throws PreconditionError when out of range.
double stay_probability(const Distribution& theta, std::size_t prev_index);

// FinitePulseSet serialization: a CSV matrix (one row per member, one column
// per slot, header s0..s{S-1}) and a key=value sidecar (grid, energy, sqnorm,
// rate_bound, members).
void write_pulse_set(std::ostream& matrix, std::ostream& meta, const FinitePulseSet& set);
FinitePulseSet read_pulse_set(std::istream& matrix, std::istream& meta);

}  // namespace vfill

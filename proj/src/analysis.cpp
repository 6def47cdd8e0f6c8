#include "vfill/analysis.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "vfill/error.hpp"

namespace vfill {

namespace {

Profile others(std::size_t i, std::span<const Profile> xs, const Profile& b) {
  Profile r = b;
  for (std::size_t j = 0; j < xs.size(); ++j)
    if (j != i) r += xs[j];
  return r;
}

}  // namespace

BestResponse best_response(std::size_t i, std::span<const Profile> xs, const Profile& b, const FinitePulseSet& set) {
  if (i >= xs.size()) throw PreconditionError("best_response: load index out of range");
  const Profile r = others(i, xs, b);
  BestResponse best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t k = 0; k < set.size(); ++k) {
    const double v = inner(r, set.member(k));
    if (v < best.value) best = {k, v};
  }
  return best;
}

std::string NashReport::summary() const {
  std::ostringstream os;
  os << "nash=" << (is_equilibrium ? "true" : "false") << '\n'
     << "nash_worst_violation=" << format_double(worst_violation) << '\n'
     << "nash_tolerance=" << format_double(tolerance) << '\n';
  if (violating_load) os << "nash_violating_load=" << *violating_load << '\n';
  return os.str();
}

NashReport is_nash(std::span<const Profile> xs, std::span<const FinitePulseSet* const> sets, const Profile& b,
                   double tol) {
  if (xs.size() != sets.size()) throw DimensionError("is_nash: profile and set lists differ in length");
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (!sets[i]->find(xs[i], 1e-9))
      throw PreconditionError("is_nash: profile of load " + std::to_string(i) + " is not an admissible member");
  NashReport rep;
  rep.tolerance = tol * (1.0 + norm2(aggregate(b, xs)));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Profile r = others(i, xs, b);
    const double current = inner(r, xs[i]);
    const BestResponse br = best_response(i, xs, b, *sets[i]);
    const double violation = current - br.value;
    if (violation > rep.worst_violation) {
      rep.worst_violation = violation;
      rep.violating_load = i;
    }
  }
  rep.is_equilibrium = rep.worst_violation <= rep.tolerance;
  if (rep.is_equilibrium) rep.violating_load.reset();
  return rep;
}

OptimumResult brute_force_optimum(std::span<const FinitePulseSet* const> sets, const Profile& b, const Objective& obj,
                                  std::uint64_t cap) {
  const Profile base = effective_base(b, obj);
  const std::size_t n = sets.size();
  double combos = 1.0;
  for (const auto* s : sets) combos *= static_cast<double>(s->size());
  if (combos > static_cast<double>(cap))
    throw OracleTooLargeError("brute_force_optimum: " + format_double(combos) + " combinations exceed cap " +
                              std::to_string(cap));

  OptimumResult best;
  if (n == 0) return {{}, norm2(base)};
  best.value = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> choice(n, 0);
  // Partial sums: partial[i] = base + sum_{j < i} y_{choice_j}.
  std::vector<Profile> partial(n + 1, base);
  for (std::size_t i = 0; i < n; ++i) partial[i + 1] = partial[i] + sets[i]->member(0);
  for (;;) {
    const double v = norm2(partial[n]);
    if (v < best.value) {
      best.value = v;
      best.choice = choice;
    }
    // Odometer in lexicographic order, last load fastest.
    std::size_t pos = n;
    while (pos > 0) {
      --pos;
      if (++choice[pos] < sets[pos]->size()) break;
      choice[pos] = 0;
      if (pos == 0) return best;
    }
    for (std::size_t i = pos; i < n; ++i) partial[i + 1] = partial[i] + sets[i]->member(choice[i]);
  }
}

double total_sqnorm(std::span<const FinitePulseSet* const> sets) {
  double sum = 0.0;
  for (const auto* s : sets) sum += s->sqnorm();
  return sum;
}

GapCheck suboptimality_gap_check(std::span<const Profile> x_s, std::span<const FinitePulseSet* const> sets,
                                 const Profile& b, const Objective& obj, std::uint64_t cap) {
  if (x_s.size() != sets.size()) throw DimensionError("suboptimality_gap_check: list lengths differ");
  GapCheck out;
  out.optimum = brute_force_optimum(sets, b, obj, cap);
  out.gap = objective_value(b, x_s, obj) - out.optimum.value;
  bool nonneg = true;
  for (const auto* s : sets) nonneg = nonneg && s->nonnegative();
  out.bound = (nonneg ? 2.0 : 4.0) * total_sqnorm(sets);
  out.ok = out.gap <= out.bound + 1e-9;
  return out;
}

std::string BoundReport::summary() const {
  std::ostringstream os;
  os << "absolute_bound=" << format_double(absolute_bound) << '\n'
     << "optimum_lower_bound=" << format_double(optimum_lower_bound) << '\n'
     << "ratio_bound=" << format_double(ratio_bound) << '\n';
  return os.str();
}

std::string BoundReport::csv_header() { return "absolute_bound,optimum_lower_bound,ratio_bound"; }

std::string BoundReport::csv_row() const {
  return format_double(absolute_bound) + "," + format_double(optimum_lower_bound) + "," + format_double(ratio_bound);
}

BoundReport subopt_ratio_bound(std::span<const FinitePulseSet* const> sets, const Profile& b) {
  double energy = integral(b);
  for (const auto* s : sets) {
    if (!s->nonnegative()) throw PreconditionError("subopt_ratio_bound: requires nonnegative members");
    require_same_grid(b, s->member(0), "subopt_ratio_bound");
    energy += s->energy();
  }
  const double T = b.grid().horizon_hours();
  const double mean = energy / T;
  if (mean == 0.0) throw PreconditionError("subopt_ratio_bound: aggregate has zero mean, bound is undefined");
  BoundReport r;
  r.absolute_bound = 2.0 * total_sqnorm(sets);
  r.optimum_lower_bound = T * mean * mean;
  r.ratio_bound = r.absolute_bound / r.optimum_lower_bound;
  return r;
}

}  // namespace vfill

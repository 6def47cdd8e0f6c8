#include "vfill/feasible.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "vfill/error.hpp"

namespace vfill {

// ---- ConvexChargeSet ---------------------------------------------------------

ConvexChargeSet::ConvexChargeSet(Profile caps, double energy) : caps_(std::move(caps)), energy_(energy) {
  for (std::size_t t = 0; t < caps_.size(); ++t)
    if (caps_[t] < 0.0) throw InfeasibleError("convex set: negative cap at slot " + std::to_string(t));
  const double capacity = integral(caps_);
  if (!(energy_ >= 0.0) || energy_ > capacity * (1.0 + 1e-12))
    throw InfeasibleError("convex set: energy " + format_double(energy_) + " kWh outside [0, " +
                          format_double(capacity) + "]");
}

ConvexChargeSet ConvexChargeSet::scaled(double s) const {
  if (!(s > 0.0)) throw ConfigError("convex set: scale must be > 0");
  return ConvexChargeSet(s * caps_, s * energy_);
}

bool ConvexChargeSet::contains(const Profile& x, double tol) const {
  require_same_grid(x, caps_, "convex set membership");
  for (std::size_t t = 0; t < x.size(); ++t)
    if (x[t] < -tol || x[t] > caps_[t] + tol) return false;
  return std::abs(integral(x) - energy_) <= tol * (1.0 + energy_);
}

// ---- FinitePulseSet ----------------------------------------------------------

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_mix(std::uint64_t& h, std::uint64_t word) {
  for (int b = 0; b < 8; ++b) {
    h ^= (word >> (8 * b)) & 0xffU;
    h *= kFnvPrime;
  }
}

}  // namespace

FinitePulseSet::FinitePulseSet(std::vector<Profile> members, double energy, double sqnorm, double rate_bound)
    : members_(std::move(members)), energy_(energy), sqnorm_(sqnorm), rate_bound_(rate_bound) {
  if (members_.empty()) throw ConfigError("pulse set: needs at least one member");
  const std::size_t m = members_.size();
  for (std::size_t k = 1; k < m; ++k) require_same_grid(members_[0], members_[k], "pulse set");
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = j + 1; k < m; ++k)
      if (members_[j] == members_[k])
        throw ConfigError("pulse set: members " + std::to_string(j) + " and " + std::to_string(k) +
                          " are identical");

  gram_.assign(m * m, 0.0);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t k = j; k < m; ++k) gram_[j * m + k] = gram_[k * m + j] = inner(members_[j], members_[k]);

  for (const Profile& y : members_)
    for (double v : y.values())
      if (v < 0.0) nonnegative_ = false;

  digest_ = kFnvOffset;
  fnv_mix(digest_, std::bit_cast<std::uint64_t>(grid().horizon_hours()));
  fnv_mix(digest_, grid().slots());
  fnv_mix(digest_, m);
  for (const Profile& y : members_)
    for (double v : y.values()) fnv_mix(digest_, std::bit_cast<std::uint64_t>(v));
}

FinitePulseSet FinitePulseSet::from_members(std::vector<Profile> members) {
  if (members.empty()) throw ConfigError("pulse set: needs at least one member");
  double bound = 0.0;
  for (const Profile& y : members)
    for (double v : y.values()) bound = std::max(bound, std::abs(v));
  const double energy = integral(members.front());
  const double sq = norm2(members.front());
  return FinitePulseSet(std::move(members), energy, sq, bound);
}

std::optional<std::size_t> FinitePulseSet::find(const Profile& x, double tol) const {
  if (!(x.grid() == grid())) return std::nullopt;
  for (std::size_t k = 0; k < members_.size(); ++k) {
    const auto y = members_[k].values();
    bool match = true;
    for (std::size_t t = 0; t < y.size() && match; ++t) match = std::abs(y[t] - x[t]) <= tol;
    if (match) return k;
  }
  return std::nullopt;
}

// ---- Distribution ------------------------------------------------------------

Distribution Distribution::degenerate(std::size_t m, std::size_t k) {
  Distribution d;
  d.weights.assign(m, 0.0);
  d.weights.at(k) = 1.0;
  return d;
}

Distribution Distribution::uniform(std::size_t m) {
  Distribution d;
  d.weights.assign(m, 1.0 / static_cast<double>(m));
  return d;
}

bool Distribution::is_degenerate_at(std::size_t k) const {
  if (k >= weights.size() || weights[k] != 1.0) return false;
  for (std::size_t j = 0; j < weights.size(); ++j)
    if (j != k && weights[j] != 0.0) return false;
  return true;
}

std::size_t Distribution::support_size() const {
  return static_cast<std::size_t>(std::count_if(weights.begin(), weights.end(), [](double w) { return w > 0.0; }));
}

void validate_distribution(const Distribution& d) {
  if (d.weights.empty()) throw PreconditionError("distribution is empty");
  double sum = 0.0;
  for (std::size_t k = 0; k < d.weights.size(); ++k) {
    if (!(d.weights[k] >= 0.0)) throw PreconditionError("distribution weight " + std::to_string(k) + " is negative");
    sum += d.weights[k];
  }
  if (std::abs(sum - 1.0) > 1e-12) throw PreconditionError("distribution weights sum to " + format_double(sum));
}

// ---- pulse sets --------------------------------------------------------------

std::vector<std::size_t> start_range(std::size_t first, std::size_t last) {
  std::vector<std::size_t> out;
  for (std::size_t s = first; s <= last; ++s) out.push_back(s);
  return out;
}

FinitePulseSet make_pulse_set(double rate_kw, double duration_hours, std::span<const std::size_t> allowed_start_slots,
                              const TimeGrid& grid) {
  if (allowed_start_slots.empty()) throw ConfigError("pulse set: no allowed start slots");
  if (!(duration_hours > 0.0)) throw ConfigError("pulse set: duration must be > 0");
  const double exact_len = duration_hours / grid.dt();
  const auto len = static_cast<std::size_t>(std::llround(exact_len));
  if (len == 0 || std::abs(exact_len - static_cast<double>(len)) > 1e-9 * exact_len)
    throw ConfigError("pulse set: duration " + format_double(duration_hours) +
                      " h is not a whole number of slots");
  std::vector<Profile> members;
  members.reserve(allowed_start_slots.size());
  for (std::size_t i = 0; i < allowed_start_slots.size(); ++i) {
    const std::size_t start = allowed_start_slots[i];
    if (i > 0 && start <= allowed_start_slots[i - 1])
      throw ConfigError("pulse set: start slots must be strictly increasing");
    if (start + len > grid.slots())
      throw InfeasibleError("pulse set: pulse starting at slot " + std::to_string(start) + " overruns the horizon");
    Profile y(grid);
    for (std::size_t t = start; t < start + len; ++t) y[t] = rate_kw;
    members.push_back(std::move(y));
  }
  const double dur = static_cast<double>(len) * grid.dt();
  return FinitePulseSet(std::move(members), rate_kw * dur, rate_kw * rate_kw * dur, std::abs(rate_kw));
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  os << (passed ? "pass" : "fail") << " A1_excess=" << format_double(max_rate_excess)
     << " A3_error=" << format_double(max_energy_error) << " A4_error=" << format_double(max_sqnorm_error)
     << " A2_max_ramp=" << format_double(max_ramp);
  if (worst_member) os << " worst_member=" << *worst_member;
  return os.str();
}

ValidationReport validate_a1a4(const FinitePulseSet& set, double tol) {
  ValidationReport r;
  double worst = 0.0;
  for (std::size_t k = 0; k < set.size(); ++k) {
    const Profile& y = set.member(k);
    double excess = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) {
      excess = std::max(excess, std::abs(y[t]) - set.rate_bound());
      if (t + 1 < y.size()) r.max_ramp = std::max(r.max_ramp, std::abs(y[t + 1] - y[t]));
    }
    const double e_err = std::abs(integral(y) - set.energy());
    const double q_err = std::abs(norm2(y) - set.sqnorm());
    r.max_rate_excess = std::max(r.max_rate_excess, excess);
    r.max_energy_error = std::max(r.max_energy_error, e_err);
    r.max_sqnorm_error = std::max(r.max_sqnorm_error, q_err);

    const bool bad = excess > tol || e_err > tol * std::max(1.0, std::abs(set.energy())) ||
                     q_err > tol * std::max(1.0, std::abs(set.sqnorm()));
    const double score = std::max({excess, e_err, q_err});
    if (bad) {
      r.passed = false;
      if (!r.worst_member || score > worst) {
        worst = score;
        r.worst_member = k;
      }
    }
  }
  return r;
}

// ---- projection --------------------------------------------------------------

Profile project_convex(const Profile& z, const ConvexChargeSet& set) {
  require_same_grid(z, set.caps(), "project_convex");
  const auto zv = z.values();
  const auto cv = set.caps().values();
  const double dt = z.grid().dt();
  const double target = set.energy();
  const std::size_t S = zv.size();

  auto energy_at = [&](double lambda) {
    double sum = 0.0;
    for (std::size_t t = 0; t < S; ++t) sum += std::clamp(zv[t] - lambda, 0.0, cv[t]);
    return dt * sum;
  };

  // energy(lambda) is nonincreasing, >= target at lo and <= target at hi.
  double lo = *std::min_element(zv.begin(), zv.end()) - *std::max_element(cv.begin(), cv.end()) - 1.0;
  double hi = *std::max_element(zv.begin(), zv.end()) + 1.0;
  double lambda = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    lambda = 0.5 * (lo + hi);
    const double e = energy_at(lambda);
    if (std::abs(e - target) <= 1e-12 * target) break;
    if (e > target)
      lo = lambda;
    else
      hi = lambda;
    if (hi - lo <= 0.0) break;
  }

  // Closed-form polish on the active set found by bisection.
  double capped = 0.0;
  double free_sum = 0.0;
  std::size_t free_count = 0;
  for (std::size_t t = 0; t < S; ++t) {
    const double v = zv[t] - lambda;
    if (v >= cv[t])
      capped += cv[t];
    else if (v > 0.0) {
      free_sum += zv[t];
      ++free_count;
    }
  }
  if (free_count > 0) {
    const double polished = (free_sum - (target / dt - capped)) / static_cast<double>(free_count);
    if (std::abs(energy_at(polished) - target) <= std::abs(energy_at(lambda) - target)) lambda = polished;
  }

  Profile x(z.grid());
  for (std::size_t t = 0; t < S; ++t) x[t] = std::clamp(zv[t] - lambda, 0.0, cv[t]);
  return x;
}

// ---- convex-hull quadratic -----------------------------------------------------

HullResult hull_minimize(const Profile& h, const Profile& x_prev, double c, const FinitePulseSet& set,
                         const HullOptions& opts, std::optional<std::size_t> prev_member) {
  require_same_grid(h, x_prev, "hull_minimize");
  require_same_grid(h, set.member(0), "hull_minimize");
  if (!(opts.gap_tolerance > 0.0)) throw ConfigError("hull_minimize: tolerance must be > 0");
  const std::size_t m = set.size();

  // Q(theta) = theta' G theta + a' theta + ||x_prev||^2 with a_k = <y_k, 2c h - 2 x_prev>.
  Profile w = (2.0 * c) * h;
  w -= 2.0 * x_prev;
  std::vector<double> a(m);
  for (std::size_t k = 0; k < m; ++k) a[k] = inner(set.member(k), w);
  const double prev_sq = norm2(x_prev);

  if (!prev_member) prev_member = set.find(x_prev);
  std::size_t start = 0;
  if (prev_member) {
    start = *prev_member;
  } else {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k) {
      const double q = set.gram(k, k) + a[k];
      if (q < best) {
        best = q;
        start = k;
      }
    }
  }

  std::vector<double> theta(m, 0.0);
  theta[start] = 1.0;
  std::vector<double> u(m);  // G theta
  for (std::size_t k = 0; k < m; ++k) u[k] = set.gram(k, start);

  auto refresh_u = [&] {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k)
        if (theta[k] != 0.0) s += set.gram(j, k) * theta[k];
      u[j] = s;
    }
  };

  // Pairwise Frank-Wolfe with exact line search. The linear subproblem over
  // the hull is an argmin over members; ties go to the lowest index.
  std::vector<double> grad(m);
  double gap = 0.0;
  std::size_t it = 0;
  for (;; ++it) {
    double q_theta = prev_sq;
    double inner_grad = 0.0;
    std::size_t s = 0;
    for (std::size_t k = 0; k < m; ++k) {
      grad[k] = 2.0 * u[k] + a[k];
      if (grad[k] < grad[s]) s = k;
      if (theta[k] != 0.0) {
        q_theta += theta[k] * (u[k] + a[k]);
        inner_grad += theta[k] * grad[k];
      }
    }
    gap = inner_grad - grad[s];
    if (gap <= opts.gap_tolerance * (1.0 + std::abs(q_theta))) break;
    if (it >= opts.max_iterations)
      throw SolverError("hull_minimize: no convergence after " + std::to_string(it) + " iterations", gap);

    std::size_t v = m;
    for (std::size_t k = 0; k < m; ++k)
      if (theta[k] > 0.0 && (v == m || grad[k] > grad[v])) v = k;
    const double slope = grad[s] - grad[v];
    if (!(slope < 0.0)) break;  // pairwise direction exhausted at floating-point resolution
    const double curv = set.gram(s, s) - 2.0 * set.gram(s, v) + set.gram(v, v);
    const double cap = theta[v];
    double step = cap;
    if (curv > 0.0) step = std::min(cap, -slope / (2.0 * curv));
    theta[s] += step;
    if (step == cap)
      theta[v] = 0.0;
    else
      theta[v] -= step;
    for (std::size_t j = 0; j < m; ++j) u[j] += step * (set.gram(j, s) - set.gram(j, v));
    if ((it + 1) % 64 == 0) refresh_u();
  }

  // Renormalize away accumulated drift.
  double total = 0.0;
  for (double t : theta) total += t;
  for (double& t : theta) t /= total;

  Profile z(h.grid());
  for (std::size_t k = 0; k < m; ++k)
    if (theta[k] != 0.0) {
      const auto y = set.member(k).values();
      for (std::size_t t = 0; t < y.size(); ++t) z[t] += theta[k] * y[t];
    }

  HullResult res{z, Distribution{std::move(theta)}, 0.0, gap, it};
  if (res.theta.support_size() > 1) {
    std::optional<std::size_t> snap;
    double best = opts.snap_tolerance;
    for (std::size_t k = 0; k < m; ++k) {
      const double dist = norm(z - set.member(k));
      if (dist <= best) {
        best = dist;
        snap = k;
      }
    }
    if (snap) {
      res.theta = Distribution::degenerate(m, *snap);
      res.z_star = set.member(*snap);
    }
  }
  Profile diff = res.z_star - x_prev;
  res.objective = 2.0 * c * inner(h, res.z_star) + norm2(diff);
  return res;
}

std::size_t sample(const Distribution& theta, double u) {
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < theta.weights.size(); ++k) {
    if (theta.weights[k] <= 0.0) continue;
    cum += theta.weights[k];
    last_positive = k;
    if (u < cum) return k;
  }
  return last_positive;
}

double stay_probability(const Distribution& theta, std::size_t prev_index) {
  if (prev_index >= theta.weights.size())
    throw PreconditionError("stay_probability: index " + std::to_string(prev_index) + " out of range");
  return theta.weights[prev_index];
}

// ---- serialization ---------------------------------------------------------------

void write_pulse_set(std::ostream& matrix, std::ostream& meta, const FinitePulseSet& set) {
  const std::size_t S = set.grid().slots();
  for (std::size_t t = 0; t < S; ++t) matrix << (t ? "," : "") << 's' << t;
  matrix << '\n';
  for (const Profile& y : set.members()) {
    for (std::size_t t = 0; t < S; ++t) matrix << (t ? "," : "") << format_double(y[t]);
    matrix << '\n';
  }
  meta << "horizon_hours=" << format_double(set.grid().horizon_hours()) << '\n'
       << "slots=" << S << '\n'
       << "members=" << set.size() << '\n'
       << "energy=" << format_double(set.energy()) << '\n'
       << "sqnorm=" << format_double(set.sqnorm()) << '\n'
       << "rate_bound=" << format_double(set.rate_bound()) << '\n';
}

FinitePulseSet read_pulse_set(std::istream& matrix, std::istream& meta) {
  std::map<std::string, double> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(meta, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("pulse set meta line " + std::to_string(lineno) + ": expected key=value");
    auto v = parse_double(line.substr(eq + 1));
    if (!v) throw ParseError("pulse set meta line " + std::to_string(lineno) + ": bad number");
    kv[line.substr(0, eq)] = *v;
  }
  for (const char* key : {"horizon_hours", "slots", "members", "energy", "sqnorm", "rate_bound"})
    if (!kv.count(key)) throw ParseError(std::string("pulse set meta: missing key ") + key);
  const TimeGrid grid(kv["horizon_hours"], static_cast<std::size_t>(kv["slots"]));

  std::vector<Profile> members;
  lineno = 1;
  if (!std::getline(matrix, line)) throw ParseError("pulse set matrix: missing header");
  while (std::getline(matrix, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> vals;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      auto v = parse_double(cell);
      if (!v) throw ParseError("pulse set matrix line " + std::to_string(lineno) + ": bad number '" + cell + "'");
      vals.push_back(*v);
    }
    if (vals.size() != grid.slots())
      throw ParseError("pulse set matrix line " + std::to_string(lineno) + ": expected " +
                       std::to_string(grid.slots()) + " columns");
    members.emplace_back(grid, std::move(vals));
  }
  if (members.size() != static_cast<std::size_t>(kv["members"]))
    throw ParseError("pulse set matrix: member count does not match metadata");
  return FinitePulseSet(std::move(members), kv["energy"], kv["sqnorm"], kv["rate_bound"]);
}

}  // namespace vfill

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "manifest.hpp"
#include "vfill/analysis.hpp"
#include "vfill/error.hpp"
#include "vfill/netsim.hpp"
#include "vfill/wire.hpp"

namespace fs = std::filesystem;
using namespace vfill;
using cli::RunManifest;

namespace {

struct ManifestArgs {
  std::string path;
  std::map<std::string, std::string> overrides;

  RunManifest load() const {
    RunManifest m = path.empty() ? RunManifest{} : cli::read_manifest(path);
    for (const auto& [k, v] : overrides) m.set(k, v);
    return m;
  }
};

void add_manifest_options(CLI::App* app, ManifestArgs& args) {
  app->add_option("--manifest", args.path, "Manifest file (key=value lines)")->check(CLI::ExistingFile);
  for (const std::string& key : RunManifest::keys()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    app->add_option_function<std::string>(
        "--" + flag, [&args, key](const std::string& v) { args.overrides[key] = v; }, "Overrides manifest key " + key);
  }
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw ConfigError("cannot write '" + p.string() + "'");
  return os;
}

std::vector<const FinitePulseSet*> finite_sets(const CaseStudy& cs) {
  std::vector<const FinitePulseSet*> out;
  for (const LoadSpec& l : cs.loads)
    if (l.is_finite()) out.push_back(&l.finite_set());
  return out;
}

/// Copy of the manifest with file references made absolute, so the written
/// manifest.txt can be consumed from any working directory.
RunManifest portable(RunManifest m) {
  if (m.baseload != "synthetic") m.baseload = fs::absolute(m.base_dir / m.baseload).string();
  if (m.objective.rfind("track:", 0) == 0) m.objective = "track:" + fs::absolute(m.base_dir / m.objective.substr(6)).string();
  m.out = fs::absolute(m.out);
  return m;
}

void write_report(std::ostream& os, const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
}

/// Writes trajectory.csv, signals.csv, final_profiles.csv, base_load.csv,
/// manifest.txt, optionally profiles_full.csv, and report.txt. Returns the report.
std::vector<std::pair<std::string, std::string>> write_artifacts(const RunManifest& m, const CaseStudy& cs,
                                                                 const Objective& obj,
                                                                 const std::optional<Trajectory>& traj) {
  fs::create_directories(m.out);
  {
    auto os = open_out(m.out / "manifest.txt");
    portable(m).write(os);
  }
  {
    auto os = open_out(m.out / "base_load.csv");
    write_profile_csv(os, cs.base);
  }
  if (m.emit_trajectory) {
    auto tr = open_out(m.out / "trajectory.csv");
    auto sg = open_out(m.out / "signals.csv");
    tr << "k,objective,prior_objective,escape_probability,expected_next_objective,profiles_changed,g_ref\n";
    sg << "k,slot,g\n";
    if (traj)
      for (const IterationRecord& r : traj->records) {
        tr << r.k << ',' << format_double(r.objective) << ',' << format_double(r.prior_objective) << ','
           << format_double(r.escape_probability) << ',' << format_double(r.expected_next_objective) << ','
           << r.profiles_changed << ",signals.csv#k=" << r.k << '\n';
        for (std::size_t t = 0; t < r.g.size(); ++t) sg << r.k << ',' << t << ',' << format_double(r.g[t]) << '\n';
      }
  }
  {
    auto os = open_out(m.out / "final_profiles.csv");
    os << "load,slot,value_kw\n";
    if (traj)
      for (std::size_t i = 0; i < cs.loads.size(); ++i)
        for (std::size_t t = 0; t < cs.grid.slots(); ++t)
          os << cs.loads[i].id << ',' << t << ',' << format_double(traj->final_profiles[i][t]) << '\n';
  }
  if (m.emit_profiles && traj) {
    auto os = open_out(m.out / "profiles_full.csv");
    os << "k,load,slot,value_kw\n";
    for (std::size_t k = 0; k < traj->profile_history.size(); ++k)
      for (std::size_t i = 0; i < cs.loads.size(); ++i)
        for (std::size_t t = 0; t < cs.grid.slots(); ++t)
          os << k + 1 << ',' << cs.loads[i].id << ',' << t << ',' << format_double(traj->profile_history[k][i][t])
             << '\n';
  }

  const std::vector<Profile> finals = traj ? traj->final_profiles : std::vector<Profile>{};
  const Profile d = aggregate(effective_base(cs.base, obj), finals);
  std::vector<std::pair<std::string, std::string>> kv = {
      {"households", std::to_string(m.fleet.households)},
      {"penetration", format_double(m.fleet.penetration)},
      {"loads", std::to_string(cs.loads.size())},
      {"seed", std::to_string(m.seed)},
      {"iterations", std::to_string(traj ? traj->records.size() : 0)},
      {"termination", traj ? to_string(traj->terminated_by) : "no-loads"},
      {"objective", format_double(objective_value(cs.base, finals, obj))},
      {"base_objective", format_double(norm2(effective_base(cs.base, obj)))},
      {"variance", format_double(variance(d))},
      {"final_escape_probability",
       format_double(traj && !traj->records.empty() ? traj->records.back().escape_probability : 0.0)},
  };
  try {
    const auto sets = finite_sets(cs);
    const BoundReport br = subopt_ratio_bound(sets, effective_base(cs.base, obj));
    kv.emplace_back("absolute_bound", format_double(br.absolute_bound));
    kv.emplace_back("optimum_lower_bound", format_double(br.optimum_lower_bound));
    kv.emplace_back("ratio_bound", format_double(br.ratio_bound));
  } catch (const PreconditionError& e) {
    kv.emplace_back("ratio_bound", "n/a");
  }
  if (m.emit_report) {
    auto os = open_out(m.out / "report.txt");
    write_report(os, kv);
  }
  return kv;
}

int cmd_run(const ManifestArgs& args) {
  const RunManifest m = args.load();
  const CaseStudy cs = m.build();
  const Objective obj = m.build_objective(cs.grid);
  std::optional<Trajectory> traj;
  if (!cs.loads.empty()) traj = run(cs.loads, cs.base, m.engine(), obj);
  const auto kv = write_artifacts(m, cs, obj, traj);
  write_report(std::cout, kv);
  return 0;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto v = parse_double(tok);
    if (!v) throw ConfigError("bad number '" + tok + "' in list '" + s + "'");
    out.push_back(*v);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

int cmd_experiment(const std::string& name, const ManifestArgs& args, std::size_t seeds, const std::string& pens) {
  RunManifest base = args.load();
  const std::vector<double> levels = parse_list(pens);
  fs::create_directories(base.out);
  const double hh = static_cast<double>(base.fleet.households);

  if (name == "bound-sweep") {
    auto os = open_out(base.out / "bound_sweep.csv");
    os << "penetration,households,ev_count," << BoundReport::csv_header() << '\n';
    for (double p : levels) {
      RunManifest m = base;
      m.fleet.penetration = p;
      const CaseStudy cs = m.build();
      const BoundReport br = subopt_ratio_bound(finite_sets(cs), effective_base(cs.base, m.build_objective(cs.grid)));
      os << format_double(p) << ',' << m.fleet.households << ',' << cs.loads.size() << ',' << br.csv_row() << '\n';
      std::cout << "penetration=" << format_double(p) << " ratio_bound=" << format_double(br.ratio_bound) << '\n';
    }
    return 0;
  }
  if (name != "escape-sweep" && name != "profile-sweep") throw ConfigError("unknown experiment '" + name + "'");

  std::ofstream os;
  if (name == "escape-sweep") {
    os = open_out(base.out / "escape_sweep.csv");
    os << "penetration,households,k,mean_escape_probability,seeds\n";
  } else {
    os = open_out(base.out / "profile_sweep.csv");
    os << "penetration,households,slot,base_kw_per_household,mean_aggregate_kw_per_household,seeds\n";
  }
  for (double p : levels) {
    RunManifest m = base;
    m.fleet.penetration = p;
    const CaseStudy cs = m.build();
    const Objective obj = m.build_objective(cs.grid);
    std::vector<double> escape(m.iterations, 0.0);
    Profile mean_agg(cs.grid);
    for (std::size_t s = 0; s < seeds; ++s) {
      m.seed = base.seed + s;
      if (cs.loads.empty()) {
        mean_agg += cs.base;
        continue;
      }
      // An early fixed point leaves the remaining escape probabilities at 0.
      const Trajectory tr = run(cs.loads, cs.base, m.engine(), obj);
      for (const IterationRecord& r : tr.records) escape[r.k - 1] += r.escape_probability;
      mean_agg += aggregate(cs.base, tr.final_profiles);
    }
    const double inv = 1.0 / static_cast<double>(seeds);
    if (name == "escape-sweep") {
      for (std::size_t k = 0; k < escape.size(); ++k)
        os << format_double(p) << ',' << m.fleet.households << ',' << k + 1 << ',' << format_double(escape[k] * inv)
           << ',' << seeds << '\n';
      std::cout << "penetration=" << format_double(p) << " escape_at_last=" << format_double(escape.back() * inv) << '\n';
    } else {
      for (std::size_t t = 0; t < cs.grid.slots(); ++t)
        os << format_double(p) << ',' << m.fleet.households << ',' << t << ',' << format_double(cs.base[t] / hh) << ','
           << format_double(mean_agg[t] * inv / hh) << ',' << seeds << '\n';
      std::cout << "penetration=" << format_double(p) << " done\n";
    }
  }
  return 0;
}

std::map<int, std::vector<double>> read_final_profiles(const fs::path& path, std::size_t slots) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open profiles '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "load,slot,value_kw")
    throw ParseError(path.string() + " line 1: expected header 'load,slot,value_kw'");
  std::map<int, std::vector<double>> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c);
    const auto id = parse_double(a);
    const auto slot = parse_double(b);
    const auto v = parse_double(c);
    if (!id || !slot || !v || *slot < 0 || *slot >= static_cast<double>(slots))
      throw ParseError(path.string() + " line " + std::to_string(lineno) + ": malformed row '" + line + "'");
    auto& vec = out[static_cast<int>(*id)];
    vec.resize(slots, std::nan(""));
    vec[static_cast<std::size_t>(*slot)] = *v;
  }
  return out;
}

int cmd_analyze(const std::string& profiles, const ManifestArgs& args, const std::string& checks, double tol,
                std::uint64_t cap) {
  const RunManifest m = args.load();
  const CaseStudy cs = m.build();
  const Objective obj = m.build_objective(cs.grid);
  const Profile b = effective_base(cs.base, obj);
  const auto rows = read_final_profiles(profiles, cs.grid.slots());

  std::vector<Profile> xs;
  std::vector<const FinitePulseSet*> sets;
  bool ok = true;
  for (const LoadSpec& l : cs.loads) {
    const auto it = rows.find(l.id);
    if (it == rows.end()) {
      std::cout << "membership: load " << l.id << " missing from " << profiles << '\n';
      ok = false;
      continue;
    }
    for (double v : it->second)
      if (std::isnan(v)) throw ParseError("load " + std::to_string(l.id) + ": incomplete profile in " + profiles);
    Profile x(cs.grid, it->second);
    if (!l.is_finite()) throw ConfigError("analyze: load " + std::to_string(l.id) + " is not a finite load");
    if (!l.finite_set().find(x, 1e-9)) {
      std::cout << "membership: load " << l.id << " profile is not an admissible member\n";
      ok = false;
    }
    xs.push_back(std::move(x));
    sets.push_back(&l.finite_set());
  }
  if (rows.size() > cs.loads.size()) {
    std::cout << "membership: profile file lists " << rows.size() << " loads, scenario has " << cs.loads.size() << '\n';
    ok = false;
  }
  if (!ok) return 1;

  std::stringstream want(checks);
  std::string check;
  while (std::getline(want, check, ',')) {
    if (check == "nash") {
      const NashReport r = is_nash(xs, sets, b, tol);
      std::cout << r.summary();
      ok = ok && r.is_equilibrium;
    } else if (check == "gap") {
      try {
        const GapCheck g = suboptimality_gap_check(xs, sets, cs.base, obj, cap);
        std::cout << "gap=" << format_double(g.gap) << " gap_bound=" << format_double(g.bound)
                  << " gap_ok=" << (g.ok ? "true" : "false") << " optimum=" << format_double(g.optimum.value) << '\n';
        ok = ok && g.ok;
      } catch (const OracleTooLargeError& e) {
        std::cout << "gap=skipped (" << e.what() << ")\n";
      }
    } else if (check == "bound") {
      std::cout << subopt_ratio_bound(sets, b).summary();
    } else if (!check.empty()) {
      throw ConfigError("unknown check '" + check + "' (expected nash, gap or bound)");
    }
  }
  return ok ? 0 : 1;
}

int cmd_coordinator(const ManifestArgs& args, const std::string& listen, const std::string& port_file, int timeout_ms,
                    bool verbose) {
  const RunManifest m = args.load();
  const CaseStudy cs = m.build();
  const Objective obj = m.build_objective(cs.grid);
  if (cs.loads.empty()) throw ConfigError("coordinator: the scenario has no loads");
  validate_fleet(cs.loads, cs.base);
  net::CoordinatorOptions opts;
  opts.timeout = std::chrono::milliseconds(timeout_ms);
  opts.on_listening = [&](std::uint16_t port) {
    std::cerr << "listening on port " << port << std::endl;
    if (!port_file.empty()) {
      const fs::path tmp = port_file + ".tmp";
      {
        auto os = open_out(tmp);
        os << port << '\n';
      }
      fs::rename(tmp, port_file);
    }
  };
  if (verbose) opts.on_event = [](const std::string& e) { std::cerr << e << '\n'; };
  const Trajectory traj =
      net::serve_coordinator(cs.base, net::make_roster(cs.loads), m.engine(), net::Endpoint::parse(listen), opts, obj);
  write_report(std::cout, write_artifacts(m, cs, obj, traj));
  return 0;
}

int cmd_agent(const ManifestArgs& args, const std::string& connect, const std::vector<int>& ids, int timeout_ms) {
  const RunManifest m = args.load();
  const CaseStudy cs = m.build();
  const net::Endpoint ep = net::Endpoint::parse(connect);
  net::AgentOptions opts;
  opts.timeout = std::chrono::milliseconds(timeout_ms);
  std::vector<const LoadSpec*> mine;
  for (int id : ids) {
    const auto it = std::find_if(cs.loads.begin(), cs.loads.end(), [id](const LoadSpec& l) { return l.id == id; });
    if (it == cs.loads.end()) throw ConfigError("agent: load id " + std::to_string(id) + " is not in the scenario");
    mine.push_back(&*it);
  }
  std::vector<net::AgentResult> results(mine.size());
  std::vector<std::exception_ptr> errors(mine.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < mine.size(); ++i)
      pool.emplace_back([&, i] {
        try {
          results[i] = net::run_agent(*mine[i], m.seed, ep, opts);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
  }
  int status = 0;
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    std::cout << "load=" << mine[i]->id << " stop_reason=" << results[i].stop_reason
              << " updates_sent=" << results[i].updates_sent << " status=" << results[i].status << '\n';
    status = std::max(status, results[i].status);
  }
  return status;
}

int cmd_fleet_gen(const ManifestArgs& args, bool with_sets) {
  const RunManifest m = args.load();
  const CaseStudy cs = m.build();
  fs::create_directories(m.out);
  {
    auto os = open_out(m.out / "fleet.csv");
    write_fleet_manifest(os, cs);
  }
  {
    auto os = open_out(m.out / "base_load.csv");
    write_profile_csv(os, cs.base);
  }
  {
    auto os = open_out(m.out / "manifest.txt");
    portable(m).write(os);
  }
  if (with_sets) {
    fs::create_directories(m.out / "sets");
    std::map<const FinitePulseSet*, int> written;
    for (const LoadSpec& l : cs.loads) {
      if (written.count(&l.finite_set())) continue;
      written[&l.finite_set()] = l.id;
      auto mat = open_out(m.out / "sets" / ("set_" + std::to_string(l.id) + ".csv"));
      auto meta = open_out(m.out / "sets" / ("set_" + std::to_string(l.id) + ".meta"));
      write_pulse_set(mat, meta, l.finite_set());
    }
  }
  std::cout << "loads=" << cs.loads.size() << " out=" << m.out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vfill: randomized distributed valley filling for loads with finite admissible profiles"};
  app.require_subcommand(1);

  ManifestArgs run_args, exp_args, an_args, co_args, ag_args, fg_args;

  auto* run_cmd = app.add_subcommand("run", "Run the protocol on a scenario and write artifacts");
  add_manifest_options(run_cmd, run_args);

  std::string exp_name;
  std::size_t seeds = 10;
  std::string pens = "0.2,0.5,1.0";
  auto* exp_cmd = app.add_subcommand("experiment", "Case-study sweeps: escape-sweep, profile-sweep, bound-sweep");
  exp_cmd->add_option("name", exp_name, "Experiment name")->required();
  exp_cmd->add_option("--seeds", seeds, "Seeds per penetration level (seed, seed+1, ...)");
  exp_cmd->add_option("--penetrations", pens, "Comma-separated penetration levels");
  add_manifest_options(exp_cmd, exp_args);

  std::string profiles, checks = "nash,gap,bound";
  double tol = 1e-9;
  std::uint64_t cap = 10'000'000;
  auto* an_cmd = app.add_subcommand("analyze", "Check a final profile file: membership, Nash, gap, bound");
  an_cmd->add_option("--profiles", profiles, "final_profiles.csv from run")->required()->check(CLI::ExistingFile);
  an_cmd->add_option("--checks", checks, "Comma-separated subset of nash,gap,bound");
  an_cmd->add_option("--tol", tol, "Relative tolerance of the Nash check");
  an_cmd->add_option("--gap-cap", cap, "Largest number of joint choices to enumerate");
  add_manifest_options(an_cmd, an_args);

  std::string listen = "127.0.0.1:0", port_file;
  int co_timeout = 30000;
  bool verbose = false;
  auto* co_cmd = app.add_subcommand("coordinator", "Serve the coordinator role over TCP");
  co_cmd->add_option("--listen", listen, "host:port to bind (port 0 picks one)");
  co_cmd->add_option("--port-file", port_file, "Write the bound port to this file");
  co_cmd->add_option("--timeout-ms", co_timeout, "Per-wait timeout for agents");
  co_cmd->add_flag("--verbose", verbose, "Log protocol events to stderr");
  add_manifest_options(co_cmd, co_args);

  std::string connect;
  std::vector<int> ids;
  int ag_timeout = 30000;
  auto* ag_cmd = app.add_subcommand("agent", "Run one or more load agents against a coordinator");
  ag_cmd->add_option("--connect", connect, "Coordinator host:port")->required();
  ag_cmd->add_option("--load-id", ids, "Load ids to serve (repeatable)")->required();
  ag_cmd->add_option("--timeout-ms", ag_timeout, "Timeout waiting for the coordinator");
  add_manifest_options(ag_cmd, ag_args);

  bool with_sets = false;
  auto* fg_cmd = app.add_subcommand("fleet-gen", "Write the fleet manifest and base load of a scenario");
  fg_cmd->add_flag("--with-sets", with_sets, "Also write each distinct pulse set");
  add_manifest_options(fg_cmd, fg_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return cmd_run(run_args);
    if (*exp_cmd) return cmd_experiment(exp_name, exp_args, seeds, pens);
    if (*an_cmd) return cmd_analyze(profiles, an_args, checks, tol, cap);
    if (*co_cmd) return cmd_coordinator(co_args, listen, port_file, co_timeout, verbose);
    if (*ag_cmd) return cmd_agent(ag_args, connect, ids, ag_timeout);
    if (*fg_cmd) return cmd_fleet_gen(fg_args, with_sets);
  } catch (const SessionError& e) {
    std::cerr << "error[session:" << e.reason << "]: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error[" << e.category() << "]: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 2;
  }
  return 2;
}

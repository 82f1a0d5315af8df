// ecocal: simulate, learn, calibrate and serve box-ecosystem models.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "ecocal/ecocal.hpp"

namespace fs = std::filesystem;
using namespace ecocal;

namespace {

std::atomic<bool> g_abort{false};

extern "C" void on_interrupt(int) { g_abort.store(true); }

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitIncomplete = 2;
constexpr int kExitAborted = 130;

/// Everything a command may need. Filled from an optional manifest, then from flags.
struct Settings {
  std::optional<std::string> model;
  std::optional<std::string> obs;
  std::optional<std::string> knowledge_dir;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<double> dt;
  std::optional<double> horizon;
  std::optional<int> sweep_samples;
  std::optional<double> lof_goal;
  std::optional<int> max_rounds;
  std::optional<std::uint64_t> budget;
  std::optional<std::string> baseline;
  std::optional<int> seeds;
  std::optional<std::string> listen;
  std::vector<std::string> targets;
  std::vector<std::string> sets;
  bool discover = false;

  // sensitivity plan
  std::optional<int> samples;
  std::optional<int> window;
  std::optional<double> tolerance;
  std::optional<int> cap;

  // generate
  std::optional<int> obs_samples;
  std::optional<double> noise;

  // report
  std::optional<std::string> result;
};

template <typename T>
void take(std::optional<T>& dst, const std::optional<T>& src) {
  if (src) dst = src;
}

void merge(Settings& base, const Settings& flags) {
  take(base.model, flags.model);
  take(base.obs, flags.obs);
  take(base.knowledge_dir, flags.knowledge_dir);
  take(base.out, flags.out);
  take(base.seed, flags.seed);
  take(base.dt, flags.dt);
  take(base.horizon, flags.horizon);
  take(base.sweep_samples, flags.sweep_samples);
  take(base.lof_goal, flags.lof_goal);
  take(base.max_rounds, flags.max_rounds);
  take(base.budget, flags.budget);
  take(base.baseline, flags.baseline);
  take(base.seeds, flags.seeds);
  take(base.listen, flags.listen);
  take(base.samples, flags.samples);
  take(base.window, flags.window);
  take(base.tolerance, flags.tolerance);
  take(base.cap, flags.cap);
  take(base.obs_samples, flags.obs_samples);
  take(base.noise, flags.noise);
  take(base.result, flags.result);
  if (!flags.targets.empty()) base.targets = flags.targets;
  base.sets.insert(base.sets.end(), flags.sets.begin(), flags.sets.end());
  base.discover = base.discover || flags.discover;
}

/// Manifest: `key = value` lines, `#` comments. Relative paths resolve against the manifest's directory.
Settings load_manifest(const fs::path& path) {
  Settings s;
  const auto dir = path.parent_path();
  auto rel = [&](std::string_view v) { return (dir / std::string(v)).lexically_normal().string(); };
  std::vector<FileError::Violation> bad;
  std::size_t ln = 0;
  for (const auto& raw : text::lines(text::read_file(path))) {
    ++ln;
    std::string_view line = raw;
    if (auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
    line = text::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      bad.push_back({ln, "expected key = value"});
      continue;
    }
    const auto key = std::string(text::trim(line.substr(0, eq)));
    const auto val = text::trim(line.substr(eq + 1));
    auto num = [&]() -> std::optional<double> {
      auto v = text::parse_double(val);
      if (!v) bad.push_back({ln, "bad number for " + key});
      return v;
    };
    auto integer = [&]() -> std::optional<std::int64_t> {
      auto v = text::parse_int<std::int64_t>(val);
      if (!v || *v < 0) bad.push_back({ln, "bad integer for " + key});
      return v;
    };
    if (key == "model") s.model = rel(val);
    else if (key == "obs") s.obs = rel(val);
    else if (key == "knowledge_dir") s.knowledge_dir = rel(val);
    else if (key == "out") s.out = rel(val);
    else if (key == "seed") { if (auto v = integer()) s.seed = static_cast<std::uint64_t>(*v); }
    else if (key == "dt") s.dt = num();
    else if (key == "horizon") s.horizon = num();
    else if (key == "sweep_samples") { if (auto v = integer()) s.sweep_samples = static_cast<int>(*v); }
    else if (key == "lof_goal") s.lof_goal = num();
    else if (key == "max_rounds") { if (auto v = integer()) s.max_rounds = static_cast<int>(*v); }
    else if (key == "budget") { if (auto v = integer()) s.budget = static_cast<std::uint64_t>(*v); }
    else if (key == "baseline") s.baseline = std::string(val);
    else if (key == "seeds") { if (auto v = integer()) s.seeds = static_cast<int>(*v); }
    else if (key == "targets") {
      for (auto t : text::split(val, ',')) if (!text::trim(t).empty()) s.targets.emplace_back(text::trim(t));
    } else if (key == "set") s.sets.emplace_back(val);
    else if (key == "discover") s.discover = val == "true" || val == "1" || val == "yes";
    else bad.push_back({ln, "unknown key " + key});
  }
  if (!bad.empty()) throw FileError(Errc::InvalidSpec, std::move(bad));
  return s;
}

void require_file(const std::optional<std::string>& path, std::string_view what) {
  if (!path) throw Error(Errc::InvalidSpec, "missing --" + std::string(what));
  if (!fs::exists(*path)) throw Error(Errc::StorageFailure, std::string(what) + " file not found: " + *path);
}

VarId parse_var(std::string_view s) {
  auto p = text::split_dotted(s);
  if (!p) throw Error(Errc::InvalidSpec, "expected Class.variable, got '" + std::string(s) + "'");
  return VarId{{p->first, p->second}};
}

struct Loaded {
  ModelDatabase db;
  Model model;
};

Loaded load_model(const Settings& s, const BehaviorCatalog& catalog) {
  require_file(s.model, "model");
  Loaded l{load_model_db(*s.model, catalog), {}};
  for (const auto& w : l.db.warnings) spdlog::warn("{}", w);
  if (s.dt || s.horizon) {
    SimClock c = l.db.clock;
    if (s.dt) c.dt = *s.dt;
    if (s.horizon) c.horizon = *s.horizon;
    c.validate();
    l.db.clock = c;
  }
  l.model = instantiate(l.db, catalog);
  for (const auto& assignment : s.sets) {
    auto eq = assignment.find('=');
    auto v = eq == std::string::npos ? std::nullopt : text::parse_double(std::string_view(assignment).substr(eq + 1));
    if (!v) throw Error(Errc::InvalidSpec, "expected --set Class.param=value, got '" + assignment + "'");
    auto p = parse_var(std::string_view(assignment).substr(0, eq));
    l.model.set_parameter(ParamId{{p.cls, p.name}}, *v);
  }
  return l;
}

PerturbationPlan plan_from(const Settings& s) {
  PerturbationPlan p;
  if (s.samples) p.samples_per_range = *s.samples;
  if (s.window) p.steady_window = *s.window;
  if (s.tolerance) p.steady_tolerance = *s.tolerance;
  if (s.cap) p.horizon_cap = *s.cap;
  p.validate();
  return p;
}

fs::path knowledge_dir(const Settings& s) { return s.knowledge_dir.value_or("knowledge"); }
fs::path relationships_path(const Settings& s) { return knowledge_dir(s) / "relationships.txt"; }
fs::path sensitivity_path(const Settings& s) { return knowledge_dir(s) / "sensitivity.txt"; }

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Timestamps live in a sidecar so the primary outputs stay byte-identical across reruns.
void write_meta(const fs::path& dir, std::string_view command, const std::string& started) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["started"] = started;
  j["finished"] = utc_now();
  text::write_file(dir / "meta.json", j.dump(2) + "\n");
}

void print_matrix(const RelationshipMatrix& m) {
  std::cout << "relationships (row influences column)\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::cout << "  " << m.classes[i].name << ":";
    for (std::size_t j = 0; j < m.size(); ++j)
      if (m.cells[i][j] == Relation::Influences) std::cout << " " << m.classes[j].name;
    std::cout << "\n";
  }
}

RelationshipMatrix run_discover(const Loaded& l) {
  const auto clock = training_clock(l.db.clock, l.db.forcing_period);
  spdlog::info("[Discover] training run of {} steps", clock.steps());
  auto m = discover(l.model, clock);
  if (auto st = staleness(m, l.model); !st.empty())
    for (const auto& s : st) spdlog::warn("stale relationships: {}", s);
  return m;
}

SensitivityTables run_sensitivity(const Loaded& l, const RelationshipMatrix& rel, const PerturbationPlan& plan) {
  spdlog::info("[Sensitivity] {} classes, {} samples per range, {} steps per run", l.model.class_count(),
               plan.samples_per_range, plan.horizon_cap);
  SensitivityTables t;
  std::size_t done = 0;
  for (const auto& c : l.model.classes()) {
    t.intra.push_back(intra_sensitivity(l.model, c.code, plan));
    spdlog::info("[Sensitivity] intra {} ({}/{})", c.name, ++done, l.model.class_count());
  }
  t.inter = inter_sensitivity(l.model, rel, plan);
  spdlog::info("[Sensitivity] inter: {} entries, {} sources skipped", t.inter.entries.size(), t.inter.skipped.size());
  for (const auto& m : t.intra)
    for (const auto& n : m.notes) spdlog::warn("{}: {}", m.class_name, n);
  for (const auto& n : t.inter.notes) spdlog::warn("inter: {}", n);
  return t;
}

// ---- commands ----

int cmd_simulate(const Settings& s) {
  const auto catalog = BehaviorCatalog::with_fixtures();
  auto l = load_model(s, catalog);
  const fs::path out = s.out.value_or("out");
  const auto started = utc_now();
  auto traj = l.model.run(l.db.clock);
  for (std::size_t k = 0; k < traj.keys.size(); ++k) {
    std::string body = "time,value\n";
    for (std::size_t i = 0; i < traj.size(); ++i)
      body += text::format_double(traj.time_at(i)) + "," + text::format_double(traj.series[k][i]) + "\n";
    text::write_file(out / (traj.keys[k].cls + "." + traj.keys[k].var + ".csv"), body);
  }
  write_meta(out, "simulate", started);
  std::cout << "simulated " << traj.size() - 1 << " steps; " << traj.keys.size() << " series written to "
            << out.string() << "\n";
  for (std::size_t k = 0; k < traj.keys.size(); ++k)
    std::cout << "  " << traj.keys[k].cls << "." << traj.keys[k].var << " final "
              << text::format_double(traj.series[k].back()) << "\n";
  return kExitOk;
}

int cmd_discover(const Settings& s) {
  const auto catalog = BehaviorCatalog::with_fixtures();
  auto l = load_model(s, catalog);
  auto m = run_discover(l);
  save_matrix(m, relationships_path(s));
  print_matrix(m);
  std::cout << "wrote " << relationships_path(s).string() << "\n";
  return kExitOk;
}

int cmd_sensitivity(const Settings& s) {
  const auto catalog = BehaviorCatalog::with_fixtures();
  auto l = load_model(s, catalog);
  const auto plan = plan_from(s);
  RelationshipMatrix rel;
  if (fs::exists(relationships_path(s))) {
    rel = load_matrix(relationships_path(s));
    for (const auto& st : staleness(rel, l.model)) spdlog::warn("stale relationships: {}", st);
  } else if (s.discover) {
    rel = run_discover(l);
    save_matrix(rel, relationships_path(s));
  } else {
    throw Error(Errc::MissingRelationships,
                relationships_path(s).string() + " not found; run `ecocal discover` or pass --discover");
  }
  auto t = run_sensitivity(l, rel, plan);
  save_sensitivities(t, sensitivity_path(s));
  for (const auto& m : t.intra) {
    if (m.cols.empty()) continue;
    std::cout << "intra " << m.class_name << "\n";
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
      std::cout << "  " << m.rows[i] << ":";
      for (std::size_t j = 0; j < m.cols.size(); ++j)
        std::cout << " " << m.cols[j] << "=" << text::format_double(m.cells[i][j]);
      std::cout << "\n";
    }
  }
  std::cout << "inter\n";
  for (const auto& e : t.inter.entries)
    std::cout << "  " << e.source.str() << " -> " << e.target.str() << " " << text::format_double(e.value) << "\n";
  std::cout << "wrote " << sensitivity_path(s).string() << "\n";
  return kExitOk;
}

KnowledgeBundle obtain_knowledge(const Settings& s, const Loaded& l) {
  KnowledgeBundle b;
  const bool have = fs::exists(relationships_path(s)) && fs::exists(sensitivity_path(s));
  if (have) {
    b.relationships = load_matrix(relationships_path(s));
    b.sensitivity = load_sensitivities(sensitivity_path(s));
    return b;
  }
  if (!s.discover)
    throw Error(Errc::MissingKnowledge, "knowledge files not found in " + knowledge_dir(s).string() +
                                            "; run discover and sensitivity first or pass --discover");
  b.relationships = run_discover(l);
  b.sensitivity = run_sensitivity(l, b.relationships, plan_from(s));
  save_matrix(b.relationships, relationships_path(s));
  save_sensitivities(b.sensitivity, sensitivity_path(s));
  return b;
}

std::uint64_t median(std::vector<std::uint64_t> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

int cmd_calibrate(const Settings& s) {
  const auto catalog = BehaviorCatalog::with_fixtures();
  require_file(s.model, "model");
  require_file(s.obs, "obs");
  auto l = load_model(s, catalog);
  const auto obs = load_observations(*s.obs);
  const auto bundle = obtain_knowledge(s, l);
  std::vector<VarId> targets;
  for (const auto& t : s.targets) targets.push_back(parse_var(t));
  if (targets.empty())
    for (const auto& v : obs.variables()) targets.push_back(v);

  AgentConfig cfg;
  if (s.sweep_samples) cfg.sweep_samples = *s.sweep_samples;
  if (s.lof_goal) cfg.lof_goal = *s.lof_goal;
  if (s.max_rounds) cfg.max_rounds = *s.max_rounds;
  if (s.baseline != "random" && s.budget) cfg.run_budget = *s.budget;
  cfg.validate();
  if (s.baseline && *s.baseline != "random") throw Error(Errc::InvalidSpec, "--baseline accepts only 'random'");

  const fs::path out = s.out.value_or("out");
  const auto started = utc_now();
  const auto start_params = l.model.parameters();
  auto result = calibrate(l.model, obs, targets, bundle, cfg, &g_abort, [](const Progress& p) {
    spdlog::info("[{}] runs={} {}", p.phase, p.runs, p.detail);
  });
  text::write_file(out / "report.txt", text_report(result));
  text::write_file(out / "report.json", to_json(result).dump(2) + "\n");

  std::cout << "stop_reason " << stop_reason_name(result.stop_reason) << "\n";
  std::cout << "total_runs " << result.total_runs << "\n";
  if (result.initial_report)
    std::cout << "initial_lof " << text::format_double(result.initial_report->aggregate_lof) << "\n";
  std::cout << "final_lof " << text::format_double(result.final_report.aggregate_lof) << "\n";

  if (s.baseline == "random" && result.stop_reason != StopReason::UserAbort) {
    const std::uint64_t budget = s.budget.value_or(500);
    const int seeds = s.seeds.value_or(11);
    const std::uint64_t seed0 = s.seed.value_or(0);
    const double goal = result.final_report.aggregate_lof;
    std::vector<std::uint64_t> reach;
    std::string table = "seed,best_lof,runs_to_reach\n";
    for (int i = 0; i < seeds && !g_abort; ++i) {
      Model m = instantiate(l.db, catalog);
      m.set_parameters(start_params);
      auto r = random_search(m, obs, targets, budget, seed0 + static_cast<std::uint64_t>(i), {}, &g_abort);
      auto k = runs_to_reach(r, goal);
      reach.push_back(k.value_or(budget + 1));
      table += std::to_string(seed0 + static_cast<std::uint64_t>(i)) + "," +
               text::format_double(r.final_report.aggregate_lof) + "," +
               (k ? std::to_string(*k) : ">" + std::to_string(budget)) + "\n";
      spdlog::info("[Baseline] seed {} ({}/{}) best {}", seed0 + static_cast<std::uint64_t>(i), i + 1, seeds,
                   r.final_report.aggregate_lof);
    }
    if (!reach.empty()) {
      const auto med = median(reach);
      const double ratio = static_cast<double>(med) / static_cast<double>(result.total_runs);
      table += "median," + std::string(med > budget ? ">" + std::to_string(budget) : std::to_string(med)) + "\n";
      table += "agent_runs," + std::to_string(result.total_runs) + "\n";
      table += "ratio," + text::format_double(ratio) + "\n";
      text::write_file(out / "baseline.csv", table);
      std::cout << "\nmethod          runs   lof\n";
      std::cout << "agent           " << result.total_runs << "   " << text::format_double(goal) << "\n";
      std::cout << "random(median)  " << (med > budget ? ">" + std::to_string(budget) : std::to_string(med))
                << "   (to reach the agent's lof, " << seeds << " seeds, budget " << budget << ")\n";
      std::cout << "ratio           " << text::format_double(ratio) << "\n";
    }
  }
  write_meta(out, "calibrate", started);
  switch (result.stop_reason) {
    case StopReason::GoalReached:
    case StopReason::Stabilized: return kExitOk;
    case StopReason::MaxRounds:
    case StopReason::BudgetExhausted: return kExitIncomplete;
    case StopReason::UserAbort: return kExitAborted;
  }
  return kExitError;
}

int cmd_generate(const Settings& s) {
  const auto catalog = BehaviorCatalog::with_fixtures();
  auto l = load_model(s, catalog);
  if (!s.out) throw Error(Errc::InvalidSpec, "missing --out <file.obs>");
  std::vector<VarId> targets;
  for (const auto& t : s.targets) targets.push_back(parse_var(t));
  if (targets.empty())
    for (const auto& c : l.db.classes)
      for (const auto& v : c.variables) targets.push_back(VarId{{c.name, v.name}});
  auto obs = generate_synthetic_observations(l.db, catalog, l.model.parameters(),
                                             evenly_spaced_times(l.db.clock, s.obs_samples.value_or(20)), targets,
                                             s.noise.value_or(0.0), s.seed.value_or(0));
  text::write_file(*s.out, serialize(obs));
  std::cout << "wrote " << obs.records.size() << " records to " << *s.out << "\n";
  return kExitOk;
}

int cmd_serve(const Settings& s) {
  const auto catalog = BehaviorCatalog::with_fixtures();
  std::vector<ModelDatabase> dbs;
  std::optional<ObservationSet> obs;
  if (s.model) {
    require_file(s.model, "model");
    dbs.push_back(load_model(s, catalog).db);
  }
  for (auto text_db : {fixtures::kNpzModel, fixtures::kLogisticPairModel}) {
    auto db = parse_model_db(text_db, catalog);
    if (std::none_of(dbs.begin(), dbs.end(), [&](const auto& d) { return d.id == db.id; })) dbs.push_back(db);
  }
  if (s.obs) {
    require_file(s.obs, "obs");
    obs = load_observations(*s.obs);
  }
  remote::Desk desk(std::move(dbs), catalog, std::move(obs));
  remote::Server server(desk, remote::parse_endpoint(s.listen.value_or("127.0.0.1:7878")));
  std::cout << "listening on port " << server.port() << std::endl;
  server.start();
  while (!g_abort) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server.stop();
  std::cout << "server stopped" << std::endl;
  return kExitOk;
}

int cmd_report(const Settings& s) {
  require_file(s.result, "result");
  const auto j = nlohmann::ordered_json::parse(text::read_file(*s.result));
  std::cout << "stop_reason " << j.at("stop_reason").get<std::string>() << "\n";
  std::cout << "total_runs  " << j.at("total_runs").get<std::uint64_t>() << "\n";
  if (!j.at("initial").is_null()) std::cout << "initial_lof " << j["initial"]["aggregate_lof"].dump() << "\n";
  for (const auto& r : j.at("rounds"))
    std::cout << "round " << r.at("round").dump() << "  lof " << r.at("aggregate_lof").dump() << "  reliability "
              << r.at("reliability").dump() << "\n";
  std::cout << "\n#  round target                    driver                           chosen       accepted\n";
  std::size_t n = 0;
  for (const auto& sw : j.at("sweeps")) {
    std::string driver = sw["driver"]["kind"].get<std::string>() + ":" + sw["driver"]["parameter"].get<std::string>();
    std::printf("%-3zu%-6s%-26s%-33s%-13s%s\n", ++n, sw["round"].dump().c_str(), sw["target"].get<std::string>().c_str(),
                driver.c_str(), sw["chosen"].dump().c_str(), sw["accepted"].get<bool>() ? "yes" : "no");
  }
  std::cout << "\nfinal lof " << j["final"]["aggregate_lof"].dump() << "\n";
  for (const auto& [k, v] : j.at("best_parameters").items()) std::cout << "  " << k << " = " << v.dump() << "\n";
  return kExitOk;
}

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("ecocal");
  logger->set_pattern("%^%l%$ %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("ECOCAL_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  std::signal(SIGINT, on_interrupt);
  std::signal(SIGTERM, on_interrupt);

  CLI::App app{"ecocal: sensitivity-guided calibration of box-ecosystem models"};
  app.require_subcommand(1);
  Settings flags;
  std::optional<std::string> manifest;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--manifest", manifest, "run manifest (key = value lines)");
    sub->add_option("--model", flags.model, ".model file");
    sub->add_option("--dt", flags.dt, "override clock dt (seconds)");
    sub->add_option("--horizon", flags.horizon, "override clock horizon (seconds)");
    sub->add_option("--set", flags.sets, "Class.param=value, repeatable");
  };
  auto knowledge = [&](CLI::App* sub) {
    sub->add_option("--knowledge-dir", flags.knowledge_dir, "directory for relationships.txt and sensitivity.txt");
    sub->add_flag("--discover", flags.discover, "learn missing knowledge instead of failing");
    sub->add_option("--samples", flags.samples, "sensitivity samples per range (k)");
    sub->add_option("--window", flags.window, "steady-state window (steps)");
    sub->add_option("--tolerance", flags.tolerance, "steady-state tolerance");
    sub->add_option("--cap", flags.cap, "sensitivity horizon cap (steps)");
  };

  auto* simulate = app.add_subcommand("simulate", "run the model and write one series file per variable");
  common(simulate);
  simulate->add_option("--out", flags.out, "output directory");

  auto* disc = app.add_subcommand("discover", "learn the class relationship matrix");
  common(disc);
  disc->add_option("--knowledge-dir", flags.knowledge_dir, "output directory");

  auto* sens = app.add_subcommand("sensitivity", "intra- and inter-class sensitivity analysis");
  common(sens);
  knowledge(sens);

  auto* cal = app.add_subcommand("calibrate", "run the calibration agent");
  common(cal);
  knowledge(cal);
  cal->add_option("--obs", flags.obs, "observation file");
  cal->add_option("--targets", flags.targets, "Class.variable targets (default: all observed)")->delimiter(',');
  cal->add_option("--out", flags.out, "report directory");
  cal->add_option("--sweep-samples", flags.sweep_samples, "grid points per sweep");
  cal->add_option("--lof-goal", flags.lof_goal, "stop once aggregate LOF is at or below this");
  cal->add_option("--max-rounds", flags.max_rounds, "round limit");
  cal->add_option("--budget", flags.budget, "run budget (per random-search seed with --baseline)");
  cal->add_option("--baseline", flags.baseline, "also run the uninformed baseline: random");
  cal->add_option("--seed", flags.seed, "first random-search seed");
  cal->add_option("--seeds", flags.seeds, "number of random-search seeds");

  auto* gen = app.add_subcommand("generate", "write synthetic observations from the current parameters");
  common(gen);
  gen->add_option("--out", flags.out, "observation file to write");
  gen->add_option("--targets", flags.targets, "Class.variable targets (default: all)")->delimiter(',');
  gen->add_option("--obs-samples", flags.obs_samples, "samples per variable, evenly spaced");
  gen->add_option("--noise", flags.noise, "multiplicative noise fraction");
  gen->add_option("--seed", flags.seed, "noise seed");

  auto* serve = app.add_subcommand("serve", "serve the remote-control protocol");
  common(serve);
  serve->add_option("--obs", flags.obs, "observations for FIT?");
  serve->add_option("--listen", flags.listen, "host:port (port 0 picks a free one)");

  auto* report = app.add_subcommand("report", "render a calibration report.json");
  report->add_option("--result", flags.result, "report.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitError;
  }

  try {
    Settings s;
    if (manifest) {
      if (!fs::exists(*manifest)) throw Error(Errc::StorageFailure, "manifest not found: " + *manifest);
      s = load_manifest(*manifest);
    }
    merge(s, flags);
    if (simulate->parsed()) return cmd_simulate(s);
    if (disc->parsed()) return cmd_discover(s);
    if (sens->parsed()) return cmd_sensitivity(s);
    if (cal->parsed()) return cmd_calibrate(s);
    if (gen->parsed()) return cmd_generate(s);
    if (serve->parsed()) return cmd_serve(s);
    if (report->parsed()) return cmd_report(s);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}

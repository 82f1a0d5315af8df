#pragma once

// Calibration agent. Each round:
//   Y      = worst-fitting unprocessed target
//   driver = parameter Y is most sensitive to, directly or through an influencing variable
//   sweep the driver over its full range, keep the best value that does not cost reliability
// Y counts as processed once a sweep improves the fit or it runs out of drivers.
// Rounds repeat until the goal LOF, stabilisation, max_rounds, the run budget or an abort.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "ecocal/error.hpp"
#include "ecocal/fitness.hpp"
#include "ecocal/kernel.hpp"
#include "ecocal/knowledge.hpp"
#include "ecocal/model_db.hpp"
#include "ecocal/sensitivity.hpp"
#include "ecocal/text.hpp"

namespace ecocal {

enum class DriverKind { Direct, Indirect };

struct Driver {
  DriverKind kind = DriverKind::Direct;
  ParamId parameter;
  std::optional<VarId> via;
  int expected_sign = 1;
  double magnitude = 0.0;

  bool operator==(const Driver&) const = default;
};

struct AgentConfig {
  int sweep_samples = 7;
  double lof_goal = 0.1;
  double reliability_slack = 0.05;
  double improvement_epsilon = 1e-3;
  int max_rounds = 10;
  std::optional<std::uint64_t> run_budget;

  void validate() const {
    if (sweep_samples < 3) throw Error(Errc::InvalidSpec, "sweep_samples must be >= 3");
    if (!(lof_goal > 0.0)) throw Error(Errc::InvalidSpec, "lof_goal must be > 0");
    if (!(reliability_slack > 0.0)) throw Error(Errc::InvalidSpec, "reliability_slack must be > 0");
    if (!(improvement_epsilon > 0.0)) throw Error(Errc::InvalidSpec, "improvement_epsilon must be > 0");
    if (max_rounds < 1) throw Error(Errc::InvalidSpec, "max_rounds must be >= 1");
    if (run_budget && *run_budget < 1) throw Error(Errc::InvalidSpec, "run_budget must be >= 1");
  }
};

struct Candidate {
  double value = 0.0;
  std::optional<FitReport> report;  // empty when the run diverged
  std::string failure;
  bool reused = false;  // the current value; its report was already known

  bool operator==(const Candidate&) const = default;
};

struct SweepRecord {
  int round = 0;
  VarId target;
  Driver driver;
  double start_value = 0.0;
  std::vector<Candidate> tried;  // in evaluation order
  double chosen = 0.0;
  bool accepted = false;  // some moved value met the reliability constraint
  bool improved = false;  // chosen != start_value

  const Candidate* chosen_candidate() const {
    for (const auto& c : tried)
      if (c.value == chosen) return &c;
    return nullptr;
  }
  bool operator==(const SweepRecord&) const = default;
};

enum class StopReason { GoalReached, Stabilized, MaxRounds, BudgetExhausted, UserAbort };

inline std::string_view stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::GoalReached: return "GoalReached";
    case StopReason::Stabilized: return "Stabilized";
    case StopReason::MaxRounds: return "MaxRounds";
    case StopReason::BudgetExhausted: return "BudgetExhausted";
    case StopReason::UserAbort: return "UserAbort";
  }
  return "Unknown";
}

struct CalibrationResult {
  ParameterVector best_parameters;
  std::optional<FitReport> initial_report;
  std::vector<FitReport> rounds;  // report at the end of each completed round
  FitReport final_report;
  std::vector<SweepRecord> sweeps;
  std::uint64_t total_runs = 0;
  StopReason stop_reason = StopReason::MaxRounds;
  std::vector<double> lof_history;  // best aggregate LOF so far after each run

  bool operator==(const CalibrationResult&) const = default;
};

/// Runs needed before the best-so-far LOF first reaches `goal`; nullopt if it never does.
inline std::optional<std::uint64_t> runs_to_reach(const CalibrationResult& r, double goal) {
  for (std::size_t i = 0; i < r.lof_history.size(); ++i)
    if (r.lof_history[i] <= goal) return i + 1;
  return std::nullopt;
}

struct KnowledgeBundle {
  RelationshipMatrix relationships;
  SensitivityTables sensitivity;

  /// Throws MissingKnowledge unless every part describes exactly the model's classes.
  void check(const Model& model) const {
    if (relationships.size() == 0) throw Error(Errc::MissingKnowledge, "no relationship matrix");
    if (auto st = staleness(relationships, model); !st.empty()) throw Error(Errc::MissingKnowledge, st.front());
    for (const auto& c : model.classes()) {
      const auto* m = sensitivity.intra_for(c.name);
      if (!m || m->cls != c.code) throw Error(Errc::MissingKnowledge, "no intra sensitivity for class " + c.name);
    }
    if (sensitivity.intra.size() != model.class_count())
      throw Error(Errc::MissingKnowledge, "intra sensitivity classes do not match the model");
  }
};

inline KnowledgeBundle learn(const Model& model, const SimClock& training, const PerturbationPlan& plan = {}) {
  KnowledgeBundle b;
  b.relationships = discover(model, training);
  b.sensitivity = analyse_sensitivity(model, b.relationships, plan);
  return b;
}

namespace detail {

inline int sign_of(double v) { return v > 0.0 ? 1 : v < 0.0 ? -1 : 0; }

}  // namespace detail

/// Strongest driver for Y that is not excluded; nullopt when none has nonzero sensitivity.
inline std::optional<Driver> select_driver(const VarId& y, const KnowledgeBundle& bundle,
                                           const std::set<ParamId>& exclusions = {}) {
  const auto* own = bundle.sensitivity.intra_for(y.cls);
  if (!own || !bundle.relationships.index_of(y.cls))
    throw Error(Errc::InconsistentKnowledge, "no knowledge for class " + y.cls);
  if (std::find(own->rows.begin(), own->rows.end(), y.name) == own->rows.end())
    throw Error(Errc::InconsistentKnowledge, "unknown variable " + y.str());

  std::optional<Driver> best;
  auto consider = [&](Driver d) {
    if (d.magnitude <= 0.0 || exclusions.contains(d.parameter)) return;
    if (!best || d.magnitude > best->magnitude) {
      best = std::move(d);
      return;
    }
    if (d.magnitude == best->magnitude) {
      auto key = [](const Driver& x) {
        return std::tuple(x.parameter, x.kind == DriverKind::Indirect, x.via.value_or(VarId{}));
      };
      if (key(d) < key(*best)) best = std::move(d);
    }
  };

  for (const auto& p : own->cols) {
    const double c = *own->cell(y.name, p);
    consider({DriverKind::Direct, ParamId{{y.cls, p}}, std::nullopt, detail::sign_of(c), std::abs(c)});
  }
  for (const auto& e : bundle.sensitivity.inter.entries) {
    if (e.target != y || e.value == 0.0) continue;
    if (!bundle.relationships.influences(e.source.cls, y.cls))
      throw Error(Errc::InconsistentKnowledge, "inter entry " + e.source.str() + " -> " + y.str() +
                                                   " has no relationship edge");
    const auto* zm = bundle.sensitivity.intra_for(e.source.cls);
    if (!zm) throw Error(Errc::InconsistentKnowledge, "no intra sensitivity for class " + e.source.cls);
    for (const auto& pz : zm->cols) {
      auto c = zm->cell(e.source.name, pz);
      if (!c) throw Error(Errc::InconsistentKnowledge, "unknown variable " + e.source.str());
      consider({DriverKind::Indirect, ParamId{{e.source.cls, pz}}, e.source,
                detail::sign_of(e.value) * detail::sign_of(*c), std::abs(e.value) * std::abs(*c)});
    }
  }
  return best;
}

/// Progress notification: phase, a short detail line, and runs so far.
struct Progress {
  std::string phase;
  std::string detail;
  std::uint64_t runs = 0;
  std::optional<std::uint64_t> planned;
};
using ProgressFn = std::function<void(const Progress&)>;

/// Counts runs, enforces the budget and honours the abort flag at candidate boundaries.
class RunLedger {
 public:
  struct Interrupted {
    StopReason reason;
  };

  RunLedger(std::optional<std::uint64_t> budget, const std::atomic<bool>* abort) : budget_(budget), abort_(abort) {}

  void before_run() const {
    if (abort_ && abort_->load()) throw Interrupted{StopReason::UserAbort};
    if (budget_ && runs_ >= *budget_) throw Interrupted{StopReason::BudgetExhausted};
  }

  /// Resets the model, applies `params`, runs the calibration clock and scores it.
  std::optional<FitReport> evaluate(Model& model, const ObservationSet& obs, const std::vector<VarId>& targets,
                                    const Weights& weights, std::string* failure = nullptr) {
    before_run();
    ++runs_;
    model.reset();
    try {
      auto traj = model.run(model.clock());
      auto rep = ecocal::evaluate(traj, obs, targets, weights);
      note(rep.aggregate_lof);
      return rep;
    } catch (const DivergenceError& e) {
      if (failure) *failure = e.what();
      note(std::numeric_limits<double>::infinity());
      return std::nullopt;
    }
  }

  std::uint64_t runs() const noexcept { return runs_; }
  const std::vector<double>& history() const noexcept { return history_; }

 private:
  void note(double lof) {
    const double prev = history_.empty() ? std::numeric_limits<double>::infinity() : history_.back();
    history_.push_back(std::min(prev, lof));
  }

  std::optional<std::uint64_t> budget_;
  const std::atomic<bool>* abort_;
  std::uint64_t runs_ = 0;
  std::vector<double> history_;
};

/// Orders the grid so values expected to move Y towards the data come first, nearest first.
inline std::vector<double> sweep_order(const std::vector<double>& grid, double current, int direction) {
  std::vector<double> up, down;
  for (double v : grid) {
    if (v > current) up.push_back(v);
    else if (v < current) down.push_back(v);
  }
  std::reverse(down.begin(), down.end());
  std::vector<double> out;
  const auto& first = direction < 0 ? down : up;
  const auto& second = direction < 0 ? up : down;
  out.insert(out.end(), first.begin(), first.end());
  out.insert(out.end(), second.begin(), second.end());
  return out;
}

/// Full-range sweep of one driver. The model is left with the chosen value applied.
inline SweepRecord sweep(Model& model, const Driver& driver, const ObservationSet& obs,
                         const std::vector<VarId>& targets, const AgentConfig& config, const FitReport& baseline_report,
                         const VarId& y, RunLedger& ledger, const Weights& weights = {}) {
  const auto& ps = model.parameter_spec(driver.parameter);
  const double current = model.parameter(driver.parameter);
  SweepRecord rec;
  rec.target = y;
  rec.driver = driver;
  rec.start_value = current;

  auto [grid, at] = range_grid(ps.min, ps.max, config.sweep_samples, current);
  // Snap a grid point to the database baseline when they coincide up to rounding.
  for (auto& v : grid)
    if (std::abs(v - ps.baseline) <= 1e-12 * (ps.max - ps.min) && v != current) v = ps.baseline;
  (void)at;

  double bias = 0.0;
  if (auto it = baseline_report.per_variable_bias.find(y); it != baseline_report.per_variable_bias.end()) bias = it->second;
  const int direction = detail::sign_of(bias) * driver.expected_sign;

  rec.tried.push_back({current, baseline_report, {}, true});
  try {
    for (double v : sweep_order(grid, current, direction)) {
      ledger.before_run();
      model.set_parameter(driver.parameter, v);
      Candidate c;
      c.value = v;
      c.report = ledger.evaluate(model, obs, targets, weights, &c.failure);
      rec.tried.push_back(std::move(c));
    }
  } catch (const RunLedger::Interrupted&) {
    model.set_parameter(driver.parameter, current);
    throw;
  }

  const double floor_rel = baseline_report.reliability - config.reliability_slack;
  const Candidate* best = &rec.tried.front();
  for (const auto& c : rec.tried) {
    if (c.reused || !c.report || c.report->reliability < floor_rel) continue;
    rec.accepted = true;
    const double lof = c.report->aggregate_lof;
    const double best_lof = best->report->aggregate_lof;
    const double d = std::abs(c.value - current);
    const double best_d = std::abs(best->value - current);
    if (lof < best_lof || (lof == best_lof && (d < best_d || (d == best_d && c.value < best->value)))) best = &c;
  }
  rec.chosen = best->value;
  rec.improved = rec.chosen != current;
  model.set_parameter(driver.parameter, rec.chosen);
  return rec;
}

/// Convenience overload with its own run accounting.
inline SweepRecord sweep(Model& model, const Driver& driver, const ObservationSet& obs,
                         const std::vector<VarId>& targets, const AgentConfig& config, const FitReport& baseline_report,
                         const VarId& y, const Weights& weights = {}) {
  RunLedger ledger(config.run_budget, nullptr);
  return sweep(model, driver, obs, targets, config, baseline_report, y, ledger, weights);
}

namespace detail {

inline void require_coverage(const ObservationSet& obs, const std::vector<VarId>& targets) {
  if (obs.empty()) throw Error(Errc::NoObservations, "observation set is empty");
  if (targets.empty()) throw Error(Errc::InvalidSpec, "no calibration targets");
  const auto vars = obs.variables();
  for (const auto& t : targets)
    if (!vars.contains(t)) throw Error(Errc::NoObservations, "no observations for target " + t.str());
}

}  // namespace detail

inline CalibrationResult calibrate(Model& model, const ObservationSet& obs, const std::vector<VarId>& targets,
                                   const KnowledgeBundle& bundle, const AgentConfig& config = {},
                                   const std::atomic<bool>* abort = nullptr, const ProgressFn& progress = {},
                                   const Weights& weights = {}) {
  config.validate();
  bundle.check(model);
  detail::require_coverage(obs, targets);
  for (const auto& t : targets) (void)model.value(t);

  CalibrationResult res;
  RunLedger ledger(config.run_budget, abort);
  auto emit = [&](std::string detail) {
    if (progress) progress({"Calibrate", std::move(detail), ledger.runs(), config.run_budget});
  };
  auto finish = [&](StopReason why, const FitReport& current) {
    res.stop_reason = why;
    res.best_parameters = model.parameters();
    res.final_report = current;
    res.total_runs = ledger.runs();
    res.lof_history = ledger.history();
    emit(std::string("stop ") + std::string(stop_reason_name(why)));
    return res;
  };

  FitReport current;
  try {
    std::string failure;
    auto rep = ledger.evaluate(model, obs, targets, weights, &failure);
    if (!rep) throw Error(Errc::NumericalDivergence, "starting parameters diverge: " + failure);
    current = *rep;
    res.initial_report = current;
  } catch (const RunLedger::Interrupted& i) {
    return finish(i.reason, current);
  }
  emit("initial lof " + text::format_double(current.aggregate_lof));

  double previous = current.aggregate_lof;
  for (int round = 1; round <= config.max_rounds; ++round) {
    std::set<VarId> processed;
    std::map<VarId, std::set<ParamId>> excluded;
    try {
      while (auto y = worst_fit(current, targets, processed)) {
        // A target that already fits exactly cannot improve.
        auto driver = current.per_variable_lof.at(*y) == 0.0 ? std::nullopt : select_driver(*y, bundle, excluded[*y]);
        if (!driver) {
          processed.insert(*y);
          continue;
        }
        auto rec = sweep(model, *driver, obs, targets, config, current, *y, ledger, weights);
        rec.round = round;
        excluded[*y].insert(driver->parameter);
        if (rec.improved) {
          current = *rec.chosen_candidate()->report;
          processed.insert(*y);
        }
        emit("round " + std::to_string(round) + " " + y->str() + " " + driver->parameter.str() + " -> " +
             text::format_double(rec.chosen) + " lof " + text::format_double(current.aggregate_lof));
        res.sweeps.push_back(std::move(rec));
      }
    } catch (const RunLedger::Interrupted& i) {
      return finish(i.reason, current);
    }
    res.rounds.push_back(current);
    const double lof = current.aggregate_lof;
    if (lof <= config.lof_goal) return finish(StopReason::GoalReached, current);
    if (!std::isfinite(lof) || previous - lof < config.improvement_epsilon * previous)
      return finish(StopReason::Stabilized, current);
    if (round == config.max_rounds) return finish(StopReason::MaxRounds, current);
    previous = lof;
  }
  return finish(StopReason::MaxRounds, current);
}

/// Uninformed baseline: independent uniform draws of every parameter within its range.
inline CalibrationResult random_search(Model& model, const ObservationSet& obs, const std::vector<VarId>& targets,
                                       std::uint64_t budget, std::uint64_t seed, const Weights& weights = {},
                                       const std::atomic<bool>* abort = nullptr) {
  if (budget < 1) throw Error(Errc::InvalidSpec, "budget must be >= 1");
  detail::require_coverage(obs, targets);
  GaussianStream rng(seed);
  RunLedger ledger(budget, abort);
  CalibrationResult res;
  res.stop_reason = StopReason::BudgetExhausted;
  std::optional<FitReport> best;
  ParameterVector best_params = model.parameters();
  try {
    for (std::uint64_t i = 0; i < budget; ++i) {
      ParameterVector pv = model.parameters();
      for (auto& p : pv) {
        const auto& ps = model.parameter_spec(p.id);
        p.value = std::clamp(ps.min + (ps.max - ps.min) * rng.uniform(), ps.min, ps.max);
      }
      ledger.before_run();
      model.set_parameters(pv);
      auto rep = ledger.evaluate(model, obs, targets, weights);
      if (rep && (!best || rep->aggregate_lof < best->aggregate_lof)) {
        best = rep;
        best_params = pv;
      }
    }
  } catch (const RunLedger::Interrupted& i) {
    res.stop_reason = i.reason;
  }
  model.set_parameters(best_params);
  res.best_parameters = best_params;
  if (best) {
    res.final_report = *best;
    res.rounds.push_back(*best);
  }
  res.total_runs = ledger.runs();
  res.lof_history = ledger.history();
  return res;
}

// ---- reports ----

inline nlohmann::ordered_json to_json(const FitReport& r) {
  nlohmann::ordered_json j;
  j["aggregate_lof"] = r.aggregate_lof;
  j["adequacy"] = r.adequacy;
  j["reliability"] = r.reliability;
  j["matched"] = r.matched;
  j["total"] = r.total;
  auto& per = j["per_variable_lof"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.per_variable_lof) per[k.str()] = v;
  return j;
}

inline nlohmann::ordered_json to_json(const Driver& d) {
  nlohmann::ordered_json j;
  j["kind"] = d.kind == DriverKind::Direct ? "Direct" : "Indirect";
  j["parameter"] = d.parameter.str();
  j["via"] = d.via ? nlohmann::ordered_json(d.via->str()) : nlohmann::ordered_json(nullptr);
  j["expected_sign"] = d.expected_sign;
  j["magnitude"] = d.magnitude;
  return j;
}

inline nlohmann::ordered_json to_json(const CalibrationResult& r) {
  nlohmann::ordered_json j;
  j["stop_reason"] = stop_reason_name(r.stop_reason);
  j["total_runs"] = r.total_runs;
  auto& params = j["best_parameters"] = nlohmann::ordered_json::object();
  for (const auto& p : r.best_parameters) params[p.id.str()] = p.value;
  j["initial"] = r.initial_report ? to_json(*r.initial_report) : nlohmann::ordered_json(nullptr);
  auto& rounds = j["rounds"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.rounds.size(); ++i) {
    auto rj = to_json(r.rounds[i]);
    rj["round"] = i + 1;
    rounds.push_back(std::move(rj));
  }
  auto& sweeps = j["sweeps"] = nlohmann::ordered_json::array();
  for (const auto& s : r.sweeps) {
    nlohmann::ordered_json sj;
    sj["round"] = s.round;
    sj["target"] = s.target.str();
    sj["driver"] = to_json(s.driver);
    sj["start"] = s.start_value;
    auto& grid = sj["grid"] = nlohmann::ordered_json::array();
    auto& lofs = sj["lofs"] = nlohmann::ordered_json::array();
    for (const auto& c : s.tried) {
      grid.push_back(c.value);
      lofs.push_back(c.report ? nlohmann::ordered_json(c.report->aggregate_lof) : nlohmann::ordered_json(nullptr));
    }
    sj["chosen"] = s.chosen;
    sj["accepted"] = s.accepted;
    sj["improved"] = s.improved;
    sweeps.push_back(std::move(sj));
  }
  j["final"] = to_json(r.final_report);
  return j;
}

inline std::string text_report(const CalibrationResult& r) {
  using text::format_double;
  std::string out;
  out += "stop_reason " + std::string(stop_reason_name(r.stop_reason)) + "\n";
  out += "total_runs " + std::to_string(r.total_runs) + "\n";
  if (r.initial_report) out += "initial_lof " + format_double(r.initial_report->aggregate_lof) + "\n";
  out += "final_lof " + format_double(r.final_report.aggregate_lof) + "\n";
  out += "final_adequacy " + format_double(r.final_report.adequacy) + "\n";
  out += "final_reliability " + format_double(r.final_report.reliability) + "\n";
  for (std::size_t i = 0; i < r.rounds.size(); ++i)
    out += "round " + std::to_string(i + 1) + " lof " + format_double(r.rounds[i].aggregate_lof) + " reliability " +
           format_double(r.rounds[i].reliability) + "\n";
  for (const auto& s : r.sweeps) {
    out += "sweep round=" + std::to_string(s.round) + " target=" + s.target.str() + " driver=" +
           (s.driver.kind == DriverKind::Direct ? "Direct" : "Indirect") + ":" + s.driver.parameter.str();
    if (s.driver.via) out += " via=" + s.driver.via->str();
    out += " grid=";
    for (std::size_t i = 0; i < s.tried.size(); ++i) {
      if (i) out += ",";
      out += format_double(s.tried[i].value) + ":" +
             (s.tried[i].report ? format_double(s.tried[i].report->aggregate_lof) : std::string("diverged"));
    }
    out += " chosen=" + format_double(s.chosen) + " accepted=" + (s.accepted ? "yes" : "no") + "\n";
  }
  for (const auto& p : r.best_parameters) out += "param " + p.id.str() + " " + format_double(p.value) + "\n";
  return out;
}

}  // namespace ecocal

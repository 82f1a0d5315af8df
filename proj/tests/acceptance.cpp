// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace ecocal;
using namespace testing_support;

namespace {

// Pinned thresholds.
constexpr double kDiscoverSeconds = 5;
constexpr double kSensitivitySeconds = 60;
constexpr double kSensitivityRelTol = 0.25;
constexpr double kMetricTol = 1e-12;
constexpr double kRecoveryCleanGoal = 0.05;
constexpr double kRecoveryNoisyRatio = 0.3;
constexpr double kRecoverySeconds = 300;
constexpr double kBaselineSeconds = 600;
constexpr std::uint64_t kBaselineBudget = 5000;
constexpr int kBaselineSeeds = 11;

struct Verdict {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

int failures = 0;

void report(int n, const char* title, const Verdict& v, const std::string& summary) {
  std::printf("criterion %d %s %s: %s%s%s\n", n, v.pass ? "PASS" : "FAIL", title, summary.c_str(),
              v.detail.empty() ? "" : " | ", v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) { return text::format_double(v); }

const std::vector<VarId> kTargets{var("Nutrient", "N"), var("Phytoplankton", "biomass"),
                                  var("Zooplankton", "biomass")};

Model perturbed() {
  auto m = npz();
  m.set_parameter(par("Phytoplankton", "kN"), 5);
  m.set_parameter(par("Phytoplankton", "mP"), 0.2);
  m.set_parameter(par("Zooplankton", "kgraz"), 2.1);
  return m;
}

ObservationSet recovery_obs(double noise) {
  const auto db = npz_db();
  return generate_synthetic_observations(db, catalog(), baseline_parameters(instantiate(db, catalog())),
                                         evenly_spaced_times(db.clock, 20), kTargets, noise, 42);
}

KnowledgeBundle knowledge() {
  auto m = npz();
  return learn(m, training_clock(m.clock()));
}

std::vector<CalibrationResult> g_calibrations;  // every calibration run here, for criterion 6
std::vector<ObservationSet> g_calibration_obs;

// ---- 1 ----
void relationship_exactness() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  using Edge = std::pair<std::string, std::string>;
  auto edges = [](const RelationshipMatrix& m) {
    std::set<Edge> out;
    for (std::size_t i = 0; i < m.size(); ++i)
      for (std::size_t j = 0; j < m.size(); ++j)
        if (m.cells[i][j] == Relation::Influences) out.insert({m.classes[i].name, m.classes[j].name});
    return out;
  };
  // Enumerated from the step rules: nutrient inquires P and Z, phytoplankton inquires N and Z,
  // zooplankton inquires P; the forcing class updates the logistic class.
  const std::set<Edge> npz_want{{"Phytoplankton", "Nutrient"}, {"Zooplankton", "Nutrient"},
                                {"Nutrient", "Phytoplankton"}, {"Zooplankton", "Phytoplankton"},
                                {"Phytoplankton", "Zooplankton"}};
  const std::set<Edge> pair_want{{"Forcing", "Logistic"}};
  auto n = npz();
  const auto db = pair_db();
  auto p = pair();
  const auto got_n = edges(discover(n, training_clock(n.clock())));
  const auto got_p = edges(discover(p, training_clock(db.clock, db.forcing_period)));
  const double secs = seconds_since(t0);
  auto diff = [](const std::set<Edge>& a, const std::set<Edge>& b) {
    std::size_t k = 0;
    for (const auto& e : a) k += !b.contains(e);
    return k;
  };
  const auto missing = diff(npz_want, got_n) + diff(pair_want, got_p);
  const auto spurious = diff(got_n, npz_want) + diff(got_p, pair_want);
  v.require(missing == 0, std::to_string(missing) + " missing edges");
  v.require(spurious == 0, std::to_string(spurious) + " spurious edges");
  v.require(secs < kDiscoverSeconds, "too slow");
  report(1, "relationship exactness", v,
         "npz " + std::to_string(got_n.size()) + " edges, logistic-pair " + std::to_string(got_p.size()) +
             " edge, missing " + std::to_string(missing) + ", spurious " + std::to_string(spurious) + ", " +
             fmt(secs) + " s");
}

// ---- 2 ----
void sensitivity_oracle() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  auto m = npz();
  const auto phyto = intra_sensitivity(m, ClassCode{2});
  const auto zoo = intra_sensitivity(m, ClassCode{3});
  const double secs = seconds_since(t0);

  struct Range {
    double NpzParams::*member;
    double lo, hi;
  };
  const std::map<std::string, Range> ranges{
      {"mumax", {&NpzParams::mumax, 1.425, 1.65}},   {"kN", {&NpzParams::kN, 0.5, 5}},
      {"mP", {&NpzParams::mP, 0.05, 0.2}},           {"chl_ratio", {&NpzParams::chl_ratio, 0.01, 0.04}},
      {"gmax", {&NpzParams::gmax, 0.665, 0.77}},     {"kgraz", {&NpzParams::kgraz, 1.2, 2.1}},
      {"gamma", {&NpzParams::gamma, 0.4275, 0.495}}, {"mZ", {&NpzParams::mZ, 0.126, 0.168}}};
  // Central difference of the closed-form steady state at the range midpoint, scaled to a cell.
  auto oracle = [&](const std::string& param, double NpzState::*field) {
    const auto& r = ranges.at(param);
    const NpzParams base;
    const double p0 = base.*r.member;
    const double h = 1e-6 * (r.hi - r.lo);
    NpzParams up = base, dn = base;
    up.*r.member = (r.lo + r.hi) / 2 + h;
    dn.*r.member = (r.lo + r.hi) / 2 - h;
    const double slope = (npz_steady(up).*field - npz_steady(dn).*field) / (2 * h);
    double shift = 0;
    int n = 0;
    for (int i = 0; i < 5; ++i) {
      const double x = r.lo + (r.hi - r.lo) * i / 4.0;
      if (std::abs(x - p0) <= 1e-12 * (r.hi - r.lo)) continue;
      shift += x - p0;
      ++n;
    }
    return slope * (shift / n) / (npz_steady(base).*field);
  };

  int checked = 0, zeros = 0;
  double worst = 0;
  auto check = [&](const IntraSensitivityMatrix& mat, const std::string& row, double NpzState::*field) {
    for (const auto& col : mat.cols) {
      const double got = *mat.cell(row, col);
      const double want = oracle(col, field);
      if (want == 0.0) {
        ++zeros;
        v.require(got == 0.0, mat.class_name + "." + row + "/" + col + " should be exactly 0, got " + fmt(got));
        continue;
      }
      ++checked;
      const double rel = std::abs(got - want) / std::abs(want);
      worst = std::max(worst, rel);
      v.require(std::signbit(got) == std::signbit(want), mat.class_name + "." + row + "/" + col + " sign");
      v.require(rel <= kSensitivityRelTol, mat.class_name + "." + row + "/" + col + " off by " + fmt(rel));
    }
  };
  check(phyto, "biomass", &NpzState::P);
  check(phyto, "chl", &NpzState::chl);
  check(zoo, "biomass", &NpzState::Z);
  v.require(secs < kSensitivitySeconds, "too slow");
  report(2, "sensitivity oracle agreement", v,
         std::to_string(checked) + " nonzero pairs, worst relative error " + fmt(worst) + ", " +
             std::to_string(zeros) + " zero pairs, " + fmt(secs) + " s");
}

// ---- 3 ----
void metric_oracle() {
  Verdict v;
  Trajectory t;
  t.clock = {0, 1, 4};
  t.step_indices = {0, 1, 2, 3, 4};
  t.keys = {{ClassCode{1}, "A", "x"}, {ClassCode{2}, "B", "y"}};
  t.series = {{0, 1, 2, 3, 4}, {10, 10, 10, 10, 10}};
  auto r = [](double time, const char* c, double value, std::optional<double> band = {}) {
    return ObservationRecord{time, var(c, c[0] == 'A' ? "x" : c[0] == 'B' ? "y" : "z"), value, band};
  };
  ObservationSet o;
  o.records = {r(0, "A", 0.5),      r(1, "A", 1.0),       r(2, "A", 2.5),  r(3, "A", 2.0), r(1.5, "A", 1.5, 0.1),
               r(0, "B", 9.0, 1.5), r(2, "B", 12.0, 1.5), r(4, "B", 10.0), r(6, "B", 10.0), r(1, "C", 3.0)};
  // Worked by hand: A.x MSE 0.3 over sigma^2 0.5; B.y MSE 5/3 over sigma^2 1.1875;
  // 8 of 10 records matched, 7 of those inside their band.
  const double lof_a = std::sqrt(0.3 / 0.5);
  const double lof_b = std::sqrt((5.0 / 3.0) / 1.1875);
  const double lof = (lof_a + lof_b) / 2;
  const auto rep = evaluate(t, o, {var("A", "x"), var("B", "y")});
  v.require(std::abs(rep.aggregate_lof - lof) <= kMetricTol, "lof " + fmt(rep.aggregate_lof));
  v.require(std::abs(rep.adequacy - 0.8) <= kMetricTol, "adequacy " + fmt(rep.adequacy));
  v.require(std::abs(rep.reliability - 0.875) <= kMetricTol, "reliability " + fmt(rep.reliability));
  report(3, "metric oracle", v,
         "lof " + fmt(rep.aggregate_lof) + " (want " + fmt(lof) + "), adequacy " + fmt(rep.adequacy) +
             ", reliability " + fmt(rep.reliability));
}

// ---- 4 ----
CalibrationResult g_clean;

void synthetic_recovery(const KnowledgeBundle& kb) {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto clean_obs = recovery_obs(0.0);
  const auto noisy_obs = recovery_obs(0.05);
  auto a = perturbed();
  g_clean = calibrate(a, clean_obs, kTargets, kb);
  auto b = perturbed();
  const auto noisy = calibrate(b, noisy_obs, kTargets, kb);
  const double secs = seconds_since(t0);
  g_calibrations.push_back(g_clean);
  g_calibration_obs.push_back(clean_obs);
  g_calibrations.push_back(noisy);
  g_calibration_obs.push_back(noisy_obs);

  const double c0 = g_clean.initial_report->aggregate_lof, c1 = g_clean.final_report.aggregate_lof;
  const double n0 = noisy.initial_report->aggregate_lof, n1 = noisy.final_report.aggregate_lof;
  v.require(c1 <= kRecoveryCleanGoal, "0% noise final lof " + fmt(c1) + " > " + fmt(kRecoveryCleanGoal));
  v.require(n1 <= kRecoveryNoisyRatio * n0, "5% noise final lof " + fmt(n1) + " > 0.3 x " + fmt(n0));
  v.require(secs < kRecoverySeconds, "too slow");
  report(4, "synthetic recovery", v,
         "0% noise " + fmt(c0) + " -> " + fmt(c1) + " in " + std::to_string(g_clean.total_runs) + " runs (" +
             std::string(stop_reason_name(g_clean.stop_reason)) + "); 5% noise " + fmt(n0) + " -> " + fmt(n1) +
             " (ratio " + fmt(n1 / n0) + ") in " + std::to_string(noisy.total_runs) + " runs, " + fmt(secs) + " s");
}

// ---- 5 ----
void guided_vs_uninformed() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto obs = recovery_obs(0.0);
  const double goal = g_clean.final_report.aggregate_lof;
  std::vector<std::uint64_t> runs;
  std::string per_seed;
  for (int s = 0; s < kBaselineSeeds; ++s) {
    auto m = perturbed();
    const auto r = random_search(m, obs, kTargets, kBaselineBudget, static_cast<std::uint64_t>(s));
    const auto k = runs_to_reach(r, goal);
    runs.push_back(k.value_or(kBaselineBudget + 1));  // censored at budget + 1
    per_seed += (per_seed.empty() ? "" : " ") + (k ? std::to_string(*k) : ">" + std::to_string(kBaselineBudget));
  }
  const double secs = seconds_since(t0);
  std::sort(runs.begin(), runs.end());
  const auto median = runs[runs.size() / 2];
  const double ratio = static_cast<double>(median) / static_cast<double>(g_clean.total_runs);
  v.require(median > g_clean.total_runs, "random search median " + std::to_string(median) + " <= agent");
  v.require(secs < kBaselineSeconds, "too slow");
  report(5, "guided vs uninformed", v,
         "agent " + std::to_string(g_clean.total_runs) + " runs to lof " + fmt(goal) + "; random median " +
             (median > kBaselineBudget ? ">" + std::to_string(kBaselineBudget) : std::to_string(median)) +
             " runs [" + per_seed + "]; ratio " + (median > kBaselineBudget ? ">" : "") + fmt(ratio) + ", " +
             fmt(secs) + " s");
}

// ---- 6 ----
void monotonicity_and_replay(const KnowledgeBundle& kb) {
  Verdict v;
  // A few more calibrations from other corners of the box.
  const std::vector<std::vector<std::pair<ParamId, double>>> starts{
      {{par("Phytoplankton", "mumax"), 1.425}, {par("Zooplankton", "mZ"), 0.168}},
      {{par("Zooplankton", "gmax"), 0.77}, {par("Zooplankton", "gamma"), 0.4275}},
      {{par("Phytoplankton", "kN"), 0.5}, {par("Zooplankton", "kgraz"), 1.2}, {par("Phytoplankton", "mP"), 0.05}}};
  for (const auto& start : starts) {
    auto m = npz();
    for (const auto& [id, value] : start) m.set_parameter(id, value);
    const auto obs = recovery_obs(0.05);
    g_calibrations.push_back(calibrate(m, obs, kTargets, kb));
    g_calibration_obs.push_back(obs);
  }
  std::size_t rounds = 0;
  for (std::size_t i = 0; i < g_calibrations.size(); ++i) {
    const auto& r = g_calibrations[i];
    rounds += r.rounds.size();
    for (std::size_t k = 1; k < r.rounds.size(); ++k)
      v.require(r.rounds[k].aggregate_lof <= r.rounds[k - 1].aggregate_lof,
                "calibration " + std::to_string(i) + " round " + std::to_string(k + 1) + " got worse");
    auto replay = npz();
    replay.set_parameters(r.best_parameters);
    const auto rep = evaluate(replay.run(replay.clock()), g_calibration_obs[i], kTargets);
    v.require(rep == r.final_report, "calibration " + std::to_string(i) + " replay differs");
  }
  report(6, "round monotonicity and audit replay", v,
         std::to_string(g_calibrations.size()) + " calibrations, " + std::to_string(rounds) + " rounds checked");
}

// ---- 7 ----
void transport_equivalence() {
  Verdict v;
  remote::Desk desk({npz_db(), pair_db()}, catalog());
  remote::Server server(desk, remote::parse_endpoint("127.0.0.1:0"));
  server.start();
  remote::Client c({"127.0.0.1", server.port()});
  v.require(c.send("TAKE").ok, "TAKE");
  v.require(c.send("LOAD npz").ok, "LOAD");
  v.require(c.send("SET Zooplankton.gmax 0.75").ok, "SET");
  v.require(c.send("SPY ON").ok, "SPY");
  std::vector<std::string> remote_trace;
  for (int i = 0; i < 100; ++i) {
    v.require(c.send("STEP 1").head == "OK " + std::to_string(i + 1), "STEP " + std::to_string(i + 1));
    if (i % 7 == 3) {
      auto ev = c.send("EVENTS").payload;
      remote_trace.insert(remote_trace.end(), ev.begin(), ev.end());
    }
  }
  auto ev = c.send("EVENTS").payload;
  remote_trace.insert(remote_trace.end(), ev.begin(), ev.end());
  const bool drained = c.send("EVENTS").payload.empty();

  auto m = npz();
  m.set_parameter(par("Zooplankton", "gmax"), 0.75);
  m.set_spy(true);
  for (int i = 0; i < 100; ++i) m.step();
  std::vector<std::string> local_trace;
  for (const auto& msg : m.drain_trace()) local_trace.push_back(remote::format_message(msg));

  int vars = 0, equal = 0;
  for (const auto& cls : m.classes())
    for (const auto& var : cls.variables) {
      ++vars;
      const auto reply = c.send("GET " + cls.name + "." + var.name);
      equal += reply.head == "OK " + text::format_double(m.value(cls.code, var.name));
    }
  server.stop();
  v.require(equal == vars, std::to_string(vars - equal) + " variables differ");
  v.require(remote_trace == local_trace, "event trace differs");
  v.require(drained, "events not drained");
  report(7, "transport equivalence", v,
         std::to_string(equal) + "/" + std::to_string(vars) + " variables bit-identical after 100 steps; " +
             std::to_string(remote_trace.size()) + " events over " + std::to_string(local_trace.size()) +
             " expected, drained once");
}

// ---- 8 ----
void determinism(const KnowledgeBundle& kb) {
  Verdict v;
  auto pipeline = [] {
    std::map<std::string, std::string> files;
    auto m = npz();
    const auto rel = discover(m, training_clock(m.clock()));
    const auto sens = analyse_sensitivity(m, rel);
    files["relationships"] = serialize(rel);
    files["sensitivity"] = serialize(sens);
    const auto obs = recovery_obs(0.05);
    files["observations"] = serialize(obs);
    auto p = perturbed();
    const auto result = calibrate(p, obs, kTargets, KnowledgeBundle{rel, sens});
    files["report.txt"] = text_report(result);
    files["report.json"] = to_json(result).dump(2);
    auto q = perturbed();
    files["random.json"] = to_json(random_search(q, obs, kTargets, 200, 7)).dump(2);
    auto s = npz();
    s.set_parameters(result.best_parameters);
    const auto traj = s.run(s.clock());
    std::string csv;
    for (std::size_t k = 0; k < traj.keys.size(); ++k)
      for (std::size_t i = 0; i < traj.size(); ++i) csv += text::format_double(traj.series[k][i]) + "\n";
    files["trajectory"] = csv;
    return files;
  };
  const auto a = pipeline();
  const auto b = pipeline();
  std::size_t bytes = 0;
  for (const auto& [name, body] : a) {
    bytes += body.size();
    v.require(b.at(name) == body, name + " differs");
  }
  v.require(serialize(kb.sensitivity) == a.at("sensitivity"), "sensitivity differs from the shared bundle");
  report(8, "determinism", v, std::to_string(a.size()) + " artifacts, " + std::to_string(bytes) + " bytes identical");
}

}  // namespace

int main() {
  relationship_exactness();
  sensitivity_oracle();
  metric_oracle();
  const auto kb = knowledge();
  synthetic_recovery(kb);
  guided_vs_uninformed();
  monotonicity_and_replay(kb);
  transport_equivalence();
  determinism(kb);
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

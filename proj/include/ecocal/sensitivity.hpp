#pragma once

// One-at-a-time steady-state sensitivity.
//
// intra: cell(V, P) = mean over samples s != baseline of
//          (Vss(P_s) - Vss(P0)) / max(|Vss(P0)|, floor)
//        where Vss is the steady-state value of a fresh run with only P moved.
// inter: same formula with a source variable clamped over its range instead of
//        a parameter. The source class's other variables and every variable of the
//        target's other influencers are clamped at their initial values.
//
// File grammar:
//   sensitivity
//   intra <code> <class>
//   cols <param> ...
//   row <var> <cell> ...
//   note <text>
//   inter
//   edge <Class.var> <Class.var> <value>
//   skip <Class.var>
//   note <text>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ecocal/error.hpp"
#include "ecocal/kernel.hpp"
#include "ecocal/knowledge.hpp"
#include "ecocal/text.hpp"

namespace ecocal {

struct PerturbationPlan {
  int samples_per_range = 5;
  int steady_window = 50;
  double steady_tolerance = 1e-4;
  int horizon_cap = 5000;
  double denominator_floor = 1e-12;

  void validate() const {
    if (samples_per_range < 3) throw Error(Errc::InvalidSpec, "samples_per_range must be >= 3");
    if (steady_window < 2) throw Error(Errc::InvalidSpec, "steady_window must be >= 2");
    if (!(steady_tolerance > 0.0)) throw Error(Errc::InvalidSpec, "steady_tolerance must be > 0");
    if (horizon_cap < 2 * steady_window) throw Error(Errc::InvalidSpec, "horizon_cap must hold two windows");
    if (!(denominator_floor > 0.0)) throw Error(Errc::InvalidSpec, "denominator_floor must be > 0");
  }
};

struct SteadyStateSummary {
  VarId variable;
  double value = 0.0;
  bool converged = false;
  std::uint64_t steps_used = 0;
};

struct IntraSensitivityMatrix {
  ClassCode cls{};
  std::string class_name;
  std::vector<std::string> rows;  // variables
  std::vector<std::string> cols;  // parameters
  std::vector<std::vector<double>> cells;
  std::vector<std::string> notes;

  std::optional<double> cell(std::string_view var, std::string_view param) const {
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i] == var)
        for (std::size_t j = 0; j < cols.size(); ++j)
          if (cols[j] == param) return cells[i][j];
    return std::nullopt;
  }

  bool operator==(const IntraSensitivityMatrix&) const = default;
};

struct InterEntry {
  VarId source;
  VarId target;
  double value = 0.0;

  bool operator==(const InterEntry&) const = default;
};

struct InterSensitivityMatrix {
  std::vector<InterEntry> entries;  // sorted by (source, target)
  std::vector<VarId> skipped;       // sources without a range
  std::vector<std::string> notes;

  std::optional<double> find(const VarId& source, const VarId& target) const {
    for (const auto& e : entries)
      if (e.source == source && e.target == target) return e.value;
    return std::nullopt;
  }

  bool operator==(const InterSensitivityMatrix&) const = default;
};

struct SensitivityTables {
  std::vector<IntraSensitivityMatrix> intra;
  InterSensitivityMatrix inter;

  const IntraSensitivityMatrix* intra_for(std::string_view class_name) const {
    for (const auto& m : intra)
      if (m.class_name == class_name) return &m;
    return nullptr;
  }

  bool operator==(const SensitivityTables&) const = default;
};

inline SteadyStateSummary steady_state_value(const Trajectory& traj, const VarId& variable,
                                             const PerturbationPlan& plan) {
  const auto w = static_cast<std::size_t>(plan.steady_window);
  if (traj.size() < 2 * w)
    throw Error(Errc::TrajectoryTooShort, "need " + std::to_string(2 * w) + " samples, have " + std::to_string(traj.size()));
  const auto* series = traj.find(variable);
  if (!series) throw Error(Errc::UnknownVariable, variable.str());
  const auto n = series->size();
  double last = 0.0;
  double prev = 0.0;
  for (std::size_t i = n - w; i < n; ++i) last += (*series)[i];
  for (std::size_t i = n - 2 * w; i < n - w; ++i) prev += (*series)[i];
  last /= static_cast<double>(w);
  prev /= static_cast<double>(w);
  SteadyStateSummary s;
  s.variable = variable;
  s.value = last;
  s.converged = std::abs(last - prev) <= plan.steady_tolerance * std::max(std::abs(prev), plan.denominator_floor);
  s.steps_used = n - 1;
  return s;
}

/// `k` evenly spaced points over [lo, hi] with `base` inserted if it is not already one of them.
/// Returns the grid and the index of `base` in it.
inline std::pair<std::vector<double>, std::size_t> range_grid(double lo, double hi, int k, double base) {
  std::vector<double> grid;
  const double tol = 1e-12 * (hi - lo);
  std::optional<std::size_t> at;
  for (int i = 0; i < k; ++i) {
    double v = i == k - 1 ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(k - 1);
    if (std::abs(v - base) <= tol) {
      v = base;
      at = grid.size();
    }
    grid.push_back(v);
  }
  if (!at) {
    auto pos = std::lower_bound(grid.begin(), grid.end(), base);
    at = static_cast<std::size_t>(pos - grid.begin());
    grid.insert(pos, base);
  }
  return {grid, *at};
}

inline ParameterVector baseline_parameters(const Model& model) {
  ParameterVector out;
  for (const auto& c : model.classes())
    for (const auto& p : c.parameters) out.push_back({ParamId{{c.name, p.name}}, p.baseline});
  return out;
}

namespace detail {

inline SimClock sensitivity_clock(const Model& model, const PerturbationPlan& plan) {
  const auto& c = model.clock();
  return SimClock{c.t0, c.dt, c.t0 + static_cast<double>(plan.horizon_cap) * c.dt};
}

/// Steady states of `vars` for one fresh run, or nullopt with a note when it diverged.
inline std::optional<std::vector<double>> steady_run(const Model& proto, const ParameterVector& params,
                                                     const std::vector<ClampDirective>& clamps,
                                                     const std::vector<VarId>& vars, const PerturbationPlan& plan,
                                                     std::string& failure) {
  Model m = proto;
  m.set_spy(false);
  m.reset();
  m.set_parameters(params);
  try {
    const auto traj = m.run(sensitivity_clock(proto, plan), clamps);
    std::vector<double> out;
    for (const auto& v : vars) out.push_back(steady_state_value(traj, v, plan).value);
    return out;
  } catch (const DivergenceError& e) {
    failure = e.what();
    return std::nullopt;
  }
}

/// Mean fractional change over the non-baseline samples. Appends notes for floors and failures.
inline double fractional_cell(const std::vector<std::optional<std::vector<double>>>& runs, std::size_t base_at,
                              std::size_t var, const PerturbationPlan& plan, const std::string& label,
                              std::vector<std::string>& notes) {
  if (!runs[base_at]) {
    notes.push_back(label + ": baseline run diverged, cell set to 0");
    return 0.0;
  }
  const double v0 = (*runs[base_at])[var];
  const double denom = std::max(std::abs(v0), plan.denominator_floor);
  if (std::abs(v0) < plan.denominator_floor) notes.push_back(label + ": denominator floor used");
  double sum = 0.0;
  std::size_t used = 0;
  std::size_t failed = 0;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    if (s == base_at) continue;
    if (!runs[s]) {
      ++failed;
      continue;
    }
    sum += ((*runs[s])[var] - v0) / denom;
    ++used;
  }
  if (failed) notes.push_back(label + ": " + std::to_string(failed) + " divergent samples excluded");
  if (used == 0) {
    notes.push_back(label + ": no surviving samples, cell set to 0");
    return 0.0;
  }
  return sum / static_cast<double>(used);
}

}  // namespace detail

inline IntraSensitivityMatrix intra_sensitivity(const Model& model, ClassCode cls, const PerturbationPlan& plan = {}) {
  plan.validate();
  const auto& spec = model.spec(cls);
  IntraSensitivityMatrix out;
  out.cls = cls;
  out.class_name = spec.name;
  std::vector<VarId> vars;
  for (const auto& v : spec.variables) {
    out.rows.push_back(v.name);
    vars.push_back(VarId{{spec.name, v.name}});
  }
  for (const auto& p : spec.parameters) out.cols.push_back(p.name);
  out.cells.assign(out.rows.size(), std::vector<double>(out.cols.size(), 0.0));
  if (out.cols.empty() || out.rows.empty()) return out;

  const auto base = baseline_parameters(model);
  std::string failure;
  const auto base_run = detail::steady_run(model, base, {}, vars, plan, failure);
  if (!base_run) out.notes.push_back("baseline run diverged: " + failure);

  for (std::size_t j = 0; j < spec.parameters.size(); ++j) {
    const auto& ps = spec.parameters[j];
    const ParamId pid{{spec.name, ps.name}};
    auto [grid, at] = range_grid(ps.min, ps.max, plan.samples_per_range, ps.baseline);
    std::vector<std::optional<std::vector<double>>> runs(grid.size());
    for (std::size_t s = 0; s < grid.size(); ++s) {
      if (s == at) {
        runs[s] = base_run;
        continue;
      }
      auto params = base;
      for (auto& pv : params)
        if (pv.id == pid) pv.value = grid[s];
      runs[s] = detail::steady_run(model, params, {}, vars, plan, failure);
      if (!runs[s]) out.notes.push_back(pid.str() + "=" + text::format_double(grid[s]) + " diverged: " + failure);
    }
    for (std::size_t i = 0; i < vars.size(); ++i)
      out.cells[i][j] = detail::fractional_cell(runs, at, i, plan, "cell " + out.rows[i] + " " + ps.name, out.notes);
  }
  return out;
}

inline InterSensitivityMatrix inter_sensitivity(const Model& model, const RelationshipMatrix& relationships,
                                                const PerturbationPlan& plan = {}) {
  plan.validate();
  if (relationships.size() == 0 || !staleness(relationships, model).empty())
    throw Error(Errc::MissingRelationships, "relationship matrix does not describe this model");
  InterSensitivityMatrix out;
  const auto base = baseline_parameters(model);
  const auto n = relationships.size();
  std::vector<VarId> skipped_seen;

  for (std::size_t i = 0; i < n; ++i) {
    const auto& src = model.spec(relationships.classes[i].code);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || relationships.cells[i][j] != Relation::Influences) continue;
      const auto& dst = model.spec(relationships.classes[j].code);
      std::vector<VarId> dst_vars;
      for (const auto& v : dst.variables) dst_vars.push_back(VarId{{dst.name, v.name}});
      if (dst_vars.empty()) continue;

      // Frozen context: the other influencers of the target sit at their initial values.
      std::vector<ClampDirective> frozen;
      for (auto other : influencers_of(relationships, dst.code)) {
        if (other == src.code) continue;
        for (const auto& v : model.spec(other).variables) frozen.push_back({other, v.name, v.initial});
      }

      for (const auto& sv : src.variables) {
        const VarId sid{{src.name, sv.name}};
        if (!sv.has_range() || !(*sv.min < *sv.max)) {
          if (std::find(skipped_seen.begin(), skipped_seen.end(), sid) == skipped_seen.end()) {
            skipped_seen.push_back(sid);
            out.skipped.push_back(sid);
          }
          continue;
        }
        auto [grid, at] = range_grid(*sv.min, *sv.max, plan.samples_per_range, sv.initial);
        std::vector<std::optional<std::vector<double>>> runs(grid.size());
        for (std::size_t s = 0; s < grid.size(); ++s) {
          auto clamps = frozen;
          for (const auto& other : src.variables)
            clamps.push_back({src.code, other.name, other.name == sv.name ? grid[s] : other.initial});
          std::string failure;
          runs[s] = detail::steady_run(model, base, clamps, dst_vars, plan, failure);
          if (!runs[s]) out.notes.push_back(sid.str() + "=" + text::format_double(grid[s]) + " diverged: " + failure);
        }
        for (std::size_t t = 0; t < dst_vars.size(); ++t) {
          const double v = detail::fractional_cell(runs, at, t, plan, "edge " + sid.str() + " " + dst_vars[t].str(),
                                                   out.notes);
          out.entries.push_back({sid, dst_vars[t], v});
        }
      }
    }
  }
  std::sort(out.entries.begin(), out.entries.end(), [](const auto& a, const auto& b) {
    return std::tie(a.source, a.target) < std::tie(b.source, b.target);
  });
  std::sort(out.skipped.begin(), out.skipped.end());
  return out;
}

inline SensitivityTables analyse_sensitivity(const Model& model, const RelationshipMatrix& relationships,
                                             const PerturbationPlan& plan = {}) {
  SensitivityTables t;
  for (const auto& c : model.classes()) t.intra.push_back(intra_sensitivity(model, c.code, plan));
  t.inter = inter_sensitivity(model, relationships, plan);
  return t;
}

inline std::string serialize(const SensitivityTables& t) {
  using text::format_double;
  std::string out = "sensitivity\n";
  for (const auto& m : t.intra) {
    out += "intra " + std::to_string(to_int(m.cls)) + " " + m.class_name + "\n";
    out += "cols";
    for (const auto& c : m.cols) out += " " + c;
    out += "\n";
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
      out += "row " + m.rows[i];
      for (double v : m.cells[i]) out += " " + format_double(v);
      out += "\n";
    }
    for (const auto& n : m.notes) out += "note " + n + "\n";
  }
  out += "inter\n";
  for (const auto& e : t.inter.entries)
    out += "edge " + e.source.str() + " " + e.target.str() + " " + format_double(e.value) + "\n";
  for (const auto& s : t.inter.skipped) out += "skip " + s.str() + "\n";
  for (const auto& n : t.inter.notes) out += "note " + n + "\n";
  return out;
}

inline SensitivityTables parse_sensitivities(std::string_view content) {
  using Violation = FileError::Violation;
  std::vector<Violation> bad;
  SensitivityTables t;
  enum class Section { None, Intra, Inter } section = Section::None;
  bool header = false;
  std::size_t ln = 0;
  auto var_id = [](std::string_view s) -> std::optional<VarId> {
    auto p = text::split_dotted(s);
    if (!p) return std::nullopt;
    return VarId{{p->first, p->second}};
  };
  for (const auto& raw : text::lines(content)) {
    ++ln;
    auto line = text::trim(raw);
    if (line.empty()) continue;
    if (!header) {
      if (line != "sensitivity") bad.push_back({ln, "expected 'sensitivity' header"});
      header = true;
      continue;
    }
    auto tok = text::split_ws(line);
    const auto kw = tok[0];
    if (kw == "note") {
      auto body = std::string(text::trim(line.substr(4)));
      if (section == Section::Intra) t.intra.back().notes.push_back(body);
      else if (section == Section::Inter) t.inter.notes.push_back(body);
      else bad.push_back({ln, "note outside a section"});
    } else if (kw == "intra") {
      if (section == Section::Inter) bad.push_back({ln, "intra after inter section"});
      std::optional<std::int32_t> code;
      if (tok.size() == 3) code = text::parse_int<std::int32_t>(tok[1]);
      if (!code || *code <= 0) {
        bad.push_back({ln, "expected 'intra <code> <class>'"});
        section = Section::None;
        continue;
      }
      for (const auto& m : t.intra)
        if (to_int(m.cls) == *code || m.class_name == tok[2]) bad.push_back({ln, "duplicate intra section"});
      IntraSensitivityMatrix m;
      m.cls = ClassCode{*code};
      m.class_name = std::string(tok[2]);
      t.intra.push_back(std::move(m));
      section = Section::Intra;
    } else if (kw == "cols") {
      if (section != Section::Intra || !t.intra.back().cols.empty() || !t.intra.back().rows.empty()) {
        bad.push_back({ln, "cols must directly follow an intra header"});
        continue;
      }
      for (std::size_t i = 1; i < tok.size(); ++i) t.intra.back().cols.emplace_back(tok[i]);
    } else if (kw == "row") {
      if (section != Section::Intra || tok.size() < 2) {
        bad.push_back({ln, "row outside an intra section"});
        continue;
      }
      auto& m = t.intra.back();
      if (tok.size() - 2 != m.cols.size()) {
        bad.push_back({ln, "row has " + std::to_string(tok.size() - 2) + " cells, expected " + std::to_string(m.cols.size())});
        continue;
      }
      std::vector<double> cells;
      for (std::size_t i = 2; i < tok.size(); ++i) {
        auto v = text::parse_double(tok[i]);
        if (!v) bad.push_back({ln, "bad cell '" + std::string(tok[i]) + "'"});
        cells.push_back(v.value_or(0.0));
      }
      m.rows.emplace_back(tok[1]);
      m.cells.push_back(std::move(cells));
    } else if (kw == "inter") {
      if (section == Section::Inter || tok.size() != 1) bad.push_back({ln, "duplicate or malformed inter header"});
      section = Section::Inter;
    } else if (kw == "edge") {
      if (section != Section::Inter || tok.size() != 4) {
        bad.push_back({ln, "expected 'edge <Class.var> <Class.var> <value>' inside inter"});
        continue;
      }
      auto s = var_id(tok[1]);
      auto d = var_id(tok[2]);
      auto v = text::parse_double(tok[3]);
      if (!s || !d || !v) {
        bad.push_back({ln, "malformed edge"});
        continue;
      }
      if (s->cls == d->cls) bad.push_back({ln, "edge within one class " + s->cls});
      t.inter.entries.push_back({*s, *d, *v});
    } else if (kw == "skip") {
      auto s = tok.size() == 2 ? var_id(tok[1]) : std::nullopt;
      if (section != Section::Inter || !s) {
        bad.push_back({ln, "expected 'skip <Class.var>' inside inter"});
        continue;
      }
      t.inter.skipped.push_back(*s);
    } else {
      bad.push_back({ln, "unknown record '" + std::string(kw) + "'"});
    }
  }
  if (!header) bad.push_back({0, "missing 'sensitivity' header"});
  if (!bad.empty()) throw FileError(Errc::MalformedKnowledgeFile, std::move(bad));
  return t;
}

inline void save_sensitivities(const SensitivityTables& t, const std::filesystem::path& path) {
  text::write_file(path, serialize(t));
}

inline SensitivityTables load_sensitivities(const std::filesystem::path& path) {
  return parse_sensitivities(text::read_file(path));
}

}  // namespace ecocal

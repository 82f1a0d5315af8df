#pragma once

// Model database (.model) and observation (.obs) files.
//
// .model grammar, one record per line, `#` starts a comment:
//   model <id>
//   clock t0=<s> dt=<s> horizon=<s> [period=<s>]
//   conserved <Class.var> ...
//   class name=<n> code=<int> behavior=<b>
//   param class=<n> name=<p> value=<v> min=<v> max=<v> [unit=<u>]
//   var class=<n> name=<p> init=<v> [min=<v> max=<v>] [unit=<u>]
// `morphology`, `geometry`, `dimensions`, `cells` and `grid` records are
// accepted and ignored with a warning: only 0D models are simulated.
//
// .obs grammar: header `time,target,value,band`, then rows
//   <seconds>,<Class.var>,<value>,[band]

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ecocal/error.hpp"
#include "ecocal/fitness.hpp"
#include "ecocal/fixtures.hpp"
#include "ecocal/kernel.hpp"
#include "ecocal/text.hpp"

namespace ecocal {

struct ModelDatabase {
  std::string id;
  SimClock clock;
  std::optional<double> forcing_period;
  std::vector<ClassSpec> classes;
  std::vector<VarId> conserved;
  std::vector<std::string> warnings;

  /// Behavior set the classes draw from, e.g. `npz` for `npz.nutrient`.
  std::string fixture() const {
    std::set<std::string> sets;
    for (const auto& c : classes) sets.insert(c.behavior.substr(0, c.behavior.find('.')));
    std::string out;
    for (const auto& s : sets) out += (out.empty() ? "" : "+") + s;
    return out;
  }

  bool closed() const noexcept { return !conserved.empty(); }

  bool operator==(const ModelDatabase& o) const {
    return id == o.id && clock == o.clock && forcing_period == o.forcing_period && classes == o.classes &&
           conserved == o.conserved;
  }
};

namespace detail {

struct Fields {
  std::map<std::string, std::string, std::less<>> kv;
  std::vector<std::string> errors;
};

inline Fields key_values(const std::vector<std::string_view>& tokens, std::size_t from,
                         std::initializer_list<std::string_view> allowed) {
  Fields f;
  for (std::size_t i = from; i < tokens.size(); ++i) {
    auto eq = tokens[i].find('=');
    if (eq == std::string_view::npos || eq == 0) {
      f.errors.push_back("expected key=value, got '" + std::string(tokens[i]) + "'");
      continue;
    }
    auto key = tokens[i].substr(0, eq);
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      f.errors.push_back("unknown key '" + std::string(key) + "'");
      continue;
    }
    if (!f.kv.emplace(std::string(key), std::string(tokens[i].substr(eq + 1))).second)
      f.errors.push_back("duplicate key '" + std::string(key) + "'");
  }
  return f;
}

}  // namespace detail

inline ModelDatabase parse_model_db(std::string_view content, const BehaviorCatalog& catalog) {
  using Violation = FileError::Violation;
  std::vector<Violation> bad;
  std::vector<Violation> unknown_behaviors;
  ModelDatabase db;
  bool have_model = false;
  bool have_clock = false;
  std::map<std::string, std::size_t, std::less<>> class_index;
  std::map<std::string, std::size_t, std::less<>> class_line;
  struct Conserved {
    std::size_t line;
    std::string text;
  };
  std::vector<Conserved> conserved;
  struct Member {
    std::size_t line;
    std::string cls;
    bool is_param;
    ParameterSpec param;
    VariableSpec var;
  };
  std::vector<Member> members;

  auto require_num = [&](detail::Fields& f, std::string_view key, std::size_t line,
                         const std::string& where) -> std::optional<double> {
    auto it = f.kv.find(key);
    if (it == f.kv.end()) {
      bad.push_back({line, where + ": missing " + std::string(key)});
      return std::nullopt;
    }
    auto v = text::parse_double(it->second);
    if (!v) bad.push_back({line, where + ": bad number for " + std::string(key) + " '" + it->second + "'"});
    return v;
  };
  auto optional_num = [&](detail::Fields& f, std::string_view key, std::size_t line,
                          const std::string& where) -> std::optional<double> {
    if (!f.kv.contains(key)) return std::nullopt;
    return require_num(f, key, line, where);
  };
  auto require_str = [&](detail::Fields& f, std::string_view key, std::size_t line,
                         const std::string& where) -> std::optional<std::string> {
    auto it = f.kv.find(key);
    if (it == f.kv.end() || it->second.empty()) {
      bad.push_back({line, where + ": missing " + std::string(key)});
      return std::nullopt;
    }
    return it->second;
  };

  const auto all = text::lines(content);
  for (std::size_t ln = 1; ln <= all.size(); ++ln) {
    std::string_view line = all[ln - 1];
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty()) continue;
    auto tokens = text::split_ws(line);
    const auto kw = tokens[0];

    if (kw == "model") {
      if (have_model) bad.push_back({ln, "duplicate model record"});
      if (tokens.size() != 2) {
        bad.push_back({ln, "expected 'model <id>'"});
      } else {
        db.id = std::string(tokens[1]);
        have_model = true;
      }
    } else if (kw == "clock") {
      auto f = detail::key_values(tokens, 1, {"t0", "dt", "horizon", "period"});
      for (auto& e : f.errors) bad.push_back({ln, "clock: " + e});
      auto t0 = require_num(f, "t0", ln, "clock");
      auto dt = require_num(f, "dt", ln, "clock");
      auto hz = require_num(f, "horizon", ln, "clock");
      auto period = optional_num(f, "period", ln, "clock");
      if (have_clock) bad.push_back({ln, "duplicate clock record"});
      if (t0 && dt && hz) {
        SimClock c{*t0, *dt, *hz};
        try {
          c.validate();
          db.clock = c;
          have_clock = true;
        } catch (const Error& e) {
          bad.push_back({ln, std::string("clock: ") + e.what()});
        }
      }
      if (period) {
        if (*period > 0.0) db.forcing_period = period;
        else bad.push_back({ln, "clock: period must be > 0"});
      }
    } else if (kw == "conserved") {
      if (tokens.size() < 2) bad.push_back({ln, "conserved needs at least one Class.var"});
      for (std::size_t i = 1; i < tokens.size(); ++i) conserved.push_back({ln, std::string(tokens[i])});
    } else if (kw == "class") {
      auto f = detail::key_values(tokens, 1, {"name", "code", "behavior"});
      for (auto& e : f.errors) bad.push_back({ln, "class: " + e});
      auto name = require_str(f, "name", ln, "class");
      auto code_s = require_str(f, "code", ln, "class " + name.value_or("?"));
      auto behavior = require_str(f, "behavior", ln, "class " + name.value_or("?"));
      std::optional<std::int32_t> code;
      if (code_s) {
        code = text::parse_int<std::int32_t>(*code_s);
        if (!code || *code <= 0) {
          bad.push_back({ln, "class " + name.value_or("?") + ": code must be a positive integer"});
          code.reset();
        }
      }
      if (name && code && behavior) {
        if (class_index.contains(*name)) {
          bad.push_back({ln, "duplicate class name " + *name});
          continue;
        }
        for (const auto& c : db.classes)
          if (to_int(c.code) == *code) bad.push_back({ln, "duplicate class code " + *code_s});
        if (!catalog.contains(*behavior)) unknown_behaviors.push_back({ln, "unknown behavior '" + *behavior + "'"});
        class_index[*name] = db.classes.size();
        class_line[*name] = ln;
        db.classes.push_back(ClassSpec{*name, ClassCode{*code}, {}, {}, *behavior});
      }
    } else if (kw == "param") {
      auto f = detail::key_values(tokens, 1, {"class", "name", "value", "min", "max", "unit"});
      for (auto& e : f.errors) bad.push_back({ln, "param: " + e});
      auto cls = require_str(f, "class", ln, "param");
      auto name = require_str(f, "name", ln, "param");
      const auto where = "parameter " + cls.value_or("?") + "." + name.value_or("?");
      auto value = require_num(f, "value", ln, where);
      auto mn = require_num(f, "min", ln, where);
      auto mx = require_num(f, "max", ln, where);
      if (mn && mx && !(*mn < *mx)) bad.push_back({ln, where + ": min must be < max"});
      else if (value && mn && mx && (*value < *mn || *value > *mx))
        bad.push_back({ln, where + ": value outside [min, max]"});
      if (cls && name && value && mn && mx) {
        auto unit = f.kv.contains("unit") ? f.kv.find("unit")->second : std::string("-");
        members.push_back({ln, *cls, true, ParameterSpec{*name, *value, *mn, *mx, unit}, {}});
      }
    } else if (kw == "var") {
      auto f = detail::key_values(tokens, 1, {"class", "name", "init", "min", "max", "unit"});
      for (auto& e : f.errors) bad.push_back({ln, "var: " + e});
      auto cls = require_str(f, "class", ln, "var");
      auto name = require_str(f, "name", ln, "var");
      const auto where = "variable " + cls.value_or("?") + "." + name.value_or("?");
      auto init = require_num(f, "init", ln, where);
      auto mn = optional_num(f, "min", ln, where);
      auto mx = optional_num(f, "max", ln, where);
      if (f.kv.contains("min") != f.kv.contains("max")) bad.push_back({ln, where + ": range needs both min and max"});
      else if (mn && mx && !(*mn <= *mx)) bad.push_back({ln, where + ": min must be <= max"});
      else if (init && mn && mx && (*init < *mn || *init > *mx))
        bad.push_back({ln, where + ": init outside [min, max]"});
      if (cls && name && init) {
        auto unit = f.kv.contains("unit") ? f.kv.find("unit")->second : std::string("-");
        members.push_back({ln, *cls, false, {}, VariableSpec{*name, *init, mn, mx, unit}});
      }
    } else if (kw == "morphology" || kw == "geometry" || kw == "dimensions" || kw == "cells" || kw == "grid") {
      db.warnings.push_back("line " + std::to_string(ln) + ": '" + std::string(kw) +
                            "' ignored, only 0D models are simulated");
    } else {
      bad.push_back({ln, "unknown record '" + std::string(kw) + "'"});
    }
  }

  if (!have_model) bad.push_back({0, "missing 'model <id>' record"});
  if (!have_clock) bad.push_back({0, "missing valid 'clock' record"});
  for (auto& m : members) {
    auto it = class_index.find(m.cls);
    if (it == class_index.end()) {
      bad.push_back({m.line, "unknown class '" + m.cls + "'"});
      continue;
    }
    auto& spec = db.classes[it->second];
    if (m.is_param) spec.parameters.push_back(m.param);
    else spec.variables.push_back(m.var);
  }
  for (const auto& c : db.classes) {
    for (const auto& p : validate(c)) {
      // Range problems were already reported against their own lines.
      if (p.find("duplicate") != std::string::npos || p.find("identifier") != std::string::npos)
        bad.push_back({class_line[c.name], p});
    }
  }
  for (const auto& c : conserved) {
    auto parts = text::split_dotted(c.text);
    bool ok = false;
    if (parts) {
      if (auto it = class_index.find(parts->first); it != class_index.end())
        for (const auto& v : db.classes[it->second].variables) ok = ok || v.name == parts->second;
    }
    if (!ok) bad.push_back({c.line, "conserved: unknown variable '" + c.text + "'"});
    else db.conserved.push_back(VarId{{parts->first, parts->second}});
  }

  if (!bad.empty()) {
    bad.insert(bad.end(), unknown_behaviors.begin(), unknown_behaviors.end());
    std::sort(bad.begin(), bad.end(), [](const auto& a, const auto& b) { return a.line < b.line; });
    throw FileError(Errc::MalformedModelFile, std::move(bad));
  }
  if (!unknown_behaviors.empty()) throw FileError(Errc::UnknownBehavior, std::move(unknown_behaviors));
  return db;
}

inline ModelDatabase load_model_db(const std::filesystem::path& path, const BehaviorCatalog& catalog) {
  return parse_model_db(text::read_file(path), catalog);
}

/// Canonical text form; parsing it yields an equal database.
inline std::string serialize(const ModelDatabase& db) {
  using text::format_double;
  std::string out = "model " + db.id + "\n";
  out += "clock t0=" + format_double(db.clock.t0) + " dt=" + format_double(db.clock.dt) +
         " horizon=" + format_double(db.clock.horizon);
  if (db.forcing_period) out += " period=" + format_double(*db.forcing_period);
  out += "\n";
  if (!db.conserved.empty()) {
    out += "conserved";
    for (const auto& v : db.conserved) out += " " + v.str();
    out += "\n";
  }
  for (const auto& c : db.classes)
    out += "class name=" + c.name + " code=" + std::to_string(to_int(c.code)) + " behavior=" + c.behavior + "\n";
  for (const auto& c : db.classes) {
    for (const auto& p : c.parameters)
      out += "param class=" + c.name + " name=" + p.name + " value=" + format_double(p.baseline) +
             " min=" + format_double(p.min) + " max=" + format_double(p.max) + " unit=" + p.unit + "\n";
    for (const auto& v : c.variables) {
      out += "var class=" + c.name + " name=" + v.name + " init=" + format_double(v.initial);
      if (v.has_range()) out += " min=" + format_double(*v.min) + " max=" + format_double(*v.max);
      out += " unit=" + v.unit + "\n";
    }
  }
  return out;
}

inline Model instantiate(const ModelDatabase& db, const BehaviorCatalog& catalog) {
  Model model;
  for (const auto& c : db.classes) {
    const auto* b = catalog.find(c.behavior);
    if (!b) throw Error(Errc::UnknownBehavior, c.behavior);
    model.register_class(c, *b);
  }
  model.set_clock(db.clock);
  return model;
}

/// Relative drift of the declared conserved quantity between consecutive samples, maximised over the run.
inline double max_conservation_drift(const ModelDatabase& db, const Trajectory& traj) {
  double worst = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    double total = 0.0;
    for (const auto& v : db.conserved) total += (*traj.find(v))[i];
    if (i > 0) worst = std::max(worst, std::abs(total - prev) / std::max(std::abs(prev), 1e-300));
    prev = total;
  }
  return worst;
}

inline ObservationSet parse_observations(std::string_view content) {
  using Violation = FileError::Violation;
  std::vector<Violation> bad;
  ObservationSet set;
  const auto all = text::lines(content);
  std::size_t ln = 0;
  bool header = false;
  for (const auto& raw : all) {
    ++ln;
    auto line = text::trim(raw);
    if (line.empty()) continue;
    if (!header) {
      if (line != "time,target,value,band") bad.push_back({ln, "expected header 'time,target,value,band'"});
      header = true;
      continue;
    }
    auto fields = text::split(line, ',');
    if (fields.size() < 3 || fields.size() > 4) {
      bad.push_back({ln, "expected 3 or 4 comma-separated fields"});
      continue;
    }
    ObservationRecord rec;
    auto t = text::parse_double(text::trim(fields[0]));
    if (!t || *t < 0.0) bad.push_back({ln, "time must be a non-negative number"});
    else rec.time = *t;
    auto target = text::split_dotted(text::trim(fields[1]));
    if (!target) bad.push_back({ln, "target must be Class.Variable"});
    else rec.target = VarId{{target->first, target->second}};
    auto v = text::parse_double(text::trim(fields[2]));
    if (!v) bad.push_back({ln, "value must be a finite number"});
    else rec.value = *v;
    if (fields.size() == 4 && !text::trim(fields[3]).empty()) {
      auto b = text::parse_double(text::trim(fields[3]));
      if (!b || *b < 0.0) bad.push_back({ln, "band must be a non-negative number"});
      else rec.band = *b;
    }
    set.records.push_back(std::move(rec));
  }
  if (!header) bad.push_back({0, "missing header"});
  if (!bad.empty()) throw FileError(Errc::MalformedObservationFile, std::move(bad));
  if (set.empty()) throw Error(Errc::NoObservations, "observation file has no records");
  return set;
}

inline ObservationSet load_observations(const std::filesystem::path& path) {
  return parse_observations(text::read_file(path));
}

inline std::string serialize(const ObservationSet& set) {
  std::string out = "time,target,value,band\n";
  for (const auto& r : set.records) {
    out += text::format_double(r.time) + "," + r.target.str() + "," + text::format_double(r.value) + ",";
    if (r.band) out += text::format_double(*r.band);
    out += "\n";
  }
  return out;
}

/// `count` times spread evenly over (t0, horizon], ending at the horizon.
inline std::vector<double> evenly_spaced_times(const SimClock& clock, std::size_t count) {
  std::vector<double> out;
  const double span = static_cast<double>(clock.steps()) * clock.dt;
  for (std::size_t i = 1; i <= count; ++i)
    out.push_back(clock.t0 + span * static_cast<double>(i) / static_cast<double>(count));
  return out;
}

/// Standard normal deviates from a seeded 64-bit Mersenne Twister (Box-Muller).
/// Spelled out so the stream is identical on every standard library.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

  double next() {
    if (spare_) return *std::exchange(spare_, std::nullopt);
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
  std::optional<double> spare_;
};

/// Samples the targets of a run at `true_parameters` and applies multiplicative noise
/// value * (1 + noise_fraction * e), e ~ N(0, 1).
inline ObservationSet generate_synthetic_observations(const ModelDatabase& db, const BehaviorCatalog& catalog,
                                                      const ParameterVector& true_parameters,
                                                      const std::vector<double>& sample_times,
                                                      const std::vector<VarId>& targets, double noise_fraction,
                                                      std::uint64_t seed) {
  if (!(noise_fraction >= 0.0)) throw Error(Errc::OutOfRange, "noise fraction must be >= 0");
  Model model = instantiate(db, catalog);
  model.set_parameters(true_parameters);
  const double end = db.clock.t0 + static_cast<double>(db.clock.steps()) * db.clock.dt;
  for (double t : sample_times)
    if (t < db.clock.t0 || t > end) throw Error(Errc::OutOfRange, "sample time outside the simulated span");
  const auto traj = model.run(db.clock);
  GaussianStream noise(seed);
  ObservationSet set;
  for (const auto& target : targets) {
    const auto* series = traj.find(target);
    if (!series) throw Error(Errc::UnknownVariable, target.str());
    for (double t : sample_times) {
      double v = *detail::interpolate(traj, *series, t);
      if (noise_fraction > 0.0) v *= 1.0 + noise_fraction * noise.next();
      set.records.push_back({t, target, v, std::nullopt});
    }
  }
  return set;
}

}  // namespace ecocal

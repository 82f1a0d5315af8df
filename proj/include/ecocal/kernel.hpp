#pragma once

// Discrete-time simulation kernel. Model classes own variables and parameters
// and reach each other only through the shell: Inquiry reads, Update writes.
// Steps are two-phase: every behavior sees start-of-step values, and all
// writes are committed after the last class has run.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ecocal/error.hpp"

namespace ecocal {

enum class ClassCode : std::int32_t {};

constexpr std::int32_t to_int(ClassCode c) noexcept { return static_cast<std::int32_t>(c); }

struct ParameterSpec {
  std::string name;
  double baseline = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::string unit;

  bool operator==(const ParameterSpec&) const = default;
};

struct VariableSpec {
  std::string name;
  double initial = 0.0;
  std::optional<double> min;
  std::optional<double> max;
  std::string unit;

  bool has_range() const noexcept { return min.has_value() && max.has_value(); }
  bool operator==(const VariableSpec&) const = default;
};

struct ClassSpec {
  std::string name;
  ClassCode code{};
  std::vector<ParameterSpec> parameters;
  std::vector<VariableSpec> variables;
  std::string behavior;

  bool operator==(const ClassSpec&) const = default;
};

/// Lists every invariant a class spec violates; empty means valid.
inline std::vector<std::string> validate(const ClassSpec& spec) {
  std::vector<std::string> problems;
  if (spec.name.empty()) problems.push_back("class name is empty");
  if (to_int(spec.code) <= 0) problems.push_back("class " + spec.name + ": code must be positive");
  std::vector<std::string> names;
  for (const auto& p : spec.parameters) {
    const auto where = spec.name + "." + p.name;
    if (!std::isfinite(p.baseline) || !std::isfinite(p.min) || !std::isfinite(p.max)) {
      problems.push_back("parameter " + where + ": non-finite value");
    } else if (!(p.min < p.max)) {
      problems.push_back("parameter " + where + ": min must be < max");
    } else if (p.baseline < p.min || p.baseline > p.max) {
      problems.push_back("parameter " + where + ": baseline outside [min, max]");
    }
    names.push_back(p.name);
  }
  for (const auto& v : spec.variables) {
    const auto where = spec.name + "." + v.name;
    if (!std::isfinite(v.initial)) problems.push_back("variable " + where + ": non-finite initial");
    if (v.min.has_value() != v.max.has_value()) {
      problems.push_back("variable " + where + ": range needs both min and max");
    } else if (v.has_range()) {
      if (!(*v.min <= *v.max)) problems.push_back("variable " + where + ": min must be <= max");
      else if (v.initial < *v.min || v.initial > *v.max)
        problems.push_back("variable " + where + ": initial outside [min, max]");
    }
    names.push_back(v.name);
  }
  std::sort(names.begin(), names.end());
  for (std::size_t i = 1; i < names.size(); ++i) {
    if (names[i] == names[i - 1]) problems.push_back("class " + spec.name + ": duplicate name " + names[i]);
  }
  for (const auto& n : names) {
    if (n.empty() || n.find_first_of(". \t") != std::string::npos)
      problems.push_back("class " + spec.name + ": bad identifier '" + n + "'");
  }
  return problems;
}

struct SimClock {
  double t0 = 0.0;
  double dt = 1.0;
  double horizon = 1.0;

  std::uint64_t steps() const {
    return static_cast<std::uint64_t>(std::floor((horizon - t0) / dt + 1e-9));
  }

  void validate() const {
    if (!(std::isfinite(t0) && std::isfinite(dt) && std::isfinite(horizon)))
      throw Error(Errc::InvalidSpec, "clock values must be finite");
    if (!(dt > 0.0)) throw Error(Errc::InvalidSpec, "clock dt must be > 0");
    if (horizon - t0 < dt * (1.0 - 1e-12)) throw Error(Errc::InvalidSpec, "clock horizon must cover at least one step");
  }

  bool operator==(const SimClock&) const = default;
};

/// Names a class member by class name and member name, e.g. `Phytoplankton.biomass`.
struct QualifiedName {
  std::string cls;
  std::string name;

  std::string str() const { return cls + "." + name; }
  auto operator<=>(const QualifiedName&) const = default;
  bool operator==(const QualifiedName&) const = default;
};

struct VarId : QualifiedName {};
struct ParamId : QualifiedName {};

enum class MessageKind { Inquiry, Update, ClampOverride };

struct Message {
  MessageKind kind = MessageKind::Inquiry;
  ClassCode caller{};
  ClassCode callee{};
  std::string variable;
  double value = 0.0;
  std::uint64_t step = 0;

  bool self() const noexcept { return caller == callee; }
  bool operator==(const Message&) const = default;
};

struct ClampDirective {
  ClassCode cls{};
  std::string variable;
  double value = 0.0;
};

struct ParameterValue {
  ParamId id;
  double value = 0.0;

  bool operator==(const ParameterValue&) const = default;
};

using ParameterVector = std::vector<ParameterValue>;

struct SeriesKey {
  ClassCode code{};
  std::string cls;
  std::string var;

  bool operator==(const SeriesKey&) const = default;
};

/// Simulation output. All series share `step_indices`; sample 0 is the state a run started from.
struct Trajectory {
  SimClock clock;
  std::vector<std::uint64_t> step_indices;
  std::vector<SeriesKey> keys;
  std::vector<std::vector<double>> series;

  std::size_t size() const noexcept { return step_indices.size(); }
  bool empty() const noexcept { return step_indices.empty(); }
  double time_at(std::size_t i) const { return clock.t0 + static_cast<double>(step_indices[i]) * clock.dt; }

  const std::vector<double>* find(std::string_view cls, std::string_view var) const {
    for (std::size_t i = 0; i < keys.size(); ++i)
      if (keys[i].cls == cls && keys[i].var == var) return &series[i];
    return nullptr;
  }
  const std::vector<double>* find(const VarId& id) const { return find(id.cls, id.name); }
  const std::vector<double>* find(ClassCode code, std::string_view var) const {
    for (std::size_t i = 0; i < keys.size(); ++i)
      if (keys[i].code == code && keys[i].var == var) return &series[i];
    return nullptr;
  }

  bool operator==(const Trajectory&) const = default;
};

class Model;
class ShellPort;
class ClassState;

/// A class step rule. It sees only the shell handle and its own state.
using Behavior = std::function<void(ShellPort&, ClassState&)>;

/// The behavior's view of its own class.
class ClassState {
 public:
  double get(std::string_view var) const;
  void set(std::string_view var, double value);
  double param(std::string_view name) const;
  ClassCode code() const;
  const std::string& name() const;

 private:
  friend class Model;
  ClassState(Model& model, std::size_t slot) : model_(&model), slot_(slot) {}
  Model* model_;
  std::size_t slot_;
};

/// The shell as seen by one calling class.
class ShellPort {
 public:
  double inquire(ClassCode callee, std::string_view name);
  double inquire(std::string_view callee_class, std::string_view name);
  void update(ClassCode callee, std::string_view var, double value);
  void update(std::string_view callee_class, std::string_view var, double value);

  double time() const;
  double dt() const;
  std::uint64_t step() const;
  ClassCode caller() const noexcept { return caller_; }

 private:
  friend class Model;
  ShellPort(Model& model, ClassCode caller) : model_(&model), caller_(caller) {}
  Model* model_;
  ClassCode caller_;
};

class Model {
 public:
  Model() = default;

  void register_class(ClassSpec spec, Behavior behavior) {
    if (auto problems = validate(spec); !problems.empty()) {
      std::string msg;
      for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
      throw Error(Errc::InvalidSpec, msg);
    }
    if (!behavior) throw Error(Errc::InvalidSpec, "class " + spec.name + " has no behavior");
    for (const auto& s : slots_) {
      if (s.spec.code == spec.code)
        throw Error(Errc::DuplicateClassCode, "code " + std::to_string(to_int(spec.code)) + " already registered");
      if (s.spec.name == spec.name) throw Error(Errc::InvalidSpec, "class name " + spec.name + " already registered");
    }
    Slot slot;
    slot.behavior = std::move(behavior);
    for (const auto& v : spec.variables) slot.values.push_back(v.initial);
    for (const auto& p : spec.parameters) slot.params.push_back(p.baseline);
    slot.pending.assign(slot.values.size(), 0.0);
    slot.has_pending.assign(slot.values.size(), 0);
    slot.clamps.assign(slot.values.size(), std::nullopt);
    slot.spec = std::move(spec);
    slots_.push_back(std::move(slot));
  }

  std::size_t class_count() const noexcept { return slots_.size(); }
  std::vector<ClassSpec> classes() const {
    std::vector<ClassSpec> out;
    for (const auto& s : slots_) out.push_back(s.spec);
    return out;
  }
  const ClassSpec& spec(ClassCode code) const { return slots_[slot_of(code)].spec; }
  const ClassSpec& spec(std::string_view name) const { return slots_[slot_of(name)].spec; }
  ClassCode code_of(std::string_view class_name) const { return slots_[slot_of(class_name)].spec.code; }
  bool has_class(ClassCode code) const { return find_slot(code).has_value(); }
  bool has_class(std::string_view name) const { return find_slot(name).has_value(); }

  double inquiry(ClassCode caller, ClassCode callee, std::string_view name) {
    const auto& slot = slots_[slot_of(callee)];
    double value = 0.0;
    if (auto vi = var_index(slot, name)) {
      value = slot.values[*vi];
    } else if (auto pi = param_index(slot, name)) {
      value = slot.params[*pi];
    } else {
      throw Error(Errc::UnknownVariable, slot.spec.name + "." + std::string(name));
    }
    if (spy_) trace_.push_back({MessageKind::Inquiry, caller, callee, std::string(name), value, step_});
    return value;
  }

  void update(ClassCode caller, ClassCode callee, std::string_view var, double value) {
    auto& slot = slots_[slot_of(callee)];
    auto vi = var_index(slot, var);
    if (!vi) throw Error(Errc::UnknownVariable, slot.spec.name + "." + std::string(var));
    if (slot.clamps[*vi]) {
      if (spy_) trace_.push_back({MessageKind::ClampOverride, caller, callee, std::string(var), value, step_});
      return;
    }
    slot.pending[*vi] = value;
    slot.has_pending[*vi] = 1;
    if (spy_) trace_.push_back({MessageKind::Update, caller, callee, std::string(var), value, step_});
  }

  /// Committed value, read without tracing.
  double value(ClassCode code, std::string_view var) const {
    const auto& slot = slots_[slot_of(code)];
    auto vi = var_index(slot, var);
    if (!vi) throw Error(Errc::UnknownVariable, slot.spec.name + "." + std::string(var));
    return slot.values[*vi];
  }
  double value(const VarId& id) const { return value(code_of(id.cls), id.name); }

  double parameter(ClassCode code, std::string_view name) const {
    const auto& slot = slots_[slot_of(code)];
    auto pi = param_index(slot, name);
    if (!pi) throw Error(Errc::UnknownParameter, slot.spec.name + "." + std::string(name));
    return slot.params[*pi];
  }
  double parameter(const ParamId& id) const { return parameter(code_of(id.cls), id.name); }

  const ParameterSpec& parameter_spec(const ParamId& id) const {
    const auto& slot = slots_[slot_of(id.cls)];
    auto pi = param_index(slot, id.name);
    if (!pi) throw Error(Errc::UnknownParameter, id.str());
    return slot.spec.parameters[*pi];
  }

  void set_parameter(ClassCode code, std::string_view name, double value) {
    auto& slot = slots_[slot_of(code)];
    auto pi = param_index(slot, name);
    if (!pi) throw Error(Errc::UnknownParameter, slot.spec.name + "." + std::string(name));
    const auto& ps = slot.spec.parameters[*pi];
    if (!std::isfinite(value) || value < ps.min || value > ps.max)
      throw Error(Errc::OutOfRange, slot.spec.name + "." + ps.name + " = " + std::to_string(value));
    slot.params[*pi] = value;
  }
  void set_parameter(const ParamId& id, double value) { set_parameter(code_of(id.cls), id.name, value); }

  ParameterVector parameters() const {
    ParameterVector out;
    for (const auto& s : slots_)
      for (std::size_t i = 0; i < s.params.size(); ++i)
        out.push_back({ParamId{{s.spec.name, s.spec.parameters[i].name}}, s.params[i]});
    return out;
  }
  void set_parameters(const ParameterVector& pv) {
    for (const auto& p : pv) set_parameter(p.id, p.value);
  }

  void clamp(const ClampDirective& c) {
    auto& slot = slots_[slot_of(c.cls)];
    auto vi = var_index(slot, c.variable);
    if (!vi) throw Error(Errc::UnknownVariable, slot.spec.name + "." + c.variable);
    if (!std::isfinite(c.value)) throw Error(Errc::OutOfRange, "clamp value must be finite");
    slot.clamps[*vi] = c.value;
    slot.values[*vi] = c.value;
  }
  void clear_clamps() {
    for (auto& s : slots_) std::fill(s.clamps.begin(), s.clamps.end(), std::nullopt);
  }

  void set_spy(bool on) noexcept { spy_ = on; }
  bool spying() const noexcept { return spy_; }
  const std::vector<Message>& trace() const noexcept { return trace_; }
  std::vector<Message> drain_trace() { return std::exchange(trace_, {}); }

  std::uint64_t step_index() const noexcept { return step_; }
  double time() const noexcept { return clock_.t0 + static_cast<double>(step_) * clock_.dt; }
  const SimClock& clock() const noexcept { return clock_; }
  void set_clock(const SimClock& clock) {
    clock.validate();
    clock_ = clock;
  }

  void step() {
    if (slots_.empty()) throw Error(Errc::EmptyModel, "no classes registered");
    struct PendingGuard {
      Model& m;
      ~PendingGuard() {
        for (auto& s : m.slots_) std::fill(s.has_pending.begin(), s.has_pending.end(), 0);
      }
    } guard{*this};
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      ShellPort port(*this, slots_[i].spec.code);
      ClassState state(*this, i);
      slots_[i].behavior(port, state);
    }
    const auto next = step_ + 1;
    for (auto& s : slots_) {
      for (std::size_t v = 0; v < s.values.size(); ++v) {
        if (s.clamps[v]) s.values[v] = *s.clamps[v];
        else if (s.has_pending[v]) s.values[v] = s.pending[v];
        if (!std::isfinite(s.values[v])) throw DivergenceError(s.spec.name, s.spec.variables[v].name, next);
      }
    }
    step_ = next;
  }

  /// Steps `clock.steps()` times from the current state under the given clamps.
  /// The clamps are lifted again when the run returns.
  Trajectory run(const SimClock& clock, const std::vector<ClampDirective>& clamps = {}) {
    clock.validate();
    if (slots_.empty()) throw Error(Errc::EmptyModel, "no classes registered");
    std::vector<std::vector<std::optional<double>>> saved;
    for (const auto& s : slots_) saved.push_back(s.clamps);
    struct Restore {
      Model& m;
      std::vector<std::vector<std::optional<double>>>& saved;
      ~Restore() {
        for (std::size_t i = 0; i < m.slots_.size(); ++i) m.slots_[i].clamps = saved[i];
      }
    } restore{*this, saved};
    for (const auto& c : clamps) clamp(c);
    clock_ = clock;

    Trajectory traj;
    traj.clock = clock;
    for (const auto& s : slots_)
      for (const auto& v : s.spec.variables) traj.keys.push_back({s.spec.code, s.spec.name, v.name});
    const auto n = clock.steps();
    traj.step_indices.reserve(n + 1);
    traj.series.assign(traj.keys.size(), {});
    for (auto& col : traj.series) col.reserve(n + 1);
    record(traj);
    for (std::uint64_t k = 0; k < n; ++k) {
      step();
      record(traj);
    }
    return traj;
  }

  /// Back to initial state; parameters keep their current values.
  void reset() {
    for (auto& s : slots_) {
      for (std::size_t v = 0; v < s.values.size(); ++v) s.values[v] = s.spec.variables[v].initial;
      std::fill(s.has_pending.begin(), s.has_pending.end(), 0);
      std::fill(s.clamps.begin(), s.clamps.end(), std::nullopt);
    }
    step_ = 0;
  }

 private:
  friend class ClassState;
  friend class ShellPort;

  struct Slot {
    ClassSpec spec;
    Behavior behavior;
    std::vector<double> values;
    std::vector<double> params;
    std::vector<double> pending;
    std::vector<unsigned char> has_pending;
    std::vector<std::optional<double>> clamps;
  };

  void record(Trajectory& traj) const {
    traj.step_indices.push_back(step_);
    std::size_t col = 0;
    for (const auto& s : slots_)
      for (double v : s.values) traj.series[col++].push_back(v);
  }

  std::optional<std::size_t> find_slot(ClassCode code) const {
    for (std::size_t i = 0; i < slots_.size(); ++i)
      if (slots_[i].spec.code == code) return i;
    return std::nullopt;
  }
  std::optional<std::size_t> find_slot(std::string_view name) const {
    for (std::size_t i = 0; i < slots_.size(); ++i)
      if (slots_[i].spec.name == name) return i;
    return std::nullopt;
  }
  std::size_t slot_of(ClassCode code) const {
    if (auto i = find_slot(code)) return *i;
    throw Error(Errc::UnknownClass, "code " + std::to_string(to_int(code)));
  }
  std::size_t slot_of(std::string_view name) const {
    if (auto i = find_slot(name)) return *i;
    throw Error(Errc::UnknownClass, std::string(name));
  }
  static std::optional<std::size_t> var_index(const Slot& s, std::string_view name) {
    for (std::size_t i = 0; i < s.spec.variables.size(); ++i)
      if (s.spec.variables[i].name == name) return i;
    return std::nullopt;
  }
  static std::optional<std::size_t> param_index(const Slot& s, std::string_view name) {
    for (std::size_t i = 0; i < s.spec.parameters.size(); ++i)
      if (s.spec.parameters[i].name == name) return i;
    return std::nullopt;
  }

  std::vector<Slot> slots_;
  std::uint64_t step_ = 0;
  SimClock clock_{};
  bool spy_ = false;
  std::vector<Message> trace_;
};

inline double ClassState::get(std::string_view var) const {
  const auto& s = model_->slots_[slot_];
  auto vi = Model::var_index(s, var);
  if (!vi) throw Error(Errc::UnknownVariable, s.spec.name + "." + std::string(var));
  return s.values[*vi];
}

inline void ClassState::set(std::string_view var, double value) {
  auto& s = model_->slots_[slot_];
  auto vi = Model::var_index(s, var);
  if (!vi) throw Error(Errc::UnknownVariable, s.spec.name + "." + std::string(var));
  if (s.clamps[*vi]) return;
  s.pending[*vi] = value;
  s.has_pending[*vi] = 1;
}

inline double ClassState::param(std::string_view name) const {
  const auto& s = model_->slots_[slot_];
  auto pi = Model::param_index(s, name);
  if (!pi) throw Error(Errc::UnknownParameter, s.spec.name + "." + std::string(name));
  return s.params[*pi];
}

inline ClassCode ClassState::code() const { return model_->slots_[slot_].spec.code; }
inline const std::string& ClassState::name() const { return model_->slots_[slot_].spec.name; }

inline double ShellPort::inquire(ClassCode callee, std::string_view name) {
  return model_->inquiry(caller_, callee, name);
}
inline double ShellPort::inquire(std::string_view callee_class, std::string_view name) {
  return model_->inquiry(caller_, model_->code_of(callee_class), name);
}
inline void ShellPort::update(ClassCode callee, std::string_view var, double value) {
  model_->update(caller_, callee, var, value);
}
inline void ShellPort::update(std::string_view callee_class, std::string_view var, double value) {
  model_->update(caller_, model_->code_of(callee_class), var, value);
}
inline double ShellPort::time() const { return model_->time(); }
inline double ShellPort::dt() const { return model_->clock().dt; }
inline std::uint64_t ShellPort::step() const { return model_->step_index(); }

}  // namespace ecocal

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ecocal {

enum class Errc {
  DuplicateClassCode,
  InvalidSpec,
  UnknownClass,
  UnknownVariable,
  UnknownParameter,
  OutOfRange,
  EmptyModel,
  NumericalDivergence,
  TrajectoryTooShort,
  MissingRelationships,
  StorageFailure,
  MalformedKnowledgeFile,
  NoObservations,
  EmptyTrajectory,
  InconsistentKnowledge,
  MissingKnowledge,
  MalformedModelFile,
  UnknownBehavior,
  MalformedObservationFile,
  BindFailure,
  ControlHeld,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::DuplicateClassCode: return "DuplicateClassCode";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::UnknownClass: return "UnknownClass";
    case Errc::UnknownVariable: return "UnknownVariable";
    case Errc::UnknownParameter: return "UnknownParameter";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::EmptyModel: return "EmptyModel";
    case Errc::NumericalDivergence: return "NumericalDivergence";
    case Errc::TrajectoryTooShort: return "TrajectoryTooShort";
    case Errc::MissingRelationships: return "MissingRelationships";
    case Errc::StorageFailure: return "StorageFailure";
    case Errc::MalformedKnowledgeFile: return "MalformedKnowledgeFile";
    case Errc::NoObservations: return "NoObservations";
    case Errc::EmptyTrajectory: return "EmptyTrajectory";
    case Errc::InconsistentKnowledge: return "InconsistentKnowledge";
    case Errc::MissingKnowledge: return "MissingKnowledge";
    case Errc::MalformedModelFile: return "MalformedModelFile";
    case Errc::UnknownBehavior: return "UnknownBehavior";
    case Errc::MalformedObservationFile: return "MalformedObservationFile";
    case Errc::BindFailure: return "BindFailure";
    case Errc::ControlHeld: return "ControlHeld";
  }
  return "Unknown";
}

/// Every failure the library reports carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// A non-finite value appeared while stepping; the run is aborted.
class DivergenceError : public Error {
 public:
  DivergenceError(std::string class_name, std::string variable, std::uint64_t step)
      : Error(Errc::NumericalDivergence,
              "non-finite value in " + class_name + "." + variable + " at step " +
                  std::to_string(step)),
        class_name_(std::move(class_name)),
        variable_(std::move(variable)),
        step_(step) {}

  const std::string& class_name() const noexcept { return class_name_; }
  const std::string& variable() const noexcept { return variable_; }
  std::uint64_t step() const noexcept { return step_; }

 private:
  std::string class_name_;
  std::string variable_;
  std::uint64_t step_;
};

/// Parse failure that lists every violation found, each with its line number.
class FileError : public Error {
 public:
  struct Violation {
    std::size_t line = 0;
    std::string message;
  };

  FileError(Errc code, std::vector<Violation> violations)
      : Error(code, summarize(violations)), violations_(std::move(violations)) {}

  const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  static std::string summarize(const std::vector<Violation>& vs) {
    std::string out;
    for (const auto& v : vs) {
      if (!out.empty()) out += "; ";
      out += "line " + std::to_string(v.line) + ": " + v.message;
    }
    return out;
  }

  std::vector<Violation> violations_;
};

}  // namespace ecocal

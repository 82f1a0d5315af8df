#pragma once

// Class relationship matrix learned from the shell's message trace.
//
// Row = influencing class, column = influenced class. Class j inquiring class i
// means i influences j; class i updating class j means i influences j.
//
// File grammar:
//   relationships <n>
//   class <code> <name>        (n lines, matrix order)
//   <t_1> ... <t_n>            (n rows, tokens from {0, 1, S}, S exactly on the diagonal)

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
#include "ecocal/text.hpp"

namespace ecocal {

enum class Relation : unsigned char { None, Influences, Self };

struct ClassEntry {
  ClassCode code{};
  std::string name;

  bool operator==(const ClassEntry&) const = default;
};

struct RelationshipMatrix {
  std::vector<ClassEntry> classes;
  std::vector<std::vector<Relation>> cells;

  std::size_t size() const noexcept { return classes.size(); }

  std::optional<std::size_t> index_of(ClassCode code) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i].code == code) return i;
    return std::nullopt;
  }
  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i].name == name) return i;
    return std::nullopt;
  }

  bool influences(std::string_view source, std::string_view target) const {
    auto i = index_of(source);
    auto j = index_of(target);
    return i && j && cells[*i][*j] == Relation::Influences;
  }

  bool operator==(const RelationshipMatrix&) const = default;
};

struct InfluenceEdge {
  ClassCode source{};
  ClassCode target{};
  std::size_t inquiries = 0;
  std::size_t updates = 0;

  bool operator==(const InfluenceEdge&) const = default;
};

struct Discovery {
  RelationshipMatrix matrix;
  std::vector<InfluenceEdge> edges;  // row-major matrix order
  std::size_t messages = 0;
};

/// Default training horizon: 100 steps or one forcing period, whichever is longer.
inline SimClock training_clock(const SimClock& base, std::optional<double> forcing_period = std::nullopt) {
  std::uint64_t steps = 100;
  if (forcing_period) steps = std::max<std::uint64_t>(steps, static_cast<std::uint64_t>(std::ceil(*forcing_period / base.dt - 1e-9)));
  return SimClock{base.t0, base.dt, base.t0 + static_cast<double>(steps) * base.dt};
}

/// Runs a spied training simulation on a copy of `model`, from its initial state.
inline Discovery discover_with_evidence(const Model& model, const SimClock& clock) {
  if (model.class_count() == 0) throw Error(Errc::EmptyModel, "no classes registered");
  clock.validate();
  if (clock.steps() < 2) throw Error(Errc::InvalidSpec, "training clock must cover at least 2 steps");
  Model m = model;
  m.reset();
  m.set_clock(clock);
  m.drain_trace();
  m.set_spy(true);

  Discovery d;
  const auto specs = m.classes();
  const std::size_t n = specs.size();
  for (const auto& c : specs) d.matrix.classes.push_back({c.code, c.name});
  std::vector<std::vector<InfluenceEdge>> ev(n, std::vector<InfluenceEdge>(n));
  auto idx = [&](ClassCode c) { return *d.matrix.index_of(c); };

  const auto steps = clock.steps();
  for (std::uint64_t k = 0; k < steps; ++k) {
    m.step();
    for (const auto& msg : m.drain_trace()) {
      ++d.messages;
      if (msg.self()) continue;
      if (msg.kind == MessageKind::Inquiry) ++ev[idx(msg.callee)][idx(msg.caller)].inquiries;
      else ++ev[idx(msg.caller)][idx(msg.callee)].updates;
    }
  }

  d.matrix.cells.assign(n, std::vector<Relation>(n, Relation::None));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) {
        d.matrix.cells[i][j] = Relation::Self;
        continue;
      }
      auto& e = ev[i][j];
      if (e.inquiries + e.updates == 0) continue;
      d.matrix.cells[i][j] = Relation::Influences;
      e.source = specs[i].code;
      e.target = specs[j].code;
      d.edges.push_back(e);
    }
  }
  return d;
}

inline RelationshipMatrix discover(const Model& model, const SimClock& clock) {
  return discover_with_evidence(model, clock).matrix;
}

inline std::vector<ClassCode> influencers_of(const RelationshipMatrix& matrix, ClassCode cls) {
  auto j = matrix.index_of(cls);
  if (!j) throw Error(Errc::UnknownClass, "code " + std::to_string(to_int(cls)));
  std::vector<ClassCode> out;
  for (std::size_t i = 0; i < matrix.size(); ++i)
    if (i != *j && matrix.cells[i][*j] == Relation::Influences) out.push_back(matrix.classes[i].code);
  return out;
}

/// Differences between the matrix's class census and the model's; empty when they agree.
inline std::vector<std::string> staleness(const RelationshipMatrix& matrix, const Model& model) {
  std::vector<std::string> out;
  const auto specs = model.classes();
  for (const auto& c : specs) {
    auto i = matrix.index_of(c.code);
    if (!i) out.push_back("class " + std::to_string(to_int(c.code)) + " " + c.name + " missing from knowledge file");
    else if (matrix.classes[*i].name != c.name)
      out.push_back("class " + std::to_string(to_int(c.code)) + " is " + c.name + " in the model but " +
                    matrix.classes[*i].name + " in the knowledge file");
  }
  for (const auto& e : matrix.classes) {
    if (!model.has_class(e.code))
      out.push_back("class " + std::to_string(to_int(e.code)) + " " + e.name + " not in the model");
  }
  return out;
}

inline std::string serialize(const RelationshipMatrix& m) {
  std::string out = "relationships " + std::to_string(m.size()) + "\n";
  for (const auto& c : m.classes) out += "class " + std::to_string(to_int(c.code)) + " " + c.name + "\n";
  for (const auto& row : m.cells) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ' ';
      out += row[j] == Relation::Self ? 'S' : row[j] == Relation::Influences ? '1' : '0';
    }
    out += "\n";
  }
  return out;
}

inline RelationshipMatrix parse_relationships(std::string_view content) {
  using Violation = FileError::Violation;
  std::vector<Violation> bad;
  RelationshipMatrix m;
  std::vector<std::pair<std::size_t, std::string>> body;
  std::size_t ln = 0;
  for (const auto& raw : text::lines(content)) {
    ++ln;
    auto line = text::trim(raw);
    if (!line.empty()) body.emplace_back(ln, std::string(line));
  }
  auto fail = [&]() { throw FileError(Errc::MalformedKnowledgeFile, std::move(bad)); };
  if (body.empty()) {
    bad.push_back({0, "empty knowledge file"});
    fail();
  }
  auto head = text::split_ws(body[0].second);
  std::optional<std::size_t> n;
  if (head.size() == 2 && head[0] == "relationships") n = text::parse_int<std::size_t>(head[1]);
  if (!n) {
    bad.push_back({body[0].first, "expected 'relationships <n>'"});
    fail();
  }
  if (body.size() != 1 + 2 * *n) {
    bad.push_back({body.back().first, "expected " + std::to_string(*n) + " class lines and " + std::to_string(*n) +
                                          " matrix rows, found " + std::to_string(body.size() - 1) + " lines"});
  }
  for (std::size_t i = 0; i < *n && 1 + i < body.size(); ++i) {
    const auto& [lno, line] = body[1 + i];
    auto t = text::split_ws(line);
    std::optional<std::int32_t> code;
    if (t.size() == 3 && t[0] == "class") code = text::parse_int<std::int32_t>(t[1]);
    if (!code || *code <= 0) {
      bad.push_back({lno, "expected 'class <code> <name>'"});
      continue;
    }
    ClassEntry e{ClassCode{*code}, std::string(t[2])};
    for (const auto& prev : m.classes)
      if (prev.code == e.code || prev.name == e.name) bad.push_back({lno, "duplicate class " + line});
    m.classes.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < *n && 1 + *n + i < body.size(); ++i) {
    const auto& [lno, line] = body[1 + *n + i];
    auto t = text::split_ws(line);
    if (t.size() != *n) {
      bad.push_back({lno, "row has " + std::to_string(t.size()) + " cells, expected " + std::to_string(*n)});
      continue;
    }
    std::vector<Relation> row;
    for (std::size_t j = 0; j < t.size(); ++j) {
      Relation r = Relation::None;
      if (t[j] == "S") r = Relation::Self;
      else if (t[j] == "1") r = Relation::Influences;
      else if (t[j] != "0") bad.push_back({lno, "bad cell '" + std::string(t[j]) + "'"});
      if ((r == Relation::Self) != (i == j)) bad.push_back({lno, "S must appear exactly on the diagonal"});
      row.push_back(r);
    }
    m.cells.push_back(std::move(row));
  }
  if (!bad.empty()) fail();
  return m;
}

inline void save_matrix(const RelationshipMatrix& m, const std::filesystem::path& path) {
  text::write_file(path, serialize(m));
}

inline RelationshipMatrix load_matrix(const std::filesystem::path& path) {
  return parse_relationships(text::read_file(path));
}

}  // namespace ecocal

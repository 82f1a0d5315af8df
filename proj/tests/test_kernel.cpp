#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"

using namespace ecocal;
using namespace testing_support;

namespace {

ClassSpec spec(std::string name, int code, std::vector<VariableSpec> vars = {}, std::vector<ParameterSpec> params = {}) {
  ClassSpec s;
  s.name = std::move(name);
  s.code = ClassCode{code};
  s.variables = std::move(vars);
  s.parameters = std::move(params);
  s.behavior = "test";
  return s;
}

void idle(ShellPort&, ClassState&) {}

Model two_box() {
  Model m;
  m.register_class(spec("A", 1, {{"x", 1.0}}), idle);
  m.register_class(spec("B", 2, {{"y", 2.0}}), idle);
  m.set_clock({0, 1, 10});
  return m;
}

}  // namespace

TEST(Kernel, RegistersFixtureClassesInOrder) {
  auto m = npz();
  ASSERT_EQ(m.class_count(), 3u);
  auto cs = m.classes();
  EXPECT_EQ(cs[0].name, "Nutrient");
  EXPECT_EQ(cs[1].name, "Phytoplankton");
  EXPECT_EQ(cs[2].name, "Zooplankton");
}

TEST(Kernel, DuplicateCodeRejected) {
  Model m;
  m.register_class(spec("A", 1), idle);
  try {
    m.register_class(spec("B", 1), idle);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DuplicateClassCode);
  }
  EXPECT_EQ(m.class_count(), 1u);
}

TEST(Kernel, InvalidSpecsRejected) {
  Model m;
  auto bad_range = spec("A", 1, {}, {{"p", 1.0, 4.0, 2.0, "-"}});
  EXPECT_THROW(m.register_class(bad_range, idle), Error);
  auto outside = spec("A", 1, {}, {{"p", 9.0, 1.0, 2.0, "-"}});
  EXPECT_THROW(m.register_class(outside, idle), Error);
  auto dup = spec("A", 1, {{"x", 0.0}}, {{"x", 1.0, 0.0, 2.0, "-"}});
  EXPECT_THROW(m.register_class(dup, idle), Error);
  auto zero_code = spec("A", 0);
  EXPECT_THROW(m.register_class(zero_code, idle), Error);
  EXPECT_EQ(m.class_count(), 0u);
}

TEST(Kernel, InquiryReadsCommittedValue) {
  auto m = npz();
  const auto p = m.code_of("Phytoplankton");
  const auto n = m.code_of("Nutrient");
  EXPECT_EQ(m.inquiry(p, n, "N"), 6.0);
  EXPECT_EQ(m.inquiry(n, p, "kN"), 2.0);
}

TEST(Kernel, InquiryErrors) {
  auto m = npz();
  const auto p = m.code_of("Phytoplankton");
  try {
    m.inquiry(p, m.code_of("Nutrient"), "missing");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownVariable);
  }
  try {
    m.inquiry(p, ClassCode{99}, "N");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownClass);
  }
}

TEST(Kernel, UpdateVisibleAfterCommit) {
  auto m = two_box();
  m.update(ClassCode{1}, ClassCode{2}, "y", 3.2);
  EXPECT_EQ(m.value(var("B", "y")), 2.0);
  m.step();
  EXPECT_EQ(m.value(var("B", "y")), 3.2);
}

TEST(Kernel, ClampWinsOverUpdates) {
  auto m = pair();
  m.set_spy(true);
  const auto traj = m.run({0, 3600, 3600 * 48}, {{ClassCode{2}, "forcing", 0.25}});
  const auto* f = traj.find("Logistic", "forcing");
  ASSERT_NE(f, nullptr);
  for (double v : *f) EXPECT_EQ(v, 0.25);
  const auto trace = m.drain_trace();
  EXPECT_TRUE(std::any_of(trace.begin(), trace.end(), [](const Message& x) {
    return x.kind == MessageKind::ClampOverride && x.variable == "forcing";
  }));
  EXPECT_FALSE(std::any_of(trace.begin(), trace.end(),
                           [](const Message& x) { return x.kind == MessageKind::Update && x.variable == "forcing"; }));
}

TEST(Kernel, StepWithoutClassesFails) {
  Model m;
  try {
    m.step();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyModel);
  }
}

TEST(Kernel, NoOpBehaviorsKeepState) {
  auto m = two_box();
  auto t = m.run({0, 1, 20});
  for (double v : *t.find("A", "x")) EXPECT_EQ(v, 1.0);
  for (double v : *t.find("B", "y")) EXPECT_EQ(v, 2.0);
}

TEST(Kernel, ZeroGrowthLogisticStaysPut) {
  auto m = pair();
  m.set_parameter(par("Logistic", "r"), 0.0);
  auto t = m.run(m.clock());
  for (double v : *t.find("Logistic", "biomass")) EXPECT_EQ(v, 1.0);
}

TEST(Kernel, NpzConservesMass) {
  auto db = npz_db();
  auto m = npz();
  auto t = m.run(db.clock);
  EXPECT_LT(max_conservation_drift(db, t), 1e-9);
}

// Fine-step Euler reference: the kernel at dt agrees with dt/100 within 0.5% after 2000 steps.
TEST(Kernel, NpzMatchesFineStepReference) {
  auto m = npz();
  auto t = m.run({0, 3600, 3600 * 2000});
  const auto ref = npz_reference({}, 3600.0 / 86400.0, 2000, 100);
  EXPECT_NEAR(t.find("Nutrient", "N")->back(), ref.N, 0.005 * ref.N);
  EXPECT_NEAR(t.find("Phytoplankton", "biomass")->back(), ref.P, 0.005 * ref.P);
  EXPECT_NEAR(t.find("Zooplankton", "biomass")->back(), ref.Z, 0.005 * ref.Z);
}

TEST(Kernel, NpzApproachesAnalyticSteadyState) {
  auto m = npz();
  auto t = m.run({0, 3600, 3600 * 20000});
  const auto ss = npz_steady({});
  EXPECT_NEAR(t.find("Phytoplankton", "biomass")->back(), ss.P, 1e-3 * ss.P);
  EXPECT_NEAR(t.find("Zooplankton", "biomass")->back(), ss.Z, 1e-3 * ss.Z);
  EXPECT_NEAR(t.find("Nutrient", "N")->back(), ss.N, 1e-3 * ss.N);
}

TEST(Kernel, HorizonOfOneStepGivesTwoSamples) {
  auto m = npz();
  auto t = m.run({0, 3600, 3600});
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.step_indices[1], 1u);
}

TEST(Kernel, TinyStepAccepted) {
  auto m = npz();
  auto t = m.run({0, 18, 86400});
  EXPECT_EQ(t.size(), 4801u);
  EXPECT_NEAR(t.time_at(t.size() - 1), 86400.0, 1e-9);
}

TEST(Kernel, BadClocksRejected) {
  auto m = npz();
  EXPECT_THROW(m.run({0, 0, 10}), Error);
  EXPECT_THROW(m.run({0, 10, 5}), Error);
  EXPECT_THROW(m.run({0, std::nan(""), 10}), Error);
}

TEST(Kernel, ParameterChanges) {
  auto base = npz();
  const auto ref = base.run(base.clock());

  auto same = npz();
  same.set_parameter(par("Phytoplankton", "mumax"), 1.5);
  EXPECT_EQ(same.run(same.clock()), ref);

  auto moved = npz();
  moved.set_parameter(par("Phytoplankton", "mumax"), (1.425 + 1.65) / 2);
  EXPECT_NE(moved.run(moved.clock()).series, ref.series);

  try {
    moved.set_parameter(par("Phytoplankton", "mumax"), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::OutOfRange);
  }
  EXPECT_EQ(moved.parameter(par("Phytoplankton", "mumax")), (1.425 + 1.65) / 2);
}

TEST(Kernel, ResetRestoresInitialStateKeepsParameters) {
  auto m = npz();
  m.set_parameter(par("Zooplankton", "mZ"), 0.15);
  m.run({0, 3600, 3600 * 50});
  m.reset();
  EXPECT_EQ(m.step_index(), 0u);
  EXPECT_EQ(m.value(var("Nutrient", "N")), 6.0);
  EXPECT_EQ(m.value(var("Phytoplankton", "biomass")), 2.0);
  EXPECT_EQ(m.parameter(par("Zooplankton", "mZ")), 0.15);
  m.reset();
  EXPECT_EQ(m.value(var("Zooplankton", "biomass")), 2.0);
}

TEST(Kernel, RunsAreBitIdentical) {
  auto a = npz();
  auto b = npz();
  EXPECT_EQ(a.run(a.clock()), b.run(b.clock()));
}

// Two-phase stepping: registration order cannot change what any class sees.
TEST(Kernel, RegistrationOrderDoesNotMatter) {
  auto db = npz_db();
  auto forward = instantiate(db, catalog());
  std::reverse(db.classes.begin(), db.classes.end());
  auto backward = instantiate(db, catalog());
  const SimClock c{0, 3600, 3600 * 500};
  const auto a = forward.run(c);
  const auto b = backward.run(c);
  for (const auto& k : a.keys) EXPECT_EQ(*a.find(k.cls, k.var), *b.find(k.cls, k.var)) << k.cls << "." << k.var;
}

TEST(Kernel, DivergenceNamesClassAndStep) {
  Model m;
  m.register_class(spec("Blow", 1, {{"x", 1.0}}), [](ShellPort& s, ClassState& me) {
    me.set("x", s.step() >= 3 ? std::numeric_limits<double>::infinity() : me.get("x") + 1);
  });
  try {
    m.run({0, 1, 10});
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.class_name(), "Blow");
    EXPECT_EQ(e.variable(), "x");
    EXPECT_EQ(e.step(), 4u);
  }
}

TEST(Kernel, SelfMessagesAreFlagged) {
  Model m;
  m.register_class(spec("A", 1, {{"x", 1.0}}), [](ShellPort& s, ClassState&) { s.inquire("A", "x"); });
  m.set_spy(true);
  m.step();
  auto tr = m.drain_trace();
  ASSERT_EQ(tr.size(), 1u);
  EXPECT_TRUE(tr[0].self());
}

TEST(Kernel, RunLiftsItsClamps) {
  auto m = pair();
  m.run({0, 3600, 3600 * 4}, {{ClassCode{2}, "forcing", 0.0}});
  m.reset();
  auto t = m.run({0, 3600, 3600 * 4});
  EXPECT_NE(t.find("Logistic", "forcing")->back(), 0.0);
}

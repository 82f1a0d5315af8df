#include <gtest/gtest.h>

#include <string>

#include "support.hpp"

using namespace ecocal;
using namespace testing_support;

namespace {

std::string replace(std::string s, const std::string& from, const std::string& to) {
  auto at = s.find(from);
  if (at != std::string::npos) s.replace(at, from.size(), to);
  return s;
}

std::vector<VarId> npz_targets() {
  return {var("Nutrient", "N"), var("Phytoplankton", "biomass"), var("Zooplankton", "biomass")};
}

}  // namespace

TEST(ModelDb, BundledNpzLoads) {
  const auto db = load_model_db(std::filesystem::path(ECOCAL_MODELS_DIR) / "npz.model", catalog());
  EXPECT_EQ(db.id, "npz");
  ASSERT_EQ(db.classes.size(), 3u);
  std::size_t params = 0;
  for (const auto& c : db.classes) params += c.parameters.size();
  EXPECT_EQ(params, 8u);
  EXPECT_TRUE(db.closed());
  EXPECT_EQ(db.clock.dt, 3600.0);
  EXPECT_EQ(db, npz_db());
}

TEST(ModelDb, BundledPairLoads) {
  const auto db = load_model_db(std::filesystem::path(ECOCAL_MODELS_DIR) / "logistic-pair.model", catalog());
  EXPECT_EQ(db, pair_db());
  ASSERT_TRUE(db.forcing_period);
  EXPECT_EQ(*db.forcing_period, 86400.0);
  EXPECT_FALSE(db.closed());
}

TEST(ModelDb, InvertedRangeNamesParameterAndLine) {
  const auto text = replace(std::string(fixtures::kNpzModel), "name=kN value=2 min=0.5 max=5",
                            "name=kN value=2 min=4 max=2");
  try {
    parse_model_db(text, catalog());
    FAIL();
  } catch (const FileError& e) {
    EXPECT_EQ(e.code(), Errc::MalformedModelFile);
    ASSERT_FALSE(e.violations().empty());
    EXPECT_EQ(e.violations()[0].line, 11u);
    EXPECT_NE(std::string(e.what()).find("kN"), std::string::npos);
  }
}

TEST(ModelDb, UnknownBehavior) {
  const auto text = replace(std::string(fixtures::kNpzModel), "behavior=npz.nutrient", "behavior=sungo2d");
  try {
    parse_model_db(text, catalog());
    FAIL();
  } catch (const FileError& e) {
    EXPECT_EQ(e.code(), Errc::UnknownBehavior);
    EXPECT_NE(std::string(e.what()).find("sungo2d"), std::string::npos);
  }
}

TEST(ModelDb, ReportsEveryViolation) {
  auto text = replace(std::string(fixtures::kNpzModel), "value=1.5 min=1.425", "value=abc min=1.425");
  text = replace(text, "code=3", "code=x");
  text = replace(text, "init=6", "init=");
  try {
    parse_model_db(text, catalog());
    FAIL();
  } catch (const FileError& e) {
    EXPECT_EQ(e.code(), Errc::MalformedModelFile);
    EXPECT_GE(e.violations().size(), 3u);
  }
}

TEST(ModelDb, StructuralErrors) {
  EXPECT_THROW(parse_model_db("", catalog()), FileError);
  EXPECT_THROW(parse_model_db("model x\n", catalog()), FileError);
  const auto dup = std::string(fixtures::kNpzModel) + "class name=Extra code=1 behavior=npz.nutrient\n";
  EXPECT_THROW(parse_model_db(dup, catalog()), FileError);
  const auto orphan = std::string(fixtures::kNpzModel) + "param class=Nobody name=p value=1 min=0 max=2\n";
  EXPECT_THROW(parse_model_db(orphan, catalog()), FileError);
  const auto unknown = std::string(fixtures::kNpzModel) + "frobnicate 1\n";
  EXPECT_THROW(parse_model_db(unknown, catalog()), FileError);
}

TEST(ModelDb, MorphologyIgnoredWithWarning) {
  const auto text = std::string(fixtures::kNpzModel) + "morphology bathymetry.dat\ngrid cols=10 rows=4\n";
  const auto db = parse_model_db(text, catalog());
  EXPECT_EQ(db.warnings.size(), 2u);
  EXPECT_EQ(db, npz_db());
}

TEST(ModelDb, SerializeReloadIdentity) {
  for (const auto& db : {npz_db(), pair_db()}) {
    const auto again = parse_model_db(serialize(db), catalog());
    EXPECT_EQ(again, db);
    EXPECT_EQ(serialize(again), serialize(db));
  }
}

TEST(ModelDb, FixturesRunWithoutDivergence) {
  for (const auto& db : {npz_db(), pair_db()}) {
    auto m = instantiate(db, catalog());
    auto t = m.run(db.clock);
    EXPECT_EQ(t.size(), db.clock.steps() + 1);
  }
}

TEST(Observations, HeaderOnlyIsEmpty) {
  try {
    parse_observations("time,target,value,band\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NoObservations);
  }
}

TEST(Observations, NegativeBandRejected) {
  try {
    parse_observations("time,target,value,band\n0,A.x,1,-0.5\n");
    FAIL();
  } catch (const FileError& e) {
    EXPECT_EQ(e.code(), Errc::MalformedObservationFile);
    EXPECT_EQ(e.violations()[0].line, 2u);
  }
}

TEST(Observations, MalformedRows) {
  EXPECT_THROW(parse_observations("0,A.x,1\n"), FileError);
  EXPECT_THROW(parse_observations("time,target,value,band\nzero,A.x,1,\n"), FileError);
  EXPECT_THROW(parse_observations("time,target,value,band\n0,Ax,1,\n"), FileError);
  EXPECT_THROW(parse_observations("time,target,value,band\n0,A.x,nan,\n"), FileError);
}

TEST(Observations, RoundTrip) {
  TempDir dir("obs");
  ObservationSet s;
  s.records = {{0.5, var("A", "x"), 1.0 / 3.0, std::nullopt}, {86400, var("B", "y"), 1e-17, 0.25}};
  text::write_file(dir.path / "a.obs", serialize(s));
  EXPECT_EQ(load_observations(dir.path / "a.obs"), s);
}

TEST(Synthetic, NoiseFreeSamplesFitExactly) {
  const auto db = npz_db();
  const auto truth = baseline_parameters(instantiate(db, catalog()));
  const auto times = evenly_spaced_times(db.clock, 20);
  const auto obs = generate_synthetic_observations(db, catalog(), truth, times, npz_targets(), 0.0, 42);
  EXPECT_EQ(obs.records.size(), 60u);
  auto m = instantiate(db, catalog());
  const auto rep = evaluate(m.run(db.clock), obs, npz_targets());
  EXPECT_EQ(rep.aggregate_lof, 0.0);
}

TEST(Synthetic, SameSeedSameData) {
  const auto db = npz_db();
  const auto truth = baseline_parameters(instantiate(db, catalog()));
  const auto times = evenly_spaced_times(db.clock, 20);
  const auto a = generate_synthetic_observations(db, catalog(), truth, times, npz_targets(), 0.05, 9);
  const auto b = generate_synthetic_observations(db, catalog(), truth, times, npz_targets(), 0.05, 9);
  const auto c = generate_synthetic_observations(db, catalog(), truth, times, npz_targets(), 0.05, 10);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Synthetic, NoisyBaselineSitsBetweenPerfectAndPerturbed) {
  const auto db = npz_db();
  const auto truth = baseline_parameters(instantiate(db, catalog()));
  const auto obs = generate_synthetic_observations(db, catalog(), truth, evenly_spaced_times(db.clock, 20),
                                                   npz_targets(), 0.05, 42);
  auto base = instantiate(db, catalog());
  const double lof_base = evaluate(base.run(db.clock), obs, npz_targets()).aggregate_lof;
  auto moved = instantiate(db, catalog());
  moved.set_parameter(par("Phytoplankton", "kN"), 5);
  moved.set_parameter(par("Phytoplankton", "mP"), 0.2);
  moved.set_parameter(par("Zooplankton", "kgraz"), 2.1);
  const double lof_moved = evaluate(moved.run(db.clock), obs, npz_targets()).aggregate_lof;
  EXPECT_GT(lof_base, 0.0);
  EXPECT_LT(lof_base, lof_moved);
}

TEST(Synthetic, Preconditions) {
  const auto db = npz_db();
  auto truth = baseline_parameters(instantiate(db, catalog()));
  EXPECT_THROW(generate_synthetic_observations(db, catalog(), truth, {db.clock.horizon + 1}, npz_targets(), 0, 1),
               Error);
  truth[0].value = 100;
  try {
    generate_synthetic_observations(db, catalog(), truth, {3600}, npz_targets(), 0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::OutOfRange);
  }
}

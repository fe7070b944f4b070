#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "gasket_ids/lab.hpp"

using namespace gasket_ids;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gasket_ids_lab_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    out.push_back(std::move(cells));
  }
  return out;
}

nlohmann::json small_e2() {
  return nlohmann::json::parse(R"({
    "experiment": "E2-poisson-convergence",
    "mesh": {"M_list": [1, 2], "n": 2, "K": 1},
    "subordinator": {"family": "stable", "gamma": 0.5},
    "profile": {"family": "radial", "R": 1, "shape": "tent"},
    "intensity": 1.0,
    "t_list": [1],
    "clouds": 30,
    "seed": 11
  })");
}

struct SeedEnvGuard {
  SeedEnvGuard() { unsetenv("GASKET_IDS_SEED"); }
  ~SeedEnvGuard() { unsetenv("GASKET_IDS_SEED"); }
};

}  // namespace

TEST(LabConfig, ParsesDefaultsAndExperimentAliases) {
  SeedEnvGuard g;
  const auto c = config_from_json({{"experiment", "E6"}});
  EXPECT_EQ(c.experiment, ExperimentId::E6);
  EXPECT_EQ(c.n, 3);
  EXPECT_EQ(c.K, 1);
  EXPECT_EQ(c.M_list, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(c.seed, kDefaultSeed);
  EXPECT_EQ(config_from_json({{"experiment", "E9-heat-trace-slope"}}).experiment, ExperimentId::E9);
}

TEST(LabConfig, RejectsBadInputBeforeComputing) {
  SeedEnvGuard g;
  auto bad = [](nlohmann::json j) { EXPECT_THROW(config_from_json(j), ConfigError) << j.dump(); };
  bad({{"experiment", "E42"}});
  bad({{"experiment", "E6"}, {"colour", 1}});
  bad({{"experiment", "E1"}, {"mesh", {{"M_list", nlohmann::json::array()}}}});
  bad({{"experiment", "E1"}, {"mesh", {{"M_list", {2, 1}}}}});
  bad({{"experiment", "E1"}, {"mesh", {{"M_list", {1, 2}}, {"n", 6}}}});
  bad({{"experiment", "E1"}, {"t_list", {1.0, -1.0}}});
  bad({{"experiment", "E1"}, {"subordinator", {{"family", "stable"}, {"gamma", 1.5}}}});
  bad({{"experiment", "E1"}, {"subordinator", {{"family", "custom"}}}});
  bad({{"experiment", "E2"}});  // no profile
  auto e2 = small_e2();
  e2["clouds"] = 10;
  bad(e2);
  e2 = small_e2();
  e2["profile"] = {{"family", "custom"}};
  bad(e2);
  e2 = small_e2();
  e2["profile"]["R"] = 2.5;  // reaches beyond the fiber truncation
  bad(e2);
  e2 = small_e2();
  e2["intensity"] = -1.0;
  bad(e2);
}

TEST(LabConfig, HashIsStableAndSensitive) {
  SeedEnvGuard g;
  const auto a = config_from_json(small_e2());
  const auto b = config_from_json(small_e2());
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  auto j = small_e2();
  j["seed"] = 12;
  EXPECT_NE(config_hash(config_from_json(j)), config_hash(a));
  j = small_e2();
  j["output"] = "elsewhere";  // output location is not part of the experiment
  EXPECT_EQ(config_hash(config_from_json(j)), config_hash(a));
}

TEST(LabConfig, EnvironmentSeedOverrides) {
  SeedEnvGuard g;
  setenv("GASKET_IDS_SEED", "987654321", 1);
  const auto c = config_from_json(small_e2());
  EXPECT_EQ(c.seed, 987654321u);
  EXPECT_EQ(config_to_json(c)["seed"], 987654321u);
  setenv("GASKET_IDS_SEED", "12abc", 1);
  EXPECT_THROW(config_from_json(small_e2()), ConfigError);
}

TEST(LabConfig, SubordinatorFamiliesFromJson) {
  EXPECT_EQ(subordinator_from_json({{"family", "identity"}}).family, SubordinatorFamily::IdentityDrift);
  const auto s = subordinator_from_json({{"family", "stable"}, {"alpha", kWalkDim / 2}});
  EXPECT_NEAR(s.gamma(), 0.5, 1e-15);
  const auto m = subordinator_from_json(
      {{"family", "stable-mixture"}, {"terms", {{{"gamma", 0.5}, {"coefficient", 1.0}}, {{"gamma", 0.25}, {"coefficient", 2.0}}}}});
  ASSERT_EQ(m.mixture.size(), 2u);
  EXPECT_NEAR(m.mixture[1].gamma(), 0.25, 1e-15);
  EXPECT_THROW(subordinator_from_json({{"family", "stable"}}), ConfigError);
}

TEST(LabExperiments, CollarRowsAreExact) {
  ExperimentConfig c;
  c.experiment = ExperimentId::E6;
  const auto r = run(c);
  EXPECT_EQ(r.summary_value("collar_r=1", 1), 2.0);
  EXPECT_EQ(r.summary_value("collar_r=1", 2), 4.0);
  EXPECT_EQ(r.verdict("collar_r=1", 1), "exact");
  ASSERT_EQ(r.rows.rows.size(), 4u);
  EXPECT_EQ(std::get<std::string>(r.rows.rows[0][5]), "2");
}

TEST(LabExperiments, VerlogMatchesClosedForms) {
  ExperimentConfig c;
  c.experiment = ExperimentId::E8;
  c.t_list = {1.0};
  const auto r = run(c);
  EXPECT_NEAR(*r.summary_value("verlog_bound", std::nullopt, 1.0), 2.0 + std::exp(-1.0), 1e-9);
  EXPECT_EQ(r.verdict("verlog_bound", std::nullopt, 1.0), "pass");
  c.subordinator = SubordinatorSpec::identity(3.0);
  c.t_list = {0.5};
  EXPECT_NEAR(*run(c).summary_value("verlog_bound", std::nullopt, 0.5), 1.5 + std::exp(-1.0), 1e-9);
  EXPECT_NEAR(*verlog_closed_form(SubordinatorSpec::stable_mixture({{kWalkDim / 2, 1.0}, {kWalkDim / 4, 1.0}}), 1.0),
              6.0 + std::exp(-1.0), 1e-15);
  EXPECT_FALSE(verlog_closed_form(SubordinatorSpec::relativistic(1.0, 1.0), 1.0).has_value());
}

TEST(LabExperiments, ExponentialFormulaWithinFourStandardErrors) {
  ExperimentConfig c;
  c.experiment = ExperimentId::E5;
  c.M_list = {1};
  c.n = 2;
  c.clouds = 2000;
  c.seed = 5;
  c.profile = RadialProfile{0.5, RadialShape::Indicator};
  c.t_list = {0.5};
  c.options = {{"c", 0.7}};
  const auto r = run(c);
  EXPECT_EQ(r.verdict("set_formula_deviation_se", 1), "pass");
  EXPECT_EQ(r.verdict("path_formula_deviation_se", 1, 0.5), "pass");
  // closed form row: exp(-nu m(G_0) (1 - e^-c)) with m(G_0) = 1
  bool found = false;
  for (const auto& row : r.rows.rows)
    if (std::get<std::string>(row[5]) == "fk_set_closed_form") {
      EXPECT_NEAR(std::get<double>(row[6]), std::exp(-(1.0 - std::exp(-0.7))), 1e-14);
      found = true;
    }
  EXPECT_TRUE(found);
}

TEST(LabExperiments, FreeGapDecreasesInM) {
  ExperimentConfig c;
  c.experiment = ExperimentId::E1;
  c.M_list = {1, 2};
  c.n = 2;
  c.t_list = {0.5, 2.0};
  const auto r = run(c);
  for (double t : c.t_list) {
    EXPECT_EQ(r.verdict("N_ge_D", std::nullopt, t), "pass");
    EXPECT_EQ(r.verdict("abs_N_minus_D_decreasing", std::nullopt, t), "pass");
    EXPECT_GT(*r.summary_value("mean_N_minus_D", 1, t), *r.summary_value("mean_N_minus_D", 2, t));
  }
  // No starred rows without a cloud.
  for (const auto& row : r.rows.rows) EXPECT_EQ(std::get<std::int64_t>(row[6]), 0);
}

TEST(LabExperiments, HeatTraceSlopeForTheWalk) {
  ExperimentConfig c;
  c.experiment = ExperimentId::E9;
  c.M_list = {1};
  c.n = 5;
  c.subordinator = SubordinatorSpec::identity();
  const auto r = run(c);
  EXPECT_EQ(r.verdict("slope", 1), "pass");
  EXPECT_NEAR(*r.summary_value("slope_target", 1), -std::log(3.0) / std::log(5.0), 1e-15);
  EXPECT_EQ(r.rows.rows.size(), 41u);
}

TEST(LabExperiments, ProfileChecksRejectCounterexampleWithPinnedWitness) {
  ExperimentConfig c;
  c.experiment = ExperimentId::E3;
  c.profile = RadialProfile{1.0, RadialShape::Tent};
  const auto r = run(c);
  EXPECT_EQ(r.verdict("W3_radial"), "pass");
  EXPECT_EQ(r.verdict("W3_counterexample"), "rejected");
  bool found = false;
  for (const auto& row : r.rows.rows)
    if (std::get<std::string>(row[2]) == "counterexample" && std::get<std::string>(row[3]) == "W3") {
      const auto& w = std::get<std::string>(row[7]);
      EXPECT_NE(w.find("x=(0 9)/2^2 y=(0 4)/2^2 M=1"), std::string::npos) << w;
      found = true;
    }
  EXPECT_TRUE(found);
}

TEST(LabExperiments, QuotientIdentityTrends) {
  ExperimentConfig c;
  c.experiment = ExperimentId::E7;
  c.M_list = {1, 2};
  c.n = 1;
  c.K = 2;
  c.t_list = {1.0};
  const auto r = run(c);
  EXPECT_EQ(r.verdict("max_identity_residual", std::nullopt, 1.0), "pass");
  EXPECT_EQ(r.verdict("C_tail_decreasing", std::nullopt, 1.0), "pass");
  EXPECT_EQ(r.verdict("diag_gap_decreasing", std::nullopt, 1.0), "pass");
}

TEST(LabEmit, RerunsAndWorkerCountsAreByteIdentical) {
  SeedEnvGuard g;
  const auto cfg = config_from_json(small_e2());
  const auto d1 = fresh_dir("det1"), d2 = fresh_dir("det2"), d3 = fresh_dir("det3");
  run_and_emit(cfg, 1, d1);
  run_and_emit(cfg, 1, d2);
  run_and_emit(cfg, 8, d3);
  for (const auto* f : {"E2-poisson-convergence.rows.csv", "E2-poisson-convergence.summary.csv",
                        "E2-poisson-convergence.json"}) {
    const auto a = slurp(d1 / f);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(d2 / f)) << f;
    EXPECT_EQ(a, slurp(d3 / f)) << f;
    EXPECT_EQ(a.find('\r'), std::string::npos);
  }
}

TEST(LabEmit, CsvAndJsonAgreeToFullPrecision) {
  SeedEnvGuard g;
  const auto cfg = config_from_json(small_e2());
  const auto d = fresh_dir("roundtrip");
  const auto r = run_and_emit(cfg, 2, d);
  const auto csv = read_csv(d / "E2-poisson-convergence.rows.csv");
  const auto j = nlohmann::json::parse(slurp(d / "E2-poisson-convergence.json"));
  EXPECT_EQ(j["schema_version"], kSchemaVersion);
  ASSERT_EQ(csv.size(), j["rows"]["data"].size() + 1);
  EXPECT_EQ(csv[0], j["rows"]["columns"].get<std::vector<std::string>>());
  std::size_t value_col = 0;
  while (csv[0][value_col] != "value") ++value_col;
  for (std::size_t k = 1; k < csv.size(); ++k) {
    const double from_csv = std::strtod(csv[k][value_col].c_str(), nullptr);
    const double from_json = j["rows"]["data"][k - 1][value_col].get<double>();
    const double original = std::get<double>(r.rows.rows[k - 1][value_col]);
    EXPECT_EQ(from_csv, original);
    EXPECT_EQ(from_json, original);
    EXPECT_EQ(csv[k][0], r.config_hash);
  }
}

TEST(LabEmit, SummaryVerdictsRecomputableFromRows) {
  SeedEnvGuard g;
  const auto r = run(config_from_json(small_e2()));
  // columns: config_hash, seed, M, n, K, bc, star_flag, t, value, ...
  std::map<std::pair<std::int64_t, std::uint64_t>, std::map<std::string, double>> by;
  for (const auto& row : r.rows.rows) {
    const std::string key = std::get<std::string>(row[5]) + std::to_string(std::get<std::int64_t>(row[6]));
    by[{std::get<std::int64_t>(row[2]), std::get<std::uint64_t>(row[1])}][key] = std::get<double>(row[8]);
  }
  for (int M : {1, 2}) {
    double s = 0.0;
    int count = 0;
    for (const auto& [key, v] : by)
      if (key.first == M) {
        s += std::abs(v.at("N0") - v.at("D0"));
        ++count;
      }
    EXPECT_EQ(count, 30);
    EXPECT_NEAR(s / count, *r.summary_value("mean_abs_N_minus_D", M, 1.0), 1e-14);
  }
}

TEST(LabEmit, EmptySummaryGivesHeaderOnlyFile) {
  ResultTable t;
  t.experiment = "probe";
  t.rows.columns = {"config_hash", "seed", "x"};
  t.rows.rows.push_back({std::string("abc"), std::uint64_t{1}, 0.1});
  t.summary.columns = {"config_hash", "seed", "experiment", "metric", "M", "t", "value", "verdict"};
  const auto d = fresh_dir("header_only");
  emit(t, Format::Csv, d);
  EXPECT_EQ(slurp(d / "probe.summary.csv"), "config_hash,seed,experiment,metric,M,t,value,verdict\n");
  EXPECT_EQ(slurp(d / "probe.rows.csv"), "config_hash,seed,x\nabc,1,0.10000000000000001\n");
}

TEST(LabEmit, EmptyTableAndIoErrors) {
  ResultTable empty;
  empty.experiment = "nothing";
  EXPECT_THROW(emit(empty, Format::Json, fresh_dir("empty")), PreconditionError);

  ResultTable t;
  t.experiment = "probe";
  t.rows.columns = {"x"};
  const auto d = fresh_dir("ioerr");
  fs::create_directories(d);
  std::ofstream(d / "blocker") << "file";
  try {
    emit(t, Format::Csv, d / "blocker" / "sub");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("blocker"), std::string::npos);
  }
}

TEST(LabEmit, FailingStageIsNamedAndPartialResultsFlushed) {
  ExperimentConfig c;
  c.experiment = ExperimentId::E6;
  c.options = {{"cases", {{1, "1"}, {1, "1/3"}}}};
  const auto d = fresh_dir("partial");
  try {
    run_and_emit(c, 1, d);
    FAIL() << "expected ExperimentError";
  } catch (const ExperimentError& e) {
    EXPECT_NE(e.stage().find("collar M=1 r=1/3"), std::string::npos) << e.stage();
  }
  const auto rows = read_csv(d / "E6-collar.rows.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1][4], "2");
  EXPECT_TRUE(fs::exists(d / "E6-collar.json"));
}

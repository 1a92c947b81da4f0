#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "dualadam/experiments.hpp"

using namespace dualadam;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dualadam_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t csv_rows(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n - 1;
}

Json manifest(const fs::path& dir) { return Json::parse(read_file(dir / "manifest.json")); }

}  // namespace

TEST(Config, NestedAndDottedKeysAgree) {
  const Config a(Json::parse(R"({"schedule": {"rate": 1e-4}, "lr": 0.01})"));
  const Config b(Json::parse(R"({"schedule.rate": 1e-4, "lr": 0.01})"));
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.get("schedule.rate", 0.0), 1e-4);
  EXPECT_EQ(a.get("missing", 7), 7);
}

TEST(Config, WrongTypeNamesKey) {
  const Config c(Json::parse(R"({"epochs": "many"})"));
  try {
    c.get<std::int64_t>("epochs", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("epochs"), std::string::npos);
  }
}

TEST(Config, UnknownKeyListsValidKeys) {
  const Config c(Json::parse(R"({"lerning_rate": 0.1})"));
  try {
    c.validate_keys(with_optimizer_keys({"epochs"}));
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("lerning_rate"), std::string::npos);
    EXPECT_NE(msg.find("epochs"), std::string::npos);
    EXPECT_NE(msg.find("invadam.lr"), std::string::npos);
  }
}

TEST(Config, PerOptimizerOverrides) {
  const Config c(Json::parse(R"({"lr": 0.01, "invadam": {"lr": 5.0}, "beta1": 0.8})"));
  const OptimizerConfig a = optimizer_config(c, OptimizerKind::Adam);
  const OptimizerConfig i = optimizer_config(c, OptimizerKind::InvAdam);
  EXPECT_EQ(a.learning_rate, 0.01);
  EXPECT_EQ(i.learning_rate, 5.0);
  EXPECT_EQ(i.beta1, 0.8);
  EXPECT_EQ(optimizer_config(Config(Json::parse(R"({"weight_decay": 0.1})")), OptimizerKind::Adam).weight_decay,
            0.0);
}

TEST(Config, UnknownOptimizerNamesValidOnes) {
  const Config c(Json::parse(R"({"optimizer": "sgd"})"));
  try {
    optimizer_list(c, {"adam"});
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    for (const char* n : {"sgd", "adam", "adamw", "invadam", "dualadam"})
      EXPECT_NE(msg.find(n), std::string::npos) << n;
  }
}

TEST(Config, SeedRanges) {
  EXPECT_EQ(parse_seed_range("3..6"), (std::vector<std::uint64_t>{3, 4, 5, 6}));
  EXPECT_EQ(parse_seed_range("9"), (std::vector<std::uint64_t>{9}));
  EXPECT_THROW(parse_seed_range("5..2"), Error);
  EXPECT_THROW(parse_seed_range("a..b"), Error);
  EXPECT_EQ(config_seeds(Config(Json::parse(R"({"seeds": [1, 4]})"))), (std::vector<std::uint64_t>{1, 4}));
  EXPECT_EQ(config_seeds(Config(Json::parse(R"({"seed": 11})"))), (std::vector<std::uint64_t>{11}));
}

TEST(Csv, WriterOutputPassesCheck) {
  const fs::path d = scratch("csv");
  {
    CsvWriter w(d / "a.csv", {"x", "name"});
    w.row({0.1, std::string("adam")});
    w.row({std::int64_t{3}, std::string("invadam")});
  }
  EXPECT_EQ(read_file(d / "a.csv"), "x,name\n0.1,adam\n3,invadam\n");
  EXPECT_EQ(check_csv(d / "a.csv", {"x", "name"}), "");
  EXPECT_NE(check_csv(d / "a.csv", {"x", "label"}).find("does not match"), std::string::npos);
}

TEST(Csv, MalformedRowNamesRowAndColumn) {
  const fs::path d = scratch("csv_bad");
  {
    std::ofstream o(d / "b.csv");
    o << "step,loss\n1,0.5\n2,\"oops\"\n";
  }
  const std::string err = check_csv(d / "b.csv", {"step", "loss"});
  EXPECT_NE(err.find("row 3"), std::string::npos) << err;
  EXPECT_NE(err.find("'loss'"), std::string::npos) << err;
  {
    std::ofstream o(d / "c.csv");
    o << "step,loss\n1\n";
  }
  EXPECT_NE(check_csv(d / "c.csv", {"step", "loss"}).find("row 2 has 1 columns"), std::string::npos);
}

TEST(RunDir, NeverOverwrites) {
  const fs::path root = scratch("rundir");
  const fs::path a = make_run_dir(root, "train"), b = make_run_dir(root, "train");
  EXPECT_NE(a, b);
  EXPECT_TRUE(fs::is_directory(a) && fs::is_directory(b));
}

TEST(RunDir, CheckReportsMissingAndBadFiles) {
  const fs::path root = scratch("check");
  const Config c(Json::parse(R"({"source": "quadratic"})"));
  const RunSummary r = run_subcommand("hessian", c, {0}, root, 1);
  EXPECT_TRUE(check_run_dir(r.dir).empty());
  {
    std::ofstream o(r.dir / "slice.csv", std::ios::app);
    o << "1,x y\n";
  }
  auto problems = check_run_dir(r.dir);
  ASSERT_EQ(problems.size(), 1u);
  EXPECT_NE(problems[0].find("'loss'"), std::string::npos);
  fs::remove(r.dir / "slice.json");
  problems = check_run_dir(r.dir);
  EXPECT_EQ(problems.size(), 2u);
  fs::remove(r.dir / "manifest.json");
  EXPECT_NE(check_run_dir(r.dir).at(0).find("missing"), std::string::npos);
}

TEST(Subcommand, UnknownNameListsValidOnes) {
  try {
    run_subcommand("plot", Config{}, {0}, scratch("unknown"), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("trajectory, train, hessian, escape, sweep"), std::string::npos);
  }
}

TEST(Subcommand, HessianQuadraticFixture) {
  const RunSummary r = run_subcommand("hessian", Config(Json::parse(R"({"source": "quadratic"})")), {0},
                                      scratch("hq"), 1);
  EXPECT_EQ(r.exit_code, 0);
  const Json rep = Json::parse(read_file(r.dir / "hessian_report.json"));
  EXPECT_NEAR(rep["top_eigenvalues"][0].get<double>(), 3.0, 1e-6);
  EXPECT_NEAR(rep["top_eigenvalues"][1].get<double>(), 1.0, 1e-6);
  EXPECT_EQ(csv_rows(r.dir / "slice.csv"), 41u);
  const Json m = manifest(r.dir);
  EXPECT_EQ(m["artifact_version"], "1.0");
  EXPECT_EQ(m["subcommand"], "hessian");
}

TEST(Subcommand, HessianNeedsThetaPath) {
  EXPECT_THROW(run_subcommand("hessian", Config{}, {0}, scratch("hnt"), 1), Error);
  try {
    run_subcommand("hessian", Config(Json::parse(R"({"theta": "/nonexistent/theta.txt"})")), {0},
                   scratch("hnt2"), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/theta.txt"), std::string::npos);
  }
}

TEST(Subcommand, TrajectoryDefaultsWriteEveryFile) {
  const Config c(Json::parse(R"({"max_steps": 50, "contour": {"nx": 5, "ny": 4}})"));
  const RunSummary r = run_subcommand("trajectory", c, {0, 1}, scratch("traj"), 2);
  EXPECT_EQ(r.exit_code, 0);
  const Json m = manifest(r.dir);
  std::set<std::string> files;
  for (const auto& f : m["files"]) files.insert(f.get<std::string>());
  for (const char* f : {"trajectory_adam_s0.csv", "trajectory_adam_s0.json", "trajectory_invadam_s1.csv",
                        "contour.csv"})
    EXPECT_TRUE(files.count(f)) << f;
  EXPECT_EQ(csv_rows(r.dir / "trajectory_adam_s0.csv"), 51u);
  EXPECT_EQ(csv_rows(r.dir / "contour.csv"), 20u);
  EXPECT_TRUE(check_run_dir(r.dir).empty());
}

TEST(Subcommand, TrainTwentySeedsThenHessianOnTheta) {
  const Config c(Json::parse(R"({"data": {"n": 60}, "hidden": [4], "epochs": 2, "batch_size": 8})"));
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 20; ++s) seeds.push_back(s);
  const RunSummary r = run_subcommand("train", c, seeds, scratch("train"), 4);
  EXPECT_EQ(r.exit_code, 0);
  for (const char* opt : {"adam", "dualadam"})
    for (auto s : seeds) {
      const std::string stem = std::string(opt) + "_s" + std::to_string(s);
      EXPECT_TRUE(fs::exists(r.dir / ("train_" + stem + ".csv"))) << stem;
      EXPECT_TRUE(fs::exists(r.dir / ("theta_" + stem + ".txt"))) << stem;
    }
  EXPECT_EQ(csv_rows(r.dir / "summary.csv"), 2u);
  EXPECT_EQ(csv_rows(r.dir / "train_adam_s3.csv"), 2u);
  EXPECT_TRUE(check_run_dir(r.dir).empty());

  const Config h(Json{{"theta", (r.dir / "theta_dualadam_s3.txt").string()}, {"k", 2}, {"probes", 8}});
  const RunSummary hr = run_subcommand("hessian", h, {0}, scratch("htheta"), 1);
  const Json rep = Json::parse(read_file(hr.dir / "hessian_report.json"));
  EXPECT_EQ(rep["top_eigenvalues"].size(), 2u);
  EXPECT_EQ(manifest(hr.dir)["resolved"]["data_seed"], 3);
}

TEST(Subcommand, EscapeGridArtifacts) {
  const Config c(Json::parse(R"({"trials": 20, "max_steps": 20000, "bootstrap": 20})"));
  const RunSummary r = run_subcommand("escape", c, {0}, scratch("esc"), 4);
  EXPECT_EQ(csv_rows(r.dir / "escape_summary.csv"), 8u);
  EXPECT_TRUE(fs::exists(r.dir / "escape_invadam_H8.json"));
  const Json fit = Json::parse(read_file(r.dir / "scaling_fit.json"));
  EXPECT_TRUE(fit.contains("adam") || fit.contains("error"));
  EXPECT_TRUE(check_run_dir(r.dir).empty());
}

TEST(Subcommand, SweepRateGridHasElevenRows) {
  const Config c(Json::parse(R"({"data": {"n": 60}, "hidden": [4], "epochs": 2, "batch_size": 8})"));
  const RunSummary r = run_subcommand("sweep", c, {0, 1}, scratch("sweep"), 4);
  EXPECT_EQ(csv_rows(r.dir / "sweep.csv"), 11u);
  EXPECT_EQ(csv_rows(r.dir / "sweep_runs.csv"), 22u);
  EXPECT_TRUE(check_run_dir(r.dir).empty());
}

TEST(Subcommand, SweepMechanismGrid) {
  const Config c(Json::parse(
      R"({"mode": "mechanism", "data": {"n": 60}, "hidden": [4], "epochs": 2, "batch_size": 8})"));
  const RunSummary r = run_subcommand("sweep", c, {0}, scratch("mech"), 4);
  EXPECT_EQ(csv_rows(r.dir / "sweep.csv"), 9u);
  EXPECT_EQ(check_csv(r.dir / "sweep.csv", header::sweep_mechanism), "");
}

TEST(Sweep, LinearRatesKeepTheirSwitchFraction) {
  SweepSpec s = sweep_spec(Config{});
  const auto cfg = s.optimizer({"linear", 8e-5}, 192);
  const std::int64_t total = s.train.epochs * iterations_per_epoch(192, s.train.batch_size);
  const double fraction = static_cast<double>(linear_switch_iteration(cfg.schedule.rate)) / total;
  EXPECT_NEAR(fraction, 0.1598, 2e-3);
}

TEST(Train, DualAdamRateFollowsSwitchFraction) {
  const TrainSpec s = train_spec(Config{});
  const auto cfg = s.optimizer(OptimizerKind::DualAdam, 256);
  const std::int64_t total = s.epochs * iterations_per_epoch(256, s.batch_size);
  EXPECT_NEAR(static_cast<double>(linear_switch_iteration(cfg.schedule.rate)) / total, 0.16, 1e-3);
  const TrainSpec e = train_spec(Config(Json::parse(R"({"schedule": {"rate": 0.5}})")));
  EXPECT_EQ(e.optimizer(OptimizerKind::DualAdam, 256).schedule.rate, 0.5);
}

TEST(SampleConfigs, AllValidate) {
  std::size_t seen = 0;
  for (const auto& e : fs::directory_iterator(DUALADAM_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    ++seen;
    const std::string name = e.path().stem().string();
    const Config c = Config::load(e.path().string());
    SCOPED_TRACE(name);
    if (name.starts_with("trajectory")) {
      EXPECT_NO_THROW(trajectory_spec(c));
    } else if (name.starts_with("train")) {
      EXPECT_NO_THROW(c.validate_keys(with_optimizer_keys(train_keys())));
      EXPECT_NO_THROW(train_spec(c));
    } else if (name.starts_with("hessian")) {
      EXPECT_NO_THROW(hessian_spec(c));
    } else if (name.starts_with("escape")) {
      EXPECT_NO_THROW(escape_spec(c));
    } else if (name.starts_with("sweep")) {
      EXPECT_NO_THROW(sweep_spec(c));
    } else {
      ADD_FAILURE() << "sample config with no subcommand prefix";
    }
    EXPECT_NO_THROW(config_seeds(c));
  }
  EXPECT_GE(seen, 7u);
}

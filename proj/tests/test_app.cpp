#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pt4al/app.hpp"

using namespace pt4al;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommandResult {
  int code = 0;
  std::string output;
};

CommandResult run_cli(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "pt4al_cli_test.log";
  const std::string command = std::string(PT4AL_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(command.c_str());
  CommandResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = app::read_file(log);
  return r;
}

json tiny_config() {
  return {{"seed", 5},
          {"dataset", {{"kind", "synthetic"}, {"per_class", 40}, {"classes", 3}, {"size", 8}, {"noise", 0.2}}},
          {"iterations", 3},
          {"budget", 10},
          {"pretext", {{"hidden", {16}}, {"epochs", 2}, {"learning_rate", 0.02}}},
          {"main", {{"hidden", {16}}, {"epochs", 3}, {"learning_rate", 0.02}, {"minibatch", 8}}}};
}

class Workspace : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("pt4al_app_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write_config(json j, const std::string& name = "config.json") {
    j["output_dir"] = "out";
    std::ofstream(dir_ / name) << j.dump(2);
    return (dir_ / name).string();
  }
  fs::path out() const { return dir_ / "out"; }

  fs::path dir_;
};

}  // namespace

TEST(Config, ParsesFullSchemaWithDefaults) {
  const auto c = app::parse_config(tiny_config(), "/base");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.output_dir, fs::path("/base/pt4al-out"));
  EXPECT_EQ(c.dataset.synthetic.per_class, 40u);
  EXPECT_EQ(c.dataset.synthetic.seed, 5u);
  EXPECT_EQ(c.al.iterations, 3u);
  EXPECT_EQ(c.al.strategy, Strategy::pt4al);
  EXPECT_EQ(c.al.main.hidden, (std::vector<std::size_t>{16}));
  EXPECT_DOUBLE_EQ(c.al.main.schedule.initial, 0.02);
  EXPECT_EQ(c.losses(), fs::path("/base/pt4al-out/losses.csv"));
}

TEST(Config, RejectsUnknownKeysAndValues) {
  auto j = tiny_config();
  j["iteratoins"] = 3;
  EXPECT_THROW(app::parse_config(j, "."), ValidationError);
  j = tiny_config();
  j["strategy"] = "coreset";
  EXPECT_THROW(app::parse_config(j, "."), ValidationError);
  j = tiny_config();
  j["dataset"]["kind"] = "cifar";
  EXPECT_THROW(app::parse_config(j, "."), ValidationError);
  j = tiny_config();
  j["main"]["hiden"] = {3};
  EXPECT_THROW(app::parse_config(j, "."), ValidationError);
  j = tiny_config();
  j["budget"] = "ten";
  EXPECT_THROW(app::parse_config(j, "."), ValidationError);
}

TEST(Checksum, KnownSha256) {
  EXPECT_EQ(app::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_F(Workspace, PretextWritesOneLossPerPoolSampleAndIsReproducible) {
  const auto cfg = write_config(tiny_config());
  const auto first = run_cli("pretext -c " + cfg);
  ASSERT_EQ(first.code, 0) << first.output;
  const auto losses = read_loss_csv(out() / "losses.csv");
  EXPECT_EQ(losses.size(), 96u);
  const auto manifest = json::parse(app::read_file(out() / "pretext_manifest.json"));
  EXPECT_EQ(manifest["outputs"][(out() / "losses.csv").string()], app::sha256_file(out() / "losses.csv"));
  EXPECT_EQ(manifest["config"]["seed"], 5);
  const auto bytes = app::read_file(out() / "losses.csv");
  const auto manifest_bytes = app::read_file(out() / "pretext_manifest.json");
  ASSERT_EQ(run_cli("pretext -c " + cfg).code, 0);
  EXPECT_EQ(app::read_file(out() / "losses.csv"), bytes);
  EXPECT_EQ(app::read_file(out() / "pretext_manifest.json"), manifest_bytes);
}

TEST_F(Workspace, MissingDatasetFailsWithoutOutputs) {
  auto j = tiny_config();
  j["dataset"] = {{"kind", "idx"}, {"images", "nope-images.idx"}, {"labels", "nope-labels.idx"}};
  const auto r = run_cli("pretext -c " + write_config(j));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("not found"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(out()));
}

TEST_F(Workspace, Pt4alRunNeedsPretextFirst) {
  const auto r = run_cli("run -c " + write_config(tiny_config()));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("run pretext first"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(out()));
}

TEST_F(Workspace, RandomRunNeedsNoPretext) {
  const auto r = run_cli("run -c " + write_config(tiny_config()) + " --strategy random");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("iteration 3"), std::string::npos);
  const auto report = app::read_file(out() / "report_random.csv");
  EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 4);
  EXPECT_TRUE(fs::exists(out() / "queries_random.csv"));
  EXPECT_TRUE(fs::exists(out() / "run_random_manifest.json"));
}

TEST_F(Workspace, OverBudgetIsAValidationError) {
  const auto r = run_cli("run -c " + write_config(tiny_config()) + " --strategy random --budget 40");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("exceeds unlabeled pool"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(out()));
}

TEST_F(Workspace, BadArgumentsExitWithOne) {
  EXPECT_EQ(run_cli("").code, 1);
  EXPECT_EQ(run_cli("frobnicate").code, 1);
  EXPECT_EQ(run_cli("run -c " + (dir_ / "missing.json").string()).code, 1);
  EXPECT_EQ(run_cli("run -c " + write_config(tiny_config()) + " --strategy coreset").code, 1);
  EXPECT_EQ(run_cli("--version").code, 0);
}

TEST_F(Workspace, FullPipeline) {
  const auto cfg = write_config(tiny_config());
  ASSERT_EQ(run_cli("pretext -c " + cfg).code, 0);

  ASSERT_EQ(run_cli("plan -c " + cfg).code, 0);
  const auto plan = app::read_file(out() / "plan.csv");
  EXPECT_EQ(std::count(plan.begin(), plan.end(), '\n'), 97);

  const auto run = run_cli("run -c " + cfg);
  ASSERT_EQ(run.code, 0) << run.output;
  const auto report = app::read_file(out() / "report_pt4al.csv");
  ASSERT_EQ(run_cli("run -c " + cfg).code, 0);
  EXPECT_EQ(app::read_file(out() / "report_pt4al.csv"), report);

  const auto cold = run_cli("coldstart -c " + cfg + " --seeds 1 2 3");
  ASSERT_EQ(cold.code, 0) << cold.output;
  std::ifstream per_seed(out() / "coldstart.csv");
  std::string line;
  std::getline(per_seed, line);
  double total = 0.0;
  int rows = 0;
  while (std::getline(per_seed, line)) {
    if (line.find(",pt4al,") == std::string::npos) continue;
    total += std::stod(line.substr(line.rfind(',') + 1));
    ++rows;
  }
  EXPECT_EQ(rows, 3);
  std::ifstream summary(out() / "coldstart_summary.csv");
  std::getline(summary, line);
  std::getline(summary, line);
  ASSERT_EQ(line.rfind("pt4al,", 0), 0u);
  EXPECT_NEAR(std::stod(line.substr(6)), total / 3.0, 1e-9);

  const auto corr = run_cli("correlate -c " + cfg);
  ASSERT_EQ(corr.code, 0) << corr.output;
  EXPECT_TRUE(fs::exists(out() / "scatter.csv"));
  EXPECT_TRUE(fs::exists(out() / "correlation.csv"));

  const auto abl = run_cli("ablate -c " + cfg + " --variant pt4al-pretext-only-high --seeds 1 2");
  ASSERT_EQ(abl.code, 0) << abl.output;
  const auto summary_csv = app::read_file(out() / "ablation_summary.csv");
  EXPECT_NE(summary_csv.find("pt4al,"), std::string::npos);
  EXPECT_NE(summary_csv.find("pt4al-pretext-only-high,"), std::string::npos);
}

TEST_F(Workspace, ColdstartNeedsTwoSeeds) {
  const auto cfg = write_config(tiny_config());
  ASSERT_EQ(run_cli("pretext -c " + cfg).code, 0);
  EXPECT_EQ(run_cli("coldstart -c " + cfg + " --seeds 1").code, 1);
}

TEST_F(Workspace, CorrelateRejectsUntrainedCheckpoint) {
  auto j = tiny_config();
  LearnerConfig untrained;
  untrained.input = {8, 8, 1};
  untrained.hidden = {4};
  untrained.classes = 4;
  save_checkpoint(dir_ / "untrained.json", init_learner(untrained));
  j["pretext_checkpoint"] = "untrained.json";
  const auto r = run_cli("correlate -c " + write_config(j));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("untrained"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(out()));
}

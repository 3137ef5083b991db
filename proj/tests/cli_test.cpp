#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr combined
};

// Runs the installed binary the way a user would, capturing output.
RunResult run_cli(const std::string& args) {
  fs::path log = fs::temp_directory_path() / "flare_cli_test_output.txt";
  std::string cmd = std::string(FLARE_CLI_PATH) + " " + args + " > " +
                    log.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  RunResult res;
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::ostringstream ss;
  ss << in.rdbuf();
  res.output = ss.str();
  return res;
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// One tiny config shared by the end-to-end subcommand tests; sized so the
// whole binary-level suite stays in the seconds range.
fs::path write_tiny_config(const fs::path& dir) {
  nlohmann::json j;
  j["schema_version"] = "flare.experiment.v1";
  j["output_dir"] = (dir / "runs").string();
  j["model"] = {{"num_layers", 2}, {"hidden_dim", 16}, {"num_heads", 2},
                {"ffn_dim", 32}};
  j["data"] = {{"train", 60}, {"val", 15}, {"test", 20}};
  j["methods"] = {"lora"};
  j["seeds"] = {0};
  j["mix_layer"] = 1;
  j["base"] = {{"epochs", 1}};
  j["train"] = {{"epochs", 1}};
  fs::path path = dir / "config.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

TEST(Cli, HelpExitsZero) {
  auto res = run_cli("--help");
  EXPECT_EQ(res.exit_code, 0);
  EXPECT_NE(res.output.find("train-base"), std::string::npos);
  EXPECT_NE(res.output.find("sweep"), std::string::npos);
}

TEST(Cli, MissingSubcommandIsAConfigError) {
  auto res = run_cli("");
  EXPECT_EQ(res.exit_code, 2);
}

TEST(Cli, UnknownFlagIsAConfigError) {
  auto res = run_cli("train-xlt --warp-factor 9");
  EXPECT_EQ(res.exit_code, 2);
}

TEST(Cli, UnknownConfigKeyIsReportedByPath) {
  fs::path dir = fresh_dir("flare_cli_badkey");
  fs::path cfg = dir / "bad.json";
  std::ofstream(cfg) << R"({"data": {"trian": 50}})";
  auto res = run_cli("train-xlt --config " + cfg.string());
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.output.find("data.trian"), std::string::npos) << res.output;
}

TEST(Cli, BadMethodIsAConfigError) {
  auto res = run_cli("train-xlt --method warp_drive");
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.output.find("warp_drive"), std::string::npos);
}

TEST(Cli, TrainBaseWritesACheckpointAndPrintsTheMetric) {
  fs::path dir = fresh_dir("flare_cli_base");
  fs::path cfg = write_tiny_config(dir);
  auto res = run_cli("train-base --config " + cfg.string());
  ASSERT_EQ(res.exit_code, 0) << res.output;
  EXPECT_NE(res.output.find("english accuracy:"), std::string::npos);
  auto pos = res.output.find("checkpoint: ");
  ASSERT_NE(pos, std::string::npos);
  std::string ckpt = res.output.substr(pos + 12);
  ckpt.erase(ckpt.find_first_of('\n'));
  EXPECT_TRUE(fs::exists(ckpt)) << ckpt;
}

TEST(Cli, EvalZeroShotPrintsAMetric) {
  fs::path dir = fresh_dir("flare_cli_eval");
  fs::path cfg = write_tiny_config(dir);
  auto res = run_cli("eval --config " + cfg.string() + " --setting zero_shot");
  ASSERT_EQ(res.exit_code, 0) << res.output;
  EXPECT_NE(res.output.find("zero_shot accuracy:"), std::string::npos);
}

TEST(Cli, TrainXltEvalProbeAndReportComposeOverOneRun) {
  fs::path dir = fresh_dir("flare_cli_xlt");
  fs::path cfg_path = write_tiny_config(dir);
  // flare so the run leaves an adapter checkpoint with fusion maps
  auto res = run_cli("train-xlt --config " + cfg_path.string() +
                     " --method flare");
  ASSERT_EQ(res.exit_code, 0) << res.output;
  auto pos = res.output.find("run: ");
  ASSERT_NE(pos, std::string::npos) << res.output;
  std::string root = res.output.substr(pos + 5);
  root.erase(root.find_first_of('\n'));

  fs::path cell = fs::path(root) / "flare" / "goblish" / "0";
  EXPECT_TRUE(fs::exists(cell / "metrics.json"));
  EXPECT_TRUE(fs::exists(cell / "predictions.jsonl"));
  EXPECT_TRUE(fs::exists(cell / "adapters.ckpt"));

  auto eval = run_cli("eval --config " + cfg_path.string() +
                      " --setting target --adapters " +
                      (cell / "adapters.ckpt").string());
  ASSERT_EQ(eval.exit_code, 0) << eval.output;
  EXPECT_NE(eval.output.find("target accuracy:"), std::string::npos);

  auto probe = run_cli("probe --config " + cfg_path.string() +
                       " --adapters " + (cell / "adapters.ckpt").string() +
                       " --out " + (dir / "probes").string());
  ASSERT_EQ(probe.exit_code, 0) << probe.output;
  EXPECT_TRUE(fs::exists(dir / "probes" / "probe_positions.csv"));
  EXPECT_TRUE(fs::exists(dir / "probes" / "probe_layers.csv"));

  auto report = run_cli("report --dir " + root);
  ASSERT_EQ(report.exit_code, 0) << report.output;
  EXPECT_TRUE(fs::exists(fs::path(root) / "summary.csv"));
  std::ifstream sum(fs::path(root) / "summary.csv");
  std::ostringstream ss;
  ss << sum.rdbuf();
  EXPECT_NE(ss.str().find("flare,goblish,accuracy,1,"), std::string::npos)
      << ss.str();
}

TEST(Cli, ReportOnMissingDirectoryStillSucceedsHeaderOnly) {
  fs::path dir = fresh_dir("flare_cli_report_empty");
  auto res = run_cli("report --dir " + (dir / "nothing_here").string());
  EXPECT_EQ(res.exit_code, 0) << res.output;
  EXPECT_TRUE(fs::exists(dir / "nothing_here" / "rows.csv"));
}

}  // namespace

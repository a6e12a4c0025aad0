#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "gtest/gtest.h"

namespace {

namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("advpol_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Run cli(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd =
      std::string(ADVPOL_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

TEST(CliTest, missing_config_names_the_file) {
  const auto dir = scratch("missing");
  const auto r = cli("train --config " + (dir / "nope.json").string() + " --out " + (dir / "o").string(), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nope.json"), std::string::npos) << r.err;
}

TEST(CliTest, unknown_flag_is_rejected) {
  const auto dir = scratch("flag");
  EXPECT_EQ(cli("verify-bounds --bogus 3", dir).code, 1);
  EXPECT_EQ(cli("", dir).code, 1);
  EXPECT_EQ(cli("frobnicate", dir).code, 1);
}

TEST(CliTest, unknown_config_key_is_rejected) {
  const auto dir = scratch("key");
  std::ofstream(dir / "c.json") << R"({"total_step": 10})";
  const auto r = cli("make-victim --config " + (dir / "c.json").string() + " --out " + (dir / "o").string(), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("total_step"), std::string::npos) << r.err;
}

TEST(CliTest, verify_bounds_is_reproducible) {
  const auto dir = scratch("vb");
  const std::string common = " --env markov_rps --gamma 0.9 --pairs 20 --samples 10 --seed 4 --workers 1";
  ASSERT_EQ(cli("verify-bounds" + common + " --out " + (dir / "a").string(), dir).code, 0);
  ASSERT_EQ(cli("verify-bounds" + common + " --out " + (dir / "b").string(), dir).code, 0);
  for (const char* f : {"bounds.jsonl", "summary.tsv", "lemma2.jsonl", "theorem1.jsonl", "theorem2.jsonl",
                        "interpolation.jsonl", "config.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  EXPECT_FALSE(slurp(dir / "a" / "bounds.jsonl").empty());
  const auto cfg = nlohmann::json::parse(slurp(dir / "a" / "config.json"));
  EXPECT_EQ(cfg.at("pairs"), 20);
  EXPECT_EQ(cfg.at("seed"), 4);
}

TEST(CliTest, victim_train_evaluate_plot_pipeline) {
  const auto dir = scratch("pipe");
  const auto vic = dir / "vic", adv = dir / "adv", ev = dir / "ev", pl = dir / "plot";
  ASSERT_EQ(cli("make-victim --env markov_rps --victim-action 0 --workers 1 --out " + vic.string(), dir).code, 0);
  ASSERT_TRUE(fs::exists(vic / "victim.json"));
  EXPECT_EQ(nlohmann::json::parse(slurp(vic / "config.json")).at("victim_action"), 0);

  const auto t = cli("train --env markov_rps --gamma 0.9 --steps 600 --batch-size 200 --seed 2 --workers 1 --victim " +
                         (vic / "victim.json").string() + " --out " + adv.string(),
                     dir);
  ASSERT_EQ(t.code, 0) << t.err;
  for (const char* f : {"config.json", "adversary.json", "imitator.json", "metrics.csv", "report.json", "ckpt_0.json"})
    EXPECT_TRUE(fs::exists(adv / f)) << f;
  const auto cfg = nlohmann::json::parse(slurp(adv / "config.json"));
  EXPECT_EQ(cfg.at("total_steps"), 600);
  EXPECT_EQ(cfg.at("batch_size"), 200);

  const auto e = cli("evaluate --adv " + (adv / "adversary.json").string() + " --vic " + (vic / "victim.json").string() +
                         " --imitator " + (adv / "imitator.json").string() + " --episodes 50 --workers 1 --out " +
                         ev.string(),
                     dir);
  ASSERT_EQ(e.code, 0) << e.err;
  const auto rep = nlohmann::json::parse(slurp(ev / "report.json"));
  EXPECT_EQ(rep.at("episodes"), 50);
  EXPECT_EQ(rep.at("wins").get<int>() + rep.at("ties").get<int>() + rep.at("losses").get<int>(), 50);
  EXPECT_TRUE(fs::exists(ev / "config.json"));

  const auto p = cli("plot --metrics " + (adv / "metrics.csv").string() + " --out " + pl.string(), dir);
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_TRUE(fs::exists(pl / "win_rate.svg"));
}

TEST(CliTest, retrain_without_adversary_fails_cleanly) {
  const auto dir = scratch("retrain");
  const auto r = cli("retrain-victim --env markov_rps --out " + (dir / "o").string(), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(CliTest, malformed_metrics_reports_line) {
  const auto dir = scratch("plotbad");
  std::ofstream(dir / "m.csv") << "step,win_rate\n1,x\n";
  const auto r = cli("plot --metrics " + (dir / "m.csv").string() + " --out " + (dir / "o").string(), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("m.csv:2:"), std::string::npos) << r.err;
}

}  // namespace

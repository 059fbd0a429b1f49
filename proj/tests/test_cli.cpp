#include "tblab/cli.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

namespace tblab::cli {
namespace {

struct Run {
  int code;
  std::string out, err;
};

Run tblab(std::vector<std::string> args) {
  args.insert(args.begin(), "tblab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("tblab-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  void write(const std::string& name, const std::string& text) const { std::ofstream(dir / name) << text; }

  fs::path dir;
};

TEST_F(Cli, SimulateDefaults) {
  auto r = tblab({"simulate", "--out", path("run"), "--seed", "7"});
  ASSERT_EQ(r.code, ok) << r.err;
  auto m = nlohmann::json::parse(slurp(dir / "run" / "manifest.json"));
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["config_hash"].get<std::string>().size(), 16u);
  EXPECT_EQ(m["derived"]["c_sch"], 900);
  EXPECT_EQ(m["derived"]["tau_sch"], 30.0);
  EXPECT_EQ(m["derived"]["group"], "G1");
  ASSERT_EQ(m["files"].size(), 9u);
  for (const auto& f : m["files"]) EXPECT_TRUE(fs::exists(dir / "run" / f.get<std::string>()));
  EXPECT_FALSE(fs::exists(dir / "run" / "manifest.json.tmp"));
}

TEST_F(Cli, SimulateIsReproducible) {
  write("cfg.json", R"({"duration": 40, "reject_prob": 0.2, "gamma_p": 2})");
  ASSERT_EQ(tblab({"simulate", "--config", path("cfg.json"), "--out", path("a"), "--seed", "3"}).code, ok);
  ASSERT_EQ(tblab({"simulate", "--config", path("cfg.json"), "--out", path("b"), "--seed", "3"}).code, ok);
  for (const auto& e : fs::directory_iterator(dir / "a")) EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename())) << e.path();
  ASSERT_EQ(tblab({"simulate", "--config", path("cfg.json"), "--out", path("c"), "--seed", "4"}).code, ok);
  EXPECT_NE(slurp(dir / "a" / "peer-0.jsonl"), slurp(dir / "c" / "peer-0.jsonl"));
}

TEST_F(Cli, SimulateRejectsBadConfig) {
  write("neg.json", R"({"r": -1})");
  auto r = tblab({"simulate", "--config", path("neg.json"), "--out", path("x")});
  EXPECT_EQ(r.code, validation);
  EXPECT_NE(r.err.find("r:"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "x" / "manifest.json"));

  write("broken.json", "{");
  EXPECT_EQ(tblab({"simulate", "--config", path("broken.json"), "--out", path("x")}).code, validation);
  EXPECT_EQ(tblab({"simulate", "--config", path("missing.json"), "--out", path("x")}).code, input_missing);
  EXPECT_EQ(tblab({"simulate", "--out", path("x"), "--gamma", "-2"}).code, validation);
}

TEST_F(Cli, PredictSummaries) {
  auto r = tblab({"predict", "--gamma", "3"});
  ASSERT_EQ(r.code, ok) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_DOUBLE_EQ(j["tau_sch"].get<double>(), 30);
  EXPECT_DOUBLE_EQ(j["tau_cvg"].get<double>(), 70);
  EXPECT_EQ(j["group"], "G1");

  j = nlohmann::json::parse(tblab({"predict", "--gamma", "4"}).out);
  EXPECT_EQ(j["group"], "G2");

  j = nlohmann::json::parse(tblab({"predict", "--gamma", "1"}).out);
  EXPECT_TRUE(j["non_converging"].get<bool>());
  EXPECT_TRUE(j["tau_cvg"].is_null());
}

TEST_F(Cli, PredictWritesFiles) {
  auto r = tblab({"predict", "--gamma", "3", "--duration", "10", "--format", "csv", "--out", path("p")});
  ASSERT_EQ(r.code, ok) << r.err;
  EXPECT_EQ(slurp(dir / "p" / "prediction.csv"), r.out);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 12);
  EXPECT_TRUE(nlohmann::json::parse(slurp(dir / "p" / "prediction.json")).contains("group_boundaries"));
  EXPECT_EQ(tblab({"predict", "--gamma", "-1"}).code, validation);
  EXPECT_EQ(tblab({"predict", "--format", "xml"}).code, validation);
}

TEST_F(Cli, AnalyzeBatch) {
  write("cfg.json", R"({"report_interval": 1, "duration": 200})");
  ASSERT_EQ(tblab({"simulate", "--config", path("cfg.json"), "--out", path("run")}).code, ok);
  auto r = tblab({"analyze", path("run") + "/peer-0.jsonl", "--out", path("an")});
  ASSERT_EQ(r.code, ok) << r.err;
  auto rep = nlohmann::json::parse(slurp(dir / "an" / "peer-0.report.json"));
  EXPECT_NEAR(rep["tau_off"]["LI"]["value"].get<double>(), 70, 0.5);
  EXPECT_EQ(rep["group"]["value"], "G1");
  for (const char* f : {"estimates.csv", "hist_beta.csv", "hist_gamma.csv", "hist_tau_off.csv"}) EXPECT_TRUE(fs::exists(dir / "an" / f)) << f;

  // Stable peers are not hosts; their reports say so but the batch succeeds.
  r = tblab({"analyze", path("run") + "/peer-*.jsonl"});
  ASSERT_EQ(r.code, ok) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 9);
}

TEST_F(Cli, AnalyzeFailures) {
  EXPECT_EQ(tblab({"analyze", path("nothing-*.jsonl")}).code, input_missing);
  ASSERT_EQ(tblab({"simulate", "--out", path("run"), "--gamma", "3"}).code, ok);
  write("run/peer-99.jsonl", "garbage\n");
  auto r = tblab({"analyze", path("run") + "/peer-*.jsonl"});
  EXPECT_EQ(r.code, partial);
  EXPECT_NE(r.err.find("peer-99.jsonl"), std::string::npos);
}

TEST_F(Cli, CompareRateMismatch) {
  write("cfg.json", R"({"report_interval": 1, "duration": 100})");
  ASSERT_EQ(tblab({"simulate", "--config", path("cfg.json"), "--out", path("run")}).code, ok);
  auto r = tblab({"compare", path("run/peer-0.jsonl"), "--r", "5"});
  EXPECT_EQ(r.code, validation);
  EXPECT_NE(r.err.find("r:"), std::string::npos);

  r = tblab({"compare", path("run/peer-0.jsonl"), "--out", path("cmp")});
  ASSERT_EQ(r.code, ok) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["r"], 10.0);
  EXPECT_LE(j["aligned"]["max_abs"].get<double>(), 3);
  EXPECT_TRUE(fs::exists(dir / "cmp" / "residuals.csv"));
}

TEST_F(Cli, CompareEmptyTrace) {
  write("empty.jsonl", "");
  EXPECT_EQ(tblab({"compare", path("empty.jsonl")}).code, input_missing);
  EXPECT_EQ(tblab({"compare", path("absent.jsonl")}).code, input_missing);
  write("bad.jsonl", "{\n");
  EXPECT_EQ(tblab({"compare", path("bad.jsonl")}).code, validation);
}

TEST_F(Cli, HelpAndVersion) {
  auto r = tblab({"--version"});
  EXPECT_EQ(r.code, ok);
  EXPECT_EQ(r.out, std::string(kVersion) + "\n");
  EXPECT_EQ(tblab({"--help"}).code, ok);
  EXPECT_EQ(tblab({}).code, validation);
  EXPECT_EQ(tblab({"frobnicate"}).code, validation);
}

}  // namespace
}  // namespace tblab::cli

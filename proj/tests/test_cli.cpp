#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

// Exit status of `vsamil <args>`, output discarded.
int run(const std::string& args) {
  const std::string cmd = std::string(VSAMIL_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Json read_json(const fs::path& p) {
  std::ifstream in(p);
  return Json::parse(in);
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("vsamil_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "quick.json") << R"({"autoencoder.latent_dim": 16, "autoencoder.epochs": 2,
      "classifier.epochs": 3, "codebook.restarts": 1})";
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  int convert_musk1() {
    return run("convert --input " + std::string(VSAMIL_DATA_DIR) + "/musk1.csv --bag-column 1 --label-column 0 --seed 1 --output " +
               path("musk1.jsonl"));
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, ConvertTrainEvaluate) {
  ASSERT_EQ(convert_musk1(), 0);
  ASSERT_EQ(run("train --data " + path("musk1.jsonl") + " --config " + path("quick.json") + " --seed 2 --out " + path("run")), 0);
  for (const char* f : {"model.json", "manifest.json", "metrics.json", "metrics.csv"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  }
  ASSERT_EQ(run("evaluate --model " + path("run/model.json") + " --data " + path("musk1.jsonl") + " --split test --out " +
                path("eval")),
            0);
  const Json trained = read_json(dir_ / "run" / "metrics.json");
  const Json evaluated = read_json(dir_ / "eval" / "metrics_test.json");
  EXPECT_EQ(evaluated.at("auroc"), trained.at("test").at("auroc"));
  EXPECT_EQ(evaluated.at("accuracy"), trained.at("test").at("accuracy"));
}

TEST_F(Cli, ManifestReRunIsIdentical) {
  ASSERT_EQ(convert_musk1(), 0);
  ASSERT_EQ(run("train --data " + path("musk1.jsonl") + " --config " + path("quick.json") + " --out " + path("a")), 0);
  ASSERT_EQ(run("train --manifest " + path("a/manifest.json") + " --data " + path("musk1.jsonl") + " --out " + path("b")), 0);
  EXPECT_EQ(read_json(dir_ / "a" / "metrics.json"), read_json(dir_ / "b" / "metrics.json"));
}

TEST_F(Cli, CorruptModelIsADataError) {
  ASSERT_EQ(convert_musk1(), 0);
  std::ofstream(path("model.json")) << "{not json";
  EXPECT_EQ(run("evaluate --model " + path("model.json") + " --data " + path("musk1.jsonl")), 2);
  EXPECT_EQ(run("evaluate --model " + path("absent.json") + " --data " + path("musk1.jsonl")), 2);
}

TEST_F(Cli, BadConfigAndUsageExitOne) {
  std::ofstream(path("bad.json")) << R"({"codebook.kk": 3})";
  EXPECT_EQ(run("train --data x.jsonl --config " + path("bad.json")), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("tune --trials 0"), 1);
}

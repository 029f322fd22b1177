#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + DLNET_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("dlnet_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpSucceeds) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("stage1 --help"), 0);
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("stage1 --bogus"), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("stage1 --config " + (dir_ / "missing.json").string()), 1);
}

TEST_F(Cli, ReportWithoutLedgerExitsOne) { EXPECT_EQ(run("report --quiet --out " + dir_.string()), 1); }

TEST_F(Cli, BadConfigExitsOne) {
  std::ofstream(dir_ / "bad.json") << R"({"teacher": {"hiddn": 4}})";
  EXPECT_EQ(run("train-teacher --quiet --config " + (dir_ / "bad.json").string()), 1);
}

TEST_F(Cli, SynthDataIsSeedDeterministic) {
  ASSERT_EQ(run("synth-data --seed 7 --out " + (dir_ / "a.csv").string()), 0);
  ASSERT_EQ(run("synth-data --seed 7 --out " + (dir_ / "b.csv").string()), 0);
  ASSERT_EQ(run("synth-data --seed 8 --out " + (dir_ / "c.csv").string()), 0);
  const auto a = slurp(dir_ / "a.csv");
  EXPECT_EQ(a.rfind("cell_id,cycle,soh\n", 0), 0u);
  EXPECT_EQ(a, slurp(dir_ / "b.csv"));
  EXPECT_NE(a, slurp(dir_ / "c.csv"));
}

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli.hpp"
#include "lavpr/storage.hpp"

namespace lavpr {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result lavpr_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lavpr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string small_dataset(bool patches = false) {
    const auto d = path("data");
    std::vector<std::string> args{"gen-synth", "--out", d,   "--places", "40", "--train-places",
                                  "20",        "--dv",  "12", "--dt",    "10", "--latent-dim",
                                  "6",         "--tokens-per-text",      "3",  "--seed", "5"};
    if (patches) args.insert(args.end(), {"--patches-per-image", "3"});
    const auto r = lavpr_run(args);
    EXPECT_EQ(r.code, cli::kExitOk) << r.err;
    return d;
  }

  fs::path dir_;
};

TEST_F(Cli, FlopsPrintsScientific) {
  const auto r = lavpr_run({"flops", "--params", "1.06e9", "--seq", "1"});
  EXPECT_EQ(r.code, cli::kExitOk);
  EXPECT_EQ(r.out, "2.12e9\n");
}

TEST_F(Cli, UsageErrorsExitTwo) {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {},
           {"bogus"},
           {"flops", "--params", "3"},
           {"flops", "--params", "3", "--seq", "1", "--nope", "1"},
           {"eval", "--format", "html"}}) {
    const auto r = lavpr_run(args);
    EXPECT_EQ(r.code, cli::kExitUsage) << r.err;
  }
  const auto r = lavpr_run({"flops", "--params", "3"});
  EXPECT_NE(r.err.find("usage error: --seq is required"), std::string::npos) << r.err;
}

TEST_F(Cli, LibraryErrorsExitOneWithCode) {
  const auto r = lavpr_run({"eval", "--data", path("missing"), "--modality", "vision"});
  EXPECT_EQ(r.code, cli::kExitFailure);
  EXPECT_EQ(r.err.rfind("error: code=Io message=", 0), 0u) << r.err;

  const auto neg = lavpr_run({"flops", "--params", "-1", "--seq", "2"});
  EXPECT_EQ(neg.code, cli::kExitFailure);
  EXPECT_NE(neg.err.find("code=InvalidArgument"), std::string::npos) << neg.err;
}

TEST_F(Cli, RankAboveWidthIsRankViolation) {
  const auto data = small_dataset(true);
  const auto r = lavpr_run({"train-crossmodal", "--data", data, "--out", path("cm"), "--rank",
                            "400", "--model-dim", "8", "--heads", "2", "--ff-dim", "8",
                            "--output-dim", "8", "--epochs", "1"});
  EXPECT_EQ(r.code, cli::kExitFailure);
  EXPECT_NE(r.err.find("code=RankViolation"), std::string::npos) << r.err;
}

TEST_F(Cli, EvalReportsRequestedCutoffs) {
  const auto data = small_dataset();
  const auto r =
      lavpr_run({"eval", "--data", data, "--modality", "vision,text", "--k", "1,5", "--format", "csv"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(r.out.rfind("mechanism,dim,R@1,R@5\n", 0), 0u) << r.out;
  EXPECT_NE(r.out.find("\nvision,12,"), std::string::npos);
  EXPECT_NE(r.out.find("\ntext,10,"), std::string::npos);
}

TEST_F(Cli, DataDirFromEnvironment) {
  const auto data = small_dataset();
  ::setenv(cli::kDataDirEnv, data.c_str(), 1);
  const auto r = lavpr_run({"eval", "--modality", "vision"});
  ::unsetenv(cli::kDataDirEnv);
  EXPECT_EQ(r.code, cli::kExitOk) << r.err;
}

TEST_F(Cli, CatRejectsTrainingFlags) {
  const auto data = small_dataset();
  const auto r = lavpr_run({"train-fusion", "--data", data, "--mech", "cat", "--lr", "0.1"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  const auto ok = lavpr_run({"train-fusion", "--data", data, "--mech", "cat", "--out", path("cat")});
  EXPECT_EQ(ok.code, cli::kExitOk) << ok.err;
}

TEST_F(Cli, ResolvedConfigReplaysAndFlagsOverride) {
  const auto data = small_dataset();
  const auto first = lavpr_run({"train-fusion", "--data", data, "--mech", "pa", "--out",
                                path("run1"), "--epochs", "2", "--places-per-batch", "8",
                                "--seed", "3"});
  ASSERT_EQ(first.code, cli::kExitOk) << first.err;
  const auto cfg_path = path("run1") + "/" + cli::kResolvedConfigName;
  const auto cfg = nlohmann::json::parse(read_file(cfg_path));
  EXPECT_EQ(cfg.at("command"), "train-fusion");
  EXPECT_EQ(cfg.at("options").at("epochs"), 2);

  const auto replay = lavpr_run({"--config", cfg_path, "--out", path("run2")});
  ASSERT_EQ(replay.code, cli::kExitOk) << replay.err;
  EXPECT_EQ(read_file(path("run1") + "/head.lvpr"), read_file(path("run2") + "/head.lvpr"));

  const auto over = lavpr_run({"--config", cfg_path, "--out", path("run3"), "--epochs", "1"});
  ASSERT_EQ(over.code, cli::kExitOk) << over.err;
  const auto cfg3 = nlohmann::json::parse(read_file(path("run3") + "/" + cli::kResolvedConfigName));
  EXPECT_EQ(cfg3.at("options").at("epochs"), 1);
  EXPECT_EQ(cfg3.at("options").at("places-per-batch"), 8);
}

TEST_F(Cli, ConfigSuppliesRequiredOptions) {
  std::ofstream(path("f.json")) << R"({"command":"flops","options":{"params":10,"seq":3}})";
  auto r = lavpr_run({"--config", path("f.json")});
  EXPECT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(r.out, "6e1\n");
  r = lavpr_run({"--config", path("f.json"), "flops", "--seq", "5"});
  EXPECT_EQ(r.out, "1e2\n");

  std::ofstream(path("g.json")) << R"({"command":"flops","options":{"bogus":1}})";
  EXPECT_EQ(lavpr_run({"--config", path("g.json")}).code, cli::kExitUsage);
  std::ofstream(path("h.json")) << R"({"command":"eval","options":{}})";
  EXPECT_EQ(lavpr_run({"--config", path("h.json"), "flops"}).code, cli::kExitUsage);
}

// One query whose true match ranks 150th by vision but first by text.
Dataset needle_dataset() {
  Dataset ds;
  ds.vision.dim = 2;
  ds.text.dim = 2;
  const std::size_t distractors = 199;
  const std::size_t n = distractors + 2;
  ds.vision.matrix = Matrix(n, 2);
  ds.text.matrix = Matrix(n, 2);
  auto add = [&](std::size_t row, const std::string& id, const std::string& place, Split split,
                 double v_angle, double t_angle) {
    ds.vision.records.push_back({id, place, Modality::kVision, split});
    ds.text.records.push_back({id, place, Modality::kText, split});
    ds.vision.matrix.row(row)[0] = static_cast<float>(std::cos(v_angle));
    ds.vision.matrix.row(row)[1] = static_cast<float>(std::sin(v_angle));
    ds.text.matrix.row(row)[0] = static_cast<float>(std::cos(t_angle));
    ds.text.matrix.row(row)[1] = static_cast<float>(std::sin(t_angle));
  };
  PlaceEntry target{"p_target", {"q", "t"}, {"q", "t"}, {{"q", Split::kQuery}, {"t", Split::kDatabase}}};
  ds.manifest.places.push_back(target);
  add(0, "q", "p_target", Split::kQuery, 0.0, 0.0);
  // 149 distractors closer in vision than the truth (angle 1.0), the rest farther.
  for (std::size_t i = 0; i < distractors; ++i) {
    const auto id = "d" + std::to_string(i);
    const auto place = "p" + std::to_string(i);
    ds.manifest.places.push_back({place, {id}, {id}, {{id, Split::kDatabase}}});
    const double v = i < 149 ? 0.005 * static_cast<double>(i + 1) : 1.2 + 0.005 * static_cast<double>(i);
    add(1 + i, id, place, Split::kDatabase, v, 1.5);
  }
  add(n - 1, "t", "p_target", Split::kDatabase, 1.0, 0.0);
  return ds;
}

TEST_F(Cli, RerankCountsShortlistMiss) {
  write_dataset(needle_dataset(), path("needle"));
  const auto r = lavpr_run({"rerank", "--data", path("needle"), "--top", "100", "--first",
                            "vision", "--k", "1", "--format", "csv"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("shortlist_misses=1 queries=1 top=100"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("\njoint,4,1\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("\nsequential vision->text,4,0\n"), std::string::npos) << r.out;

  const auto wide = lavpr_run({"rerank", "--data", path("needle"), "--top", "150", "--first",
                               "vision", "--k", "1", "--format", "csv"});
  ASSERT_EQ(wide.code, cli::kExitOk) << wide.err;
  EXPECT_NE(wide.out.find("shortlist_misses=0"), std::string::npos) << wide.out;
}

TEST_F(Cli, GradcheckPasses) {
  const auto r = lavpr_run({"gradcheck", "--seeds", "1"});
  EXPECT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(r.out.rfind("case,seed,max_rel_error,passed\n", 0), 0u);
  EXPECT_EQ(r.out.find(",no\n"), std::string::npos) << r.out;
}

}  // namespace
}  // namespace lavpr

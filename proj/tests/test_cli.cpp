#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"

namespace mrbd::cli {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t lines(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

/// Every file under `a` and `b` except timing.json, byte for byte.
void expect_same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file() && e.path().filename() != "timing.json") fa.push_back(fs::relative(e.path(), a));
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (e.is_regular_file() && e.path().filename() != "timing.json") fb.push_back(fs::relative(e.path(), b));
  }
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  ASSERT_EQ(fa, fb);
  ASSERT_FALSE(fa.empty());
  for (const auto& f : fa) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fs::temp_directory_path() / ("mrbd_cli_" + std::to_string(::getpid())));
    fs::remove_all(*root_);
    fs::create_directories(*root_);
    std::ostringstream out, err;
    ASSERT_EQ(run({"prepare", "--synthetic", "--sizes", "120,24,24", "--seed", "5", "--out_dir", dir("data")}, out,
                  err),
              kOk)
        << err.str();
    std::ofstream cfg(dir("tiny.cfg"));
    cfg << "# small enough for unit tests\n"
           "embed_dim = 6\nhidden_dim = 6\nencoder_layers=1\ndecoder_layers=1\n"
           "epochs = 2\nbatch_size = 16\nlearning_rate = 0.01\nmax_decode_len = 8\n"
           "students = 3\ndata_dir = "
        << dir("data") << "\n";
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete root_;
  }
  static std::string dir(const std::string& name) { return (*root_ / name).string(); }

  int cli(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return run(args, out_, err_);
  }
  int cli_tiny(const std::string& command, std::vector<std::string> args) {
    args.insert(args.begin(), {command, "--config", dir("tiny.cfg")});
    return cli(args);
  }

  static fs::path* root_;
  std::ostringstream out_, err_;
};

fs::path* Cli::root_ = nullptr;

TEST_F(Cli, PrepareWritesRequestedSplits) {
  EXPECT_EQ(lines(dir("data") + "/train.tsv"), 120u);
  EXPECT_EQ(lines(dir("data") + "/validation.tsv"), 24u);
  EXPECT_EQ(lines(dir("data") + "/test.tsv"), 24u);
  EXPECT_TRUE(fs::exists(dir("data") + "/vocab.txt"));
  const auto manifest = nlohmann::json::parse(slurp(dir("data") + "/manifest.json"));
  EXPECT_EQ(manifest["splits"]["train"], 120);
}

TEST_F(Cli, PrepareIsByteIdentical) {
  ASSERT_EQ(cli({"prepare", "--synthetic", "--sizes", "120,24,24", "--seed", "5", "--out_dir", dir("data_again")}),
            kOk);
  expect_same_tree(dir("data"), dir("data_again"));
}

TEST_F(Cli, PrepareErrors) {
  EXPECT_EQ(cli({"prepare", "--out_dir", dir("nothing")}), kUsage);
  fs::create_directories(dir("bad"));
  for (const char* split : {"train", "validation", "test"}) {
    std::ofstream(dir("bad") + "/" + split + ".tsv") << "where are you\tat home with my family today\nno tab here\n";
  }
  EXPECT_EQ(cli({"prepare", "--input", dir("bad"), "--out_dir", dir("bad_out")}), kUsage);
  EXPECT_NE(err_.str().find("train.tsv:2"), std::string::npos) << err_.str();
}

TEST_F(Cli, PrepareFromInputDirectory) {
  ASSERT_EQ(cli({"prepare", "--input", dir("data"), "--out_dir", dir("copy")}), kOk) << err_.str();
  EXPECT_EQ(slurp(dir("data") + "/train.tsv"), slurp(dir("copy") + "/train.tsv"));
  const auto report = nlohmann::json::parse(slurp(dir("copy") + "/report.json"));
  EXPECT_EQ(report["inputs"].size(), 3u);
  EXPECT_EQ(report["inputs"][0]["sha1"].get<std::string>().size(), 40u);
}

TEST_F(Cli, ConfigValidation) {
  std::ofstream(dir("unknown.cfg")) << "epochs = 1\ntemprature = 2\n";
  EXPECT_EQ(cli({"train", "--config", dir("unknown.cfg")}), kUsage);
  EXPECT_NE(err_.str().find("unknown.cfg:2"), std::string::npos) << err_.str();
  EXPECT_EQ(cli_tiny("train", {"--epochs", "many"}), kUsage);
  EXPECT_EQ(cli_tiny("train", {"--no_such_flag", "1"}), kUsage);
  EXPECT_EQ(cli_tiny("train", {"--strategy", "boosting"}), kUsage);
  EXPECT_EQ(cli({"train", "--config", dir("missing.cfg")}), kUsage);
  EXPECT_EQ(cli({"--help"}), kOk);
}

TEST_F(Cli, MrbdWritesGroup) {
  ASSERT_EQ(cli_tiny("train", {"--out_dir", dir("mrbd")}), kOk) << err_.str();
  for (int n = 0; n < 3; ++n) EXPECT_TRUE(fs::exists(dir("mrbd") + "/checkpoints/student" + std::to_string(n) + ".ckpt"));
  const auto group = nlohmann::json::parse(slurp(dir("mrbd") + "/group.json"));
  EXPECT_EQ(group["checkpoints"].size(), 3u);
  EXPECT_EQ(group["strategy"], "mrbd");
  EXPECT_EQ(lines(dir("mrbd") + "/train_log.csv"), 1u + 2 * 3);
  const auto report = nlohmann::json::parse(slurp(dir("mrbd") + "/report.json"));
  EXPECT_EQ(report["config"]["students"], "3");
  EXPECT_FALSE(report["config"].contains("out_dir"));
  EXPECT_TRUE(report["metrics"].contains("test_nll"));
  EXPECT_TRUE(fs::exists(dir("mrbd") + "/timing.json"));
}

TEST_F(Cli, KdWritesTeacherAndStudent) {
  ASSERT_EQ(cli_tiny("train", {"--strategy", "kd", "--students", "0", "--pretrain_epochs", "1", "--out_dir",
                               dir("kd")}),
            kOk)
      << err_.str();
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir("kd") + "/checkpoints")) names.push_back(e.path().filename());
  std::sort(names.begin(), names.end());
  EXPECT_EQ(names, (std::vector<std::string>{"student.ckpt", "teacher.ckpt"}));
}

TEST_F(Cli, RejectsBeforeCompute) {
  EXPECT_EQ(cli_tiny("train", {"--imitation", "0", "--out_dir", dir("p0")}), kUsage);
  EXPECT_FALSE(fs::exists(dir("p0")));
  EXPECT_EQ(cli_tiny("train", {"--strategy", "kd", "--students", "3", "--out_dir", dir("kd3")}), kUsage);
  EXPECT_FALSE(fs::exists(dir("kd3")));
}

TEST_F(Cli, DivergenceIsRuntimeFailure) {
  EXPECT_EQ(cli_tiny("train", {"--learning_rate", "1e30", "--epochs", "3", "--out_dir", dir("nan")}), kRuntime);
  EXPECT_NE(err_.str().find("not finite"), std::string::npos);
}

TEST_F(Cli, TrainIsDeterministic) {
  ASSERT_EQ(cli_tiny("train", {"--threads", "2", "--out_dir", dir("det_a")}), kOk);
  ASSERT_EQ(cli_tiny("train", {"--threads", "2", "--out_dir", dir("det_b")}), kOk);
  expect_same_tree(dir("det_a"), dir("det_b"));
}

TEST_F(Cli, EvaluateReport) {
  ASSERT_EQ(cli_tiny("train", {"--out_dir", dir("ev_run")}), kOk);
  ASSERT_EQ(cli_tiny("evaluate", {"--run_dir", dir("ev_run"), "--out_dir", dir("ev_a")}), kOk) << err_.str();
  ASSERT_EQ(cli_tiny("evaluate", {"--run_dir", dir("ev_run"), "--out_dir", dir("ev_b")}), kOk);
  expect_same_tree(dir("ev_a"), dir("ev_b"));
  const std::string csv = slurp(dir("ev_a") + "/metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "checkpoint,dist_1,dist_2,ent_1,ent_2,dis_1,dis_2,test_nll");
  const auto report = nlohmann::json::parse(slurp(dir("ev_a") + "/report.json"));
  EXPECT_EQ(report["metrics"].size(), 7u);
  EXPECT_EQ(lines(dir("ev_a") + "/responses.txt"), 24u);
}

TEST_F(Cli, EvaluateErrors) {
  EXPECT_EQ(cli_tiny("evaluate", {"--checkpoint", dir("absent.ckpt"), "--out_dir", dir("ev_x")}), kUsage);
  EXPECT_EQ(cli_tiny("evaluate", {"--out_dir", dir("ev_x")}), kUsage);
  ASSERT_EQ(cli({"prepare", "--synthetic", "--sizes", "60,12,12", "--templates", "3", "--out_dir", dir("small")}),
            kOk);
  ASSERT_EQ(cli_tiny("train", {"--strategy", "plain", "--students", "0", "--epochs", "1", "--out_dir", dir("pl")}),
            kOk);
  EXPECT_EQ(cli_tiny("evaluate", {"--run_dir", dir("pl"), "--data_dir", dir("small"), "--out_dir", dir("ev_y")}),
            kUsage);
  EXPECT_NE(err_.str().find("vocabulary"), std::string::npos) << err_.str();
}

TEST_F(Cli, AblateRowsPerValue) {
  ASSERT_EQ(cli_tiny("ablate", {"--axis", "imitation", "--values", "0.2,0.5,0.8,1.0", "--epochs", "1", "--max_steps",
                                "2", "--out_dir", dir("abl")}),
            kOk)
      << err_.str();
  EXPECT_EQ(lines(dir("abl") + "/ablation.csv"), 5u);
  ASSERT_EQ(cli_tiny("ablate", {"--axis", "mechanism", "--epochs", "1", "--max_steps", "1", "--out_dir",
                                dir("abl_m")}),
            kOk)
      << err_.str();
  EXPECT_EQ(lines(dir("abl_m") + "/ablation.csv"), 5u);
  EXPECT_EQ(cli_tiny("ablate", {"--axis", "temperature2", "--out_dir", dir("abl_x")}), kUsage);
  EXPECT_EQ(cli_tiny("ablate", {"--axis", "mechanism", "--values", "no_gates", "--out_dir", dir("abl_x")}), kUsage);
}

TEST_F(Cli, Sweeps) {
  ASSERT_EQ(cli_tiny("train", {"--strategy", "plain", "--students", "0", "--out_dir", dir("sw_run")}), kOk);
  ASSERT_EQ(cli_tiny("sweep", {"--mode", "perturb", "--sigmas", "0,0.01,0.05", "--trials", "10", "--run_dir",
                               dir("sw_run"), "--out_dir", dir("sw_p")}),
            kOk)
      << err_.str();
  const std::string csv = slurp(dir("sw_p") + "/sweep.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sigma,mean,std");
  EXPECT_EQ(lines(dir("sw_p") + "/sweep.csv"), 4u);
  EXPECT_EQ(cli_tiny("sweep", {"--mode", "perturb", "--sigmas", "0,-0.1", "--run_dir", dir("sw_run"), "--out_dir",
                               dir("sw_x")}),
            kUsage);
  ASSERT_EQ(cli_tiny("sweep", {"--mode", "noise", "--fractions", "0,0.25,0.5", "--epochs", "1", "--max_steps", "2",
                               "--out_dir", dir("sw_n")}),
            kOk)
      << err_.str();
  EXPECT_EQ(lines(dir("sw_n") + "/sweep.csv"), 4u);
  EXPECT_EQ(cli_tiny("sweep", {"--mode", "sideways"}), kUsage);
}

TEST_F(Cli, ReportReplayAndInputCheck) {
  ASSERT_EQ(cli_tiny("train", {"--strategy", "dml", "--students", "2", "--out_dir", dir("rp")}), kOk);
  ASSERT_EQ(cli({"report", "--report", dir("rp") + "/report.json", "--replay", "--out_dir", dir("rp_again")}), kOk)
      << err_.str();
  EXPECT_NE(out_.str().find("identical"), std::string::npos);
  expect_same_tree(dir("rp"), dir("rp_again"));
  EXPECT_EQ(cli({"report", "--report", dir("rp") + "/report.json"}), kOk);
  EXPECT_NE(out_.str().find("inputs unchanged"), std::string::npos);
  EXPECT_EQ(cli({"report", "--report", dir("absent.json")}), kUsage);
}

}  // namespace
}  // namespace mrbd::cli

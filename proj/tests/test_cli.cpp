#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "eegatt_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

// Runs the CLI with stdout/stderr captured to files; returns the exit code.
int run(const std::string& args, const std::string& tag = "last") {
  const std::string cmd = std::string(EEGATT_CLI_PATH) + " " + args + " > " + path(tag + ".out") + " 2> " +
                          path(tag + ".err");
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const std::string kSmallData = "--subjects 4 --samples-per-subject 10 --electrodes 4 --timepoints 32";
const std::string kSmallModel = "--blocks 3 --residual-period 3 --features 4 --kernel 5 --sa-dk 4 --proj-dim 4";

}  // namespace

TEST(Cli, GradcheckPasses) {
  EXPECT_EQ(run("gradcheck"), 0) << slurp(path("last.out"));
  EXPECT_NE(slurp(path("last.out")).find("gradcheck passed"), std::string::npos);
}

TEST(Cli, GenerateIsByteReproducible) {
  ASSERT_EQ(run("generate " + kSmallData + " --seed 3 --noisy-fraction 0.5 --out " + path("a.eegs")), 0);
  ASSERT_EQ(run("generate " + kSmallData + " --seed 3 --noisy-fraction 0.5 --out " + path("b.eegs")), 0);
  ASSERT_EQ(run("generate " + kSmallData + " --seed 4 --noisy-fraction 0.5 --out " + path("c.eegs")), 0);
  EXPECT_EQ(slurp(path("a.eegs")), slurp(path("b.eegs")));
  EXPECT_NE(slurp(path("a.eegs")), slurp(path("c.eegs")));
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("generate"), 2);  // missing --out
  EXPECT_EQ(run("generate --out x --task gaze"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
}

TEST(Cli, RuntimeErrorsExitOne) {
  EXPECT_EQ(run("eval --checkpoint " + path("missing.acnn") + " --data " + path("missing.eegs")), 1);
  EXPECT_NE(slurp(path("last.err")).find("error:"), std::string::npos);
  std::ofstream(path("junk.eegs")) << "JUNKJUNKJUNK";
  ASSERT_EQ(run("generate " + kSmallData + " --out " + path("d.eegs")), 0);
  ASSERT_EQ(run("train --data " + path("d.eegs") + " " + kSmallModel + " --variant cnn --epochs 1 --out-dir " +
                path("run_d")),
            0);
  EXPECT_EQ(run("eval --checkpoint " + path("run_d/checkpoint.acnn") + " --data " + path("junk.eegs")), 1);
  EXPECT_NE(slurp(path("last.err")).find("bad magic"), std::string::npos);
}

TEST(Cli, TrainEvalExplainPipeline) {
  ASSERT_EQ(run("generate " + kSmallData + " --seed 5 --noisy-fraction 0.5 --out " + path("p.eegs")), 0);
  // Config file supplies values; an explicit flag overrides one of them.
  std::ofstream(path("train.ini")) << "epochs=3\nlr=0.002\nvariant=both\n";
  const std::string train_args = "train --config " + path("train.ini") + " --data " + path("p.eegs") + " " + kSmallModel +
                                 " --epochs 2 --out-dir ";
  ASSERT_EQ(run(train_args + path("run1")), 0) << slurp(path("last.err"));
  ASSERT_EQ(run(train_args + path("run2")), 0);
  EXPECT_EQ(slurp(path("run1/checkpoint.acnn")), slurp(path("run2/checkpoint.acnn")));
  EXPECT_EQ(slurp(path("run1/metrics.json")), slurp(path("run2/metrics.json")));
  auto metrics = nlohmann::json::parse(slurp(path("run1/metrics.json")));
  EXPECT_EQ(metrics["epochs"], 2);
  EXPECT_TRUE(metrics.contains("test"));

  std::ofstream(path("bad.ini")) << "epochs=3\nnot_an_option=1\n";
  EXPECT_EQ(run("train --config " + path("bad.ini") + " --data " + path("p.eegs") + " --out-dir " + path("run3")), 2);

  ASSERT_EQ(run("eval --checkpoint " + path("run1/checkpoint.acnn") + " --data " + path("p.eegs") + " --split test",
                "eval1"),
            0);
  ASSERT_EQ(run("eval --checkpoint " + path("run1/checkpoint.acnn") + " --data " + path("p.eegs") + " --split test",
                "eval2"),
            0);
  EXPECT_EQ(slurp(path("eval1.out")), slurp(path("eval2.out")));
  auto rep = nlohmann::json::parse(slurp(path("eval1.out")));
  EXPECT_EQ(rep["task"], "position");
  EXPECT_TRUE(rep["n_samples"].is_number_integer());
  EXPECT_TRUE(rep["mean_euclidean_px"].is_number());
  EXPECT_TRUE(rep["mean_visual_angle_deg"].is_number());

  ASSERT_EQ(run("explain --checkpoint " + path("run1/checkpoint.acnn") + " --data " + path("p.eegs") +
                " --svg-samples 2 --out-dir " + path("ex1")),
            0)
      << slurp(path("last.err"));
  ASSERT_EQ(run("explain --checkpoint " + path("run1/checkpoint.acnn") + " --data " + path("p.eegs") +
                " --svg-samples 2 --out-dir " + path("ex2")),
            0);
  for (const char* f : {"attention.json", "topomap_mean.svg", "topomap_sample_0000.svg", "topomap_sample_0001.svg"}) {
    ASSERT_TRUE(fs::exists(path(std::string("ex1/") + f))) << f;
    EXPECT_EQ(slurp(path(std::string("ex1/") + f)), slurp(path(std::string("ex2/") + f))) << f;
  }
  EXPECT_FALSE(fs::exists(path("ex1/topomap_sample_0002.svg")));
  auto att = nlohmann::json::parse(slurp(path("ex1/attention.json")));
  EXPECT_EQ(att["n_samples"], 40);
  EXPECT_FALSE(att["noisy_stats"].is_null());
}

TEST(Cli, ExplainCnnWritesRelevance) {
  ASSERT_EQ(run("generate " + kSmallData + " --seed 6 --out " + path("r.eegs")), 0);
  ASSERT_EQ(run("train --data " + path("r.eegs") + " " + kSmallModel + " --variant cnn --epochs 1 --out-dir " +
                path("run_r")),
            0);
  ASSERT_EQ(run("explain --checkpoint " + path("run_r/checkpoint.acnn") + " --data " + path("r.eegs") +
                " --sample 3 --out-dir " + path("ex_r")),
            0)
      << slurp(path("last.err"));
  auto rel = nlohmann::json::parse(slurp(path("ex_r/relevance.json")));
  EXPECT_LT(rel["leakage"].get<double>(), 0.01);
  EXPECT_EQ(rel["per_electrode"].size(), 4u);
  EXPECT_TRUE(fs::exists(path("ex_r/topomap_relevance.svg")));
}

TEST(Cli, DirectionBenchmarkTable) {
  const std::string args = "benchmark --task direction " + kSmallData + " " + kSmallModel +
                           " --seeds 1 --epochs 1 --out-json " + path("bm") + "_";
  ASSERT_EQ(run(args + "1.json"), 0) << slurp(path("last.err"));
  ASSERT_EQ(run(args + "2.json"), 0);
  EXPECT_EQ(slurp(path("bm_1.json")), slurp(path("bm_2.json")));
  auto j = nlohmann::json::parse(slurp(path("bm_1.json")));
  ASSERT_EQ(j["rows"].size(), 4u);
  EXPECT_EQ(j["rows"][0]["model"], "CNN");
  EXPECT_EQ(j["rows"][3]["model"], "CNN + both");
  for (const auto& row : j["rows"]) {
    EXPECT_TRUE(row["rmse_angle_rad"]["mean"].is_number());
    EXPECT_TRUE(row["rmse_amplitude_px"]["mean"].is_number());
  }
}

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "bpgat/cli.hpp"
#include "bpgat/datagen.hpp"

using namespace bpgat;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "bpgat");
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("bpgat_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Small labelled dataset written through the CLI itself.
  std::string small_data(const std::string& name = "data.jsonl", int count = 12, const char* seed = "1") {
    auto r = run({"--seed", seed, "gen-data", "--nv", "4:7", "--nc", "3:8", "--count", std::to_string(count), "--out",
                  path(name)});
    EXPECT_EQ(r.code, kExitOk) << r.err;
    return path(name);
  }

  std::string small_checkpoint(const std::string& data, const std::string& name = "ckpt.json") {
    auto r = run({"--out", path(name), "train", "--data", data, "--epochs", "2", "--lr", "1e-3", "--T", "2",
                  "--heads", "2,2", "--hidden", "4"});
    EXPECT_EQ(r.code, kExitOk) << r.err;
    return path(name);
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, CountExactOnSmallClause) {
  write_file(path("or.cnf"), "p cnf 2 1\n1 2 0\n");
  auto r = run({"count", "--in", path("or.cnf"), "--method", "exact"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["count"], 3);
  EXPECT_NEAR(j["ln_count"].get<double>(), 1.0986122886681098, 1e-12);
  EXPECT_FALSE(j.contains("converged"));
}

TEST_F(Cli, CountBpIsExactOnATree) {
  write_file(path("or.cnf"), "p cnf 2 1\n1 2 0\n");
  auto r = run({"count", "--in", path("or.cnf"), "--method", "bp"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["ln_count"].get<double>(), std::log(3.0), 1e-6);
  EXPECT_TRUE(j["converged"].is_boolean());
  EXPECT_FALSE(j.contains("count"));

  auto longer = run({"count", "--in", path("or.cnf"), "--method", "bp", "--T", "100"});
  ASSERT_EQ(longer.code, kExitOk) << longer.err;
  EXPECT_TRUE(nlohmann::json::parse(longer.out)["converged"].get<bool>());
}

TEST_F(Cli, CountUnsatExitsFour) {
  write_file(path("unsat.cnf"), "p cnf 1 2\n1 0\n-1 0\n");
  auto r = run({"count", "--in", path("unsat.cnf"), "--method", "exact"});
  EXPECT_EQ(r.code, kExitUnsat);
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["count"], 0);
  EXPECT_TRUE(j["ln_count"].is_null());
}

TEST_F(Cli, CountBigIntegerIsPrintedInFull) {
  write_file(path("free.cnf"), "p cnf 70 0\n");
  auto r = run({"count", "--in", path("free.cnf")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("\"count\":1180591620717411303424"), std::string::npos) << r.out;
}

TEST_F(Cli, CountModelUsesCheckpoint) {
  auto ckpt = small_checkpoint(small_data());
  write_file(path("or.cnf"), "p cnf 2 1\n1 2 0\n");
  auto r = run({"count", "--in", path("or.cnf"), "--method", "model", "--ckpt", ckpt});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(nlohmann::json::parse(r.out)["ln_count"].is_number());
  EXPECT_EQ(run({"count", "--in", path("or.cnf"), "--method", "model"}).code, kExitBadInput);
}

TEST_F(Cli, BadInputsExitTwo) {
  write_file(path("bad.cnf"), "p cnf 2 1\n1 7 0\n");
  EXPECT_EQ(run({"count", "--in", path("bad.cnf")}).code, kExitBadInput);
  EXPECT_EQ(run({"count", "--in", path("missing.cnf")}).code, kExitBadInput);
  EXPECT_EQ(run({"count", "--in", path("bad.cnf"), "--method", "guess"}).code, kExitBadInput);
  EXPECT_EQ(run({"gen-data", "--count", "0", "--out", path("x.jsonl")}).code, kExitBadInput);
  EXPECT_EQ(run({"gen-data", "--nv", "9:3", "--count", "5", "--out", path("x.jsonl")}).code, kExitBadInput);
  EXPECT_EQ(run({"gen-data", "--nv", "abc", "--count", "5", "--out", path("x.jsonl")}).code, kExitBadInput);
  EXPECT_EQ(run({"--threads", "0", "count", "--in", path("bad.cnf")}).code, kExitBadInput);
  EXPECT_EQ(run({"frobnicate"}).code, kExitBadInput);
  EXPECT_EQ(run({}).code, kExitBadInput);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST_F(Cli, GenDataIsDeterministicAndSummarised) {
  auto a = small_data("a.jsonl", 15, "4");
  auto b = small_data("b.jsonl", 15, "4");
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_EQ(count_lines(slurp(a)), 15u);
  auto c = small_data("c.jsonl", 15, "5");
  EXPECT_NE(slurp(a), slurp(c));
  EXPECT_TRUE(fs::exists(a + ".meta.json"));

  auto r = run({"--seed", "4", "gen-data", "--nv", "4:7", "--nc", "3:8", "--count", "15", "--out", path("d.jsonl")});
  std::smatch m;
  ASSERT_TRUE(std::regex_search(r.out, m, std::regex(R"(count 15\s+avg_vars ([0-9.]+)\s+avg_clauses ([0-9.]+))")))
      << r.out;
  auto summary = summarize(read_dataset_file(a));
  EXPECT_NEAR(std::stod(m[1]), summary.mean_vars, 0.01);
  EXPECT_NEAR(std::stod(m[2]), summary.mean_clauses, 0.01);
}

TEST_F(Cli, GenDataColoring) {
  auto r = run({"gen-data", "--dist", "coloring", "--graph-n", "5", "--graph-p", "0.4", "--k", "3", "--count", "4",
                "--out", path("col.jsonl")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto d = read_dataset_file(path("col.jsonl"));
  ASSERT_EQ(d.size(), 4u);
  for (const auto& rec : d) EXPECT_EQ(rec.n_vars(), 15u);
}

TEST_F(Cli, TrainWritesCheckpointAndLossCsv) {
  auto data = small_data();
  auto ckpt = small_checkpoint(data);
  ASSERT_TRUE(fs::exists(ckpt));
  auto csv = slurp(ckpt + ".loss.csv");
  EXPECT_EQ(csv.rfind("epoch,lr,mean_loss\n", 0), 0u);
  EXPECT_EQ(count_lines(csv), 3u);

  // Threads never change the numbers.
  auto r = run({"--threads", "2", "--out", path("ckpt2.json"), "train", "--data", data, "--epochs", "2", "--lr", "1e-3",
                "--T", "2", "--heads", "2,2", "--hidden", "4"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(slurp(ckpt), slurp(path("ckpt2.json")));
  EXPECT_EQ(csv, slurp(path("ckpt2.json.loss.csv")));
}

TEST_F(Cli, TrainDivergenceExitsFive) {
  auto data = small_data();
  auto r = run({"--out", path("ck.json"), "train", "--data", data, "--epochs", "2", "--lr", "1e300", "--T", "2",
                "--heads", "2,2", "--hidden", "4"});
  EXPECT_EQ(r.code, kExitDiverged) << r.out << r.err;
}

TEST_F(Cli, EvalExactAgainstOwnLabels) {
  auto data = small_data();
  auto r = run({"--out", path("report.json"), "eval", "--data", data, "--method", "exact"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("RMSE/MRE: 0.000000/0.000000"), std::string::npos) << r.out;
  auto j = nlohmann::json::parse(slurp(path("report.json")));
  EXPECT_EQ(j["per_instance"].size(), 12u);
  EXPECT_LT(j["rmse"].get<double>(), 1e-9);
}

TEST_F(Cli, EvalModelPrintsTableCell) {
  auto data = small_data();
  auto ckpt = small_checkpoint(data);
  auto r = run({"eval", "--ckpt", ckpt, "--data", data});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(std::regex_search(r.out, std::regex(R"(RMSE/MRE: [0-9]+\.[0-9]{6}/[0-9]+\.[0-9]{6})"))) << r.out;
  EXPECT_EQ(run({"eval", "--data", data}).code, kExitBadInput);
}

TEST_F(Cli, FinetuneWithZeroRateLeavesCheckpointUnchanged) {
  auto data = small_data();
  auto ckpt = small_checkpoint(data);
  auto r = run({"--out", path("ft.json"), "finetune", "--ckpt", ckpt, "--data", data, "--epochs", "2", "--lr", "0",
                "--n-examples", "10"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(slurp(ckpt), slurp(path("ft.json")));
  EXPECT_EQ(run({"--out", path("ft2.json"), "finetune", "--ckpt", ckpt, "--data", data, "--n-examples", "99"}).code,
            kExitBadInput);
}

TEST_F(Cli, AblateDampingMatrixWritesFourRows) {
  auto data = small_data();
  write_file(path("matrix.json"), R"({"base": {"T": 2, "gat_heads": [2, 2], "mlp_hidden": 4},
    "configs": [{"id": "d1", "damping_mode": "delta_f2v"}, {"id": "d2", "damping_mode": "delta_v2f"},
                {"id": "d3", "damping_mode": "delta_all"}, {"id": "d4", "damping_mode": "fixed_all"}]})");
  auto r = run({"--out", dir_.string(), "ablate", "--matrix", path("matrix.json"), "--data", data, "--epochs", "1",
                "--test", "held=" + data});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto csv = slurp(path("ablation_held.csv"));
  EXPECT_EQ(csv.rfind("config_id,variant,damping,T,rmse,mre\n", 0), 0u);
  EXPECT_EQ(count_lines(csv), 5u);
  EXPECT_TRUE(fs::exists(path("ablation.json")));

  write_file(path("bad.json"), R"({"configs": [{"T": 2}]})");
  EXPECT_EQ(run({"--out", dir_.string(), "ablate", "--matrix", path("bad.json"), "--data", data}).code, kExitBadInput);
}

#include "ftbo/commands.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace ftbo;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("ftbo_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) const {
    const fs::path p = path / name;
    std::ofstream out(p);
    out << content;
    return p.string();
  }
  std::string at(const std::string& name) const { return (path / name).string(); }
};

int run_ftbo(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"ftbo"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string bytes_of(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string write_toy_corpus(const TempDir& tmp) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::ostringstream a, b;
  a << "p,q,y\n";
  b << "q,r,y\n";
  for (int i = 0; i < 40; ++i) {
    const double x1 = u(rng), x2 = u(rng);
    a << x1 << ',' << x2 << ',' << (x1 * x1 + x2) << "\n";
    b << x1 << ',' << x2 << ',' << (x1 - x2 * x2) << "\n";
  }
  tmp.file("a.csv", a.str());
  tmp.file("b.csv", b.str());
  return tmp.file("manifest.json", R"({"version":1,"tasks":[
      {"task_id":"a","path":"a.csv"},
      {"task_id":"b","path":"b.csv"}]})");
}

const char* kTinyConfig = R"({
  "train": {"epochs_mse": 8, "epochs_elbo": 3, "batch_size": 16,
            "lr_encoder": 1e-4, "lr_head": 1e-2, "lr_kernel": 1e-2,
            "inducing": 8, "finetune_steps": 6},
  "encoder": {"embed_dim": 8, "heads": 2, "layers": 1, "ff_dim": 16},
  "acquisition": {"population": 8, "generations": 4, "polish_steps": 5}
})";

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("argument errors exit with code 2") {
  CHECK(run_ftbo({}) == cli::kExitInvalid);
  CHECK(run_ftbo({"bogus"}) == cli::kExitInvalid);
  CHECK(run_ftbo({"pretrain"}) == cli::kExitInvalid);  // missing required flags
  CHECK(run_ftbo({"--help"}) == cli::kExitOk);
}

TEST_CASE("pretrain: corrupt manifest exits 2 without a checkpoint") {
  TempDir tmp;
  const std::string manifest = tmp.file("m.json", "{not json");
  const std::string out = tmp.at("ck.bin");
  CHECK(run_ftbo({"pretrain", "--manifest", manifest, "--out", out, "--quiet"}) ==
        cli::kExitInvalid);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("pretrain: toy corpus trains, checkpoint loads, reruns are identical") {
  TempDir tmp;
  const std::string manifest = write_toy_corpus(tmp);
  const std::string cfg = tmp.file("cfg.json", kTinyConfig);
  const std::string ck1 = tmp.at("ck1.bin");
  const std::string ck2 = tmp.at("ck2.bin");
  CHECK(run_ftbo({"pretrain", "--manifest", manifest, "--out", ck1, "--config", cfg,
             "--seed", "11", "--quiet"}) == cli::kExitOk);
  CHECK(run_ftbo({"pretrain", "--manifest", manifest, "--out", ck2, "--config", cfg,
             "--seed", "11", "--quiet"}) == cli::kExitOk);
  CHECK(bytes_of(ck1) == bytes_of(ck2));

  auto model = surrogate::load_checkpoint(ck1);
  CHECK(model.stage == surrogate::Stage::elbo);
  enc::NamedRow row;
  row.push_numeric("p", 0.5);
  row.push_numeric("q", -0.5);
  const auto preds = surrogate::predict(model, {row});
  CHECK(std::isfinite(preds[0].mean));
  CHECK(preds[0].std > 0.0);
}

TEST_CASE("config file: unknown keys are rejected") {
  TempDir tmp;
  const std::string manifest = write_toy_corpus(tmp);
  const std::string cfg = tmp.file("bad.json", R"({"trainx": {}})");
  CHECK(run_ftbo({"pretrain", "--manifest", manifest, "--out", tmp.at("x.bin"),
             "--config", cfg, "--quiet"}) == cli::kExitInvalid);
  const std::string cfg2 = tmp.file("bad2.json", R"({"train": {"lr": 1}})");
  CHECK(run_ftbo({"pretrain", "--manifest", manifest, "--out", tmp.at("x.bin"),
             "--config", cfg2, "--quiet"}) == cli::kExitInvalid);
}

TEST_CASE("optimize: gp on the built-in benchmark writes a full trace") {
  TempDir tmp;
  const std::string prob =
      tmp.file("prob.json", R"({"benchmark":"ackley","dim":2,"seed":5})");
  const std::string cfg = tmp.file("cfg.json", kTinyConfig);
  const std::string t1 = tmp.at("t1.jsonl");
  const std::string t2 = tmp.at("t2.jsonl");
  CHECK(run_ftbo({"optimize", "--problem", prob, "--surrogate", "gp", "--out", t1,
             "--budget", "7", "--n-init", "4", "--seed", "3", "--config", cfg,
             "--quiet"}) == cli::kExitOk);
  const bo::RunTrace trace = bo::read_trace(t1);
  CHECK(trace.iters.size() == 7);
  CHECK(trace.method == "gp");
  // reproducibility: same seed, same bytes
  CHECK(run_ftbo({"optimize", "--problem", prob, "--surrogate", "gp", "--out", t2,
             "--budget", "7", "--n-init", "4", "--seed", "3", "--config", cfg,
             "--quiet"}) == cli::kExitOk);
  CHECK(bytes_of(t1) == bytes_of(t2));

  CHECK(run_ftbo({"optimize", "--problem", tmp.file("bad.json", R"({"benchmark":"x"})"),
             "--surrogate", "gp", "--out", tmp.at("t3.jsonl"), "--quiet"}) ==
        cli::kExitInvalid);
}

TEST_CASE("optimize: tabular problems suggest only candidate rows") {
  TempDir tmp;
  std::ostringstream csv;
  csv << "u,v,y\n";
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> un(-1.0, 1.0);
  for (int i = 0; i < 30; ++i) {
    const double a = un(rng), b = un(rng);
    csv << a << ',' << b << ',' << (a * a + b * b) << "\n";
  }
  tmp.file("cands.csv", csv.str());
  const std::string prob =
      tmp.file("prob.json", R"({"candidates":"cands.csv"})");
  const std::string cfg = tmp.file("cfg.json", kTinyConfig);
  const std::string out = tmp.at("tab.jsonl");
  CHECK(run_ftbo({"optimize", "--problem", prob, "--surrogate", "rf", "--out", out,
             "--budget", "6", "--n-init", "3", "--seed", "9", "--config", cfg,
             "--quiet"}) == cli::kExitOk);
  const bo::RunTrace trace = bo::read_trace(out);
  CHECK(trace.iters.size() == 6);
}

TEST_CASE("optimize with a checkpoint transfers and records the report") {
  TempDir tmp;
  const std::string manifest = write_toy_corpus(tmp);
  const std::string cfg = tmp.file("cfg.json", kTinyConfig);
  const std::string ck = tmp.at("ck.bin");
  REQUIRE(run_ftbo({"pretrain", "--manifest", manifest, "--out", ck, "--config", cfg,
               "--seed", "2", "--quiet"}) == cli::kExitOk);
  const std::string prob =
      tmp.file("prob.json", R"({"benchmark":"ackley","dim":3,"seed":4})");
  const std::string out = tmp.at("tr.jsonl");
  CHECK(run_ftbo({"optimize", "--problem", prob, "--checkpoint", ck, "--out", out,
             "--budget", "6", "--n-init", "4", "--seed", "5", "--config", cfg,
             "--quiet"}) == cli::kExitOk);
  const bo::RunTrace trace = bo::read_trace(out);
  CHECK(trace.method == "ftdkl_pretrained");
  REQUIRE(trace.transfer.has_value());
  // x1..x3 are all unseen in the toy corpus (p, q, r): everything is mixed
  CHECK(trace.transfer->mixed.size() == 3);
  CHECK(trace.iters.size() == 6);
}

TEST_CASE("zeroshot ranks candidates by predicted mean") {
  TempDir tmp;
  const std::string manifest = write_toy_corpus(tmp);
  const std::string cfg = tmp.file("cfg.json", kTinyConfig);
  const std::string ck = tmp.at("ck.bin");
  REQUIRE(run_ftbo({"pretrain", "--manifest", manifest, "--out", ck, "--config", cfg,
               "--seed", "6", "--quiet"}) == cli::kExitOk);

  std::ostringstream csv;
  csv << "p,q\n";
  for (int i = 0; i < 20; ++i)
    csv << (-1.0 + 0.1 * i) << ',' << (1.0 - 0.1 * i) << "\n";
  const std::string cands = tmp.file("cands.csv", csv.str());
  const std::string out = tmp.at("recs.csv");
  CHECK(run_ftbo({"zeroshot", "--checkpoint", ck, "--candidates", cands, "--out",
             out, "--k", "5"}) == cli::kExitOk);
  std::ifstream in(out);
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("rank,row,pred_mean", 0) == 0);
  int rows = 0;
  double prev = -1e100;
  std::string line;
  while (std::getline(in, line)) {
    ++rows;
    // pred_mean is the third field and must be non-decreasing
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::getline(ss, cell, ',');
    std::getline(ss, cell, ',');
    const double mean = std::stod(cell);
    CHECK(mean >= prev);
    prev = mean;
  }
  CHECK(rows == 5);
}

TEST_CASE("report aggregates traces into a metrics csv") {
  TempDir tmp;
  const std::string prob =
      tmp.file("prob.json", R"({"benchmark":"ackley","dim":2,"seed":5})");
  const std::string cfg = tmp.file("cfg.json", kTinyConfig);
  std::vector<std::string> traces;
  for (int seed = 0; seed < 2; ++seed) {
    const std::string t = tmp.at("r" + std::to_string(seed) + ".jsonl");
    REQUIRE(run_ftbo({"optimize", "--problem", prob, "--surrogate", "random",
                 "--out", t, "--budget", "5", "--n-init", "3", "--seed",
                 std::to_string(seed), "--config", cfg, "--quiet"}) ==
            cli::kExitOk);
    traces.push_back(t);
  }
  const std::string out = tmp.at("metrics.csv");
  std::vector<std::string> args = {"report", "--out", out};
  for (const auto& t : traces) args.push_back(t);
  CHECK(run_ftbo(args) == cli::kExitOk);
  std::ifstream in(out);
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "method,iteration,regret_mean,regret_median,regret_q25,regret_q75,"
        "rank_mean");
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 5);  // one method, five iterations

  CHECK(run_ftbo({"report", "--out", out}) == cli::kExitInvalid);  // no traces
}

TEST_CASE("bench command writes traces and metrics") {
  TempDir tmp;
  const std::string ex = tmp.file("exp.json", R"({
    "experiment": {"name": "ackley_transfer", "source_dim": 2, "target_dim": 3,
                   "source_points": 120, "n_init": 3, "bo_iterations": 2,
                   "seeds": 2, "problem_seed": 3,
                   "methods": ["random", "rf"]},
    "train": {"epochs_mse": 6, "epochs_elbo": 2, "batch_size": 16,
              "inducing": 8, "finetune_steps": 4},
    "encoder": {"embed_dim": 8, "heads": 2, "layers": 1, "ff_dim": 16},
    "acquisition": {"population": 8, "generations": 3, "polish_steps": 4}
  })");
  const std::string out_dir = tmp.at("bench_out");
  CHECK(run_ftbo({"bench", "--experiment", ex, "--out-dir", out_dir, "--jobs", "2",
             "--quiet"}) == cli::kExitOk);
  CHECK(fs::exists(fs::path(out_dir) / "metrics.csv"));
  CHECK(fs::exists(fs::path(out_dir) / "trace_random_seed0.jsonl"));
  CHECK(fs::exists(fs::path(out_dir) / "trace_rf_seed1.jsonl"));
  const bo::RunTrace t =
      bo::read_trace((fs::path(out_dir) / "trace_rf_seed1.jsonl").string());
  CHECK(t.iters.size() == 5);
}

TEST_CASE("environment config path is honored") {
  TempDir tmp;
  const std::string manifest = write_toy_corpus(tmp);
  const std::string bad = tmp.file("env.json", R"({"nope": 1})");
  setenv("FTBO_CONFIG", bad.c_str(), 1);
  CHECK(run_ftbo({"pretrain", "--manifest", manifest, "--out", tmp.at("x.bin"),
             "--quiet"}) == cli::kExitInvalid);
  unsetenv("FTBO_CONFIG");
}

TEST_SUITE_END();

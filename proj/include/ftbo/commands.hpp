#pragma once

#include "ftbo/bench.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ftbo::cli {

// Exit codes: 0 ok, 1 runtime failure, 2 invalid input.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitInvalid = 2;

// Configuration shared by the subcommands; every field can come from a JSON
// config file (unknown keys rejected) with flags taking precedence.
struct Config {
  surrogate::TrainConfig train;
  enc::EncoderConfig encoder;
  bo::AcquisitionConfig acq;
  data::FeatureScaling feature_scaling = data::FeatureScaling::standard;

  static Config from_file(const std::string& path);
  void merge_json(const std::string& path);
};

struct PretrainOptions {
  std::string manifest;
  std::string out_checkpoint;
  Config config;
  std::uint64_t seed = 0;
  bool quiet = false;
};

struct OptimizeOptions {
  std::string problem;           // problem spec JSON path
  std::string checkpoint;        // optional: pretrained model
  std::string surrogate = "";    // ftdkl | gp | rf | random (default by checkpoint)
  std::string out_trace;
  int budget = 65;
  int n_init = 5;
  Config config;
  std::uint64_t seed = 0;
  bool quiet = false;
};

struct ZeroshotOptions {
  std::string checkpoint;
  std::string candidates_csv;
  std::string out_csv;
  int top_k = 100;
};

struct BenchOptions {
  std::string config_path;  // experiment spec JSON
  std::string out_dir;
  int jobs = 0;
  bool quiet = false;
};

struct ReportOptions {
  std::vector<std::string> traces;
  std::string out_csv;
  std::optional<double> y_best;
  std::optional<double> y_worst;
};

void cmd_pretrain(const PretrainOptions& opt);
void cmd_optimize(const OptimizeOptions& opt);
void cmd_zeroshot(const ZeroshotOptions& opt);
void cmd_bench(const BenchOptions& opt);
void cmd_report(const ReportOptions& opt);

// Full argv-level entry point (CLI11 parsing, exception -> exit code
// mapping). Used by the binary and by tests.
int run_cli(int argc, const char* const* argv);

}  // namespace ftbo::cli

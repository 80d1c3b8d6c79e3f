#pragma once

#include "ftbo/bo.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ftbo::bench {

using diff::Matrix;
using diff::Vector;

// Ackley with per-dimension random scaling and offset on [-1, 1]^D:
// f(x) = Ackley(s_1 (x_1 - o_1), ..., s_D (x_D - o_D)). Drawing (s_i, o_i)
// pairs per dimension makes instances of different dimension share their
// common prefix for the same seed, which is what the transfer setting needs.
struct AckleyInstance {
  int dim = 0;
  Vector s;  // s_i ~ U(0.01, 2)
  Vector o;  // o_i ~ U(-0.8, 0.8)
  std::uint64_t seed = 0;

  static AckleyInstance make(int dim, std::uint64_t seed);
};

// Standard Ackley constants a = 20, b = 0.2, c = 2 pi; f(o) = 0.
double eval_ackley(const AckleyInstance& inst, const Vector& x);

data::ParamSpace ackley_space(int dim);

// Source corpus: every point evaluated by a differential-evolution run on
// the instance, subsampled to n_points rows named x1..x{dim}.
data::SourceDataset make_source_corpus_ackley(const AckleyInstance& inst,
                                              int n_points, std::uint64_t seed,
                                              Vector* best_x = nullptr,
                                              std::vector<double>* gen_best = nullptr);

// Heterogeneous multi-source corpus: `tasks` subsets of a shared parameter
// pool x1..x{pool}, each task an Ackley restriction with the pool's (s, o)
// for its names; rows sampled uniformly in the box.
struct HetCorpus {
  std::vector<data::SourceDataset> sources;
  AckleyInstance pool;                        // shared transforms
  std::vector<std::vector<int>> task_dims;    // pool indices per task
};
HetCorpus make_het_corpus(int pool_dim, const std::vector<int>& task_sizes,
                          int rows_per_task, std::uint64_t seed);

// Objective over a name subset of the pool instance.
double eval_ackley_subset(const AckleyInstance& pool,
                          const std::vector<int>& dims, const Vector& x);

// ---- metrics ----

// (best_so_far - y_best) / (y_worst - y_best), clamped to [0, 1].
std::vector<double> normalized_regret(const std::vector<double>& best_series,
                                      double y_best, double y_worst);

// Per-iteration mean rank per method; input is [method][seed] -> best-so-far
// series on a common iteration grid. Ties get the average rank.
std::vector<std::vector<double>> average_rank(
    const std::vector<std::vector<std::vector<double>>>& best);

struct MetricTable {
  std::vector<std::string> methods;
  int iterations = 0;
  // methods x iterations
  Matrix regret_mean;
  Matrix regret_median;
  Matrix regret_q25;
  Matrix regret_q75;
  Matrix rank_mean;

  std::string to_csv() const;
};

// ---- experiment runner ----

struct ExperimentSpec {
  std::string name = "ackley_transfer";
  int source_dim = 8;
  int target_dim = 12;
  int source_points = 400;
  int n_init = 5;
  int gp50_init = 50;
  int bo_iterations = 60;  // evaluations after initialization
  int n_seeds = 5;
  int freeze_prefix = 0;  // fix the first k dims at the source EA optimum
  std::uint64_t problem_seed = 1;
  std::vector<std::string> methods = {"random", "gp", "gp50", "ftdkl_cold",
                                      "ftdkl_pretrained"};
  enc::EncoderConfig encoder;
  surrogate::TrainConfig train;
  bo::AcquisitionConfig acq;
  int jobs = 0;  // 0: hardware concurrency
};

struct ExperimentResult {
  MetricTable table;
  std::vector<bo::RunTrace> traces;
  std::vector<std::string> failures;  // "method/seed: what"
  double y_worst = 0.0;               // observed max, used for regret
};

// Known method names; throws on anything else.
extern const std::vector<std::string> kKnownMethods;

// Runs methods x seeds on the scaled/offset Ackley transfer problem.
// Pretraining happens once (seeded by spec.problem_seed); each run then
// transfers, fine-tunes and optimizes independently. Runs execute on a
// small thread pool; per-run failures are recorded and the rest continue.
ExperimentResult run_experiment(const ExperimentSpec& spec,
                                const surrogate::FtDklModel* pretrained);

// Convenience: pretrains (if needed) and runs.
ExperimentResult run_ackley_experiment(const ExperimentSpec& spec);

}  // namespace ftbo::bench

#pragma once

#include "ftbo/data.hpp"
#include "ftbo/gp.hpp"
#include "ftbo/rf.hpp"
#include "ftbo/surrogate.hpp"
#include "ftbo/transfer.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ftbo::bo {

using diff::Matrix;
using diff::Vector;

struct AcquisitionConfig {
  double kappa = 3.0;
  int population = 50;
  int generations = 100;
  double diff_weight = 0.8;  // F, rand/1 mutation
  double crossover = 0.9;    // CR, binomial
  int polish_steps = 200;    // local random polish of the incumbent
  std::uint64_t seed = 0;

  void validate() const;
};

// LCB(x) = m(x) - kappa * s(x); kappa = 3 is the experiment default.
double lcb(const gp::GaussianPrediction& pred, double kappa);

// Surface every surrogate exposes to the loop: refit on all observations so
// far (normalized objective) and predict in the same units.
class Surrogate {
 public:
  virtual ~Surrogate() = default;
  virtual void fit(const std::vector<enc::NamedRow>& x, const Vector& y) = 0;
  virtual std::vector<gp::GaussianPrediction> predict(
      const std::vector<enc::NamedRow>& x) = 0;
  virtual std::string name() const = 0;
  // fit diagnostics for the trace (final ELBO / LML, when meaningful)
  virtual std::optional<double> fit_score() const { return std::nullopt; }
};

enc::NamedRow vector_to_row(const data::ParamSpace& space, const Vector& x);
Vector row_to_vector(const data::ParamSpace& space, const enc::NamedRow& row);

// Clamps to the box and rounds integer dimensions to their grid.
Vector project_to_space(const data::ParamSpace& space, Vector x);

// Generic differential-evolution minimizer over a numeric box. Records
// every evaluated point when trajectory != nullptr, plus the best value per
// generation when gen_best != nullptr.
Vector de_minimize(const std::function<double(const Vector&)>& f,
                   const data::ParamSpace& space, const AcquisitionConfig& cfg,
                   std::mt19937_64& rng,
                   std::vector<std::pair<Vector, double>>* trajectory = nullptr,
                   std::vector<double>* gen_best = nullptr);

// LCB minimization over the box by differential evolution plus a short
// decaying-radius random polish. Deterministic given cfg.seed.
enc::NamedRow optimize_acquisition(Surrogate& model,
                                   const data::ParamSpace& space,
                                   const AcquisitionConfig& cfg);

struct IterRecord {
  int iter = 0;  // 1-based evaluation index
  enc::NamedRow x;
  double y_raw = 0.0;
  double y_norm = 0.0;
  double best_so_far = 0.0;
  double seconds = 0.0;
  std::optional<double> fit_score;
};

struct RunTrace {
  std::string method;
  std::string problem;
  std::uint64_t seed = 0;
  int n_init = 0;
  int budget = 0;
  std::vector<IterRecord> iters;
  std::optional<transfer::TransferReport> transfer;

  double best() const;
  std::vector<double> best_series() const;
};

// Incremental line-delimited JSON writer; every record is flushed so a
// crash leaves a valid prefix.
class TraceWriter {
 public:
  explicit TraceWriter(std::ostream& out) : out_(&out) {}
  void header(const RunTrace& t);
  void transfer_report(const transfer::TransferReport& r);
  void iteration(const IterRecord& rec);
  void summary(const RunTrace& t);

 private:
  std::ostream* out_;
};

// Reads a trace file written by TraceWriter.
RunTrace read_trace(const std::string& path);

struct BoConfig {
  int n_init = 5;
  int budget = 1;  // total evaluations, including the random initialization
  int finetune_steps = 30;
  AcquisitionConfig acq;
  std::uint64_t seed = 0;
  std::string problem_label;
  std::string method_label;
};

using Objective = std::function<double(const enc::NamedRow&)>;

// Sequential BO minimization. surrogate == nullptr means pure random
// search. candidates != nullptr switches to tabular mode: suggestions are
// drawn from (and removed from) the candidate list by LCB argmin.
RunTrace bo_loop(const Objective& objective, const data::ParamSpace& space,
                 Surrogate* surrogate, const BoConfig& cfg,
                 const std::vector<enc::NamedRow>* candidates = nullptr,
                 TraceWriter* writer = nullptr);

// Batched zero-shot ranking: indices of the k candidates with the lowest
// predicted mean, ascending, ties kept in input order. No fine-tuning.
std::vector<int> zero_shot_batch(surrogate::FtDklModel& model,
                                 const std::vector<enc::NamedRow>& candidates,
                                 int k);

// ---- surrogate adapters ----

class FtDklSurrogate : public Surrogate {
 public:
  FtDklSurrogate(surrogate::FtDklModel model, surrogate::TrainConfig train,
                 std::string label, bool init_head_from_data);

  void fit(const std::vector<enc::NamedRow>& x, const Vector& y) override;
  std::vector<gp::GaussianPrediction> predict(
      const std::vector<enc::NamedRow>& x) override;
  std::string name() const override { return label_; }
  std::optional<double> fit_score() const override { return last_elbo_; }
  surrogate::FtDklModel& model() { return model_; }

 private:
  surrogate::FtDklModel model_;
  surrogate::TrainConfig train_;
  std::string label_;
  bool init_head_from_data_;
  std::optional<double> last_elbo_;
};

class GpSurrogate : public Surrogate {
 public:
  explicit GpSurrogate(std::string label = "gp", bool with_linear = false)
      : label_(std::move(label)), model_(with_linear) {}

  void fit(const std::vector<enc::NamedRow>& x, const Vector& y) override;
  std::vector<gp::GaussianPrediction> predict(
      const std::vector<enc::NamedRow>& x) override;
  std::string name() const override { return label_; }

 private:
  Matrix rows_to_matrix(const std::vector<enc::NamedRow>& x) const;
  std::string label_;
  gp::ExactGpModel model_;
  std::vector<std::string> names_;
};

class RfSurrogate : public Surrogate {
 public:
  RfSurrogate() = default;
  explicit RfSurrogate(rf::RandomForest::Config cfg) : cfg_(cfg) {}

  void fit(const std::vector<enc::NamedRow>& x, const Vector& y) override;
  std::vector<gp::GaussianPrediction> predict(
      const std::vector<enc::NamedRow>& x) override;
  std::string name() const override { return "rf"; }

 private:
  rf::RandomForest::Config cfg_{};
  rf::RandomForest forest_;
  std::vector<std::string> names_;
};

}  // namespace ftbo::bo

#pragma once

#include "ftbo/data.hpp"
#include "ftbo/encoder.hpp"
#include "ftbo/gp.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ftbo::surrogate {

using diff::Matrix;
using diff::Parameter;
using diff::Vector;

enum class Stage { mse, elbo };

struct TrainConfig {
  int epochs_mse = 300;
  int epochs_elbo = 50;
  int batch_size = 64;
  double lr_encoder = 1e-5;   // transformer + embedding layers
  double lr_head = 1e-3;      // linear output layer (MSE stage)
  double lr_kernel = 1e-3;    // GP kernel hyperparameters + inducing points
  double natgrad_step = 0.1;  // variational parameters
  double weight_decay = 1e-2;
  int inducing = 128;
  int finetune_steps = 30;
  std::uint64_t seed = 0;

  void validate() const;
};

// Encoder + head. The linear head drives the MSE stage; afterwards it is
// replaced by an SVGP head whose linear-kernel variance is seeded from the
// variance of the trained output weights.
struct FtDklModel {
  enc::EmbeddingRegistry registry;
  enc::Encoder encoder;
  Stage stage = Stage::mse;

  Parameter w_out;  // d_e x 1
  Parameter b_out;  // 1 x 1

  gp::KernelParams kernel;
  gp::SvgpState svgp;

  data::FeatureNormalizer feature_norm;

  FtDklModel clone() const;
  std::vector<Parameter*> encoder_and_embedding_params();
  std::vector<Parameter*> kernel_and_inducing_params();
};

// Fresh model whose registry covers the union of all source columns.
// Throws if a name appears with conflicting kinds across sources.
FtDklModel init_model(const std::vector<data::SourceDataset>& sources,
                      const enc::EncoderConfig& cfg, std::uint64_t seed);

// Fresh model for a cold-start run on a single target space: random
// registry over the space names, bound-derived affine input scaling, SVGP
// head initialized lazily from the first fit (see bo adapters).
FtDklModel init_cold_model(const data::ParamSpace& space,
                           const enc::EncoderConfig& cfg,
                           const TrainConfig& train, std::uint64_t seed);

struct LossHistory {
  std::vector<double> per_epoch;  // mean loss (MSE) or mean ELBO per epoch
};

// Stage one: joint training over all sources with the linear head and MSE
// loss. Minibatches are homogeneous (one source task per batch), the task
// chosen proportionally to dataset size.
LossHistory pretrain_mse(FtDklModel& model,
                         const std::vector<data::SourceDataset>& sources,
                         const TrainConfig& cfg);

// Replaces the linear head with an SVGP head: inducing inputs by k-means on
// encoder outputs, linear-kernel variance ceil(var of w_out entries),
// lengthscale from the median pairwise encoding distance.
void attach_svgp_head(FtDklModel& model,
                      const std::vector<data::SourceDataset>& sources,
                      const TrainConfig& cfg);

// Stage two: joint ELBO training of encoder, kernel, inducing points and
// variational parameters. Layer norm and dropout are disabled throughout.
LossHistory pretrain_elbo(FtDklModel& model,
                          const std::vector<data::SourceDataset>& sources,
                          const TrainConfig& cfg);

// Full-batch ELBO fine-tuning on (already normalized) target observations.
// Returns the final ELBO value. steps == 0 leaves the model untouched.
double finetune(FtDklModel& model, const std::vector<enc::NamedRow>& x,
                const Vector& y_norm, int steps, const TrainConfig& cfg);

// Encoder outputs for raw rows (feature normalization applied internally);
// eval mode, layer norm active only in the MSE stage.
Matrix encode_rows(FtDklModel& model, const std::vector<enc::NamedRow>& rows);

// Predictions in normalized-objective units. MSE-stage models report the
// linear-head mean with zero std; ELBO-stage models the SVGP marginals.
std::vector<gp::GaussianPrediction> predict(
    FtDklModel& model, const std::vector<enc::NamedRow>& rows);

// ---- checkpoint io (implemented in checkpoint.cpp) ----

inline constexpr std::uint32_t kCheckpointMajor = 1;
inline constexpr std::uint32_t kCheckpointMinor = 0;

// Atomic write (temp file + rename). Byte-deterministic for a given model.
void save_checkpoint(const std::string& path, const FtDklModel& model);
FtDklModel load_checkpoint(const std::string& path);

}  // namespace ftbo::surrogate

#pragma once

#include "ftbo/surrogate.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ftbo::transfer {

using diff::Matrix;

struct MixProvenance {
  std::string source_a;
  std::string source_b;
  double alpha = 0.0;
};

struct TransferReport {
  std::vector<std::string> copied;
  struct Mixed {
    std::string name;
    MixProvenance prov;
  };
  std::vector<Mixed> mixed;
  std::uint64_t seed = 0;

  // copied and mixed partition the target names
  bool partition_ok(const std::vector<std::string>& target_names) const;
};

// alpha * e1 + (1 - alpha) * e2, applied with the same alpha to w and b.
std::pair<Matrix, Matrix> mix_pair(const enc::NumericEmbedding& e1,
                                   const enc::NumericEmbedding& e2,
                                   double alpha);

struct MixedEmbedding {
  Matrix w;
  Matrix b;
  MixProvenance prov;
};

// Draws two distinct numeric source names uniformly and alpha ~ U(0, 1).
// Falls back to copy-plus-noise for a single-entry registry; throws when
// the registry has no numeric entries.
MixedEmbedding mixup_embedding(const enc::EmbeddingRegistry& registry,
                               std::mt19937_64& rng);

// Target model construction: encoder, SVGP head, kernel and CLS are copied
// by value; per-name embeddings are copied when present in the source
// registry and mix-up-initialized otherwise. The source model is left
// untouched. Fresh affine input maps onto [-1, 1] are installed for names
// the source normalizer has never seen.
std::pair<surrogate::FtDklModel, TransferReport> build_target_model(
    const surrogate::FtDklModel& source, const data::ParamSpace& target_space,
    std::uint64_t seed);

}  // namespace ftbo::transfer

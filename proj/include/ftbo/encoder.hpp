#pragma once

#include "ftbo/diff.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace ftbo::enc {

using diff::Matrix;
using diff::Parameter;
using diff::Tape;
using diff::Var;
using diff::Vector;

// One cell of a named row: numeric value, or categorical index (cat >= 0).
struct RowValue {
  double num = 0.0;
  int cat = -1;
  bool is_categorical() const { return cat >= 0; }
};

struct NamedRow {
  std::vector<std::string> names;
  std::vector<RowValue> values;

  void push_numeric(std::string name, double v) {
    names.push_back(std::move(name));
    values.push_back(RowValue{v, -1});
  }
  void push_categorical(std::string name, int idx) {
    names.push_back(std::move(name));
    values.push_back(RowValue{0.0, idx});
  }
  double numeric(const std::string& name) const;
};

// Homogeneous minibatch: every row shares one column list.
struct Batch {
  std::vector<std::string> names;
  std::vector<bool> categorical;         // per column
  Matrix numeric;                        // B x d, zero where categorical
  std::vector<std::vector<int>> cats;    // per column, size B where categorical

  Eigen::Index size() const { return numeric.rows(); }
  Eigen::Index width() const { return static_cast<Eigen::Index>(names.size()); }
  static Batch from_rows(const std::vector<NamedRow>& rows);
};

struct NumericEmbedding {
  Parameter w;  // 1 x d_e, value-dependent
  Parameter b;  // 1 x d_e, column-dependent
};

struct CategoricalEmbedding {
  Parameter b;                           // 1 x d_e
  Parameter values;                      // V x d_e, one row per category value
  std::vector<std::string> value_names;  // row order of `values`
  int index_of(const std::string& v) const;
};

// Per-parameter-name token embeddings plus the shared CLS token. Parameter
// identity is the column name, which is what makes embeddings transferable
// across tasks.
class EmbeddingRegistry {
 public:
  EmbeddingRegistry() = default;
  EmbeddingRegistry(int embed_dim) : embed_dim_(embed_dim) {}

  int embed_dim() const { return embed_dim_; }
  bool has(const std::string& name) const;
  bool is_categorical(const std::string& name) const;
  std::size_t numeric_count() const { return numeric_.size(); }

  void add_numeric(const std::string& name, Matrix w, Matrix b);
  void add_categorical(const std::string& name, Matrix b, Matrix values,
                       std::vector<std::string> value_names);
  void init_numeric(const std::string& name, std::mt19937_64& rng);
  void init_categorical(const std::string& name,
                        const std::vector<std::string>& value_names,
                        std::mt19937_64& rng);
  void init_cls(std::mt19937_64& rng);

  Parameter& cls() { return cls_; }
  const Parameter& cls() const { return cls_; }
  NumericEmbedding& numeric(const std::string& name);
  const NumericEmbedding& numeric(const std::string& name) const;
  CategoricalEmbedding& categorical(const std::string& name);
  const CategoricalEmbedding& categorical(const std::string& name) const;
  const std::map<std::string, NumericEmbedding>& numeric_table() const {
    return numeric_;
  }
  const std::map<std::string, CategoricalEmbedding>& categorical_table() const {
    return categorical_;
  }

  // Deterministic order: CLS, numeric entries by name, categorical by name.
  std::vector<Parameter*> parameters();
  EmbeddingRegistry clone() const;

 private:
  int embed_dim_ = 0;
  Parameter cls_;
  std::map<std::string, NumericEmbedding> numeric_;
  std::map<std::string, CategoricalEmbedding> categorical_;
};

struct EncoderConfig {
  int embed_dim = 128;
  int n_heads = 8;
  int n_layers = 3;
  int ff_dim = 512;
  double dropout = 0.1;
};

struct LayerNormParams {
  Parameter gamma;  // 1 x d_e
  Parameter beta;   // 1 x d_e
};

struct AttentionParams {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;
};

struct FeedForwardParams {
  Parameter w1, b1, w2, b2;
};

struct EncoderLayerParams {
  LayerNormParams ln1, ln2;
  AttentionParams attn;
  FeedForwardParams ff;
};

struct EncodeOptions {
  bool train = false;
  // When false, layer normalization becomes the identity (parameters are
  // kept) and dropout is forced off. Used throughout the ELBO stage.
  bool normalization = true;
  std::mt19937_64* rng = nullptr;  // required when train && dropout > 0
};

// Pre-norm transformer encoder (no positional encodings; column identity
// lives entirely in the tokenizer's b vectors).
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, std::mt19937_64& rng);

  const EncoderConfig& config() const { return cfg_; }
  std::vector<EncoderLayerParams>& layers() { return layers_; }
  const std::vector<EncoderLayerParams>& layers() const { return layers_; }
  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const;
  Encoder clone() const;

  // tokens is (B*T) x d_e example-major with CLS at each segment's row 0;
  // returns the final-layer CLS rows as a B x d_e matrix.
  Var forward(Tape& tape, Var tokens, int batch, int tokens_per_example,
              const EncodeOptions& opt);

 private:
  EncoderConfig cfg_;
  std::vector<EncoderLayerParams> layers_;
};

// Token matrix for a homogeneous batch: (B*(d+1)) x d_e, example-major,
// row 0 of each example is CLS, row 1+j is x_j * w_j + b_j (numeric) or
// w_value + b_j (categorical). Throws on unknown names or NaN inputs.
Var tokenize(Tape& tape, const Batch& batch, EmbeddingRegistry& registry);

// Convenience: tokenize + encoder forward, with the output checked finite.
Var encode(Tape& tape, const Batch& batch, EmbeddingRegistry& registry,
           Encoder& encoder, const EncodeOptions& opt);

}  // namespace ftbo::enc

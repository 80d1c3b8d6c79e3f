#include "ftbo/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace ftbo::enc {

namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound,
                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

Matrix xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out,
                      std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_matrix(fan_in, fan_out, bound, rng);
}

}  // namespace

double NamedRow::numeric(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) {
      if (values[i].is_categorical())
        throw std::invalid_argument("row value '" + name + "' is categorical");
      return values[i].num;
    }
  throw std::invalid_argument("row has no value named '" + name + "'");
}

Batch Batch::from_rows(const std::vector<NamedRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("Batch: no rows");
  Batch b;
  b.names = rows.front().names;
  const std::size_t d = b.names.size();
  b.categorical.resize(d);
  for (std::size_t j = 0; j < d; ++j)
    b.categorical[j] = rows.front().values[j].is_categorical();
  b.numeric = Matrix::Zero(static_cast<Eigen::Index>(rows.size()),
                           static_cast<Eigen::Index>(d));
  b.cats.resize(d);
  for (std::size_t j = 0; j < d; ++j)
    if (b.categorical[j]) b.cats[j].resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const NamedRow& r = rows[i];
    if (r.names != b.names)
      throw std::invalid_argument("Batch: rows have mismatched column lists");
    for (std::size_t j = 0; j < d; ++j) {
      if (r.values[j].is_categorical() != b.categorical[j])
        throw std::invalid_argument("Batch: mixed column kinds for '" +
                                    b.names[j] + "'");
      if (b.categorical[j])
        b.cats[j][i] = r.values[j].cat;
      else
        b.numeric(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            r.values[j].num;
    }
  }
  return b;
}

int CategoricalEmbedding::index_of(const std::string& v) const {
  for (std::size_t i = 0; i < value_names.size(); ++i)
    if (value_names[i] == v) return static_cast<int>(i);
  return -1;
}

bool EmbeddingRegistry::has(const std::string& name) const {
  return numeric_.count(name) > 0 || categorical_.count(name) > 0;
}

bool EmbeddingRegistry::is_categorical(const std::string& name) const {
  return categorical_.count(name) > 0;
}

void EmbeddingRegistry::add_numeric(const std::string& name, Matrix w,
                                    Matrix b) {
  if (has(name))
    throw std::invalid_argument("registry already has '" + name + "'");
  if (w.rows() != 1 || w.cols() != embed_dim_ || b.rows() != 1 ||
      b.cols() != embed_dim_)
    throw std::invalid_argument("registry: embedding shape mismatch");
  numeric_.emplace(name, NumericEmbedding{Parameter(std::move(w)),
                                          Parameter(std::move(b))});
}

void EmbeddingRegistry::add_categorical(const std::string& name, Matrix b,
                                        Matrix values,
                                        std::vector<std::string> value_names) {
  if (has(name))
    throw std::invalid_argument("registry already has '" + name + "'");
  if (values.rows() != static_cast<Eigen::Index>(value_names.size()) ||
      values.cols() != embed_dim_ || b.cols() != embed_dim_)
    throw std::invalid_argument("registry: embedding shape mismatch");
  CategoricalEmbedding e{Parameter(std::move(b)), Parameter(std::move(values)),
                         std::move(value_names)};
  categorical_.emplace(name, std::move(e));
}

void EmbeddingRegistry::init_numeric(const std::string& name,
                                     std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim_));
  add_numeric(name, uniform_matrix(1, embed_dim_, bound, rng),
              uniform_matrix(1, embed_dim_, bound, rng));
}

void EmbeddingRegistry::init_categorical(
    const std::string& name, const std::vector<std::string>& value_names,
    std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim_));
  add_categorical(
      name, uniform_matrix(1, embed_dim_, bound, rng),
      uniform_matrix(static_cast<Eigen::Index>(value_names.size()), embed_dim_,
                     bound, rng),
      value_names);
}

void EmbeddingRegistry::init_cls(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim_));
  cls_ = Parameter(uniform_matrix(1, embed_dim_, bound, rng));
}

NumericEmbedding& EmbeddingRegistry::numeric(const std::string& name) {
  auto it = numeric_.find(name);
  if (it == numeric_.end())
    throw std::invalid_argument("unknown parameter name '" + name + "'");
  return it->second;
}

const NumericEmbedding& EmbeddingRegistry::numeric(
    const std::string& name) const {
  auto it = numeric_.find(name);
  if (it == numeric_.end())
    throw std::invalid_argument("unknown parameter name '" + name + "'");
  return it->second;
}

CategoricalEmbedding& EmbeddingRegistry::categorical(const std::string& name) {
  auto it = categorical_.find(name);
  if (it == categorical_.end())
    throw std::invalid_argument("unknown parameter name '" + name + "'");
  return it->second;
}

const CategoricalEmbedding& EmbeddingRegistry::categorical(
    const std::string& name) const {
  auto it = categorical_.find(name);
  if (it == categorical_.end())
    throw std::invalid_argument("unknown parameter name '" + name + "'");
  return it->second;
}

std::vector<Parameter*> EmbeddingRegistry::parameters() {
  std::vector<Parameter*> out;
  out.push_back(&cls_);
  for (auto& [name, e] : numeric_) {
    out.push_back(&e.w);
    out.push_back(&e.b);
  }
  for (auto& [name, e] : categorical_) {
    out.push_back(&e.b);
    out.push_back(&e.values);
  }
  return out;
}

EmbeddingRegistry EmbeddingRegistry::clone() const {
  EmbeddingRegistry c(embed_dim_);
  c.cls_ = Parameter(cls_.value);
  for (const auto& [name, e] : numeric_) c.add_numeric(name, e.w.value, e.b.value);
  for (const auto& [name, e] : categorical_)
    c.add_categorical(name, e.b.value, e.values.value, e.value_names);
  return c;
}

Encoder::Encoder(const EncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg_.embed_dim % cfg_.n_heads != 0)
    throw std::invalid_argument("encoder: heads must divide embed_dim");
  layers_.reserve(static_cast<std::size_t>(cfg_.n_layers));
  const int d = cfg_.embed_dim;
  const int f = cfg_.ff_dim;
  for (int l = 0; l < cfg_.n_layers; ++l) {
    EncoderLayerParams layer;
    layer.ln1 = {Parameter(Matrix::Ones(1, d)), Parameter(Matrix::Zero(1, d))};
    layer.ln2 = {Parameter(Matrix::Ones(1, d)), Parameter(Matrix::Zero(1, d))};
    layer.attn = {Parameter(xavier_uniform(d, d, rng)),
                  Parameter(Matrix::Zero(1, d)),
                  Parameter(xavier_uniform(d, d, rng)),
                  Parameter(Matrix::Zero(1, d)),
                  Parameter(xavier_uniform(d, d, rng)),
                  Parameter(Matrix::Zero(1, d)),
                  Parameter(xavier_uniform(d, d, rng)),
                  Parameter(Matrix::Zero(1, d))};
    layer.ff = {Parameter(xavier_uniform(d, f, rng)),
                Parameter(Matrix::Zero(1, f)),
                Parameter(xavier_uniform(f, d, rng)),
                Parameter(Matrix::Zero(1, d))};
    layers_.push_back(std::move(layer));
  }
}

std::vector<Parameter*> Encoder::parameters() {
  std::vector<Parameter*> out;
  for (EncoderLayerParams& l : layers_) {
    for (Parameter* p :
         {&l.ln1.gamma, &l.ln1.beta, &l.attn.wq, &l.attn.bq, &l.attn.wk,
          &l.attn.bk, &l.attn.wv, &l.attn.bv, &l.attn.wo, &l.attn.bo,
          &l.ln2.gamma, &l.ln2.beta, &l.ff.w1, &l.ff.b1, &l.ff.w2, &l.ff.b2})
      out.push_back(p);
  }
  return out;
}

std::size_t Encoder::parameter_count() const {
  std::size_t n = 0;
  for (const EncoderLayerParams& l : layers_) {
    for (const Parameter* p :
         {&l.ln1.gamma, &l.ln1.beta, &l.attn.wq, &l.attn.bq, &l.attn.wk,
          &l.attn.bk, &l.attn.wv, &l.attn.bv, &l.attn.wo, &l.attn.bo,
          &l.ln2.gamma, &l.ln2.beta, &l.ff.w1, &l.ff.b1, &l.ff.w2, &l.ff.b2})
      n += static_cast<std::size_t>(p->value.size());
  }
  return n;
}

Encoder Encoder::clone() const {
  Encoder c;
  c.cfg_ = cfg_;
  c.layers_.reserve(layers_.size());
  for (const EncoderLayerParams& l : layers_) {
    EncoderLayerParams cl;
    cl.ln1 = {Parameter(l.ln1.gamma.value), Parameter(l.ln1.beta.value)};
    cl.ln2 = {Parameter(l.ln2.gamma.value), Parameter(l.ln2.beta.value)};
    cl.attn = {Parameter(l.attn.wq.value), Parameter(l.attn.bq.value),
               Parameter(l.attn.wk.value), Parameter(l.attn.bk.value),
               Parameter(l.attn.wv.value), Parameter(l.attn.bv.value),
               Parameter(l.attn.wo.value), Parameter(l.attn.bo.value)};
    cl.ff = {Parameter(l.ff.w1.value), Parameter(l.ff.b1.value),
             Parameter(l.ff.w2.value), Parameter(l.ff.b2.value)};
    c.layers_.push_back(std::move(cl));
  }
  return c;
}

namespace {

Var dropout(Tape& tape, Var x, double rate, const EncodeOptions& opt) {
  if (!opt.train || rate <= 0.0 || !opt.normalization) return x;
  if (opt.rng == nullptr)
    throw std::invalid_argument("encode: train mode with dropout needs an rng");
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(x.rows(), x.cols());
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      mask(i, j) = keep(*opt.rng) ? scale : 0.0;
  return tape.mul(x, tape.constant(std::move(mask)));
}

}  // namespace

Var Encoder::forward(Tape& tape, Var tokens, int batch, int tokens_per_example,
                     const EncodeOptions& opt) {
  Var h = tokens;
  for (EncoderLayerParams& l : layers_) {
    // attention sublayer, pre-norm
    Var a_in = opt.normalization
                   ? tape.layer_norm_rows(
                         h, tape.param(l.ln1.gamma),
                         tape.param(l.ln1.beta))
                   : h;
    Var q = tape.add_rowvec(
        tape.matmul(a_in, tape.param(l.attn.wq)),
        tape.param(l.attn.bq));
    Var k = tape.add_rowvec(
        tape.matmul(a_in, tape.param(l.attn.wk)),
        tape.param(l.attn.bk));
    Var v = tape.add_rowvec(
        tape.matmul(a_in, tape.param(l.attn.wv)),
        tape.param(l.attn.bv));
    Var att =
        tape.self_attention(q, k, v, batch, tokens_per_example, cfg_.n_heads);
    Var att_o = tape.add_rowvec(
        tape.matmul(att, tape.param(l.attn.wo)),
        tape.param(l.attn.bo));
    att_o = dropout(tape, att_o, cfg_.dropout, opt);
    h = tape.add(h, att_o);

    // feed-forward sublayer
    Var f_in = opt.normalization
                   ? tape.layer_norm_rows(
                         h, tape.param(l.ln2.gamma),
                         tape.param(l.ln2.beta))
                   : h;
    Var f = tape.add_rowvec(
        tape.matmul(f_in, tape.param(l.ff.w1)),
        tape.param(l.ff.b1));
    f = tape.gelu(f);
    f = tape.add_rowvec(
        tape.matmul(f, tape.param(l.ff.w2)),
        tape.param(l.ff.b2));
    f = dropout(tape, f, cfg_.dropout, opt);
    h = tape.add(h, f);
  }
  std::vector<int> cls_rows(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) cls_rows[static_cast<std::size_t>(i)] = i * tokens_per_example;
  return tape.gather_rows(h, std::move(cls_rows));
}

Var tokenize(Tape& tape, const Batch& batch, EmbeddingRegistry& registry) {
  const Eigen::Index b = batch.size();
  const Eigen::Index d = batch.width();
  if (b == 0) throw std::invalid_argument("tokenize: empty batch");
  if (!batch.numeric.allFinite())
    throw std::invalid_argument("tokenize: NaN in input values");

  std::vector<Var> blocks;
  blocks.reserve(static_cast<std::size_t>(d) + 1);
  Var ones = tape.constant(Matrix::Ones(b, 1));
  blocks.push_back(tape.matmul(ones, tape.param(registry.cls())));
  for (Eigen::Index j = 0; j < d; ++j) {
    const std::string& name = batch.names[static_cast<std::size_t>(j)];
    if (!registry.has(name))
      throw std::invalid_argument("unknown parameter name '" + name + "'");
    if (batch.categorical[static_cast<std::size_t>(j)]) {
      if (!registry.is_categorical(name))
        throw std::invalid_argument("column '" + name +
                                    "' is categorical but registry entry is numeric");
      CategoricalEmbedding& e = registry.categorical(name);
      const std::vector<int>& idx = batch.cats[static_cast<std::size_t>(j)];
      for (int c : idx)
        if (c < 0 || c >= e.values.rows())
          throw std::invalid_argument("categorical index out of range for '" +
                                      name + "'");
      blocks.push_back(tape.add_rowvec(
          tape.gather_rows(tape.param(e.values), idx), tape.param(e.b)));
    } else {
      if (registry.is_categorical(name))
        throw std::invalid_argument("column '" + name +
                                    "' is numeric but registry entry is categorical");
      NumericEmbedding& e = registry.numeric(name);
      Var xcol = tape.constant(batch.numeric.col(j));
      blocks.push_back(
          tape.add_rowvec(tape.matmul(xcol, tape.param(e.w)), tape.param(e.b)));
    }
  }
  Var stacked = tape.concat_rows(blocks);

  // block layout -> example-major: target row i*(d+1)+t is source row t*b+i
  const Eigen::Index t_per = d + 1;
  std::vector<int> order(static_cast<std::size_t>(b * t_per));
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index t = 0; t < t_per; ++t)
      order[static_cast<std::size_t>(i * t_per + t)] =
          static_cast<int>(t * b + i);
  return tape.gather_rows(stacked, std::move(order));
}

Var encode(Tape& tape, const Batch& batch, EmbeddingRegistry& registry,
           Encoder& encoder, const EncodeOptions& opt) {
  Var tokens = tokenize(tape, batch, registry);
  Var z = encoder.forward(tape, tokens, static_cast<int>(batch.size()),
                          static_cast<int>(batch.width() + 1), opt);
  if (!z.value().allFinite())
    throw std::runtime_error("encode: NaN in activations");
  return z;
}

}  // namespace ftbo::enc

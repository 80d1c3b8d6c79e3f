#include "ftbo/surrogate.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

// Checkpoint container: little-endian binary with named scalar/matrix
// fields written in a fixed order, so identical models produce identical
// bytes. Layout:
//   magic "FTBOCKPT", u32 major, u32 minor,
//   encoder config, registry, stage, linear head, svgp head, feature norm.

namespace ftbo::surrogate {

namespace {

namespace fs = std::filesystem;
using diff::Matrix;

void put_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.write(buf, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.write(buf, 8);
}

void put_f64(std::ostream& out, double v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.write(buf, 8);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_matrix(std::ostream& out, const Matrix& m) {
  put_u64(out, static_cast<std::uint64_t>(m.rows()));
  put_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
}

std::uint32_t get_u32(std::istream& in) {
  char buf[4];
  in.read(buf, 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v;
  std::memcpy(&v, buf, 4);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  char buf[8];
  in.read(buf, 8);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v;
  std::memcpy(&v, buf, 8);
  return v;
}

double get_f64(std::istream& in) {
  char buf[8];
  in.read(buf, 8);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  double v;
  std::memcpy(&v, buf, 8);
  return v;
}

std::string get_string(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  if (n > (1ull << 24)) throw std::runtime_error("checkpoint: bad string size");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

Matrix get_matrix(std::istream& in) {
  const std::uint64_t rows = get_u64(in);
  const std::uint64_t cols = get_u64(in);
  if (rows > (1ull << 24) || cols > (1ull << 24))
    throw std::runtime_error("checkpoint: bad matrix size");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = get_f64(in);
  return m;
}

constexpr char kMagic[8] = {'F', 'T', 'B', 'O', 'C', 'K', 'P', 'T'};

void write_model(std::ostream& out, const FtDklModel& model) {
  out.write(kMagic, 8);
  put_u32(out, kCheckpointMajor);
  put_u32(out, kCheckpointMinor);

  const enc::EncoderConfig& cfg = model.encoder.config();
  put_u32(out, static_cast<std::uint32_t>(cfg.embed_dim));
  put_u32(out, static_cast<std::uint32_t>(cfg.n_heads));
  put_u32(out, static_cast<std::uint32_t>(cfg.n_layers));
  put_u32(out, static_cast<std::uint32_t>(cfg.ff_dim));
  put_f64(out, cfg.dropout);

  // registry
  put_matrix(out, model.registry.cls().value);
  put_u64(out, model.registry.numeric_table().size());
  for (const auto& [name, e] : model.registry.numeric_table()) {
    put_string(out, name);
    put_matrix(out, e.w.value);
    put_matrix(out, e.b.value);
  }
  put_u64(out, model.registry.categorical_table().size());
  for (const auto& [name, e] : model.registry.categorical_table()) {
    put_string(out, name);
    put_matrix(out, e.b.value);
    put_matrix(out, e.values.value);
    put_u64(out, e.value_names.size());
    for (const std::string& v : e.value_names) put_string(out, v);
  }

  // encoder layers
  for (const enc::EncoderLayerParams& l : model.encoder.layers()) {
    put_matrix(out, l.ln1.gamma.value);
    put_matrix(out, l.ln1.beta.value);
    put_matrix(out, l.attn.wq.value);
    put_matrix(out, l.attn.bq.value);
    put_matrix(out, l.attn.wk.value);
    put_matrix(out, l.attn.bk.value);
    put_matrix(out, l.attn.wv.value);
    put_matrix(out, l.attn.bv.value);
    put_matrix(out, l.attn.wo.value);
    put_matrix(out, l.attn.bo.value);
    put_matrix(out, l.ln2.gamma.value);
    put_matrix(out, l.ln2.beta.value);
    put_matrix(out, l.ff.w1.value);
    put_matrix(out, l.ff.b1.value);
    put_matrix(out, l.ff.w2.value);
    put_matrix(out, l.ff.b2.value);
  }

  put_u32(out, model.stage == Stage::mse ? 0u : 1u);
  put_matrix(out, model.w_out.value);
  put_matrix(out, model.b_out.value);

  const bool has_svgp = model.stage == Stage::elbo;
  put_u32(out, has_svgp ? 1u : 0u);
  if (has_svgp) {
    put_f64(out, model.kernel.theta_lengthscale.value(0, 0));
    put_f64(out, model.kernel.theta_matern_var.value(0, 0));
    put_f64(out, model.kernel.theta_linear_var.value(0, 0));
    put_f64(out, model.kernel.theta_noise.value(0, 0));
    put_matrix(out, model.svgp.z.value);
    put_matrix(out, model.svgp.m.value);
    put_matrix(out, model.svgp.s.value);
  }

  // feature normalizer
  put_u32(out,
          model.feature_norm.scaling == data::FeatureScaling::standard ? 0u
                                                                       : 1u);
  put_u64(out, model.feature_norm.transforms.size());
  for (const auto& [name, t] : model.feature_norm.transforms) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(t.kind));
    put_f64(out, t.mean);
    put_f64(out, t.std);
    put_f64(out, t.scale);
    put_f64(out, t.offset);
    put_u64(out, t.knots.size());
    for (double k : t.knots) put_f64(out, k);
  }
}

FtDklModel read_model(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::invalid_argument("checkpoint: bad magic");
  const std::uint32_t major = get_u32(in);
  const std::uint32_t minor = get_u32(in);
  (void)minor;
  if (major > kCheckpointMajor)
    throw std::invalid_argument("checkpoint: written by a newer format major");

  enc::EncoderConfig cfg;
  cfg.embed_dim = static_cast<int>(get_u32(in));
  cfg.n_heads = static_cast<int>(get_u32(in));
  cfg.n_layers = static_cast<int>(get_u32(in));
  cfg.ff_dim = static_cast<int>(get_u32(in));
  cfg.dropout = get_f64(in);

  FtDklModel model;
  std::mt19937_64 rng(0);
  model.encoder = enc::Encoder(cfg, rng);  // allocated, then overwritten
  model.registry = enc::EmbeddingRegistry(cfg.embed_dim);

  Matrix cls = get_matrix(in);
  model.registry.cls() = diff::Parameter(std::move(cls));
  const std::uint64_t n_num = get_u64(in);
  for (std::uint64_t i = 0; i < n_num; ++i) {
    const std::string name = get_string(in);
    Matrix w = get_matrix(in);
    Matrix b = get_matrix(in);
    model.registry.add_numeric(name, std::move(w), std::move(b));
  }
  const std::uint64_t n_cat = get_u64(in);
  for (std::uint64_t i = 0; i < n_cat; ++i) {
    const std::string name = get_string(in);
    Matrix b = get_matrix(in);
    Matrix values = get_matrix(in);
    const std::uint64_t nv = get_u64(in);
    std::vector<std::string> names(nv);
    for (auto& v : names) v = get_string(in);
    model.registry.add_categorical(name, std::move(b), std::move(values),
                                   std::move(names));
  }

  for (enc::EncoderLayerParams& l : model.encoder.layers()) {
    l.ln1.gamma = diff::Parameter(get_matrix(in));
    l.ln1.beta = diff::Parameter(get_matrix(in));
    l.attn.wq = diff::Parameter(get_matrix(in));
    l.attn.bq = diff::Parameter(get_matrix(in));
    l.attn.wk = diff::Parameter(get_matrix(in));
    l.attn.bk = diff::Parameter(get_matrix(in));
    l.attn.wv = diff::Parameter(get_matrix(in));
    l.attn.bv = diff::Parameter(get_matrix(in));
    l.attn.wo = diff::Parameter(get_matrix(in));
    l.attn.bo = diff::Parameter(get_matrix(in));
    l.ln2.gamma = diff::Parameter(get_matrix(in));
    l.ln2.beta = diff::Parameter(get_matrix(in));
    l.ff.w1 = diff::Parameter(get_matrix(in));
    l.ff.b1 = diff::Parameter(get_matrix(in));
    l.ff.w2 = diff::Parameter(get_matrix(in));
    l.ff.b2 = diff::Parameter(get_matrix(in));
  }

  model.stage = get_u32(in) == 0 ? Stage::mse : Stage::elbo;
  model.w_out = diff::Parameter(get_matrix(in));
  model.b_out = diff::Parameter(get_matrix(in));

  if (get_u32(in) == 1) {
    model.kernel.theta_lengthscale.value(0, 0) = get_f64(in);
    model.kernel.theta_matern_var.value(0, 0) = get_f64(in);
    model.kernel.theta_linear_var.value(0, 0) = get_f64(in);
    model.kernel.theta_noise.value(0, 0) = get_f64(in);
    model.svgp.z = diff::Parameter(get_matrix(in));
    model.svgp.m = diff::Parameter(get_matrix(in));
    model.svgp.s = diff::Parameter(get_matrix(in));
  }

  model.feature_norm.scaling = get_u32(in) == 0 ? data::FeatureScaling::standard
                                                : data::FeatureScaling::quantile;
  const std::uint64_t n_tr = get_u64(in);
  for (std::uint64_t i = 0; i < n_tr; ++i) {
    const std::string name = get_string(in);
    data::FeatureTransform t;
    t.kind = static_cast<data::FeatureTransform::Kind>(get_u32(in));
    t.mean = get_f64(in);
    t.std = get_f64(in);
    t.scale = get_f64(in);
    t.offset = get_f64(in);
    const std::uint64_t nk = get_u64(in);
    t.knots.resize(nk);
    for (double& k : t.knots) k = get_f64(in);
    model.feature_norm.transforms[name] = std::move(t);
  }
  return model;
}

}  // namespace

void save_checkpoint(const std::string& path, const FtDklModel& model) {
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    write_model(out, model);
    out.flush();
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

FtDklModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open checkpoint '" + path + "'");
  return read_model(in);
}

}  // namespace ftbo::surrogate

#include "ftbo/surrogate.hpp"

#include "ftbo/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ftbo::surrogate {

void TrainConfig::validate() const {
  if (epochs_mse < 0 || epochs_elbo < 0)
    throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (batch_size <= 0) throw std::invalid_argument("TrainConfig: batch_size");
  if (lr_encoder <= 0 || lr_head <= 0 || lr_kernel <= 0)
    throw std::invalid_argument("TrainConfig: learning rates must be > 0");
  if (natgrad_step <= 0 || natgrad_step > 1)
    throw std::invalid_argument("TrainConfig: natgrad_step must be in (0, 1]");
  if (inducing <= 0) throw std::invalid_argument("TrainConfig: inducing");
  if (finetune_steps < 0)
    throw std::invalid_argument("TrainConfig: finetune_steps");
  if (weight_decay < 0) throw std::invalid_argument("TrainConfig: weight_decay");
}

FtDklModel FtDklModel::clone() const {
  FtDklModel c;
  c.registry = registry.clone();
  c.encoder = encoder.clone();
  c.stage = stage;
  c.w_out = Parameter(w_out.value);
  c.b_out = Parameter(b_out.value);
  c.kernel = kernel.clone();
  c.svgp = svgp.clone();
  c.feature_norm = feature_norm;
  return c;
}

std::vector<Parameter*> FtDklModel::encoder_and_embedding_params() {
  std::vector<Parameter*> ps = registry.parameters();
  for (Parameter* p : encoder.parameters()) ps.push_back(p);
  return ps;
}

std::vector<Parameter*> FtDklModel::kernel_and_inducing_params() {
  std::vector<Parameter*> ps = kernel.parameters();
  ps.push_back(&svgp.z);
  return ps;
}

namespace {

// Union of column names and kinds across sources; categorical levels are
// merged in first-seen order. Conflicting kinds are an error.
struct UnionColumn {
  data::ColumnKind kind;
  std::vector<std::string> levels;
};

std::map<std::string, UnionColumn> column_union(
    const std::vector<data::SourceDataset>& sources) {
  std::map<std::string, UnionColumn> out;
  for (const data::SourceDataset& ds : sources) {
    for (const data::Column& c : ds.columns) {
      auto it = out.find(c.name);
      if (it == out.end()) {
        UnionColumn u;
        u.kind = c.kind;
        u.levels = c.cat_values;
        out.emplace(c.name, std::move(u));
      } else {
        if (it->second.kind != c.kind)
          throw std::invalid_argument("column '" + c.name +
                                      "' is numeric in one source and "
                                      "categorical in another");
        for (const std::string& v : c.cat_values)
          if (std::find(it->second.levels.begin(), it->second.levels.end(),
                        v) == it->second.levels.end())
            it->second.levels.push_back(v);
      }
    }
  }
  return out;
}

double median_pairwise_distance(const Matrix& z, Eigen::Index cap = 128) {
  const Eigen::Index n = std::min(z.rows(), cap);
  std::vector<double> d;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      d.push_back((z.row(i) - z.row(j)).norm());
  if (d.empty()) return 1.0;
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  return std::max(1e-3, d[d.size() / 2]);
}

}  // namespace

FtDklModel init_model(const std::vector<data::SourceDataset>& sources,
                      const enc::EncoderConfig& cfg, std::uint64_t seed) {
  if (sources.empty()) throw std::invalid_argument("init_model: no sources");
  std::mt19937_64 rng(seed);
  FtDklModel m;
  m.encoder = enc::Encoder(cfg, rng);
  m.registry = enc::EmbeddingRegistry(cfg.embed_dim);
  m.registry.init_cls(rng);
  for (const auto& [name, u] : column_union(sources)) {
    if (u.kind == data::ColumnKind::categorical)
      m.registry.init_categorical(name, u.levels, rng);
    else
      m.registry.init_numeric(name, rng);
  }
  std::normal_distribution<double> head(0.0, 1.0 / std::sqrt(cfg.embed_dim));
  Matrix w(cfg.embed_dim, 1);
  for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, 0) = head(rng);
  m.w_out = Parameter(std::move(w));
  m.b_out = Parameter(Matrix::Zero(1, 1));
  m.stage = Stage::mse;
  return m;
}

FtDklModel init_cold_model(const data::ParamSpace& space,
                           const enc::EncoderConfig& cfg,
                           const TrainConfig& train, std::uint64_t seed) {
  if (space.empty()) throw std::invalid_argument("init_cold_model: empty space");
  std::mt19937_64 rng(seed);
  FtDklModel m;
  m.encoder = enc::Encoder(cfg, rng);
  m.registry = enc::EmbeddingRegistry(cfg.embed_dim);
  m.registry.init_cls(rng);
  for (const data::ParamDef& p : space.params) {
    if (p.categorical)
      m.registry.init_categorical(p.name, p.values, rng);
    else
      m.registry.init_numeric(p.name, rng);
    if (!p.categorical)
      m.feature_norm.add_affine_from_bounds(p.name, p.lower, p.upper);
  }
  std::normal_distribution<double> head(0.0, 1.0 / std::sqrt(cfg.embed_dim));
  Matrix w(cfg.embed_dim, 1);
  for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, 0) = head(rng);
  m.w_out = Parameter(std::move(w));
  m.b_out = Parameter(Matrix::Zero(1, 1));

  gp::KernelValues kv;
  kv.lengthscale = 1.0;
  kv.matern_var = 1.0;
  kv.linear_var = 1.0;
  kv.noise_var = 1e-2;
  m.kernel = gp::KernelParams(kv);
  std::normal_distribution<double> zdist(0.0, 1.0);
  Matrix z(train.inducing, cfg.embed_dim);
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = zdist(rng);
  m.svgp.z = Parameter(std::move(z));
  m.svgp.m = Parameter(Matrix::Zero(train.inducing, 1));
  Matrix prior = gp::kernel_gram(m.svgp.z.value, m.svgp.z.value, kv);
  prior.diagonal().array() += 1e-6;
  m.svgp.s = Parameter(0.5 * (prior + prior.transpose()));
  m.stage = Stage::elbo;
  return m;
}

namespace {

struct BatchSampler {
  std::vector<Eigen::Index> sizes;
  Eigen::Index total = 0;

  explicit BatchSampler(const std::vector<data::SourceDataset>& sources) {
    for (const auto& ds : sources) {
      sizes.push_back(ds.size());
      total += ds.size();
    }
  }

  // task index proportional to dataset size
  std::size_t pick_task(std::mt19937_64& rng) const {
    std::uniform_int_distribution<Eigen::Index> d(0, total - 1);
    Eigen::Index r = d(rng);
    for (std::size_t t = 0; t < sizes.size(); ++t) {
      if (r < sizes[t]) return t;
      r -= sizes[t];
    }
    return sizes.size() - 1;
  }

  std::vector<int> pick_rows(std::size_t task, int count,
                             std::mt19937_64& rng) const {
    std::uniform_int_distribution<int> d(0, static_cast<int>(sizes[task]) - 1);
    std::vector<int> rows(static_cast<std::size_t>(count));
    for (int& r : rows) r = d(rng);
    return rows;
  }
};

}  // namespace

LossHistory pretrain_mse(FtDklModel& model,
                         const std::vector<data::SourceDataset>& sources,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (sources.empty()) throw std::invalid_argument("pretrain_mse: no sources");
  if (model.stage != Stage::mse)
    throw std::invalid_argument("pretrain_mse: model already past MSE stage");

  std::mt19937_64 rng(cfg.seed);
  BatchSampler sampler(sources);
  const int steps_per_epoch = static_cast<int>(
      (sampler.total + cfg.batch_size - 1) / cfg.batch_size);

  diff::AdamW opt_encoder(model.encoder_and_embedding_params(), cfg.lr_encoder,
                          cfg.weight_decay);
  diff::AdamW opt_head({&model.w_out, &model.b_out}, cfg.lr_head,
                       cfg.weight_decay);

  LossHistory hist;
  for (int epoch = 0; epoch < cfg.epochs_mse; ++epoch) {
    double loss_sum = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      const std::size_t task = sampler.pick_task(rng);
      const data::SourceDataset& ds = sources[task];
      const int bsize = static_cast<int>(
          std::min<Eigen::Index>(cfg.batch_size, ds.size()));
      const std::vector<int> rows = sampler.pick_rows(task, bsize, rng);
      enc::Batch batch = data::make_batch(ds, rows);

      Vector y(bsize);
      for (int i = 0; i < bsize; ++i)
        y(i) = ds.y(rows[static_cast<std::size_t>(i)]);

      diff::Tape tape;
      enc::EncodeOptions opt;
      opt.train = true;
      opt.normalization = true;
      opt.rng = &rng;
      diff::Var z = enc::encode(tape, batch, model.registry, model.encoder, opt);
      diff::Var pred = tape.add_scalar(tape.matmul(z, tape.param(model.w_out)),
                                       tape.param(model.b_out));
      diff::Var loss =
          tape.mean(tape.square(tape.sub(pred, tape.constant(Matrix(y)))));
      const double lv = loss.value()(0, 0);
      if (!std::isfinite(lv))
        throw std::runtime_error("pretrain_mse: non-finite loss");
      loss_sum += lv;
      tape.backward(loss);
      opt_encoder.step();
      opt_head.step();
    }
    hist.per_epoch.push_back(loss_sum / std::max(1, steps_per_epoch));
  }
  return hist;
}

void attach_svgp_head(FtDklModel& model,
                      const std::vector<data::SourceDataset>& sources,
                      const TrainConfig& cfg) {
  if (model.stage != Stage::mse)
    throw std::invalid_argument("attach_svgp_head: model must be in MSE stage");
  std::mt19937_64 rng(cfg.seed + 0x9e3779b97f4a7c15ull);

  // encoder outputs of a subsample, in the normalization-off regime the GP
  // will actually see
  const Eigen::Index cap = 2048;
  std::vector<Matrix> chunks;
  Eigen::Index total = 0;
  for (const auto& ds : sources) total += ds.size();
  for (const auto& ds : sources) {
    Eigen::Index want = std::max<Eigen::Index>(
        1, cap * ds.size() / std::max<Eigen::Index>(1, total));
    want = std::min(want, ds.size());
    std::vector<int> rows(static_cast<std::size_t>(want));
    if (want == ds.size()) {
      for (Eigen::Index i = 0; i < want; ++i)
        rows[static_cast<std::size_t>(i)] = static_cast<int>(i);
    } else {
      std::uniform_int_distribution<int> d(0, static_cast<int>(ds.size()) - 1);
      for (int& r : rows) r = d(rng);
    }
    enc::Batch batch = data::make_batch(ds, rows);
    diff::Tape tape;
    enc::EncodeOptions opt;
    opt.train = false;
    opt.normalization = false;
    chunks.push_back(
        enc::encode(tape, batch, model.registry, model.encoder, opt).value());
  }
  Eigen::Index rows_total = 0;
  for (const Matrix& c : chunks) rows_total += c.rows();
  Matrix z(rows_total, chunks.front().cols());
  Eigen::Index at = 0;
  for (const Matrix& c : chunks) {
    z.middleRows(at, c.rows()) = c;
    at += c.rows();
  }

  // linear-kernel variance from the MSE head weights
  const Eigen::Index d_e = model.w_out.rows();
  const double w_mean = model.w_out.value.col(0).mean();
  const double v_l = (model.w_out.value.col(0).array() - w_mean).square().sum() /
                     static_cast<double>(d_e);
  gp::KernelValues kv;
  kv.lengthscale = median_pairwise_distance(z);
  kv.matern_var = 1.0;
  kv.linear_var = std::max(1.0, std::ceil(v_l));
  kv.noise_var = 1e-2;
  model.kernel = gp::KernelParams(kv);
  model.svgp = gp::init_svgp(z, cfg.inducing, kv, rng);
  model.stage = Stage::elbo;
}

namespace {

double elbo_training_steps(FtDklModel& model,
                           const std::vector<data::SourceDataset>& sources,
                           const TrainConfig& cfg, int epochs,
                           LossHistory* hist) {
  std::mt19937_64 rng(cfg.seed + 0x517cc1b727220a95ull);
  BatchSampler sampler(sources);
  const int steps_per_epoch = static_cast<int>(
      (sampler.total + cfg.batch_size - 1) / cfg.batch_size);
  const double total_n = static_cast<double>(sampler.total);

  diff::AdamW opt_encoder(model.encoder_and_embedding_params(), cfg.lr_encoder,
                          cfg.weight_decay);
  diff::AdamW opt_kernel(model.kernel_and_inducing_params(), cfg.lr_kernel,
                         0.0);
  double last = 0.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double elbo_sum = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      const std::size_t task = sampler.pick_task(rng);
      const data::SourceDataset& ds = sources[task];
      const int bsize = static_cast<int>(
          std::min<Eigen::Index>(cfg.batch_size, ds.size()));
      const std::vector<int> rows = sampler.pick_rows(task, bsize, rng);
      enc::Batch batch = data::make_batch(ds, rows);
      Vector y(bsize);
      for (int i = 0; i < bsize; ++i)
        y(i) = ds.y(rows[static_cast<std::size_t>(i)]);

      diff::Tape tape;
      enc::EncodeOptions opt;
      opt.train = true;
      opt.normalization = false;  // layer norm bypassed, dropout off
      opt.rng = &rng;
      diff::Var z = enc::encode(tape, batch, model.registry, model.encoder, opt);
      diff::Var elbo =
          gp::svgp_elbo(tape, z, y, model.svgp, model.kernel, total_n);
      const double ev = elbo.value()(0, 0);
      if (!std::isfinite(ev))
        throw std::runtime_error("pretrain_elbo: non-finite ELBO");
      elbo_sum += ev;
      tape.backward(tape.scale(elbo, -1.0));
      // gradients of -ELBO were written; natural gradient ascends the ELBO
      model.svgp.m.grad *= -1.0;
      model.svgp.s.grad *= -1.0;
      opt_encoder.step();
      opt_kernel.step();
      gp::svgp_natgrad_step(model.svgp, cfg.natgrad_step);
      last = ev;
    }
    if (hist != nullptr)
      hist->per_epoch.push_back(elbo_sum / std::max(1, steps_per_epoch));
  }
  return last;
}

}  // namespace

LossHistory pretrain_elbo(FtDklModel& model,
                          const std::vector<data::SourceDataset>& sources,
                          const TrainConfig& cfg) {
  cfg.validate();
  if (sources.empty()) throw std::invalid_argument("pretrain_elbo: no sources");
  attach_svgp_head(model, sources, cfg);
  LossHistory hist;
  elbo_training_steps(model, sources, cfg, cfg.epochs_elbo, &hist);
  return hist;
}

double finetune(FtDklModel& model, const std::vector<enc::NamedRow>& x,
                const Vector& y_norm, int steps, const TrainConfig& cfg) {
  if (model.stage != Stage::elbo)
    throw std::invalid_argument("finetune: model must have an SVGP head");
  if (x.empty()) throw std::invalid_argument("finetune: empty target data");
  if (static_cast<Eigen::Index>(x.size()) != y_norm.size())
    throw std::invalid_argument("finetune: size mismatch");

  // one synthetic dataset holding the full target batch
  std::vector<enc::NamedRow> normed;
  normed.reserve(x.size());
  for (const enc::NamedRow& r : x) normed.push_back(model.feature_norm.apply_row(r));
  enc::Batch batch = enc::Batch::from_rows(normed);

  diff::AdamW opt_encoder(model.encoder_and_embedding_params(), cfg.lr_encoder,
                          cfg.weight_decay);
  diff::AdamW opt_kernel(model.kernel_and_inducing_params(), cfg.lr_kernel,
                         0.0);
  const double total_n = static_cast<double>(x.size());
  double last = 0.0;
  std::mt19937_64 rng(cfg.seed);
  for (int it = 0; it < steps; ++it) {
    diff::Tape tape;
    enc::EncodeOptions opt;
    opt.train = true;
    opt.normalization = false;
    opt.rng = &rng;
    diff::Var z = enc::encode(tape, batch, model.registry, model.encoder, opt);
    diff::Var elbo =
        gp::svgp_elbo(tape, z, y_norm, model.svgp, model.kernel, total_n);
    last = elbo.value()(0, 0);
    if (!std::isfinite(last))
      throw std::runtime_error("finetune: non-finite ELBO");
    tape.backward(tape.scale(elbo, -1.0));
    model.svgp.m.grad *= -1.0;
    model.svgp.s.grad *= -1.0;
    opt_encoder.step();
    opt_kernel.step();
    gp::svgp_natgrad_step(model.svgp, cfg.natgrad_step);
  }
  return last;
}

Matrix encode_rows(FtDklModel& model, const std::vector<enc::NamedRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("encode_rows: no rows");
  std::vector<enc::NamedRow> normed;
  normed.reserve(rows.size());
  for (const enc::NamedRow& r : rows)
    normed.push_back(model.feature_norm.apply_row(r));
  enc::Batch batch = enc::Batch::from_rows(normed);
  diff::Tape tape;
  enc::EncodeOptions opt;
  opt.train = false;
  opt.normalization = (model.stage == Stage::mse);
  return enc::encode(tape, batch, model.registry, model.encoder, opt).value();
}

std::vector<gp::GaussianPrediction> predict(
    FtDklModel& model, const std::vector<enc::NamedRow>& rows) {
  const Matrix z = encode_rows(model, rows);
  if (model.stage == Stage::mse) {
    std::vector<gp::GaussianPrediction> out(rows.size());
    const Vector mean =
        (z * model.w_out.value).col(0).array() + model.b_out.value(0, 0);
    for (std::size_t i = 0; i < rows.size(); ++i)
      out[i] = {mean(static_cast<Eigen::Index>(i)), 0.0};
    return out;
  }
  return gp::svgp_predict(z, model.svgp, model.kernel.values());
}

}  // namespace ftbo::surrogate

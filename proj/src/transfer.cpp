#include "ftbo/transfer.hpp"

#include <algorithm>
#include <stdexcept>

namespace ftbo::transfer {

bool TransferReport::partition_ok(
    const std::vector<std::string>& target_names) const {
  std::vector<std::string> all = copied;
  for (const Mixed& m : mixed) all.push_back(m.name);
  std::vector<std::string> want = target_names;
  std::sort(all.begin(), all.end());
  std::sort(want.begin(), want.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end()) return false;
  return all == want;
}

std::pair<Matrix, Matrix> mix_pair(const enc::NumericEmbedding& e1,
                                   const enc::NumericEmbedding& e2,
                                   double alpha) {
  Matrix w = alpha * e1.w.value + (1.0 - alpha) * e2.w.value;
  Matrix b = alpha * e1.b.value + (1.0 - alpha) * e2.b.value;
  return {std::move(w), std::move(b)};
}

namespace {

Matrix gaussian_matrix(Eigen::Index r, Eigen::Index c, double scale,
                       std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
  return m;
}

std::vector<std::string> numeric_names(const enc::EmbeddingRegistry& reg) {
  std::vector<std::string> out;
  for (const auto& [name, e] : reg.numeric_table()) out.push_back(name);
  return out;
}

}  // namespace

MixedEmbedding mixup_embedding(const enc::EmbeddingRegistry& registry,
                               std::mt19937_64& rng) {
  const std::vector<std::string> names = numeric_names(registry);
  const int d_e = registry.embed_dim();
  if (names.empty())
    throw std::invalid_argument("mixup_embedding: registry has no numeric entries");
  MixedEmbedding out;
  if (names.size() == 1) {
    // mix-up is undefined for one entry: copy plus small noise
    const enc::NumericEmbedding& e = registry.numeric(names.front());
    out.w = e.w.value + gaussian_matrix(1, d_e, 0.01, rng);
    out.b = e.b.value + gaussian_matrix(1, d_e, 0.01, rng);
    out.prov = {names.front(), names.front(), 1.0};
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, names.size() - 1);
  const std::size_t i = pick(rng);
  std::size_t j = pick(rng);
  while (j == i) j = pick(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double alpha = unit(rng);
  auto [w, b] =
      mix_pair(registry.numeric(names[i]), registry.numeric(names[j]), alpha);
  out.w = std::move(w);
  out.b = std::move(b);
  out.prov = {names[i], names[j], alpha};
  return out;
}

std::pair<surrogate::FtDklModel, TransferReport> build_target_model(
    const surrogate::FtDklModel& source, const data::ParamSpace& target_space,
    std::uint64_t seed) {
  if (source.stage != surrogate::Stage::elbo)
    throw std::invalid_argument(
        "build_target_model: source model must have an SVGP head");
  if (target_space.empty())
    throw std::invalid_argument("build_target_model: empty target space");

  std::mt19937_64 rng(seed);
  const int d_e = source.registry.embed_dim();

  surrogate::FtDklModel target;
  target.encoder = source.encoder.clone();
  target.stage = surrogate::Stage::elbo;
  target.w_out = diff::Parameter(source.w_out.value);
  target.b_out = diff::Parameter(source.b_out.value);
  target.kernel = source.kernel.clone();
  target.svgp = source.svgp.clone();
  target.feature_norm.scaling = source.feature_norm.scaling;

  target.registry = enc::EmbeddingRegistry(d_e);
  target.registry.cls() = diff::Parameter(source.registry.cls().value);

  TransferReport report;
  report.seed = seed;

  // categorical b mix-up draws from the categorical table
  const auto mix_categorical_bias = [&](std::mt19937_64& r) -> Matrix {
    std::vector<std::string> names;
    for (const auto& [n, e] : source.registry.categorical_table())
      names.push_back(n);
    if (names.size() >= 2) {
      std::uniform_int_distribution<std::size_t> pick(0, names.size() - 1);
      const std::size_t i = pick(r);
      std::size_t j = pick(r);
      while (j == i) j = pick(r);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double alpha = unit(r);
      return alpha * source.registry.categorical(names[i]).b.value +
             (1.0 - alpha) * source.registry.categorical(names[j]).b.value;
    }
    if (names.size() == 1)
      return source.registry.categorical(names.front()).b.value +
             gaussian_matrix(1, d_e, 0.01, r);
    return gaussian_matrix(1, d_e, 0.01, r);
  };

  for (const data::ParamDef& p : target_space.params) {
    if (p.categorical) {
      if (source.registry.has(p.name) &&
          source.registry.is_categorical(p.name)) {
        const enc::CategoricalEmbedding& e = source.registry.categorical(p.name);
        // copy known levels, fresh rows for levels new to the target
        Matrix values(static_cast<Eigen::Index>(p.values.size()), d_e);
        for (std::size_t v = 0; v < p.values.size(); ++v) {
          const int idx = e.index_of(p.values[v]);
          if (idx >= 0)
            values.row(static_cast<Eigen::Index>(v)) = e.values.value.row(idx);
          else
            values.row(static_cast<Eigen::Index>(v)) =
                gaussian_matrix(1, d_e, 0.01, rng).row(0);
        }
        target.registry.add_categorical(p.name, e.b.value, std::move(values),
                                        p.values);
        report.copied.push_back(p.name);
      } else {
        Matrix values =
            gaussian_matrix(static_cast<Eigen::Index>(p.values.size()), d_e,
                            0.01, rng);
        target.registry.add_categorical(p.name, mix_categorical_bias(rng),
                                        std::move(values), p.values);
        report.mixed.push_back({p.name, {"", "", 0.0}});
      }
      continue;
    }

    if (source.registry.has(p.name) && !source.registry.is_categorical(p.name)) {
      const enc::NumericEmbedding& e = source.registry.numeric(p.name);
      target.registry.add_numeric(p.name, e.w.value, e.b.value);
      report.copied.push_back(p.name);
    } else if (source.registry.numeric_count() > 0) {
      MixedEmbedding mixed = mixup_embedding(source.registry, rng);
      target.registry.add_numeric(p.name, std::move(mixed.w),
                                  std::move(mixed.b));
      report.mixed.push_back({p.name, mixed.prov});
    } else {
      // cold start: nothing to mix from
      target.registry.add_numeric(p.name, gaussian_matrix(1, d_e, 0.01, rng),
                                  gaussian_matrix(1, d_e, 0.01, rng));
      report.mixed.push_back({p.name, {"", "", 0.0}});
    }

    // input scaling: source-fitted transform when available, else affine
    if (!p.categorical) {
      if (source.feature_norm.has(p.name))
        target.feature_norm.transforms[p.name] =
            source.feature_norm.transforms.at(p.name);
      else
        target.feature_norm.add_affine_from_bounds(p.name, p.lower, p.upper);
    }
  }
  return {std::move(target), std::move(report)};
}

}  // namespace ftbo::transfer

#include "ftbo/transfer.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace ftbo;
using diff::Matrix;
using diff::Parameter;
using surrogate::FtDklModel;
using surrogate::Stage;

namespace {

// synthetic ELBO-stage source model over the given numeric names
FtDklModel make_source_model(const std::vector<std::string>& names, int d_e,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FtDklModel m;
  enc::EncoderConfig cfg;
  cfg.embed_dim = d_e;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.ff_dim = 2 * d_e;
  m.encoder = enc::Encoder(cfg, rng);
  m.registry = enc::EmbeddingRegistry(d_e);
  m.registry.init_cls(rng);
  for (const auto& n : names) {
    m.registry.init_numeric(n, rng);
    m.feature_norm.add_identity(n);
  }
  m.w_out = Parameter(test::random_matrix(d_e, 1, rng));
  m.b_out = Parameter(Matrix::Zero(1, 1));
  gp::KernelValues kv;
  m.kernel = gp::KernelParams(kv);
  m.svgp.z = Parameter(test::random_matrix(4, d_e, rng));
  m.svgp.m = Parameter(test::random_matrix(4, 1, rng));
  m.svgp.s = Parameter(test::random_spd(4, rng));
  m.stage = Stage::elbo;
  return m;
}

std::string model_fingerprint(const FtDklModel& m) {
  // serialized bytes stand in for a parameter hash
  const std::string path =
      (std::filesystem::temp_directory_path() /
       ("ftbo_fp_" + std::to_string(std::random_device{}())))
          .string();
  surrogate::save_checkpoint(path, m);
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::filesystem::remove(path);
  return ss.str();
}

data::ParamSpace space_of(const std::vector<std::string>& names) {
  data::ParamSpace s;
  for (const auto& n : names) s.params.push_back(data::ParamDef::box(n, -1, 1));
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("transfer");

TEST_CASE("mix_pair endpoints and convexity") {
  std::mt19937_64 rng(3);
  enc::NumericEmbedding e1{Parameter(test::random_matrix(1, 6, rng)),
                           Parameter(test::random_matrix(1, 6, rng))};
  enc::NumericEmbedding e2{Parameter(test::random_matrix(1, 6, rng)),
                           Parameter(test::random_matrix(1, 6, rng))};

  auto [w1, b1] = transfer::mix_pair(e1, e2, 1.0);
  CHECK((w1 - e1.w.value).cwiseAbs().maxCoeff() == 0.0);
  CHECK((b1 - e1.b.value).cwiseAbs().maxCoeff() == 0.0);
  auto [w0, b0] = transfer::mix_pair(e1, e2, 0.0);
  CHECK((w0 - e2.w.value).cwiseAbs().maxCoeff() == 0.0);
  CHECK((b0 - e2.b.value).cwiseAbs().maxCoeff() == 0.0);

  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    const double alpha = u(rng);
    auto [w, b] = transfer::mix_pair(e1, e2, alpha);
    for (int j = 0; j < 6; ++j) {
      CHECK(w(0, j) >= std::min(e1.w.value(0, j), e2.w.value(0, j)) - 1e-12);
      CHECK(w(0, j) <= std::max(e1.w.value(0, j), e2.w.value(0, j)) + 1e-12);
      CHECK(b(0, j) >= std::min(e1.b.value(0, j), e2.b.value(0, j)) - 1e-12);
      CHECK(b(0, j) <= std::max(e1.b.value(0, j), e2.b.value(0, j)) + 1e-12);
    }
  }
}

TEST_CASE("mixup_embedding draws distinct names and records provenance") {
  std::mt19937_64 seed_rng(5);
  FtDklModel src = make_source_model({"a", "b", "c"}, 6, 7);
  for (int rep = 0; rep < 25; ++rep) {
    std::mt19937_64 rng(seed_rng());
    const auto mixed = transfer::mixup_embedding(src.registry, rng);
    CHECK(mixed.prov.source_a != mixed.prov.source_b);
    CHECK(mixed.prov.alpha >= 0.0);
    CHECK(mixed.prov.alpha <= 1.0);
    // the same (pair, alpha) couples w and b
    const auto& ea = src.registry.numeric(mixed.prov.source_a);
    const auto& eb = src.registry.numeric(mixed.prov.source_b);
    const double alpha = mixed.prov.alpha;
    CHECK((mixed.w - (alpha * ea.w.value + (1 - alpha) * eb.w.value))
              .cwiseAbs()
              .maxCoeff() < 1e-15);
    CHECK((mixed.b - (alpha * ea.b.value + (1 - alpha) * eb.b.value))
              .cwiseAbs()
              .maxCoeff() < 1e-15);
  }
}

TEST_CASE("mixup_embedding fallbacks") {
  FtDklModel one = make_source_model({"only"}, 6, 11);
  std::mt19937_64 rng(13);
  const auto mixed = transfer::mixup_embedding(one.registry, rng);
  CHECK((mixed.w - one.registry.numeric("only").w.value).cwiseAbs().maxCoeff() <
        0.1);

  enc::EmbeddingRegistry empty(6);
  CHECK_THROWS_AS(transfer::mixup_embedding(empty, rng),
                  std::invalid_argument);
}

TEST_CASE("copy-only transfer reproduces source predictions bit-identically") {
  FtDklModel src = make_source_model({"a", "b", "c"}, 8, 17);
  auto [target, report] =
      transfer::build_target_model(src, space_of({"a", "b"}), 23);
  CHECK(report.mixed.empty());
  CHECK(report.copied.size() == 2);

  std::vector<enc::NamedRow> rows;
  for (int i = 0; i < 4; ++i) {
    enc::NamedRow r;
    r.push_numeric("a", 0.1 * i);
    r.push_numeric("b", -0.2 * i);
    rows.push_back(r);
  }
  const auto ps = surrogate::predict(src, rows);
  const auto pt = surrogate::predict(target, rows);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(ps[i].mean == pt[i].mean);
    CHECK(ps[i].std == pt[i].std);
  }
}

TEST_CASE("disjoint target space mixes every name") {
  FtDklModel src = make_source_model({"a", "b", "c"}, 8, 19);
  auto [target, report] =
      transfer::build_target_model(src, space_of({"p", "q"}), 29);
  CHECK(report.copied.empty());
  CHECK(report.mixed.size() == 2);
  CHECK(report.partition_ok({"p", "q"}));
}

TEST_CASE("20 to 30 dimensional transfer: 20 copied, 10 mixed") {
  std::vector<std::string> source_names, target_names;
  for (int i = 1; i <= 20; ++i) source_names.push_back("x" + std::to_string(i));
  for (int i = 1; i <= 30; ++i) target_names.push_back("x" + std::to_string(i));
  FtDklModel src = make_source_model(source_names, 8, 31);
  auto [target, report] =
      transfer::build_target_model(src, space_of(target_names), 37);
  CHECK(report.copied.size() == 20);
  CHECK(report.mixed.size() == 10);
  CHECK(report.partition_ok(target_names));
  // every mixed embedding has a source pair
  for (const auto& m : report.mixed) {
    CHECK(src.registry.has(m.prov.source_a));
    CHECK(src.registry.has(m.prov.source_b));
  }
}

TEST_CASE("transfer never mutates the source model") {
  FtDklModel src = make_source_model({"a", "b"}, 8, 41);
  const std::string before = model_fingerprint(src);
  auto [target, report] =
      transfer::build_target_model(src, space_of({"a", "zz"}), 43);
  (void)target;
  (void)report;
  CHECK(model_fingerprint(src) == before);
}

TEST_CASE("transfer is reproducible for a fixed seed") {
  FtDklModel src = make_source_model({"a", "b", "c"}, 8, 47);
  auto [t1, r1] = transfer::build_target_model(src, space_of({"a", "new"}), 53);
  auto [t2, r2] = transfer::build_target_model(src, space_of({"a", "new"}), 53);
  CHECK(model_fingerprint(t1) == model_fingerprint(t2));
  REQUIRE(r1.mixed.size() == 1);
  CHECK(r1.mixed[0].prov.alpha == r2.mixed[0].prov.alpha);
  CHECK(r1.mixed[0].prov.source_a == r2.mixed[0].prov.source_a);
}

TEST_CASE("transfer rejects bad inputs") {
  FtDklModel src = make_source_model({"a"}, 8, 59);
  CHECK_THROWS_AS(transfer::build_target_model(src, {}, 1),
                  std::invalid_argument);
  src.stage = Stage::mse;
  CHECK_THROWS_AS(transfer::build_target_model(src, space_of({"a"}), 1),
                  std::invalid_argument);
}

TEST_SUITE_END();

#include "ftbo/bench.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace ftbo;
using bench::AckleyInstance;
using diff::Vector;

namespace {

// independent scalar-loop re-implementation of the scaled/offset Ackley
double ackley_oracle(const AckleyInstance& inst, const Vector& x) {
  const double a = 20.0, b = 0.2, c = 2.0 * M_PI;
  const int n = inst.dim;
  double sq = 0.0, cs = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = inst.s(i) * (x(i) - inst.o(i));
    sq += t * t;
    cs += std::cos(c * t);
  }
  return -a * std::exp(-b * std::sqrt(sq / n)) - std::exp(cs / n) + a +
         std::exp(1.0);
}

surrogate::TrainConfig micro_train() {
  surrogate::TrainConfig t;
  t.epochs_mse = 60;
  t.epochs_elbo = 8;
  t.batch_size = 32;
  t.lr_encoder = 1e-4;
  t.lr_head = 1e-2;
  t.lr_kernel = 1e-2;
  t.inducing = 12;
  t.finetune_steps = 10;
  return t;
}

enc::EncoderConfig micro_encoder() {
  enc::EncoderConfig cfg;
  cfg.embed_dim = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.ff_dim = 32;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("bench");

TEST_CASE("ackley: zero at the offset point, to 1e-12") {
  for (std::uint64_t seed : {1ull, 7ull, 42ull}) {
    const auto inst = AckleyInstance::make(6, seed);
    CHECK(std::abs(bench::eval_ackley(inst, inst.o)) < 1e-12);
  }
}

TEST_CASE("ackley matches an independent scalar-loop oracle") {
  const auto inst = AckleyInstance::make(5, 99);
  const Vector zero = Vector::Zero(5);
  CHECK(bench::eval_ackley(inst, zero) ==
        doctest::Approx(ackley_oracle(inst, zero)).epsilon(1e-12));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    Vector x(5);
    for (int i = 0; i < 5; ++i) x(i) = u(rng);
    CHECK(bench::eval_ackley(inst, x) ==
          doctest::Approx(ackley_oracle(inst, x)).epsilon(1e-12));
  }
}

TEST_CASE("ackley: non-negative over random samples, bounds enforced") {
  const auto inst = AckleyInstance::make(4, 11);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int rep = 0; rep < 10000; ++rep) {
    Vector x(4);
    for (int i = 0; i < 4; ++i) x(i) = u(rng);
    CHECK(bench::eval_ackley(inst, x) >= 0.0);
  }
  Vector out(4);
  out << 1.5, 0, 0, 0;
  CHECK_THROWS_AS(bench::eval_ackley(inst, out), std::invalid_argument);
}

TEST_CASE("instances of different dimension share their seed prefix") {
  const auto small = AckleyInstance::make(8, 77);
  const auto big = AckleyInstance::make(12, 77);
  CHECK((big.s.head(8) - small.s).cwiseAbs().maxCoeff() == 0.0);
  CHECK((big.o.head(8) - small.o).cwiseAbs().maxCoeff() == 0.0);
  for (int i = 0; i < 8; ++i) {
    CHECK(small.s(i) >= 0.01);
    CHECK(small.s(i) <= 2.0);
    CHECK(std::abs(small.o(i)) <= 0.8);
  }
}

TEST_CASE("source corpus: bounds, determinism and EA progress") {
  const auto inst = AckleyInstance::make(3, 13);
  std::vector<double> gen_best;
  const auto ds = bench::make_source_corpus_ackley(inst, 150, 17, nullptr,
                                                   &gen_best);
  CHECK(ds.size() == 150);
  CHECK(ds.columns.size() == 3);
  CHECK(ds.columns[0].name == "x1");
  for (const auto& col : ds.columns)
    for (Eigen::Index i = 0; i < col.numeric.size(); ++i) {
      CHECK(col.numeric(i) >= -1.0);
      CHECK(col.numeric(i) <= 1.0);
    }
  for (std::size_t g = 1; g < gen_best.size(); ++g)
    CHECK(gen_best[g] <= gen_best[g - 1]);

  const auto ds2 = bench::make_source_corpus_ackley(inst, 150, 17);
  CHECK((ds.y - ds2.y).cwiseAbs().maxCoeff() == 0.0);

  // the paper-scale source configuration also goes through
  const auto big = AckleyInstance::make(20, 1);
  const auto corpus800 = bench::make_source_corpus_ackley(big, 800, 2);
  CHECK(corpus800.size() == 800);
  CHECK(corpus800.columns.size() == 20);
}

TEST_CASE("het corpus: overlapping names, shared transforms") {
  const auto corpus = bench::make_het_corpus(8, {2, 3, 4, 5, 6, 4}, 50, 23);
  CHECK(corpus.sources.size() == 6);
  std::map<std::string, int> name_count;
  for (const auto& ds : corpus.sources) {
    CHECK(ds.size() == 50);
    for (const auto& c : ds.columns) ++name_count[c.name];
  }
  bool any_shared = false;
  for (const auto& [name, count] : name_count)
    if (count > 1) any_shared = true;
  CHECK(any_shared);

  // y really is the pool Ackley restricted to the task's dims
  const auto& ds = corpus.sources[2];
  Vector x(static_cast<Eigen::Index>(ds.columns.size()));
  for (std::size_t j = 0; j < ds.columns.size(); ++j)
    x(static_cast<Eigen::Index>(j)) = ds.columns[j].numeric(0);
  CHECK(ds.y(0) == doctest::Approx(bench::eval_ackley_subset(
                       corpus.pool, corpus.task_dims[2], x))
                       .epsilon(1e-12));
}

TEST_CASE("normalized regret: endpoints, clamping, monotonicity") {
  const std::vector<double> series = {5.0, 3.0, 1.0, 1.0, 0.5};
  const auto reg = bench::normalized_regret(series, 0.5, 5.0);
  CHECK(reg.front() == doctest::Approx(1.0));
  CHECK(reg.back() == doctest::Approx(0.0));
  for (std::size_t i = 1; i < reg.size(); ++i) CHECK(reg[i] <= reg[i - 1]);
  for (double r : reg) {
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }
  const auto clamped = bench::normalized_regret({10.0, -1.0}, 0.0, 5.0);
  CHECK(clamped[0] == 1.0);
  CHECK(clamped[1] == 0.0);
  CHECK_THROWS_AS(bench::normalized_regret(series, 1.0, 1.0),
                  std::invalid_argument);
}

TEST_CASE("average rank: strict order, ties, affine invariance") {
  // two methods, one strictly better
  std::vector<std::vector<std::vector<double>>> best = {
      {{1.0, 0.5}, {2.0, 1.0}},  // method a, 2 seeds
      {{3.0, 2.0}, {4.0, 3.0}},  // method b
  };
  auto ranks = bench::average_rank(best);
  CHECK(ranks[0][0] == doctest::Approx(1.0));
  CHECK(ranks[1][0] == doctest::Approx(2.0));
  CHECK(ranks[0][1] == doctest::Approx(1.0));

  // identical traces tie at 1.5
  std::vector<std::vector<std::vector<double>>> tied = {
      {{1.0, 1.0}},
      {{1.0, 1.0}},
  };
  auto tr = bench::average_rank(tied);
  CHECK(tr[0][0] == doctest::Approx(1.5));
  CHECK(tr[1][0] == doctest::Approx(1.5));

  // affine rescaling of every trace leaves ranks unchanged
  std::vector<std::vector<std::vector<double>>> scaled = best;
  for (auto& m : scaled)
    for (auto& s : m)
      for (double& v : s) v = 100.0 * v - 7.0;
  auto rs = bench::average_rank(scaled);
  for (std::size_t m = 0; m < rs.size(); ++m)
    for (std::size_t i = 0; i < rs[m].size(); ++i)
      CHECK(rs[m][i] == doctest::Approx(ranks[m][i]));

  // misaligned grids are rejected
  std::vector<std::vector<std::vector<double>>> ragged = {
      {{1.0, 2.0}},
      {{1.0}},
  };
  CHECK_THROWS_AS(bench::average_rank(ragged), std::invalid_argument);
}

TEST_CASE("run_experiment: tiny random-only run has the right shape") {
  bench::ExperimentSpec spec;
  spec.source_dim = 2;
  spec.target_dim = 3;
  spec.methods = {"random"};
  spec.n_seeds = 2;
  spec.n_init = 4;
  spec.bo_iterations = 0;
  spec.problem_seed = 3;
  spec.jobs = 1;
  const auto result = bench::run_experiment(spec, nullptr);
  CHECK(result.failures.empty());
  CHECK(result.table.methods.size() == 1);
  CHECK(result.table.iterations == 4);
  CHECK(result.traces.size() == 2);
  for (const auto& t : result.traces) CHECK(t.iters.size() == 4);
  for (int it = 0; it < 4; ++it) {
    CHECK(result.table.regret_mean(0, it) >= 0.0);
    CHECK(result.table.regret_mean(0, it) <= 1.0);
  }
  CHECK_THROWS_AS(
      [&] {
        bench::ExperimentSpec bad = spec;
        bad.methods = {"nope"};
        bench::run_experiment(bad, nullptr);
      }(),
      std::invalid_argument);
}

TEST_CASE("run_experiment: ranks of two methods sum to 3 per iteration") {
  bench::ExperimentSpec spec;
  spec.source_dim = 2;
  spec.target_dim = 2;
  spec.methods = {"random", "rf"};
  spec.n_seeds = 2;
  spec.n_init = 4;
  spec.bo_iterations = 3;
  spec.problem_seed = 7;
  spec.jobs = 2;
  spec.acq.population = 8;
  spec.acq.generations = 4;
  spec.acq.polish_steps = 5;
  const auto result = bench::run_experiment(spec, nullptr);
  REQUIRE(result.failures.empty());
  for (int it = 0; it < result.table.iterations; ++it)
    CHECK(result.table.rank_mean(0, it) + result.table.rank_mean(1, it) ==
          doctest::Approx(3.0));
}

TEST_CASE("micro transfer experiment: pretraining beats random search") {
  bench::ExperimentSpec spec;
  spec.source_dim = 3;
  spec.target_dim = 4;
  spec.source_points = 220;
  spec.methods = {"random", "ftdkl_pretrained"};
  spec.n_seeds = 2;
  spec.n_init = 4;
  spec.bo_iterations = 8;
  spec.problem_seed = 5;
  spec.jobs = 2;
  spec.encoder = micro_encoder();
  spec.train = micro_train();
  spec.acq.population = 16;
  spec.acq.generations = 10;
  spec.acq.polish_steps = 10;
  const auto result = bench::run_ackley_experiment(spec);
  REQUIRE(result.failures.empty());
  const int last = result.table.iterations - 1;
  CHECK(result.table.regret_mean(1, last) < result.table.regret_mean(0, last));
}

TEST_CASE("zero-shot ranking: argmin first, stable ties, sorted prefix") {
  // mse-stage model over one numeric input
  data::SourceDataset ds;
  ds.task_id = "t";
  data::Column c;
  c.name = "x";
  c.numeric = Vector::LinSpaced(32, -1.0, 1.0);
  ds.columns.push_back(c);
  ds.y = Vector::Zero(32);
  std::vector<data::SourceDataset> sources = {ds};
  auto model = surrogate::init_model(sources, micro_encoder(), 3);
  model.feature_norm.add_identity("x");

  std::vector<enc::NamedRow> cands;
  for (int i = 0; i < 25; ++i) {
    enc::NamedRow r;
    r.push_numeric("x", -1.0 + 2.0 * i / 24.0);
    cands.push_back(r);
  }
  const auto preds = surrogate::predict(model, cands);
  const auto order = bo::zero_shot_batch(model, cands, 10);
  REQUIRE(order.size() == 10);
  // first element is the argmin of the predictions
  int argmin = 0;
  for (int i = 1; i < 25; ++i)
    if (preds[static_cast<std::size_t>(i)].mean <
        preds[static_cast<std::size_t>(argmin)].mean)
      argmin = i;
  CHECK(order[0] == argmin);
  // returned means are sorted ascending (a re-sort is a no-op)
  for (std::size_t i = 1; i < order.size(); ++i)
    CHECK(preds[static_cast<std::size_t>(order[i - 1])].mean <=
          preds[static_cast<std::size_t>(order[i])].mean);

  // all-equal predictions (zeroed head): stable order = input order
  model.w_out.value.setZero();
  model.b_out.value.setConstant(0.25);
  const auto tied = bo::zero_shot_batch(model, cands, 5);
  for (int i = 0; i < 5; ++i) CHECK(tied[static_cast<std::size_t>(i)] == i);

  CHECK_THROWS_AS(bo::zero_shot_batch(model, cands, 0), std::invalid_argument);
  CHECK_THROWS_AS(bo::zero_shot_batch(model, cands, 26), std::invalid_argument);
}

TEST_SUITE_END();

#include "ftbo/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace ftbo::bench {

namespace {

constexpr double kAckleyA = 20.0;
constexpr double kAckleyB = 0.2;
constexpr double kAckleyC = 2.0 * M_PI;

double ackley_raw(const Vector& t) {
  const double n = static_cast<double>(t.size());
  const double rms = std::sqrt(t.squaredNorm() / n);
  double cos_sum = 0.0;
  for (Eigen::Index i = 0; i < t.size(); ++i)
    cos_sum += std::cos(kAckleyC * t(i));
  return -kAckleyA * std::exp(-kAckleyB * rms) - std::exp(cos_sum / n) +
         kAckleyA + std::exp(1.0);
}

}  // namespace

AckleyInstance AckleyInstance::make(int dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("AckleyInstance: dim must be >= 1");
  AckleyInstance inst;
  inst.dim = dim;
  inst.seed = seed;
  inst.s = Vector(dim);
  inst.o = Vector(dim);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> us(0.01, 2.0);
  std::uniform_real_distribution<double> uo(-0.8, 0.8);
  for (int i = 0; i < dim; ++i) {
    inst.s(i) = us(rng);
    inst.o(i) = uo(rng);
  }
  return inst;
}

double eval_ackley(const AckleyInstance& inst, const Vector& x) {
  if (x.size() != inst.dim)
    throw std::invalid_argument("eval_ackley: dimension mismatch");
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (x(i) < -1.0 - 1e-12 || x(i) > 1.0 + 1e-12)
      throw std::invalid_argument("eval_ackley: x out of bounds");
  const Vector t = inst.s.cwiseProduct(x - inst.o);
  return ackley_raw(t);
}

data::ParamSpace ackley_space(int dim) {
  data::ParamSpace space;
  for (int i = 1; i <= dim; ++i)
    space.params.push_back(
        data::ParamDef::box("x" + std::to_string(i), -1.0, 1.0));
  return space;
}

data::SourceDataset make_source_corpus_ackley(const AckleyInstance& inst,
                                              int n_points, std::uint64_t seed,
                                              Vector* best_x,
                                              std::vector<double>* gen_best) {
  if (n_points < 1)
    throw std::invalid_argument("make_source_corpus_ackley: n_points >= 1");
  const data::ParamSpace space = ackley_space(inst.dim);
  bo::AcquisitionConfig ea;
  ea.population = 50;
  ea.generations = 40;
  ea.polish_steps = 0;
  ea.seed = seed;
  std::mt19937_64 rng(seed);
  std::vector<std::pair<Vector, double>> trajectory;
  const Vector best = bo::de_minimize(
      [&](const Vector& x) { return eval_ackley(inst, x); }, space, ea, rng,
      &trajectory, gen_best);
  if (best_x != nullptr) *best_x = best;

  // uniform subsample without replacement
  std::vector<std::size_t> idx(trajectory.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = idx.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> d(0, i);
    std::swap(idx[i], idx[d(rng)]);
  }
  const std::size_t take =
      std::min<std::size_t>(static_cast<std::size_t>(n_points), idx.size());
  idx.resize(take);
  std::sort(idx.begin(), idx.end());

  data::SourceDataset ds;
  ds.task_id = "ackley" + std::to_string(inst.dim) + "_src";
  ds.y = Vector(static_cast<Eigen::Index>(take));
  for (int j = 0; j < inst.dim; ++j) {
    data::Column c;
    c.name = "x" + std::to_string(j + 1);
    c.numeric = Vector(static_cast<Eigen::Index>(take));
    ds.columns.push_back(std::move(c));
  }
  for (std::size_t i = 0; i < take; ++i) {
    const auto& [x, y] = trajectory[idx[i]];
    ds.y(static_cast<Eigen::Index>(i)) = y;
    for (int j = 0; j < inst.dim; ++j)
      ds.columns[static_cast<std::size_t>(j)].numeric(
          static_cast<Eigen::Index>(i)) = x(j);
  }
  return ds;
}

double eval_ackley_subset(const AckleyInstance& pool,
                          const std::vector<int>& dims, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != dims.size())
    throw std::invalid_argument("eval_ackley_subset: dimension mismatch");
  Vector t(static_cast<Eigen::Index>(dims.size()));
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const int d = dims[i];
    t(static_cast<Eigen::Index>(i)) =
        pool.s(d) * (x(static_cast<Eigen::Index>(i)) - pool.o(d));
  }
  return ackley_raw(t);
}

HetCorpus make_het_corpus(int pool_dim, const std::vector<int>& task_sizes,
                          int rows_per_task, std::uint64_t seed) {
  HetCorpus corpus;
  corpus.pool = AckleyInstance::make(pool_dim, seed);
  std::mt19937_64 rng(seed ^ 0xa5a5a5a5ull);
  std::uniform_real_distribution<double> ux(-1.0, 1.0);
  for (std::size_t t = 0; t < task_sizes.size(); ++t) {
    const int k = task_sizes[t];
    if (k < 1 || k > pool_dim)
      throw std::invalid_argument("make_het_corpus: bad task size");
    // rotate through the pool so name sets overlap but differ
    std::vector<int> dims(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j)
      dims[static_cast<std::size_t>(j)] =
          static_cast<int>((t * 2 + static_cast<std::size_t>(j)) %
                           static_cast<std::size_t>(pool_dim));
    std::sort(dims.begin(), dims.end());
    corpus.task_dims.push_back(dims);

    data::SourceDataset ds;
    ds.task_id = "het_task" + std::to_string(t);
    ds.y = Vector(rows_per_task);
    for (int d : dims) {
      data::Column c;
      c.name = "x" + std::to_string(d + 1);
      c.numeric = Vector(rows_per_task);
      ds.columns.push_back(std::move(c));
    }
    for (int r = 0; r < rows_per_task; ++r) {
      Vector x(k);
      for (int j = 0; j < k; ++j) x(j) = ux(rng);
      for (int j = 0; j < k; ++j)
        ds.columns[static_cast<std::size_t>(j)].numeric(r) = x(j);
      ds.y(r) = eval_ackley_subset(corpus.pool, dims, x);
    }
    corpus.sources.push_back(std::move(ds));
  }
  return corpus;
}

std::vector<double> normalized_regret(const std::vector<double>& best_series,
                                      double y_best, double y_worst) {
  if (!(y_worst > y_best))
    throw std::invalid_argument("normalized_regret: y_best must be < y_worst");
  std::vector<double> out;
  out.reserve(best_series.size());
  for (double b : best_series) {
    const double r = (b - y_best) / (y_worst - y_best);
    out.push_back(std::clamp(r, 0.0, 1.0));
  }
  return out;
}

std::vector<std::vector<double>> average_rank(
    const std::vector<std::vector<std::vector<double>>>& best) {
  const std::size_t n_methods = best.size();
  if (n_methods == 0) throw std::invalid_argument("average_rank: no methods");
  const std::size_t n_seeds = best.front().size();
  if (n_seeds == 0) throw std::invalid_argument("average_rank: no seeds");
  const std::size_t iters = best.front().front().size();
  for (const auto& m : best) {
    if (m.size() != n_seeds)
      throw std::invalid_argument("average_rank: ragged seed counts");
    for (const auto& s : m)
      if (s.size() != iters)
        throw std::invalid_argument("average_rank: misaligned iteration grids");
  }

  std::vector<std::vector<double>> out(
      n_methods, std::vector<double>(iters, 0.0));
  for (std::size_t seed = 0; seed < n_seeds; ++seed) {
    for (std::size_t it = 0; it < iters; ++it) {
      // rank methods by best-so-far, ties averaged
      std::vector<std::size_t> order(n_methods);
      for (std::size_t m = 0; m < n_methods; ++m) order[m] = m;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) {
                         return best[a][seed][it] < best[b][seed][it];
                       });
      std::size_t i = 0;
      while (i < n_methods) {
        std::size_t j = i;
        while (j + 1 < n_methods &&
               best[order[j + 1]][seed][it] == best[order[i]][seed][it])
          ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) out[order[k]][it] += rank;
        i = j + 1;
      }
    }
  }
  for (auto& m : out)
    for (double& v : m) v /= static_cast<double>(n_seeds);
  return out;
}

std::string MetricTable::to_csv() const {
  std::ostringstream out;
  out << "method,iteration,regret_mean,regret_median,regret_q25,regret_q75,"
         "rank_mean\n";
  out.precision(10);
  for (std::size_t m = 0; m < methods.size(); ++m)
    for (int it = 0; it < iterations; ++it)
      out << methods[m] << ',' << (it + 1) << ','
          << regret_mean(static_cast<Eigen::Index>(m), it) << ','
          << regret_median(static_cast<Eigen::Index>(m), it) << ','
          << regret_q25(static_cast<Eigen::Index>(m), it) << ','
          << regret_q75(static_cast<Eigen::Index>(m), it) << ','
          << rank_mean(static_cast<Eigen::Index>(m), it) << '\n';
  return out.str();
}

const std::vector<std::string> kKnownMethods = {
    "random", "gp", "gp50", "ftdkl_cold", "ftdkl_pretrained", "rf"};

namespace {

double quantile_of(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const std::size_t f = static_cast<std::size_t>(std::floor(h));
  const std::size_t c = std::min(f + 1, v.size() - 1);
  return v[f] + (h - std::floor(h)) * (v[c] - v[f]);
}

struct RunJob {
  std::string method;
  int seed_index = 0;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec,
                                const surrogate::FtDklModel* pretrained) {
  for (const std::string& m : spec.methods)
    if (std::find(kKnownMethods.begin(), kKnownMethods.end(), m) ==
        kKnownMethods.end())
      throw std::invalid_argument("run_experiment: unknown method '" + m + "'");
  const bool needs_pretrained =
      std::find(spec.methods.begin(), spec.methods.end(),
                "ftdkl_pretrained") != spec.methods.end();
  if (needs_pretrained && pretrained == nullptr)
    throw std::invalid_argument(
        "run_experiment: ftdkl_pretrained requested without a model");

  const AckleyInstance target =
      AckleyInstance::make(spec.target_dim, spec.problem_seed);

  // source EA optimum, for the fixed-prefix mode
  Vector prefix_opt;
  if (spec.freeze_prefix > 0) {
    const AckleyInstance source =
        AckleyInstance::make(spec.source_dim, spec.problem_seed);
    make_source_corpus_ackley(source, 1, spec.problem_seed + 101, &prefix_opt);
    if (spec.freeze_prefix > spec.source_dim ||
        spec.freeze_prefix >= spec.target_dim)
      throw std::invalid_argument("run_experiment: bad freeze_prefix");
  }

  // free space and objective
  data::ParamSpace space;
  const int first_free = spec.freeze_prefix;
  for (int i = first_free; i < spec.target_dim; ++i)
    space.params.push_back(
        data::ParamDef::box("x" + std::to_string(i + 1), -1.0, 1.0));
  const auto objective = [&](const enc::NamedRow& row) {
    Vector x(spec.target_dim);
    for (int i = 0; i < first_free; ++i) x(i) = prefix_opt(i);
    for (int i = first_free; i < spec.target_dim; ++i)
      x(i) = row.numeric("x" + std::to_string(i + 1));
    return eval_ackley(target, x);
  };
  const std::string problem_label =
      spec.name + "_d" + std::to_string(spec.target_dim) +
      (spec.freeze_prefix > 0 ? "_frozen" + std::to_string(spec.freeze_prefix)
                              : "");

  std::vector<RunJob> jobs;
  for (const std::string& m : spec.methods)
    for (int s = 0; s < spec.n_seeds; ++s) jobs.push_back({m, s});

  ExperimentResult result;
  result.traces.resize(jobs.size());
  std::vector<std::string> failures(jobs.size());

  std::atomic<std::size_t> next{0};
  const auto worker = [&]() {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const RunJob& job = jobs[j];
      const std::uint64_t run_seed =
          spec.problem_seed * 1000003ull + 7919ull * static_cast<std::uint64_t>(job.seed_index);
      try {
        bo::BoConfig cfg;
        // every method gets the same evaluation budget; gp50 spends more of
        // it on random initialization
        cfg.n_init = job.method == "gp50" ? spec.gp50_init : spec.n_init;
        cfg.budget = spec.n_init + spec.bo_iterations;
        cfg.finetune_steps = spec.train.finetune_steps;
        cfg.acq = spec.acq;
        cfg.seed = run_seed;
        cfg.problem_label = problem_label;
        cfg.method_label = job.method;

        std::unique_ptr<bo::Surrogate> model;
        std::optional<transfer::TransferReport> report;
        if (job.method == "gp" || job.method == "gp50") {
          model = std::make_unique<bo::GpSurrogate>(job.method);
        } else if (job.method == "rf") {
          rf::RandomForest::Config rfc;
          rfc.seed = run_seed;
          model = std::make_unique<bo::RfSurrogate>(rfc);
        } else if (job.method == "ftdkl_cold") {
          surrogate::TrainConfig train = spec.train;
          train.seed = run_seed;
          auto cold = surrogate::init_cold_model(space, spec.encoder, train,
                                                 run_seed);
          model = std::make_unique<bo::FtDklSurrogate>(
              std::move(cold), train, "ftdkl_cold", true);
        } else if (job.method == "ftdkl_pretrained") {
          surrogate::TrainConfig train = spec.train;
          train.seed = run_seed;
          auto [tm, rep] =
              transfer::build_target_model(*pretrained, space, run_seed);
          report = rep;
          model = std::make_unique<bo::FtDklSurrogate>(
              std::move(tm), train, "ftdkl_pretrained", false);
        }
        bo::RunTrace trace = bo::bo_loop(objective, space, model.get(), cfg);
        trace.transfer = report;
        result.traces[j] = std::move(trace);
      } catch (const std::exception& e) {
        failures[j] = job.method + "/" + std::to_string(job.seed_index) + ": " +
                      e.what();
      }
    }
  };

  unsigned n_threads = spec.jobs > 0
                           ? static_cast<unsigned>(spec.jobs)
                           : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min<unsigned>(n_threads,
                                 static_cast<unsigned>(jobs.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (const std::string& f : failures)
    if (!f.empty()) result.failures.push_back(f);

  // align to a common grid: the shortest successful run
  std::size_t grid = SIZE_MAX;
  double y_worst = -std::numeric_limits<double>::infinity();
  for (const bo::RunTrace& t : result.traces) {
    if (t.iters.empty()) continue;
    grid = std::min(grid, t.iters.size());
    for (const bo::IterRecord& r : t.iters)
      y_worst = std::max(y_worst, r.y_raw);
  }
  if (grid == SIZE_MAX)
    throw std::runtime_error("run_experiment: every run failed");
  result.y_worst = y_worst;

  const double y_best = 0.0;  // analytic optimum of the scaled/offset Ackley
  MetricTable& table = result.table;
  table.methods = spec.methods;
  table.iterations = static_cast<int>(grid);
  const Eigen::Index nm = static_cast<Eigen::Index>(spec.methods.size());
  const Eigen::Index ni = static_cast<Eigen::Index>(grid);
  table.regret_mean = Matrix::Constant(nm, ni, 1.0);
  table.regret_median = Matrix::Constant(nm, ni, 1.0);
  table.regret_q25 = Matrix::Constant(nm, ni, 1.0);
  table.regret_q75 = Matrix::Constant(nm, ni, 1.0);
  table.rank_mean = Matrix::Zero(nm, ni);

  // [method][seed] -> best-so-far series (successful runs only)
  std::vector<std::vector<std::vector<double>>> best(
      spec.methods.size());
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (result.traces[j].iters.empty()) continue;
    const std::size_t m = static_cast<std::size_t>(
        std::find(spec.methods.begin(), spec.methods.end(), jobs[j].method) -
        spec.methods.begin());
    std::vector<double> series = result.traces[j].best_series();
    series.resize(grid);
    best[m].push_back(std::move(series));
  }

  for (std::size_t m = 0; m < spec.methods.size(); ++m) {
    for (std::size_t it = 0; it < grid; ++it) {
      std::vector<double> regrets;
      for (const auto& series : best[m]) {
        const double r =
            std::clamp((series[it] - y_best) / (y_worst - y_best), 0.0, 1.0);
        regrets.push_back(r);
      }
      if (regrets.empty()) continue;
      double mean = 0.0;
      for (double r : regrets) mean += r;
      table.regret_mean(static_cast<Eigen::Index>(m),
                        static_cast<Eigen::Index>(it)) =
          mean / static_cast<double>(regrets.size());
      table.regret_median(static_cast<Eigen::Index>(m),
                          static_cast<Eigen::Index>(it)) =
          quantile_of(regrets, 0.5);
      table.regret_q25(static_cast<Eigen::Index>(m),
                       static_cast<Eigen::Index>(it)) =
          quantile_of(regrets, 0.25);
      table.regret_q75(static_cast<Eigen::Index>(m),
                       static_cast<Eigen::Index>(it)) =
          quantile_of(regrets, 0.75);
    }
  }

  // ranks need every method to have the same seed count; use the min
  std::size_t common_seeds = SIZE_MAX;
  for (const auto& m : best) common_seeds = std::min(common_seeds, m.size());
  if (common_seeds > 0 && common_seeds != SIZE_MAX) {
    std::vector<std::vector<std::vector<double>>> aligned(best);
    for (auto& m : aligned) m.resize(common_seeds);
    const auto ranks = average_rank(aligned);
    for (std::size_t m = 0; m < ranks.size(); ++m)
      for (std::size_t it = 0; it < grid; ++it)
        table.rank_mean(static_cast<Eigen::Index>(m),
                        static_cast<Eigen::Index>(it)) = ranks[m][it];
  }
  return result;
}

ExperimentResult run_ackley_experiment(const ExperimentSpec& spec) {
  const bool needs_pretrained =
      std::find(spec.methods.begin(), spec.methods.end(),
                "ftdkl_pretrained") != spec.methods.end();
  surrogate::FtDklModel pretrained;
  if (needs_pretrained) {
    const AckleyInstance source =
        AckleyInstance::make(spec.source_dim, spec.problem_seed);
    std::vector<data::SourceDataset> sources = {make_source_corpus_ackley(
        source, spec.source_points, spec.problem_seed + 101)};
    data::normalize_objectives(sources);
    const data::FeatureNormalizer fn =
        data::normalize_features(sources, data::FeatureScaling::standard);
    surrogate::TrainConfig train = spec.train;
    train.seed = spec.problem_seed;
    pretrained = surrogate::init_model(sources, spec.encoder, spec.problem_seed);
    pretrained.feature_norm = fn;
    surrogate::pretrain_mse(pretrained, sources, train);
    surrogate::pretrain_elbo(pretrained, sources, train);
  }
  return run_experiment(spec, needs_pretrained ? &pretrained : nullptr);
}

}  // namespace ftbo::bench

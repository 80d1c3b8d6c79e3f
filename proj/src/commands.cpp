#include "ftbo/commands.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace ftbo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("invalid JSON in '" + path + "': " + e.what());
  }
  return j;
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& context) {
  for (const auto& [k, v] : j.items())
    if (allowed.count(k) == 0)
      throw std::invalid_argument("unknown key '" + k + "' in " + context);
}

void apply_train(const json& j, surrogate::TrainConfig& t) {
  reject_unknown_keys(j,
                      {"epochs_mse", "epochs_elbo", "batch_size", "lr_encoder",
                       "lr_head", "lr_kernel", "natgrad_step", "weight_decay",
                       "inducing", "finetune_steps", "seed"},
                      "train config");
  t.epochs_mse = j.value("epochs_mse", t.epochs_mse);
  t.epochs_elbo = j.value("epochs_elbo", t.epochs_elbo);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.lr_encoder = j.value("lr_encoder", t.lr_encoder);
  t.lr_head = j.value("lr_head", t.lr_head);
  t.lr_kernel = j.value("lr_kernel", t.lr_kernel);
  t.natgrad_step = j.value("natgrad_step", t.natgrad_step);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.inducing = j.value("inducing", t.inducing);
  t.finetune_steps = j.value("finetune_steps", t.finetune_steps);
  t.seed = j.value("seed", t.seed);
}

void apply_encoder(const json& j, enc::EncoderConfig& e) {
  reject_unknown_keys(
      j, {"embed_dim", "heads", "layers", "ff_dim", "dropout"}, "encoder config");
  e.embed_dim = j.value("embed_dim", e.embed_dim);
  e.n_heads = j.value("heads", e.n_heads);
  e.n_layers = j.value("layers", e.n_layers);
  e.ff_dim = j.value("ff_dim", e.ff_dim);
  e.dropout = j.value("dropout", e.dropout);
}

void apply_acq(const json& j, bo::AcquisitionConfig& a) {
  reject_unknown_keys(j,
                      {"kappa", "population", "generations", "diff_weight",
                       "crossover", "polish_steps"},
                      "acquisition config");
  a.kappa = j.value("kappa", a.kappa);
  a.population = j.value("population", a.population);
  a.generations = j.value("generations", a.generations);
  a.diff_weight = j.value("diff_weight", a.diff_weight);
  a.crossover = j.value("crossover", a.crossover);
  a.polish_steps = j.value("polish_steps", a.polish_steps);
}

data::FeatureScaling parse_scaling(const std::string& s) {
  if (s == "standard") return data::FeatureScaling::standard;
  if (s == "quantile") return data::FeatureScaling::quantile;
  throw std::invalid_argument("feature_scaling must be standard or quantile");
}

}  // namespace

Config Config::from_file(const std::string& path) {
  Config c;
  c.merge_json(path);
  return c;
}

void Config::merge_json(const std::string& path) {
  const json j = parse_json_file(path);
  reject_unknown_keys(
      j, {"train", "encoder", "acquisition", "feature_scaling", "experiment"},
      "config file '" + path + "'");
  if (j.contains("train")) apply_train(j["train"], train);
  if (j.contains("encoder")) apply_encoder(j["encoder"], encoder);
  if (j.contains("acquisition")) apply_acq(j["acquisition"], acq);
  if (j.contains("feature_scaling"))
    feature_scaling = parse_scaling(j["feature_scaling"].get<std::string>());
}

void cmd_pretrain(const PretrainOptions& opt) {
  if (opt.manifest.empty() || opt.out_checkpoint.empty())
    throw std::invalid_argument("pretrain needs a manifest and an output path");
  std::vector<data::SourceDataset> sources = data::load_corpus(opt.manifest);
  data::normalize_objectives(sources);
  const data::FeatureNormalizer fn =
      data::normalize_features(sources, opt.config.feature_scaling);

  surrogate::TrainConfig train = opt.config.train;
  train.seed = opt.seed;
  train.validate();
  surrogate::FtDklModel model =
      surrogate::init_model(sources, opt.config.encoder, opt.seed);
  model.feature_norm = fn;

  const surrogate::LossHistory mse = surrogate::pretrain_mse(model, sources, train);
  if (!opt.quiet)
    for (std::size_t e = 0; e < mse.per_epoch.size(); ++e)
      if (e % 10 == 0 || e + 1 == mse.per_epoch.size())
        std::cout << "mse epoch " << (e + 1) << "/" << mse.per_epoch.size()
                  << " loss " << mse.per_epoch[e] << "\n";
  const surrogate::LossHistory elbo =
      surrogate::pretrain_elbo(model, sources, train);
  if (!opt.quiet)
    for (std::size_t e = 0; e < elbo.per_epoch.size(); ++e)
      if (e % 10 == 0 || e + 1 == elbo.per_epoch.size())
        std::cout << "elbo epoch " << (e + 1) << "/" << elbo.per_epoch.size()
                  << " elbo " << elbo.per_epoch[e] << "\n";

  surrogate::save_checkpoint(opt.out_checkpoint, model);
  if (!opt.quiet)
    std::cout << "checkpoint written to " << opt.out_checkpoint << "\n";
}

namespace {

struct Problem {
  std::string label;
  data::ParamSpace space;
  bo::Objective objective;
  std::optional<std::vector<enc::NamedRow>> candidates;
};

std::vector<enc::NamedRow> table_to_rows(
    const data::CandidateTable& table,
    const enc::EmbeddingRegistry* registry) {
  std::vector<enc::NamedRow> rows(static_cast<std::size_t>(table.size()));
  for (Eigen::Index i = 0; i < table.size(); ++i) {
    enc::NamedRow& row = rows[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < table.names.size(); ++j) {
      if (table.kinds[j] == data::ColumnKind::categorical) {
        const std::string& cell = table.cat_cells[j][static_cast<std::size_t>(i)];
        int idx = -1;
        if (registry != nullptr) {
          if (!registry->has(table.names[j]) ||
              !registry->is_categorical(table.names[j]))
            throw std::invalid_argument("candidate column '" + table.names[j] +
                                        "' does not match the checkpoint");
          idx = registry->categorical(table.names[j]).index_of(cell);
          if (idx < 0)
            throw std::invalid_argument("unknown category '" + cell +
                                        "' for column '" + table.names[j] + "'");
        } else {
          throw std::invalid_argument(
              "categorical candidates need a checkpointed model");
        }
        row.push_categorical(table.names[j], idx);
      } else {
        row.push_numeric(table.names[j],
                         table.numeric(i, static_cast<Eigen::Index>(j)));
      }
    }
  }
  return rows;
}

Problem load_problem(const std::string& path,
                     const enc::EmbeddingRegistry* registry) {
  const json j = parse_json_file(path);
  reject_unknown_keys(j,
                      {"benchmark", "dim", "seed", "freeze_prefix",
                       "source_dim", "candidates", "schema"},
                      "problem spec '" + path + "'");
  Problem p;
  if (j.contains("benchmark")) {
    const std::string name = j["benchmark"].get<std::string>();
    if (name != "ackley")
      throw std::invalid_argument("unknown benchmark '" + name + "'");
    const int dim = j.value("dim", 12);
    const std::uint64_t seed = j.value("seed", 1ull);
    const int freeze = j.value("freeze_prefix", 0);
    const bench::AckleyInstance inst = bench::AckleyInstance::make(dim, seed);
    diff::Vector prefix;
    if (freeze > 0) {
      const int source_dim = j.value("source_dim", freeze);
      if (freeze > source_dim || freeze >= dim)
        throw std::invalid_argument("bad freeze_prefix in '" + path + "'");
      const bench::AckleyInstance src =
          bench::AckleyInstance::make(source_dim, seed);
      bench::make_source_corpus_ackley(src, 1, seed + 101, &prefix);
    }
    for (int i = freeze; i < dim; ++i)
      p.space.params.push_back(
          data::ParamDef::box("x" + std::to_string(i + 1), -1.0, 1.0));
    p.label = "ackley_d" + std::to_string(dim) +
              (freeze > 0 ? "_frozen" + std::to_string(freeze) : "");
    p.objective = [inst, freeze, prefix, dim](const enc::NamedRow& row) {
      diff::Vector x(dim);
      for (int i = 0; i < freeze; ++i) x(i) = prefix(i);
      for (int i = freeze; i < dim; ++i)
        x(i) = row.numeric("x" + std::to_string(i + 1));
      return bench::eval_ackley(inst, x);
    };
    return p;
  }
  if (!j.contains("candidates"))
    throw std::invalid_argument(
        "problem spec needs either 'benchmark' or 'candidates'");
  const fs::path base = fs::path(path).parent_path();
  const auto resolve = [&](const std::string& rel) {
    return fs::path(rel).is_absolute() ? rel : (base / rel).string();
  };
  data::Schema schema;
  const data::Schema* sp = nullptr;
  if (j.contains("schema")) {
    schema = data::Schema::load(resolve(j["schema"].get<std::string>()));
    sp = &schema;
  }
  const std::string cand_path = resolve(j["candidates"].get<std::string>());
  const data::CandidateTable table = data::load_candidates(cand_path, sp);
  if (!table.y.has_value())
    throw std::invalid_argument("candidate table '" + cand_path +
                                "' needs a y column to serve as objective");
  auto rows = table_to_rows(table, registry);
  // space from observed ranges (used for bounds checks and cold models)
  for (std::size_t c = 0; c < table.names.size(); ++c) {
    data::ParamDef d;
    d.name = table.names[c];
    if (table.kinds[c] == data::ColumnKind::categorical) {
      d.categorical = true;
      if (sp != nullptr) d.values = schema.columns.at(d.name).values;
    } else {
      d.lower = table.numeric.col(static_cast<Eigen::Index>(c)).minCoeff();
      d.upper = table.numeric.col(static_cast<Eigen::Index>(c)).maxCoeff();
      if (!(d.upper > d.lower)) d.upper = d.lower + 1.0;
    }
    p.space.params.push_back(std::move(d));
  }
  p.label = "tabular:" + fs::path(cand_path).filename().string();
  const diff::Vector ys = *table.y;
  auto shared_rows = std::make_shared<std::vector<enc::NamedRow>>(rows);
  p.objective = [shared_rows, ys](const enc::NamedRow& row) {
    for (std::size_t i = 0; i < shared_rows->size(); ++i) {
      const enc::NamedRow& cand = (*shared_rows)[i];
      if (cand.names != row.names) continue;
      bool same = true;
      for (std::size_t k = 0; k < cand.values.size(); ++k) {
        if (cand.values[k].is_categorical() != row.values[k].is_categorical() ||
            (cand.values[k].is_categorical()
                 ? cand.values[k].cat != row.values[k].cat
                 : cand.values[k].num != row.values[k].num)) {
          same = false;
          break;
        }
      }
      if (same) return ys(static_cast<Eigen::Index>(i));
    }
    throw std::runtime_error("suggested row is not in the candidate table");
  };
  p.candidates = std::move(rows);
  return p;
}

}  // namespace

void cmd_optimize(const OptimizeOptions& opt) {
  if (opt.problem.empty() || opt.out_trace.empty())
    throw std::invalid_argument("optimize needs a problem spec and an output");
  if (opt.budget < 1) throw std::invalid_argument("budget must be >= 1");
  if (opt.n_init < 1) throw std::invalid_argument("n_init must be >= 1");

  std::optional<surrogate::FtDklModel> checkpoint;
  if (!opt.checkpoint.empty())
    checkpoint = surrogate::load_checkpoint(opt.checkpoint);

  std::string method = opt.surrogate;
  if (method.empty()) method = "ftdkl";
  const std::set<std::string> known = {"ftdkl", "gp", "rf", "random"};
  if (known.count(method) == 0)
    throw std::invalid_argument("unknown surrogate '" + method + "'");

  Problem problem = load_problem(
      opt.problem, checkpoint ? &checkpoint->registry : nullptr);

  surrogate::TrainConfig train = opt.config.train;
  train.seed = opt.seed;

  std::unique_ptr<bo::Surrogate> model;
  std::optional<transfer::TransferReport> report;
  std::string method_label = method;
  if (method == "ftdkl") {
    if (checkpoint) {
      if (checkpoint->stage != surrogate::Stage::elbo)
        throw std::invalid_argument(
            "checkpoint is MSE-stage; run zeroshot or finish ELBO pretraining");
      auto [tm, rep] =
          transfer::build_target_model(*checkpoint, problem.space, opt.seed);
      report = rep;
      model = std::make_unique<bo::FtDklSurrogate>(std::move(tm), train,
                                                   "ftdkl_pretrained", false);
      method_label = "ftdkl_pretrained";
    } else {
      auto cold = surrogate::init_cold_model(problem.space, opt.config.encoder,
                                             train, opt.seed);
      model = std::make_unique<bo::FtDklSurrogate>(std::move(cold), train,
                                                   "ftdkl_cold", true);
      method_label = "ftdkl_cold";
    }
  } else if (method == "gp") {
    model = std::make_unique<bo::GpSurrogate>("gp");
  } else if (method == "rf") {
    rf::RandomForest::Config rfc;
    rfc.seed = opt.seed;
    model = std::make_unique<bo::RfSurrogate>(rfc);
  }

  bo::BoConfig cfg;
  cfg.n_init = opt.n_init;
  cfg.budget = opt.budget;
  cfg.finetune_steps = train.finetune_steps;
  cfg.acq = opt.config.acq;
  cfg.seed = opt.seed;
  cfg.problem_label = problem.label;
  cfg.method_label = method_label;

  std::ofstream out(opt.out_trace, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + opt.out_trace + "'");
  bo::TraceWriter writer(out);
  if (report) {
    // header first, then the transfer record, then iterations
    bo::RunTrace pre;
    pre.method = method_label;
    pre.problem = problem.label;
    pre.seed = opt.seed;
    pre.n_init = cfg.n_init;
    pre.budget = cfg.budget;
    writer.header(pre);
    writer.transfer_report(*report);
    bo::RunTrace trace = bo::bo_loop(
        problem.objective, problem.space, model.get(), cfg,
        problem.candidates ? &*problem.candidates : nullptr, nullptr);
    for (const bo::IterRecord& r : trace.iters) writer.iteration(r);
    writer.summary(trace);
    if (!opt.quiet) std::cout << "best " << trace.best() << "\n";
    return;
  }
  bo::RunTrace trace = bo::bo_loop(
      problem.objective, problem.space, model.get(), cfg,
      problem.candidates ? &*problem.candidates : nullptr, &writer);
  if (!opt.quiet) std::cout << "best " << trace.best() << "\n";
}

void cmd_zeroshot(const ZeroshotOptions& opt) {
  if (opt.checkpoint.empty() || opt.candidates_csv.empty() ||
      opt.out_csv.empty())
    throw std::invalid_argument(
        "zeroshot needs a checkpoint, a candidate table and an output");
  surrogate::FtDklModel model = surrogate::load_checkpoint(opt.checkpoint);
  const data::CandidateTable table =
      data::load_candidates(opt.candidates_csv, nullptr);
  const auto rows = table_to_rows(table, &model.registry);
  const int k = std::min<int>(opt.top_k, static_cast<int>(rows.size()));
  const std::vector<int> order = bo::zero_shot_batch(model, rows, k);
  const auto preds = surrogate::predict(model, rows);

  std::ofstream out(opt.out_csv, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + opt.out_csv + "'");
  out << "rank,row,pred_mean";
  for (const std::string& n : table.names) out << ',' << n;
  out << '\n';
  out.precision(10);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const int idx = order[r];
    out << (r + 1) << ',' << idx << ','
        << preds[static_cast<std::size_t>(idx)].mean;
    for (std::size_t j = 0; j < table.names.size(); ++j) {
      if (table.kinds[j] == data::ColumnKind::categorical)
        out << ',' << table.cat_cells[j][static_cast<std::size_t>(idx)];
      else
        out << ',' << table.numeric(idx, static_cast<Eigen::Index>(j));
    }
    out << '\n';
  }
}

void cmd_bench(const BenchOptions& opt) {
  if (opt.config_path.empty() || opt.out_dir.empty())
    throw std::invalid_argument("bench needs a config and an output directory");
  const json j = parse_json_file(opt.config_path);
  reject_unknown_keys(
      j, {"experiment", "train", "encoder", "acquisition", "feature_scaling"},
      "bench config");
  if (!j.contains("experiment"))
    throw std::invalid_argument("bench config needs an 'experiment' section");
  const json& ex = j["experiment"];
  reject_unknown_keys(ex,
                      {"name", "source_dim", "target_dim", "source_points",
                       "n_init", "gp50_init", "bo_iterations", "seeds",
                       "freeze_prefix", "problem_seed", "methods"},
                      "experiment section");

  bench::ExperimentSpec spec;
  spec.name = ex.value("name", spec.name);
  spec.source_dim = ex.value("source_dim", spec.source_dim);
  spec.target_dim = ex.value("target_dim", spec.target_dim);
  spec.source_points = ex.value("source_points", spec.source_points);
  spec.n_init = ex.value("n_init", spec.n_init);
  spec.gp50_init = ex.value("gp50_init", spec.gp50_init);
  spec.bo_iterations = ex.value("bo_iterations", spec.bo_iterations);
  spec.n_seeds = ex.value("seeds", spec.n_seeds);
  spec.freeze_prefix = ex.value("freeze_prefix", spec.freeze_prefix);
  spec.problem_seed = ex.value("problem_seed", spec.problem_seed);
  if (ex.contains("methods")) {
    spec.methods.clear();
    for (const auto& m : ex["methods"])
      spec.methods.push_back(m.get<std::string>());
  }
  Config cfg;
  if (j.contains("train")) apply_train(j["train"], cfg.train);
  if (j.contains("encoder")) apply_encoder(j["encoder"], cfg.encoder);
  if (j.contains("acquisition")) apply_acq(j["acquisition"], cfg.acq);
  spec.train = cfg.train;
  spec.encoder = cfg.encoder;
  spec.acq = cfg.acq;
  spec.jobs = opt.jobs;

  fs::create_directories(opt.out_dir);
  const bench::ExperimentResult result = bench::run_ackley_experiment(spec);

  for (std::size_t i = 0; i < result.traces.size(); ++i) {
    const bo::RunTrace& t = result.traces[i];
    if (t.iters.empty()) continue;
    const std::size_t seed_index = i % static_cast<std::size_t>(spec.n_seeds);
    const fs::path path = fs::path(opt.out_dir) /
                          ("trace_" + t.method + "_seed" +
                           std::to_string(seed_index) + ".jsonl");
    std::ofstream out(path, std::ios::trunc);
    bo::TraceWriter w(out);
    w.header(t);
    if (t.transfer) w.transfer_report(*t.transfer);
    for (const bo::IterRecord& r : t.iters) w.iteration(r);
    w.summary(t);
  }
  {
    std::ofstream out(fs::path(opt.out_dir) / "metrics.csv", std::ios::trunc);
    out << result.table.to_csv();
  }
  for (const std::string& f : result.failures)
    std::cerr << "[bench] run failed: " << f << "\n";
  if (!opt.quiet) {
    std::cout << "wrote " << opt.out_dir << "/metrics.csv; final median regret:\n";
    for (std::size_t m = 0; m < result.table.methods.size(); ++m)
      std::cout << "  " << result.table.methods[m] << " "
                << result.table.regret_median(static_cast<Eigen::Index>(m),
                                              result.table.iterations - 1)
                << "\n";
  }
}

void cmd_report(const ReportOptions& opt) {
  if (opt.traces.empty()) throw std::invalid_argument("report: no trace files");
  if (opt.out_csv.empty()) throw std::invalid_argument("report: no output path");
  std::vector<bo::RunTrace> traces;
  traces.reserve(opt.traces.size());
  for (const std::string& p : opt.traces) traces.push_back(bo::read_trace(p));

  const std::string problem = traces.front().problem;
  std::size_t grid = SIZE_MAX;
  for (const bo::RunTrace& t : traces) {
    if (t.problem != problem)
      throw std::invalid_argument("report: traces mix problems '" + problem +
                                  "' and '" + t.problem + "'");
    if (t.iters.empty())
      throw std::invalid_argument("report: empty trace");
    grid = std::min(grid, t.iters.size());
  }

  std::vector<std::string> methods;
  for (const bo::RunTrace& t : traces)
    if (std::find(methods.begin(), methods.end(), t.method) == methods.end())
      methods.push_back(t.method);

  double y_worst = -std::numeric_limits<double>::infinity();
  for (const bo::RunTrace& t : traces)
    for (const bo::IterRecord& r : t.iters)
      y_worst = std::max(y_worst, r.y_raw);
  if (opt.y_worst) y_worst = *opt.y_worst;
  double y_best = 0.0;
  if (opt.y_best) {
    y_best = *opt.y_best;
  } else if (problem.rfind("ackley", 0) != 0) {
    double mn = std::numeric_limits<double>::infinity();
    for (const bo::RunTrace& t : traces)
      for (const bo::IterRecord& r : t.iters) mn = std::min(mn, r.y_raw);
    y_best = mn;
    if (!(y_worst > y_best)) y_worst = y_best + 1.0;
  }

  std::vector<std::vector<std::vector<double>>> best(methods.size());
  for (const bo::RunTrace& t : traces) {
    const std::size_t m = static_cast<std::size_t>(
        std::find(methods.begin(), methods.end(), t.method) - methods.begin());
    std::vector<double> series = t.best_series();
    series.resize(grid);
    best[m].push_back(std::move(series));
  }
  std::size_t common = SIZE_MAX;
  for (const auto& m : best) common = std::min(common, m.size());
  std::vector<std::vector<std::vector<double>>> aligned(best);
  for (auto& m : aligned) m.resize(common);

  bench::MetricTable table;
  table.methods = methods;
  table.iterations = static_cast<int>(grid);
  const Eigen::Index nm = static_cast<Eigen::Index>(methods.size());
  const Eigen::Index ni = static_cast<Eigen::Index>(grid);
  table.regret_mean = diff::Matrix::Zero(nm, ni);
  table.regret_median = diff::Matrix::Zero(nm, ni);
  table.regret_q25 = diff::Matrix::Zero(nm, ni);
  table.regret_q75 = diff::Matrix::Zero(nm, ni);
  table.rank_mean = diff::Matrix::Zero(nm, ni);
  for (std::size_t m = 0; m < methods.size(); ++m) {
    for (std::size_t it = 0; it < grid; ++it) {
      std::vector<double> regrets;
      for (const auto& series : best[m])
        regrets.push_back(std::clamp(
            (series[it] - y_best) / (y_worst - y_best), 0.0, 1.0));
      std::sort(regrets.begin(), regrets.end());
      const auto q = [&](double p) {
        const double h = p * static_cast<double>(regrets.size() - 1);
        const std::size_t f = static_cast<std::size_t>(std::floor(h));
        const std::size_t c = std::min(f + 1, regrets.size() - 1);
        return regrets[f] + (h - std::floor(h)) * (regrets[c] - regrets[f]);
      };
      double mean = 0.0;
      for (double r : regrets) mean += r;
      table.regret_mean(static_cast<Eigen::Index>(m),
                        static_cast<Eigen::Index>(it)) =
          mean / static_cast<double>(regrets.size());
      table.regret_median(static_cast<Eigen::Index>(m),
                          static_cast<Eigen::Index>(it)) = q(0.5);
      table.regret_q25(static_cast<Eigen::Index>(m),
                       static_cast<Eigen::Index>(it)) = q(0.25);
      table.regret_q75(static_cast<Eigen::Index>(m),
                       static_cast<Eigen::Index>(it)) = q(0.75);
    }
  }
  if (common > 0) {
    const auto ranks = bench::average_rank(aligned);
    for (std::size_t m = 0; m < ranks.size(); ++m)
      for (std::size_t it = 0; it < grid; ++it)
        table.rank_mean(static_cast<Eigen::Index>(m),
                        static_cast<Eigen::Index>(it)) = ranks[m][it];
  }
  std::ofstream out(opt.out_csv, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + opt.out_csv + "'");
  out << table.to_csv();
}

}  // namespace ftbo::cli

#include <CLI11.hpp>

namespace ftbo::cli {

namespace {

// defaults <- FTBO_CONFIG <- --config <- individual flags
struct FlagOverrides {
  std::optional<int> epochs_mse, epochs_elbo, batch_size, inducing,
      finetune_steps;
  std::optional<double> lr_encoder, lr_head, lr_kernel, natgrad_step,
      weight_decay;
  std::optional<int> embed_dim, heads, layers, ff_dim;
  std::optional<double> dropout;
  std::optional<double> kappa;
  std::optional<int> population, generations, polish_steps;
  std::optional<std::string> feature_scaling;

  void apply(Config& c) const {
    if (epochs_mse) c.train.epochs_mse = *epochs_mse;
    if (epochs_elbo) c.train.epochs_elbo = *epochs_elbo;
    if (batch_size) c.train.batch_size = *batch_size;
    if (inducing) c.train.inducing = *inducing;
    if (finetune_steps) c.train.finetune_steps = *finetune_steps;
    if (lr_encoder) c.train.lr_encoder = *lr_encoder;
    if (lr_head) c.train.lr_head = *lr_head;
    if (lr_kernel) c.train.lr_kernel = *lr_kernel;
    if (natgrad_step) c.train.natgrad_step = *natgrad_step;
    if (weight_decay) c.train.weight_decay = *weight_decay;
    if (embed_dim) c.encoder.embed_dim = *embed_dim;
    if (heads) c.encoder.n_heads = *heads;
    if (layers) c.encoder.n_layers = *layers;
    if (ff_dim) c.encoder.ff_dim = *ff_dim;
    if (dropout) c.encoder.dropout = *dropout;
    if (kappa) c.acq.kappa = *kappa;
    if (population) c.acq.population = *population;
    if (generations) c.acq.generations = *generations;
    if (polish_steps) c.acq.polish_steps = *polish_steps;
    if (feature_scaling) c.feature_scaling = parse_scaling(*feature_scaling);
  }
};

void add_config_flags(CLI::App* cmd, FlagOverrides& f,
                      std::optional<std::string>& config_path) {
  cmd->add_option("--config", config_path, "JSON config file");
  cmd->add_option("--epochs-mse", f.epochs_mse, "MSE pre-training epochs");
  cmd->add_option("--epochs-elbo", f.epochs_elbo, "ELBO pre-training epochs");
  cmd->add_option("--batch-size", f.batch_size, "minibatch size");
  cmd->add_option("--inducing", f.inducing, "number of inducing points");
  cmd->add_option("--finetune-steps", f.finetune_steps,
                  "ELBO steps per BO iteration");
  cmd->add_option("--lr-encoder", f.lr_encoder,
                  "learning rate for transformer and embeddings");
  cmd->add_option("--lr-head", f.lr_head, "learning rate for the linear head");
  cmd->add_option("--lr-kernel", f.lr_kernel,
                  "learning rate for kernel and inducing points");
  cmd->add_option("--natgrad-step", f.natgrad_step,
                  "natural-gradient step for variational parameters");
  cmd->add_option("--weight-decay", f.weight_decay, "AdamW weight decay");
  cmd->add_option("--embed-dim", f.embed_dim, "token embedding dimension");
  cmd->add_option("--heads", f.heads, "attention heads");
  cmd->add_option("--layers", f.layers, "transformer layers");
  cmd->add_option("--ff-dim", f.ff_dim, "feed-forward width");
  cmd->add_option("--dropout", f.dropout, "dropout rate (MSE stage)");
  cmd->add_option("--kappa", f.kappa, "LCB exploration weight");
  cmd->add_option("--population", f.population, "evolution population size");
  cmd->add_option("--generations", f.generations, "evolution generations");
  cmd->add_option("--polish-steps", f.polish_steps,
                  "local polish steps after evolution");
  cmd->add_option("--feature-scaling", f.feature_scaling,
                  "standard | quantile");
}

Config build_config(const FlagOverrides& flags,
                    const std::optional<std::string>& config_path) {
  Config c;
  if (const char* env = std::getenv("FTBO_CONFIG"); env != nullptr && *env)
    c.merge_json(env);
  if (config_path) c.merge_json(*config_path);
  flags.apply(c);
  return c;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Transfer Bayesian optimization with a pre-trained deep-kernel "
               "GP surrogate"};
  app.require_subcommand(1);

  // pretrain
  auto* pre = app.add_subcommand(
      "pretrain", "pre-train the surrogate on a multi-source corpus");
  PretrainOptions po;
  FlagOverrides pre_flags;
  std::optional<std::string> pre_cfg;
  pre->add_option("--manifest", po.manifest,
                  "JSON manifest listing (task_id, path) pairs")
      ->required();
  pre->add_option("--out", po.out_checkpoint, "output checkpoint path")
      ->required();
  pre->add_option("--seed", po.seed, "random seed");
  pre->add_flag("--quiet", po.quiet, "suppress progress output");
  add_config_flags(pre, pre_flags, pre_cfg);

  // optimize
  auto* opt = app.add_subcommand("optimize", "run the BO loop on a problem");
  OptimizeOptions oo;
  FlagOverrides opt_flags;
  std::optional<std::string> opt_cfg;
  opt->add_option("--problem", oo.problem, "problem spec JSON")->required();
  opt->add_option("--checkpoint", oo.checkpoint, "pre-trained checkpoint");
  opt->add_option("--surrogate", oo.surrogate,
                  "ftdkl | gp | rf | random (default ftdkl)");
  opt->add_option("--out", oo.out_trace, "output trace (JSON lines)")
      ->required();
  opt->add_option("--budget", oo.budget, "total evaluations");
  opt->add_option("--n-init", oo.n_init, "random initial evaluations");
  opt->add_option("--seed", oo.seed, "random seed");
  opt->add_flag("--quiet", oo.quiet, "suppress progress output");
  add_config_flags(opt, opt_flags, opt_cfg);

  // zeroshot
  auto* zs = app.add_subcommand(
      "zeroshot", "rank a candidate table with a pre-trained model");
  ZeroshotOptions zo;
  zs->add_option("--checkpoint", zo.checkpoint, "pre-trained checkpoint")
      ->required();
  zs->add_option("--candidates", zo.candidates_csv, "candidate CSV")
      ->required();
  zs->add_option("--out", zo.out_csv, "output CSV")->required();
  zs->add_option("--k", zo.top_k, "how many recommendations");

  // bench
  auto* be = app.add_subcommand("bench", "run a benchmark experiment");
  BenchOptions bo_;
  be->add_option("--experiment", bo_.config_path, "experiment config JSON")
      ->required();
  be->add_option("--out-dir", bo_.out_dir, "output directory")->required();
  be->add_option("--jobs", bo_.jobs, "parallel runs (0: hardware)");
  be->add_flag("--quiet", bo_.quiet, "suppress progress output");

  // report
  auto* re = app.add_subcommand("report", "aggregate traces into metrics CSV");
  ReportOptions ro;
  re->add_option("--out", ro.out_csv, "output CSV")->required();
  re->add_option("--y-best", ro.y_best, "problem optimum (regret zero point)");
  re->add_option("--y-worst", ro.y_worst, "regret one point");
  re->add_option("traces", ro.traces, "trace files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (pre->parsed()) {
      po.config = build_config(pre_flags, pre_cfg);
      cmd_pretrain(po);
    } else if (opt->parsed()) {
      oo.config = build_config(opt_flags, opt_cfg);
      cmd_optimize(oo);
    } else if (zs->parsed()) {
      cmd_zeroshot(zo);
    } else if (be->parsed()) {
      cmd_bench(bo_);
    } else if (re->parsed()) {
      cmd_report(ro);
    }
    return kExitOk;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace ftbo::cli

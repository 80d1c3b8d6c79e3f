#include "ftbo/bo.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace ftbo::bo {

using nlohmann::json;

void AcquisitionConfig::validate() const {
  if (kappa < 0) throw std::invalid_argument("acquisition: kappa must be >= 0");
  if (population < 4)
    throw std::invalid_argument("acquisition: population must be >= 4");
  if (generations < 1) throw std::invalid_argument("acquisition: generations");
  if (crossover < 0 || crossover > 1)
    throw std::invalid_argument("acquisition: crossover in [0, 1]");
  if (diff_weight <= 0) throw std::invalid_argument("acquisition: diff_weight");
  if (polish_steps < 0) throw std::invalid_argument("acquisition: polish_steps");
}

double lcb(const gp::GaussianPrediction& pred, double kappa) {
  return pred.mean - kappa * pred.std;
}

enc::NamedRow vector_to_row(const data::ParamSpace& space, const Vector& x) {
  if (x.size() != static_cast<Eigen::Index>(space.size()))
    throw std::invalid_argument("vector_to_row: dimension mismatch");
  enc::NamedRow row;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const data::ParamDef& p = space.params[i];
    if (p.categorical)
      throw std::invalid_argument(
          "vector_to_row: categorical variables need a candidate table");
    row.push_numeric(p.name, x(static_cast<Eigen::Index>(i)));
  }
  return row;
}

Vector row_to_vector(const data::ParamSpace& space, const enc::NamedRow& row) {
  Vector x(static_cast<Eigen::Index>(space.size()));
  for (std::size_t i = 0; i < space.size(); ++i)
    x(static_cast<Eigen::Index>(i)) = row.numeric(space.params[i].name);
  return x;
}

Vector project_to_space(const data::ParamSpace& space, Vector x) {
  for (std::size_t i = 0; i < space.size(); ++i) {
    const data::ParamDef& p = space.params[i];
    double v = std::clamp(x(static_cast<Eigen::Index>(i)), p.lower, p.upper);
    if (p.integer) v = std::clamp(std::round(v), p.lower, p.upper);
    x(static_cast<Eigen::Index>(i)) = v;
  }
  return x;
}

namespace {

Vector random_point(const data::ParamSpace& space, std::mt19937_64& rng) {
  Vector x(static_cast<Eigen::Index>(space.size()));
  for (std::size_t i = 0; i < space.size(); ++i) {
    const data::ParamDef& p = space.params[i];
    std::uniform_real_distribution<double> u(p.lower, p.upper);
    x(static_cast<Eigen::Index>(i)) = u(rng);
  }
  return project_to_space(space, std::move(x));
}

}  // namespace

Vector de_minimize(const std::function<double(const Vector&)>& f,
                   const data::ParamSpace& space, const AcquisitionConfig& cfg,
                   std::mt19937_64& rng,
                   std::vector<std::pair<Vector, double>>* trajectory,
                   std::vector<double>* gen_best) {
  cfg.validate();
  if (space.empty()) throw std::invalid_argument("de_minimize: empty space");
  for (const data::ParamDef& p : space.params)
    if (p.categorical)
      throw std::invalid_argument("de_minimize: categorical variables "
                                  "are only supported with candidate tables");
  const int np = cfg.population;
  const Eigen::Index d = static_cast<Eigen::Index>(space.size());

  std::vector<Vector> pop(static_cast<std::size_t>(np));
  Vector fitness(np);
  const auto eval = [&](const Vector& x) {
    const double v = f(x);
    if (trajectory != nullptr) trajectory->emplace_back(x, v);
    return v;
  };
  for (int i = 0; i < np; ++i) {
    pop[static_cast<std::size_t>(i)] = random_point(space, rng);
    fitness(i) = eval(pop[static_cast<std::size_t>(i)]);
  }
  int best_i = 0;
  fitness.minCoeff(&best_i);
  if (gen_best != nullptr) gen_best->push_back(fitness(best_i));

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, np - 1);
  std::uniform_int_distribution<Eigen::Index> pick_dim(0, d - 1);
  for (int gen = 0; gen < cfg.generations; ++gen) {
    for (int i = 0; i < np; ++i) {
      int r1 = pick(rng);
      while (r1 == i) r1 = pick(rng);
      int r2 = pick(rng);
      while (r2 == i || r2 == r1) r2 = pick(rng);
      int r3 = pick(rng);
      while (r3 == i || r3 == r1 || r3 == r2) r3 = pick(rng);
      Vector mutant = pop[static_cast<std::size_t>(r1)] +
                      cfg.diff_weight * (pop[static_cast<std::size_t>(r2)] -
                                         pop[static_cast<std::size_t>(r3)]);
      Vector trial = pop[static_cast<std::size_t>(i)];
      const Eigen::Index jrand = pick_dim(rng);
      for (Eigen::Index j = 0; j < d; ++j)
        if (j == jrand || unit(rng) < cfg.crossover) trial(j) = mutant(j);
      trial = project_to_space(space, std::move(trial));
      const double tv = eval(trial);
      if (tv <= fitness(i)) {
        pop[static_cast<std::size_t>(i)] = std::move(trial);
        fitness(i) = tv;
      }
    }
    fitness.minCoeff(&best_i);
    if (gen_best != nullptr) gen_best->push_back(fitness(best_i));
  }

  Vector best = pop[static_cast<std::size_t>(best_i)];
  double best_v = fitness(best_i);

  // local random polish with decaying radius
  if (cfg.polish_steps > 0) {
    Vector range(d);
    for (std::size_t i = 0; i < space.size(); ++i)
      range(static_cast<Eigen::Index>(i)) =
          space.params[i].upper - space.params[i].lower;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int s = 0; s < cfg.polish_steps; ++s) {
      const double frac = static_cast<double>(s) /
                          std::max(1, cfg.polish_steps - 1);
      const double radius = 0.1 * std::pow(1e-2, frac);  // 0.1 -> 0.001
      Vector cand = best;
      for (Eigen::Index j = 0; j < d; ++j)
        cand(j) += radius * range(j) * gauss(rng);
      cand = project_to_space(space, std::move(cand));
      const double cv = eval(cand);
      if (cv < best_v) {
        best = std::move(cand);
        best_v = cv;
      }
    }
  }
  return best;
}

enc::NamedRow optimize_acquisition(Surrogate& model,
                                   const data::ParamSpace& space,
                                   const AcquisitionConfig& cfg) {
  cfg.validate();
  if (space.empty())
    throw std::invalid_argument("optimize_acquisition: empty space");
  for (const data::ParamDef& p : space.params)
    if (p.categorical)
      throw std::invalid_argument(
          "optimize_acquisition: categorical variables need a candidate table");
  std::mt19937_64 rng(cfg.seed);
  const int np = cfg.population;
  const Eigen::Index d = static_cast<Eigen::Index>(space.size());

  // one surrogate call per generation: encoder batching matters here
  const auto eval_batch = [&](const std::vector<Vector>& xs) {
    std::vector<enc::NamedRow> rows;
    rows.reserve(xs.size());
    for (const Vector& x : xs) rows.push_back(vector_to_row(space, x));
    const auto preds = model.predict(rows);
    std::vector<double> vals(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i)
      vals[i] = lcb(preds[i], cfg.kappa);
    return vals;
  };

  std::vector<Vector> pop(static_cast<std::size_t>(np));
  for (auto& x : pop) x = random_point(space, rng);
  std::vector<double> fitness = eval_batch(pop);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, np - 1);
  std::uniform_int_distribution<Eigen::Index> pick_dim(0, d - 1);
  for (int gen = 0; gen < cfg.generations; ++gen) {
    std::vector<Vector> trials(static_cast<std::size_t>(np));
    for (int i = 0; i < np; ++i) {
      int r1 = pick(rng);
      while (r1 == i) r1 = pick(rng);
      int r2 = pick(rng);
      while (r2 == i || r2 == r1) r2 = pick(rng);
      int r3 = pick(rng);
      while (r3 == i || r3 == r1 || r3 == r2) r3 = pick(rng);
      Vector mutant = pop[static_cast<std::size_t>(r1)] +
                      cfg.diff_weight * (pop[static_cast<std::size_t>(r2)] -
                                         pop[static_cast<std::size_t>(r3)]);
      Vector trial = pop[static_cast<std::size_t>(i)];
      const Eigen::Index jrand = pick_dim(rng);
      for (Eigen::Index j = 0; j < d; ++j)
        if (j == jrand || unit(rng) < cfg.crossover) trial(j) = mutant(j);
      trials[static_cast<std::size_t>(i)] =
          project_to_space(space, std::move(trial));
    }
    const std::vector<double> tv = eval_batch(trials);
    for (int i = 0; i < np; ++i)
      if (tv[static_cast<std::size_t>(i)] <= fitness[static_cast<std::size_t>(i)]) {
        pop[static_cast<std::size_t>(i)] = trials[static_cast<std::size_t>(i)];
        fitness[static_cast<std::size_t>(i)] = tv[static_cast<std::size_t>(i)];
      }
  }

  std::size_t best_i = 0;
  for (std::size_t i = 1; i < fitness.size(); ++i)
    if (fitness[i] < fitness[best_i]) best_i = i;
  Vector best = pop[best_i];
  double best_v = fitness[best_i];

  // random polish around the incumbent, proposals batched per radius level
  if (cfg.polish_steps > 0) {
    Vector range(d);
    for (std::size_t i = 0; i < space.size(); ++i)
      range(static_cast<Eigen::Index>(i)) =
          space.params[i].upper - space.params[i].lower;
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int chunk = std::max(1, np / 2);
    int done = 0;
    while (done < cfg.polish_steps) {
      const int count = std::min(chunk, cfg.polish_steps - done);
      const double frac = static_cast<double>(done) /
                          std::max(1, cfg.polish_steps - 1);
      const double radius = 0.1 * std::pow(1e-2, frac);  // 0.1 -> 0.001
      std::vector<Vector> cands(static_cast<std::size_t>(count));
      for (auto& cand : cands) {
        cand = best;
        for (Eigen::Index j = 0; j < d; ++j)
          cand(j) += radius * range(j) * gauss(rng);
        cand = project_to_space(space, std::move(cand));
      }
      const std::vector<double> cv = eval_batch(cands);
      for (int i = 0; i < count; ++i)
        if (cv[static_cast<std::size_t>(i)] < best_v) {
          best_v = cv[static_cast<std::size_t>(i)];
          best = cands[static_cast<std::size_t>(i)];
        }
      done += count;
    }
  }
  return vector_to_row(space, best);
}

double RunTrace::best() const {
  if (iters.empty()) throw std::runtime_error("trace has no iterations");
  return iters.back().best_so_far;
}

std::vector<double> RunTrace::best_series() const {
  std::vector<double> out;
  out.reserve(iters.size());
  for (const IterRecord& r : iters) out.push_back(r.best_so_far);
  return out;
}

namespace {

json row_to_json(const enc::NamedRow& row) {
  json j = json::object();
  for (std::size_t i = 0; i < row.names.size(); ++i) {
    if (row.values[i].is_categorical())
      j[row.names[i]] = row.values[i].cat;
    else
      j[row.names[i]] = row.values[i].num;
  }
  return j;
}

enc::NamedRow row_from_json(const json& j) {
  enc::NamedRow row;
  for (const auto& [k, v] : j.items()) {
    if (v.is_number_integer())
      row.push_categorical(k, v.get<int>());
    else
      row.push_numeric(k, v.get<double>());
  }
  return row;
}

}  // namespace

void TraceWriter::header(const RunTrace& t) {
  json j{{"record", "header"},
         {"version", 1},
         {"method", t.method},
         {"problem", t.problem},
         {"seed", t.seed},
         {"n_init", t.n_init},
         {"budget", t.budget}};
  (*out_) << j.dump() << "\n" << std::flush;
}

void TraceWriter::transfer_report(const transfer::TransferReport& r) {
  json mixed = json::array();
  for (const auto& m : r.mixed)
    mixed.push_back(json{{"name", m.name},
                         {"a", m.prov.source_a},
                         {"b", m.prov.source_b},
                         {"alpha", m.prov.alpha}});
  json j{{"record", "transfer"},
         {"seed", r.seed},
         {"copied", r.copied},
         {"mixed", mixed}};
  (*out_) << j.dump() << "\n" << std::flush;
}

void TraceWriter::iteration(const IterRecord& rec) {
  // wall-clock stays in memory only: trace files must be byte-identical
  // across reruns with the same seed
  json j{{"record", "iter"},
         {"iter", rec.iter},
         {"x", row_to_json(rec.x)},
         {"y", rec.y_raw},
         {"y_norm", rec.y_norm},
         {"best", rec.best_so_far}};
  if (rec.fit_score) j["fit_score"] = *rec.fit_score;
  (*out_) << j.dump() << "\n" << std::flush;
}

void TraceWriter::summary(const RunTrace& t) {
  double best = std::numeric_limits<double>::quiet_NaN();
  json best_x = json::object();
  if (!t.iters.empty()) {
    best = t.iters.back().best_so_far;
    for (const IterRecord& r : t.iters)
      if (r.y_raw == best) {
        best_x = row_to_json(r.x);
        break;
      }
  }
  json j{{"record", "summary"},
         {"evals", t.iters.size()},
         {"best", best},
         {"best_x", best_x}};
  (*out_) << j.dump() << "\n" << std::flush;
}

RunTrace read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open trace '" + path + "'");
  RunTrace t;
  std::string line;
  bool have_header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("trace '" + path + "' line " +
                                  std::to_string(line_no) + ": " + e.what());
    }
    const std::string rec = j.value("record", "");
    if (rec == "header") {
      t.method = j.value("method", "");
      t.problem = j.value("problem", "");
      t.seed = j.value("seed", 0ull);
      t.n_init = j.value("n_init", 0);
      t.budget = j.value("budget", 0);
      have_header = true;
    } else if (rec == "iter") {
      IterRecord r;
      r.iter = j.at("iter").get<int>();
      r.x = row_from_json(j.at("x"));
      r.y_raw = j.at("y").get<double>();
      r.y_norm = j.value("y_norm", 0.0);
      r.best_so_far = j.at("best").get<double>();
      if (j.contains("fit_score")) r.fit_score = j["fit_score"].get<double>();
      t.iters.push_back(std::move(r));
    } else if (rec == "transfer") {
      transfer::TransferReport rep;
      rep.seed = j.value("seed", 0ull);
      for (const auto& c : j.value("copied", json::array()))
        rep.copied.push_back(c.get<std::string>());
      for (const auto& m : j.value("mixed", json::array()))
        rep.mixed.push_back({m.value("name", ""),
                             {m.value("a", ""), m.value("b", ""),
                              m.value("alpha", 0.0)}});
      t.transfer = std::move(rep);
    }
    // summary records are derivable; ignored on read
  }
  if (!have_header)
    throw std::invalid_argument("trace '" + path + "': missing header record");
  return t;
}

RunTrace bo_loop(const Objective& objective, const data::ParamSpace& space,
                 Surrogate* surrogate, const BoConfig& cfg,
                 const std::vector<enc::NamedRow>* candidates,
                 TraceWriter* writer) {
  if (cfg.budget < 1) throw std::invalid_argument("bo_loop: budget must be >= 1");
  if (cfg.n_init < 1) throw std::invalid_argument("bo_loop: n_init must be >= 1");
  if (space.empty() && candidates == nullptr)
    throw std::invalid_argument("bo_loop: empty space");
  if (candidates != nullptr && candidates->empty())
    throw std::invalid_argument("bo_loop: empty candidate table");

  RunTrace trace;
  trace.method = cfg.method_label.empty()
                     ? (surrogate ? surrogate->name() : "random")
                     : cfg.method_label;
  trace.problem = cfg.problem_label;
  trace.seed = cfg.seed;
  trace.n_init = cfg.n_init;
  trace.budget = cfg.budget;
  if (writer != nullptr) writer->header(trace);

  std::mt19937_64 rng(cfg.seed);
  std::vector<enc::NamedRow> xs;
  std::vector<double> ys_raw;
  std::vector<int> pool;  // remaining candidate indices (tabular mode)
  if (candidates != nullptr) {
    pool.resize(candidates->size());
    for (std::size_t i = 0; i < pool.size(); ++i)
      pool[i] = static_cast<int>(i);
  }

  double best = std::numeric_limits<double>::infinity();
  const auto evaluate = [&](const enc::NamedRow& x, int iter,
                            std::optional<double> fit_score,
                            double seconds_so_far) {
    double y;
    try {
      y = objective(x);
    } catch (const std::exception& e) {
      throw std::runtime_error("objective failed at iteration " +
                               std::to_string(iter) + ": " + e.what());
    }
    xs.push_back(x);
    ys_raw.push_back(y);
    best = std::min(best, y);
    IterRecord rec;
    rec.iter = iter;
    rec.x = x;
    rec.y_raw = y;
    rec.best_so_far = best;
    rec.seconds = seconds_so_far;
    rec.fit_score = fit_score;
    trace.iters.push_back(rec);
  };

  const auto draw_candidate_index = [&](std::mt19937_64& r) {
    std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
    const std::size_t at = d(r);
    const int idx = pool[at];
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(at));
    return idx;
  };

  const int n_init = std::min(cfg.n_init, cfg.budget);
  for (int i = 0; i < n_init; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    enc::NamedRow x;
    if (candidates != nullptr) {
      if (pool.empty()) break;
      x = (*candidates)[static_cast<std::size_t>(draw_candidate_index(rng))];
    } else {
      x = vector_to_row(space, random_point(space, rng));
    }
    const double sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    evaluate(x, i + 1, std::nullopt, sec);
    if (writer != nullptr) writer->iteration(trace.iters.back());
  }

  std::mt19937_64 acq_rng(cfg.seed ^ 0xd1b54a32d192ed03ull);
  for (int iter = n_init; iter < cfg.budget; ++iter) {
    if (candidates != nullptr && pool.empty()) break;
    const auto t0 = std::chrono::steady_clock::now();

    // (re)normalize the target objective and refit the surrogate
    std::optional<double> fit_score;
    enc::NamedRow x_next;
    if (surrogate != nullptr) {
      const data::YNormalizer yn = data::YNormalizer::fit(
          Eigen::Map<const Vector>(ys_raw.data(),
                                   static_cast<Eigen::Index>(ys_raw.size())));
      Vector y_norm(static_cast<Eigen::Index>(ys_raw.size()));
      for (std::size_t i = 0; i < ys_raw.size(); ++i)
        y_norm(static_cast<Eigen::Index>(i)) = yn.apply(ys_raw[i]);
      for (IterRecord& r : trace.iters) r.y_norm = yn.apply(r.y_raw);
      surrogate->fit(xs, y_norm);
      fit_score = surrogate->fit_score();

      if (candidates != nullptr) {
        std::vector<enc::NamedRow> remaining;
        remaining.reserve(pool.size());
        for (int idx : pool)
          remaining.push_back((*candidates)[static_cast<std::size_t>(idx)]);
        const auto preds = surrogate->predict(remaining);
        std::size_t best_at = 0;
        double best_a = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < preds.size(); ++i) {
          const double a = lcb(preds[i], cfg.acq.kappa);
          if (a < best_a) {
            best_a = a;
            best_at = i;
          }
        }
        x_next = remaining[best_at];
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best_at));
      } else {
        AcquisitionConfig acq = cfg.acq;
        acq.seed = acq_rng();
        x_next = optimize_acquisition(*surrogate, space, acq);
      }
    } else {
      if (candidates != nullptr)
        x_next =
            (*candidates)[static_cast<std::size_t>(draw_candidate_index(rng))];
      else
        x_next = vector_to_row(space, random_point(space, rng));
    }

    const double sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    evaluate(x_next, iter + 1, fit_score, sec);
    if (writer != nullptr) writer->iteration(trace.iters.back());
  }
  if (writer != nullptr) writer->summary(trace);
  return trace;
}

std::vector<int> zero_shot_batch(surrogate::FtDklModel& model,
                                 const std::vector<enc::NamedRow>& candidates,
                                 int k) {
  if (candidates.empty())
    throw std::invalid_argument("zero_shot_batch: no candidates");
  if (k < 1 || k > static_cast<int>(candidates.size()))
    throw std::invalid_argument("zero_shot_batch: k out of range");
  const auto preds = surrogate::predict(model, candidates);
  std::vector<int> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return preds[static_cast<std::size_t>(a)].mean <
           preds[static_cast<std::size_t>(b)].mean;
  });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

// ---- adapters ----

FtDklSurrogate::FtDklSurrogate(surrogate::FtDklModel model,
                               surrogate::TrainConfig train, std::string label,
                               bool init_head_from_data)
    : model_(std::move(model)),
      train_(train),
      label_(std::move(label)),
      init_head_from_data_(init_head_from_data) {}

void FtDklSurrogate::fit(const std::vector<enc::NamedRow>& x, const Vector& y) {
  if (init_head_from_data_) {
    // Cold start: place inducing points and the lengthscale on the actual
    // encoder outputs before the first ELBO steps.
    const Matrix z = surrogate::encode_rows(model_, x);
    std::mt19937_64 rng(train_.seed + 17);
    gp::KernelValues kv = model_.kernel.values();
    std::vector<double> d;
    for (Eigen::Index i = 0; i < z.rows(); ++i)
      for (Eigen::Index j = i + 1; j < z.rows(); ++j)
        d.push_back((z.row(i) - z.row(j)).norm());
    if (!d.empty()) {
      std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
      kv.lengthscale = std::max(1e-3, d[d.size() / 2]);
    }
    model_.kernel.set(kv);
    const int m = static_cast<int>(model_.svgp.inducing_count());
    model_.svgp = gp::init_svgp(z, m, kv, rng);
    init_head_from_data_ = false;
  }
  last_elbo_ = surrogate::finetune(model_, x, y, train_.finetune_steps, train_);
}

std::vector<gp::GaussianPrediction> FtDklSurrogate::predict(
    const std::vector<enc::NamedRow>& x) {
  return surrogate::predict(model_, x);
}

Matrix GpSurrogate::rows_to_matrix(const std::vector<enc::NamedRow>& x) const {
  if (x.empty()) throw std::invalid_argument("GpSurrogate: no rows");
  Matrix m(static_cast<Eigen::Index>(x.size()),
           static_cast<Eigen::Index>(names_.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < names_.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          x[i].numeric(names_[j]);
  return m;
}

void GpSurrogate::fit(const std::vector<enc::NamedRow>& x, const Vector& y) {
  if (x.empty()) throw std::invalid_argument("GpSurrogate: no data");
  names_ = x.front().names;
  model_.fit(rows_to_matrix(x), y);
}

std::vector<gp::GaussianPrediction> GpSurrogate::predict(
    const std::vector<enc::NamedRow>& x) {
  return model_.predict(rows_to_matrix(x));
}

void RfSurrogate::fit(const std::vector<enc::NamedRow>& x, const Vector& y) {
  if (x.empty()) throw std::invalid_argument("RfSurrogate: no data");
  names_ = x.front().names;
  Matrix m(static_cast<Eigen::Index>(x.size()),
           static_cast<Eigen::Index>(names_.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < names_.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          x[i].numeric(names_[j]);
  forest_ = rf::RandomForest(cfg_);
  forest_.fit(m, y);
}

std::vector<gp::GaussianPrediction> RfSurrogate::predict(
    const std::vector<enc::NamedRow>& x) {
  Matrix m(static_cast<Eigen::Index>(x.size()),
           static_cast<Eigen::Index>(names_.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < names_.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          x[i].numeric(names_[j]);
  return forest_.predict(m);
}

}  // namespace ftbo::bo

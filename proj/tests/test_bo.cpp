#include "ftbo/bo.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace ftbo;
using diff::Vector;
using gp::GaussianPrediction;

namespace {

data::ParamSpace box2(double lo = -1.0, double hi = 1.0) {
  data::ParamSpace s;
  s.params.push_back(data::ParamDef::box("x1", lo, hi));
  s.params.push_back(data::ParamDef::box("x2", lo, hi));
  return s;
}

// stub surrogate with an analytic mean and fixed std
class StubSurrogate : public bo::Surrogate {
 public:
  StubSurrogate(std::function<double(const Vector&)> mean, double std_value,
                const data::ParamSpace& space)
      : mean_(std::move(mean)), std_(std_value), space_(space) {}
  void fit(const std::vector<enc::NamedRow>&, const Vector&) override {}
  std::vector<GaussianPrediction> predict(
      const std::vector<enc::NamedRow>& x) override {
    std::vector<GaussianPrediction> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      out[i] = {mean_(bo::row_to_vector(space_, x[i])), std_};
    return out;
  }
  std::string name() const override { return "stub"; }

 private:
  std::function<double(const Vector&)> mean_;
  double std_;
  data::ParamSpace space_;
};

}  // namespace

TEST_SUITE_BEGIN("bo");

TEST_CASE("lcb basics") {
  CHECK(bo::lcb({0.0, 1.0}, 3.0) == doctest::Approx(-3.0));
  CHECK(bo::lcb({1.5, 0.0}, 3.0) == doctest::Approx(1.5));
  const bo::AcquisitionConfig def;
  CHECK(def.kappa == 3.0);  // experiment default

  // monotone decreasing in s for kappa > 0
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int i = 0; i < 100; ++i) {
    const double m = u(rng) - 1.0;
    const double s1 = u(rng);
    const double s2 = s1 + u(rng) + 1e-6;
    CHECK(bo::lcb({m, s2}, 3.0) < bo::lcb({m, s1}, 3.0));
  }
}

TEST_CASE("optimize_acquisition finds the minimum of a quadratic stub") {
  const data::ParamSpace space = box2();
  Vector c(2);
  c << 0.31, -0.62;
  StubSurrogate stub([c](const Vector& x) { return (x - c).squaredNorm(); },
                     0.0, space);
  bo::AcquisitionConfig cfg;
  cfg.seed = 5;
  const enc::NamedRow best = bo::optimize_acquisition(stub, space, cfg);
  CHECK(std::abs(best.numeric("x1") - c(0)) < 0.05);
  CHECK(std::abs(best.numeric("x2") - c(1)) < 0.05);
}

TEST_CASE("optimize_acquisition stays in bounds for a constant predictor") {
  const data::ParamSpace space = box2(0.5, 2.0);
  StubSurrogate stub([](const Vector&) { return 1.0; }, 0.0, space);
  bo::AcquisitionConfig cfg;
  cfg.seed = 7;
  cfg.generations = 5;
  const enc::NamedRow best = bo::optimize_acquisition(stub, space, cfg);
  CHECK(space.contains(best));
}

TEST_CASE("optimize_acquisition is deterministic given the seed") {
  const data::ParamSpace space = box2();
  StubSurrogate stub(
      [](const Vector& x) { return std::sin(3 * x(0)) + x.squaredNorm(); }, 0.1,
      space);
  bo::AcquisitionConfig cfg;
  cfg.seed = 11;
  cfg.generations = 12;
  const auto a = bo::optimize_acquisition(stub, space, cfg);
  const auto b = bo::optimize_acquisition(stub, space, cfg);
  CHECK(a.numeric("x1") == b.numeric("x1"));
  CHECK(a.numeric("x2") == b.numeric("x2"));
}

TEST_CASE("kappa 0 reduces to pure mean minimization") {
  const data::ParamSpace space = box2();
  const auto mean = [](const Vector& x) {
    return (x - Vector::Constant(2, 0.2)).squaredNorm();
  };
  StubSurrogate with_std(mean, 0.7, space);
  StubSurrogate no_std(mean, 0.0, space);
  bo::AcquisitionConfig cfg;
  cfg.kappa = 0.0;
  cfg.seed = 13;
  cfg.generations = 20;
  const auto a = bo::optimize_acquisition(with_std, space, cfg);
  const auto b = bo::optimize_acquisition(no_std, space, cfg);
  CHECK(a.numeric("x1") == b.numeric("x1"));  // constant std is invisible at k=0
  CHECK(a.numeric("x2") == b.numeric("x2"));
}

TEST_CASE("integer dimensions land on the grid") {
  data::ParamSpace space;
  data::ParamDef d = data::ParamDef::box("n", 0.0, 10.0);
  d.integer = true;
  space.params.push_back(d);
  space.params.push_back(data::ParamDef::box("x", -1.0, 1.0));
  StubSurrogate stub(
      [](const Vector& x) { return std::abs(x(0) - 3.4) + x(1) * x(1); }, 0.0,
      space);
  bo::AcquisitionConfig cfg;
  cfg.seed = 17;
  cfg.generations = 15;
  const auto best = bo::optimize_acquisition(stub, space, cfg);
  const double n = best.numeric("n");
  CHECK(n == std::round(n));
  CHECK(n == 3.0);  // grid point closest to 3.4
}

TEST_CASE("bo_loop: budget equal to n_init yields only random points") {
  const data::ParamSpace space = box2();
  bo::BoConfig cfg;
  cfg.n_init = 5;
  cfg.budget = 5;
  cfg.seed = 19;
  int calls = 0;
  const auto trace = bo::bo_loop(
      [&](const enc::NamedRow& r) {
        ++calls;
        return r.numeric("x1");
      },
      space, nullptr, cfg);
  CHECK(calls == 5);
  CHECK(trace.iters.size() == 5);
  for (const auto& it : trace.iters) CHECK(space.contains(it.x));
}

TEST_CASE("bo_loop: best-so-far is non-increasing and failures carry context") {
  const data::ParamSpace space = box2();
  bo::BoConfig cfg;
  cfg.n_init = 4;
  cfg.budget = 12;
  cfg.seed = 23;
  cfg.acq.generations = 5;
  cfg.acq.population = 8;
  cfg.acq.polish_steps = 10;
  StubSurrogate stub([](const Vector& x) { return x.squaredNorm(); }, 0.05,
                     box2());
  const auto trace = bo::bo_loop(
      [](const enc::NamedRow& r) {
        const double a = r.numeric("x1"), b = r.numeric("x2");
        return a * a + b * b;
      },
      space, &stub, cfg);
  for (std::size_t i = 1; i < trace.iters.size(); ++i)
    CHECK(trace.iters[i].best_so_far <= trace.iters[i - 1].best_so_far);

  bool threw = false;
  try {
    bo::bo_loop(
        [](const enc::NamedRow&) -> double {
          throw std::runtime_error("boom");
        },
        space, nullptr, cfg);
  } catch (const std::runtime_error& e) {
    threw = true;
    CHECK(std::string(e.what()).find("iteration 1") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("bo_loop with a GP surrogate beats the initial design on a convex 1d objective") {
  data::ParamSpace space;
  space.params.push_back(data::ParamDef::box("x", -2.0, 2.0));
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    bo::GpSurrogate gp_model;
    bo::BoConfig cfg;
    cfg.n_init = 4;
    cfg.budget = 14;
    cfg.seed = seed;
    cfg.acq.population = 16;
    cfg.acq.generations = 12;
    cfg.acq.polish_steps = 20;
    const auto trace = bo::bo_loop(
        [](const enc::NamedRow& r) {
          const double x = r.numeric("x");
          return (x - 0.7) * (x - 0.7);
        },
        space, &gp_model, cfg);
    const double after_init = trace.iters[3].best_so_far;
    if (trace.iters.back().best_so_far < after_init) ++wins;
  }
  CHECK(wins >= 4);
}

TEST_CASE("bo_loop tabular mode only suggests candidate rows") {
  data::ParamSpace space = box2();
  std::vector<enc::NamedRow> candidates;
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 40; ++i) {
    enc::NamedRow r;
    r.push_numeric("x1", u(rng));
    r.push_numeric("x2", u(rng));
    candidates.push_back(r);
  }
  StubSurrogate stub([](const Vector& x) { return x.squaredNorm(); }, 0.1,
                     space);
  bo::BoConfig cfg;
  cfg.n_init = 3;
  cfg.budget = 10;
  cfg.seed = 31;
  const auto trace = bo::bo_loop(
      [](const enc::NamedRow& r) { return r.numeric("x1"); }, space, &stub,
      cfg, &candidates);
  CHECK(trace.iters.size() == 10);
  for (const auto& it : trace.iters) {
    bool found = false;
    for (const auto& c : candidates)
      if (c.values[0].num == it.x.values[0].num &&
          c.values[1].num == it.x.values[1].num)
        found = true;
    CHECK(found);
  }
  // no candidate suggested twice
  for (std::size_t i = 0; i < trace.iters.size(); ++i)
    for (std::size_t j = i + 1; j < trace.iters.size(); ++j)
      CHECK((trace.iters[i].x.values[0].num != trace.iters[j].x.values[0].num ||
             trace.iters[i].x.values[1].num != trace.iters[j].x.values[1].num));
}

TEST_CASE("trace writer round-trips through the reader") {
  const data::ParamSpace space = box2();
  bo::BoConfig cfg;
  cfg.n_init = 2;
  cfg.budget = 4;
  cfg.seed = 37;
  cfg.acq.population = 6;
  cfg.acq.generations = 3;
  cfg.acq.polish_steps = 5;
  cfg.problem_label = "toy";
  StubSurrogate stub([](const Vector& x) { return x.squaredNorm(); }, 0.2,
                     box2());

  const auto path = (std::filesystem::temp_directory_path() /
                     ("ftbo_trace_" + std::to_string(std::random_device{}())))
                        .string();
  {
    std::ofstream out(path);
    bo::TraceWriter writer(out);
    bo::bo_loop([](const enc::NamedRow& r) { return r.numeric("x1"); }, space,
                &stub, cfg, nullptr, &writer);
  }
  const bo::RunTrace back = bo::read_trace(path);
  CHECK(back.problem == "toy");
  CHECK(back.method == "stub");
  CHECK(back.iters.size() == 4);
  CHECK(back.n_init == 2);
  for (std::size_t i = 1; i < back.iters.size(); ++i)
    CHECK(back.iters[i].best_so_far <= back.iters[i - 1].best_so_far);
  std::filesystem::remove(path);
}

TEST_CASE("rf surrogate fits and predicts with spread") {
  std::mt19937_64 rng(41);
  std::vector<enc::NamedRow> xs;
  Vector y(30);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 30; ++i) {
    enc::NamedRow r;
    const double a = u(rng), b = u(rng);
    r.push_numeric("x1", a);
    r.push_numeric("x2", b);
    xs.push_back(r);
    y(i) = a * a + 0.5 * b;
  }
  bo::RfSurrogate rf_model;
  rf_model.fit(xs, y);
  const auto preds = rf_model.predict({xs[0], xs[1]});
  CHECK(preds.size() == 2);
  for (const auto& p : preds) {
    CHECK(std::isfinite(p.mean));
    CHECK(p.std >= 0.0);
  }
}

TEST_SUITE_END();

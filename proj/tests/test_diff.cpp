#include "ftbo/diff.hpp"
#include "ftbo/optim.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <random>

using namespace ftbo;
using diff::Matrix;
using diff::Parameter;
using diff::Tape;
using diff::Var;
using diff::Vector;
using test::check_gradients;
using test::random_matrix;
using test::random_spd;

TEST_SUITE_BEGIN("diff");

TEST_CASE("quadratic gradient") {
  Matrix p0(2, 1);
  p0 << 1.0, 2.0;
  Parameter p(p0);
  Tape tape;
  Var loss = tape.sum(tape.square(tape.param(p)));
  tape.backward(loss);
  CHECK(p.grad(0, 0) == doctest::Approx(2.0));
  CHECK(p.grad(1, 0) == doctest::Approx(4.0));
}

TEST_CASE("constant loss leaves gradients zero") {
  Parameter p(Matrix::Ones(3, 2));
  Tape tape;
  (void)tape.param(p);  // registered, but loss does not depend on it
  Var loss = tape.sum(tape.constant(Matrix::Ones(1, 1)));
  tape.backward(loss);
  CHECK(p.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Parameter p(Matrix::Ones(2, 2));
  Tape tape;
  Var v = tape.param(p);
  CHECK_THROWS_AS(tape.backward(v), std::invalid_argument);
}

TEST_CASE("backward zeroes gradients between calls") {
  Parameter p(Matrix::Ones(2, 1));
  for (int rep = 0; rep < 2; ++rep) {
    Tape tape;
    Var loss = tape.sum(tape.square(tape.param(p)));
    tape.backward(loss);
    CHECK(p.grad(0, 0) == doctest::Approx(2.0));  // not 4.0 on the second run
  }
}

TEST_CASE("three layer MLP matches finite differences") {
  std::mt19937_64 rng(7);
  const int d_in = 4, hidden = 5, d_out = 3;
  Parameter w1(random_matrix(d_in, hidden, rng, 0.5));
  Parameter b1(random_matrix(1, hidden, rng, 0.1));
  Parameter w2(random_matrix(hidden, hidden, rng, 0.5));
  Parameter b2(random_matrix(1, hidden, rng, 0.1));
  Parameter w3(random_matrix(hidden, d_out, rng, 0.5));
  Parameter b3(random_matrix(1, d_out, rng, 0.1));
  const Matrix x = random_matrix(6, d_in, rng);

  auto build = [&](Tape& t) -> Var {
    Var h = t.gelu(t.add_rowvec(t.matmul(t.constant(x), t.param(w1)), t.param(b1)));
    h = t.gelu(t.add_rowvec(t.matmul(h, t.param(w2)), t.param(b2)));
    h = t.add_rowvec(t.matmul(h, t.param(w3)), t.param(b3));
    return t.sum(t.square(h));
  };
  auto res = check_gradients(build, {&w1, &b1, &w2, &b2, &w3, &b3});
  CHECK_MESSAGE(res.ok, res.worst_at);
}

TEST_CASE("elementwise and reduction ops match finite differences") {
  std::mt19937_64 rng(11);
  Parameter a(Matrix(random_matrix(3, 4, rng).cwiseAbs().array() + 0.5));
  Parameter b(random_matrix(3, 4, rng));
  Parameter s(Matrix::Ones(1, 1) * 1.7);

  auto build = [&](Tape& t) -> Var {
    Var x = t.param(a);
    Var y = t.param(b);
    Var sv = t.param(s);
    Var z = t.mul(t.log(x), t.softplus(y));
    z = t.add_scalar(z, sv);
    z = t.div_scalar(z, t.param(s));
    Var w = t.exp(t.scale(y, 0.3));
    return t.add(t.mean(t.mul(z, w)), t.sum(t.square(t.transpose(x))));
  };
  auto res = check_gradients(build, {&a, &b, &s});
  CHECK_MESSAGE(res.ok, res.worst_at);
}

TEST_CASE("structural ops match finite differences") {
  std::mt19937_64 rng(13);
  Parameter a(random_matrix(4, 3, rng));
  Parameter b(random_matrix(2, 3, rng));
  auto build = [&](Tape& t) -> Var {
    Var cat = t.concat_rows({t.param(a), t.param(b)});
    Var g = t.gather_rows(cat, {0, 5, 2, 2});
    return t.sum(t.square(g));
  };
  auto res = check_gradients(build, {&a, &b});
  CHECK_MESSAGE(res.ok, res.worst_at);
}

TEST_CASE("layer norm matches finite differences") {
  std::mt19937_64 rng(17);
  Parameter x(random_matrix(5, 6, rng));
  Parameter gamma(Matrix(random_matrix(1, 6, rng, 0.3).array() + 1.0));
  Parameter beta(random_matrix(1, 6, rng, 0.2));
  auto build = [&](Tape& t) -> Var {
    Var y = t.layer_norm_rows(t.param(x), t.param(gamma), t.param(beta));
    return t.sum(t.mul(y, y));
  };
  auto res = check_gradients(build, {&x, &gamma, &beta});
  CHECK_MESSAGE(res.ok, res.worst_at);
}

TEST_CASE("self attention matches finite differences") {
  std::mt19937_64 rng(19);
  const int batch = 2, tokens = 3, d = 4, heads = 2;
  Parameter q(random_matrix(batch * tokens, d, rng, 0.7));
  Parameter k(random_matrix(batch * tokens, d, rng, 0.7));
  Parameter v(random_matrix(batch * tokens, d, rng, 0.7));
  auto build = [&](Tape& t) -> Var {
    Var o = t.self_attention(t.param(q), t.param(k), t.param(v), batch, tokens,
                             heads);
    return t.sum(t.square(o));
  };
  auto res = check_gradients(build, {&q, &k, &v});
  CHECK_MESSAGE(res.ok, res.worst_at);
}

TEST_CASE("matern+linear gram matches finite differences") {
  std::mt19937_64 rng(23);
  Parameter a(random_matrix(4, 3, rng));
  Parameter b(random_matrix(5, 3, rng));
  Parameter tl(Matrix::Ones(1, 1) * 0.2);
  Parameter tm(Matrix::Ones(1, 1) * 0.1);
  Parameter tv(Matrix::Ones(1, 1) * -0.5);
  const Matrix wmat = random_matrix(4, 5, rng);
  auto build = [&](Tape& t) -> Var {
    Var gram = t.matern_linear_gram(t.param(a), t.param(b),
                                    t.softplus(t.param(tl)),
                                    t.softplus(t.param(tm)),
                                    t.softplus(t.param(tv)));
    return t.sum(t.mul(gram, t.constant(wmat)));
  };
  auto res = check_gradients(build, {&a, &b, &tl, &tm, &tv});
  CHECK_MESSAGE(res.ok, res.worst_at);

  // symmetric case: both sides are the same node
  auto build_sym = [&](Tape& t) -> Var {
    Var av = t.param(a);
    Var gram = t.matern_linear_gram(av, av, t.softplus(t.param(tl)),
                                    t.softplus(t.param(tm)),
                                    t.softplus(t.param(tv)));
    return t.sum(gram);
  };
  auto res2 = check_gradients(build_sym, {&a, &tl, &tm, &tv});
  CHECK_MESSAGE(res2.ok, res2.worst_at);
}

TEST_CASE("kernel diagonal matches finite differences") {
  std::mt19937_64 rng(29);
  Parameter a(random_matrix(5, 3, rng));
  Parameter tm(Matrix::Ones(1, 1) * 0.4);
  Parameter tv(Matrix::Ones(1, 1) * -0.1);
  const Matrix w = random_matrix(5, 1, rng);
  auto build = [&](Tape& t) -> Var {
    Var d = t.matern_linear_diag(t.param(a), t.softplus(t.param(tm)),
                                 t.softplus(t.param(tv)));
    return t.sum(t.mul(d, t.constant(w)));
  };
  auto res = check_gradients(build, {&a, &tm, &tv});
  CHECK_MESSAGE(res.ok, res.worst_at);
}

TEST_CASE("cholesky and triangular solves match finite differences") {
  std::mt19937_64 rng(31);
  Parameter s(random_spd(4, rng));
  Parameter b(random_matrix(4, 2, rng));
  Parameter m(random_matrix(4, 1, rng));
  auto build = [&](Tape& t) -> Var {
    Var l = t.cholesky(t.param(s));
    Var x = t.solve_lower(l, t.param(b));
    Var y = t.solve_lower_t(l, t.param(m));
    Var ld = t.log_diag_sum(l);
    return t.add(t.add(t.sum(t.square(x)), t.sum(t.square(y))), ld);
  };
  auto res = check_gradients(build, {&s, &b, &m});
  CHECK_MESSAGE(res.ok, res.worst_at);
}

TEST_CASE("column reductions match finite differences") {
  std::mt19937_64 rng(37);
  Parameter a(random_matrix(4, 6, rng));
  Parameter s(random_spd(4, rng));
  const Matrix w = random_matrix(6, 1, rng);
  auto build = [&](Tape& t) -> Var {
    Var q = t.quadform_cols(t.param(s), t.param(a));
    Var n = t.sqnorm_cols(t.param(a));
    return t.add(t.sum(t.mul(q, t.constant(w))), t.sum(t.mul(n, t.constant(w))));
  };
  auto res = check_gradients(build, {&a, &s});
  CHECK_MESSAGE(res.ok, res.worst_at);
}

TEST_CASE("trace and clamp ops") {
  std::mt19937_64 rng(41);
  Parameter s(random_spd(3, rng));
  auto build = [&](Tape& t) -> Var {
    return t.trace(t.param(s));
  };
  auto res = check_gradients(build, {&s});
  CHECK_MESSAGE(res.ok, res.worst_at);

  Parameter x(Matrix::Ones(2, 2));
  Tape t2;
  Var c = t2.clamp_min(t2.scale(t2.param(x), -1.0), -0.5);
  CHECK(c.value()(0, 0) == doctest::Approx(-0.5));
  Var loss = t2.sum(c);
  t2.backward(loss);
  CHECK(x.grad(0, 0) == 0.0);  // clamped entries pass no gradient
}

TEST_CASE("determinism: same inputs give bit-identical results") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Parameter w(random_matrix(8, 8, rng));
    Tape t;
    Var z = t.matmul(t.param(w), t.param(w));
    Var loss = t.sum(t.gelu(z));
    t.backward(loss);
    return std::make_pair(loss.value()(0, 0), Matrix(w.grad));
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("optim");

TEST_CASE("adamw: zero gradient and zero weight decay keep params") {
  Parameter p(Matrix::Ones(2, 2) * 3.0);
  diff::AdamW opt({&p}, 0.1, 0.0);
  p.zero_grad();
  opt.step();
  CHECK((p.value.array() == 3.0).all());
}

TEST_CASE("adamw: constant positive gradient decreases a scalar") {
  Parameter p(Matrix::Ones(1, 1) * 2.0);
  diff::AdamW opt({&p}, 0.05, 0.0);
  double prev = p.value(0, 0);
  for (int i = 0; i < 10; ++i) {
    p.grad = Matrix::Ones(1, 1);
    opt.step();
    CHECK(p.value(0, 0) < prev);
    prev = p.value(0, 0);
  }
}

TEST_CASE("adamw: converges on (p-3)^2") {
  Parameter p(Matrix::Zero(1, 1));
  diff::AdamW opt({&p}, 0.1, 0.0);
  for (int i = 0; i < 100; ++i) {
    Tape t;
    Var d = t.add_scalar(t.param(p), t.scalar(-3.0));
    Var loss = t.sum(t.square(d));
    t.backward(loss);
    opt.step();
  }
  CHECK(std::abs(p.value(0, 0) - 3.0) < 0.1);
}

TEST_CASE("adamw: shape mismatch throws") {
  Parameter p(Matrix::Ones(2, 2));
  diff::AdamW opt({&p}, 0.1);
  p.grad = Matrix::Ones(1, 1);
  CHECK_THROWS_AS(opt.step(), std::invalid_argument);
}

TEST_CASE("natural gradient: step 0 is the identity") {
  std::mt19937_64 rng(5);
  Vector m = Vector::Ones(3);
  Matrix s = random_spd(3, rng);
  const Vector m0 = m;
  const Matrix s0 = s;
  diff::natural_gradient_step(m, s, Vector::Ones(3), Matrix::Identity(3, 3),
                              0.0);
  CHECK((m - m0).cwiseAbs().maxCoeff() == 0.0);
  CHECK((s - s0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("natural gradient: rejects non-SPD covariance") {
  Vector m = Vector::Zero(2);
  Matrix s(2, 2);
  s << 1.0, 2.0, 2.0, 1.0;  // indefinite
  CHECK_THROWS_AS(diff::natural_gradient_step(m, s, Vector::Zero(2),
                                              Matrix::Zero(2, 2), 0.5),
                  std::invalid_argument);
}

TEST_CASE("natural gradient: S stays choleskyable after steps") {
  std::mt19937_64 rng(21);
  Vector m = Vector::Zero(4);
  Matrix s = random_spd(4, rng);
  for (int i = 0; i < 5; ++i) {
    Vector gm = test::random_matrix(4, 1, rng).col(0);
    Matrix gs = 0.1 * random_spd(4, rng);
    gs *= -1.0;  // push covariance down
    diff::natural_gradient_step(m, s, gm, gs, 0.5);
    Eigen::LLT<Matrix> llt(s);
    CHECK(llt.info() == Eigen::Success);
  }
}

TEST_SUITE_END();

#include "ftbo/gp.hpp"

#include "ftbo/optim.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>

namespace ftbo::gp {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;
constexpr double kLog2Pi = 1.8378770664093453;

Eigen::LLT<Matrix> noise_llt(const Matrix& k, double noise_var) {
  // The noise term is usually regularization enough; fall back to the
  // standard jitter ladder only when it is not.
  for (double jitter : {0.0, 1e-6, 1e-4}) {
    Matrix sys = k;
    sys.diagonal().array() += noise_var + jitter;
    Eigen::LLT<Matrix> llt(sys);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw std::runtime_error("gp: Cholesky failed after jitter retries");
}

void warn_negative_variance(double v) {
  if (v < -1e-10)
    std::cerr << "[ftbo::gp] warning: clamping negative predictive variance "
              << v << "\n";
}

}  // namespace

double KernelParams::softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double KernelParams::inv_softplus(double y) {
  if (y <= 0.0)
    throw std::invalid_argument("inv_softplus: value must be positive");
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

KernelParams::KernelParams() : KernelParams(KernelValues{}) {}

KernelParams::KernelParams(const KernelValues& v) {
  theta_lengthscale = Parameter(Matrix::Zero(1, 1));
  theta_matern_var = Parameter(Matrix::Zero(1, 1));
  theta_linear_var = Parameter(Matrix::Zero(1, 1));
  theta_noise = Parameter(Matrix::Zero(1, 1));
  set(v);
}

void KernelParams::set(const KernelValues& v) {
  theta_lengthscale.value(0, 0) = inv_softplus(v.lengthscale);
  theta_matern_var.value(0, 0) = inv_softplus(v.matern_var);
  theta_linear_var.value(0, 0) = inv_softplus(v.linear_var);
  if (v.noise_var <= kNoiseFloor)
    throw std::invalid_argument("noise variance must exceed the floor");
  theta_noise.value(0, 0) = inv_softplus(v.noise_var - kNoiseFloor);
}

KernelValues KernelParams::values() const {
  KernelValues v;
  v.lengthscale = softplus(theta_lengthscale.value(0, 0));
  v.matern_var = softplus(theta_matern_var.value(0, 0));
  v.linear_var = softplus(theta_linear_var.value(0, 0));
  v.noise_var = kNoiseFloor + softplus(theta_noise.value(0, 0));
  return v;
}

std::vector<Parameter*> KernelParams::parameters() {
  return {&theta_lengthscale, &theta_matern_var, &theta_linear_var,
          &theta_noise};
}

KernelParams KernelParams::clone() const {
  KernelParams c;
  c.theta_lengthscale = Parameter(theta_lengthscale.value);
  c.theta_matern_var = Parameter(theta_matern_var.value);
  c.theta_linear_var = Parameter(theta_linear_var.value);
  c.theta_noise = Parameter(theta_noise.value);
  return c;
}

KernelParams::OnTape KernelParams::on_tape(Tape& tape) {
  OnTape t;
  t.lengthscale = tape.softplus(tape.param(theta_lengthscale));
  t.matern_var = tape.softplus(tape.param(theta_matern_var));
  t.linear_var = tape.softplus(tape.param(theta_linear_var));
  Matrix floor(1, 1);
  floor(0, 0) = kNoiseFloor;
  t.noise_var =
      tape.add(tape.softplus(tape.param(theta_noise)), tape.constant(floor));
  return t;
}

double kernel_value(const Vector& a, const Vector& b, const KernelValues& kv) {
  if (a.size() != b.size())
    throw std::invalid_argument("kernel_value: dimension mismatch");
  const double r = (a - b).norm();
  const double ar = kSqrt3 * r / kv.lengthscale;
  return kv.matern_var * (1.0 + ar) * std::exp(-ar) + kv.linear_var * a.dot(b);
}

Matrix kernel_gram(const Matrix& a, const Matrix& b, const KernelValues& kv) {
  const Matrix dots = a * b.transpose();
  const Vector a2 = a.rowwise().squaredNorm();
  const Vector b2 = b.rowwise().squaredNorm();
  const double alpha = kSqrt3 / kv.lengthscale;
  Matrix k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const double r =
          std::sqrt(std::max(0.0, a2(i) + b2(j) - 2.0 * dots(i, j)));
      k(i, j) = kv.matern_var * (1.0 + alpha * r) * std::exp(-alpha * r) +
                kv.linear_var * dots(i, j);
    }
  return k;
}

Vector kernel_diag(const Matrix& a, const KernelValues& kv) {
  return (kv.matern_var + kv.linear_var * a.rowwise().squaredNorm().array())
      .matrix();
}

std::vector<GaussianPrediction> exact_posterior(const Matrix& ztrain,
                                                const Vector& y,
                                                const Matrix& zquery,
                                                const KernelValues& kv) {
  const Eigen::Index n = ztrain.rows();
  const Eigen::Index q = zquery.rows();
  std::vector<GaussianPrediction> out(static_cast<std::size_t>(q));
  const Vector kdiag = kernel_diag(zquery, kv);
  if (n == 0) {
    for (Eigen::Index i = 0; i < q; ++i) {
      out[static_cast<std::size_t>(i)] = {0.0,
                                          std::sqrt(std::max(0.0, kdiag(i)))};
    }
    return out;
  }
  if (y.size() != n)
    throw std::invalid_argument("exact_posterior: y size mismatch");
  Eigen::LLT<Matrix> llt = noise_llt(kernel_gram(ztrain, ztrain, kv),
                                     kv.noise_var);
  const Vector alpha = llt.solve(y);
  const Matrix kxq = kernel_gram(ztrain, zquery, kv);  // n x q
  const Matrix v = llt.matrixL().solve(kxq);           // n x q
  for (Eigen::Index i = 0; i < q; ++i) {
    const double mean = kxq.col(i).dot(alpha);
    double var = kdiag(i) - v.col(i).squaredNorm();
    warn_negative_variance(var);
    out[static_cast<std::size_t>(i)] = {mean, std::sqrt(std::max(0.0, var))};
  }
  return out;
}

double exact_lml(const Matrix& ztrain, const Vector& y,
                 const KernelValues& kv) {
  const Eigen::Index n = ztrain.rows();
  if (n == 0) return 0.0;
  Eigen::LLT<Matrix> llt = noise_llt(kernel_gram(ztrain, ztrain, kv),
                                     kv.noise_var);
  const Vector alpha = llt.solve(y);
  const double logdet =
      2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * y.dot(alpha) - 0.5 * logdet -
         0.5 * static_cast<double>(n) * kLog2Pi;
}

Var exact_lml_graph(Tape& tape, const Matrix& ztrain, const Vector& y,
                    KernelParams& params) {
  const Eigen::Index n = ztrain.rows();
  auto kp = params.on_tape(tape);
  Var z = tape.constant(ztrain);
  Var gram = tape.matern_linear_gram(z, z, kp.lengthscale, kp.matern_var,
                                     kp.linear_var);
  Var sys = tape.add(
      gram, tape.mul_scalar(tape.constant(Matrix::Identity(n, n)),
                            kp.noise_var));
  Var l = tape.cholesky(sys, 0.0, 1e-6);
  Var ly = tape.solve_lower(l, tape.constant(Matrix(y)));
  Var quad = tape.sqnorm_cols(ly);  // 1x1
  Var lml = tape.sub(tape.scale(quad, -0.5), tape.log_diag_sum(l));
  Matrix c(1, 1);
  c(0, 0) = -0.5 * static_cast<double>(n) * kLog2Pi;
  return tape.add(lml, tape.constant(c));
}

SvgpState SvgpState::clone() const {
  SvgpState c;
  c.z = Parameter(z.value);
  c.m = Parameter(m.value);
  c.s = Parameter(s.value);
  return c;
}

Matrix kmeans(const Matrix& points, int k, std::mt19937_64& rng, int iters) {
  const Eigen::Index n = points.rows();
  if (n == 0) throw std::invalid_argument("kmeans: no points");
  if (k <= 0) throw std::invalid_argument("kmeans: k must be positive");
  if (static_cast<Eigen::Index>(k) >= n) {
    // Fewer points than centroids: use the points themselves, padded with
    // jittered copies so Z stays full size.
    Matrix c(k, points.cols());
    std::normal_distribution<double> jitter(0.0, 1e-3);
    for (int i = 0; i < k; ++i) {
      c.row(i) = points.row(i % n);
      if (i >= n)
        for (Eigen::Index j = 0; j < points.cols(); ++j)
          c(i, j) += jitter(rng);
    }
    return c;
  }
  // init: sample k distinct rows
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (Eigen::Index i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<Eigen::Index> d(0, i);
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(d(rng))]);
  }
  Matrix centroids(k, points.cols());
  for (int i = 0; i < k; ++i)
    centroids.row(i) = points.row(perm[static_cast<std::size_t>(i)]);

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (points.row(i) - centroids.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0)
        centroids.row(c) =
            sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
    if (!changed) break;
  }
  return centroids;
}

SvgpState init_svgp(const Matrix& points, int inducing, const KernelValues& kv,
                    std::mt19937_64& rng) {
  SvgpState st;
  st.z = Parameter(kmeans(points, inducing, rng));
  st.m = Parameter(Matrix::Zero(inducing, 1));
  Matrix prior = kernel_gram(st.z.value, st.z.value, kv);
  prior.diagonal().array() += 1e-6;
  st.s = Parameter(0.5 * (prior + prior.transpose()));
  return st;
}

Var svgp_elbo(Tape& tape, Var enc, const Vector& y, SvgpState& state,
              KernelParams& params, double total_n) {
  const Eigen::Index n = enc.rows();
  const Eigen::Index m_count = state.inducing_count();
  if (n == 0) throw std::invalid_argument("svgp_elbo: empty batch");
  if (y.size() != n)
    throw std::invalid_argument("svgp_elbo: y size mismatch");
  if (total_n < static_cast<double>(n))
    throw std::invalid_argument("svgp_elbo: total_n < batch size");

  auto kp = params.on_tape(tape);
  Var z = tape.param(state.z);
  Var m = tape.param(state.m);
  Var s = tape.param(state.s);

  Var kmm = tape.matern_linear_gram(z, z, kp.lengthscale, kp.matern_var,
                                    kp.linear_var);
  Var l = tape.cholesky(kmm);  // prior covariance is the jittered K_MM
  Var kmn = tape.matern_linear_gram(z, enc, kp.lengthscale, kp.matern_var,
                                    kp.linear_var);
  Var a0 = tape.solve_lower(l, kmn);    // L^{-1} K_MN
  Var a = tape.solve_lower_t(l, a0);    // K_MM^{-1} K_MN
  Var mean = tape.matmul(tape.transpose(a), m);  // n x 1
  Var kdiag = tape.matern_linear_diag(enc, kp.matern_var, kp.linear_var);
  Var qgap = tape.clamp_min(tape.sub(kdiag, tape.sqnorm_cols(a0)), 0.0);
  Var fvar = tape.add(qgap, tape.quadform_cols(s, a));

  Var resid = tape.sub(tape.constant(Matrix(y)), mean);
  Var quad_sum = tape.sum(tape.add(tape.square(resid), fvar));  // 1x1
  Matrix c0(1, 1);
  c0(0, 0) = -0.5 * static_cast<double>(n) * kLog2Pi;
  Var ell = tape.add(
      tape.add(tape.constant(c0),
               tape.scale(tape.log(kp.noise_var),
                          -0.5 * static_cast<double>(n))),
      tape.scale(tape.div_scalar(quad_sum, kp.noise_var), -0.5));
  Var data_term = tape.scale(ell, total_n / static_cast<double>(n));

  // KL(q(u) || p(u))
  Var ls = tape.cholesky(s, 0.0, 1e-8);
  Var g = tape.solve_lower(l, s);
  Var h = tape.solve_lower(l, tape.transpose(g));  // L^{-1} S L^{-T}
  Var tr = tape.trace(h);
  Var maha = tape.sqnorm_cols(tape.solve_lower(l, m));  // 1x1
  Var logdet_k = tape.scale(tape.log_diag_sum(l), 2.0);
  Var logdet_s = tape.scale(tape.log_diag_sum(ls), 2.0);
  Matrix cm(1, 1);
  cm(0, 0) = -static_cast<double>(m_count);
  Var kl = tape.scale(
      tape.add(tape.add(tape.add(tr, tape.constant(cm)), maha),
               tape.sub(logdet_k, logdet_s)),
      0.5);

  return tape.sub(data_term, kl);
}

std::vector<GaussianPrediction> svgp_predict(const Matrix& zquery,
                                             const SvgpState& state,
                                             const KernelValues& kv) {
  const Eigen::Index q = zquery.rows();
  Matrix kmm = kernel_gram(state.z.value, state.z.value, kv);
  Eigen::LLT<Matrix> llt = diff::jittered_llt(kmm);
  const Matrix kmq = kernel_gram(state.z.value, zquery, kv);  // M x q
  const Matrix a0 = llt.matrixL().solve(kmq);
  const Matrix a = llt.matrixU().solve(a0);  // K_MM^{-1} K_Mq
  const Vector kdiag = kernel_diag(zquery, kv);
  const Vector mean = a.transpose() * state.m.value.col(0);
  std::vector<GaussianPrediction> out(static_cast<std::size_t>(q));
  for (Eigen::Index i = 0; i < q; ++i) {
    double var = kdiag(i) - a0.col(i).squaredNorm() +
                 a.col(i).dot(state.s.value * a.col(i));
    warn_negative_variance(var);
    out[static_cast<std::size_t>(i)] = {mean(i),
                                        std::sqrt(std::max(0.0, var))};
  }
  return out;
}

void svgp_natgrad_step(SvgpState& state, double step) {
  Vector m = state.m.value.col(0);
  Matrix s = state.s.value;
  const Vector gm = state.m.grad.col(0);
  const Matrix gs = state.s.grad;
  diff::natural_gradient_step(m, s, gm, gs, step);
  state.m.value.col(0) = m;
  state.s.value = s;
}

void ExactGpModel::fit(const Matrix& x, const Vector& y, int steps,
                       double lr) {
  if (x.rows() != y.size())
    throw std::invalid_argument("ExactGpModel::fit: size mismatch");
  x_ = x;
  y_ = y;
  if (x_.rows() == 0) return;

  // start from data-driven scales
  KernelValues init;
  double med = 1.0;
  {
    std::vector<double> d2;
    const Eigen::Index n = std::min<Eigen::Index>(x.rows(), 64);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j)
        d2.push_back((x.row(i) - x.row(j)).norm());
    if (!d2.empty()) {
      std::nth_element(d2.begin(), d2.begin() + d2.size() / 2, d2.end());
      med = std::max(1e-3, d2[d2.size() / 2]);
    }
  }
  init.lengthscale = med;
  const double yvar = (y.array() - y.mean()).square().sum() /
                      std::max<double>(1.0, static_cast<double>(y.size()));
  init.matern_var = std::max(1e-3, yvar);
  init.linear_var = with_linear_ ? 0.1 : 1e-8 + KernelParams::kNoiseFloor;
  init.noise_var = std::max(1e-4, 1e-2 * init.matern_var);
  KernelParams params(init);

  std::vector<Parameter*> trainable = {&params.theta_lengthscale,
                                       &params.theta_matern_var,
                                       &params.theta_noise};
  if (with_linear_) trainable.push_back(&params.theta_linear_var);
  diff::AdamW opt(trainable, lr, 0.0);
  for (int it = 0; it < steps; ++it) {
    Tape tape;
    Var lml = exact_lml_graph(tape, x_, y_, params);
    Var loss = tape.scale(lml, -1.0);
    tape.backward(loss);
    opt.step();
  }
  kv_ = params.values();
  if (!with_linear_) kv_.linear_var = 0.0;
}

std::vector<GaussianPrediction> ExactGpModel::predict(const Matrix& xq) const {
  return exact_posterior(x_, y_, xq, kv_);
}

}  // namespace ftbo::gp

#pragma once

#include "ftbo/diff.hpp"

#include <random>
#include <vector>

namespace ftbo::gp {

using diff::Matrix;
using diff::Parameter;
using diff::Tape;
using diff::Var;
using diff::Vector;

struct GaussianPrediction {
  double mean = 0.0;
  double std = 0.0;
};

// Constrained kernel hyperparameter values (all strictly positive).
struct KernelValues {
  double lengthscale = 1.0;
  double matern_var = 1.0;
  double linear_var = 1.0;
  double noise_var = 1e-2;
};

// Unconstrained storage for the kernel hyperparameters, mapped through
// softplus (noise additionally shifted by 1e-6 so it cannot collapse).
struct KernelParams {
  Parameter theta_lengthscale;
  Parameter theta_matern_var;
  Parameter theta_linear_var;
  Parameter theta_noise;

  static constexpr double kNoiseFloor = 1e-6;
  static double softplus(double x);
  static double inv_softplus(double y);

  KernelParams();
  explicit KernelParams(const KernelValues& v);
  void set(const KernelValues& v);
  KernelValues values() const;
  std::vector<Parameter*> parameters();
  KernelParams clone() const;

  struct OnTape {
    Var lengthscale;
    Var matern_var;
    Var linear_var;
    Var noise_var;
  };
  OnTape on_tape(Tape& tape);
};

// k(a, b) = s2m (1 + sqrt(3) r / l) exp(-sqrt(3) r / l) + s2v <a, b>
double kernel_value(const Vector& a, const Vector& b, const KernelValues& kv);
Matrix kernel_gram(const Matrix& a, const Matrix& b, const KernelValues& kv);
Vector kernel_diag(const Matrix& a, const KernelValues& kv);

// Exact GP posterior with zero prior mean on (normalized) targets.
// Handles an empty training set (prior). Cholesky is attempted without
// jitter first since the noise term already regularizes the system.
std::vector<GaussianPrediction> exact_posterior(const Matrix& ztrain,
                                                const Vector& y,
                                                const Matrix& zquery,
                                                const KernelValues& kv);

// Exact Gaussian log marginal likelihood.
double exact_lml(const Matrix& ztrain, const Vector& y, const KernelValues& kv);

// Differentiable LML (used for baseline hyperparameter fitting and the
// gradient test suite). ztrain enters as a constant.
Var exact_lml_graph(Tape& tape, const Matrix& ztrain, const Vector& y,
                    KernelParams& params);

// Sparse variational GP state. m and S are updated by natural gradient,
// Z by AdamW; all three receive gradients from the ELBO graph.
struct SvgpState {
  Parameter z;  // M x d inducing inputs
  Parameter m;  // M x 1 variational mean
  Parameter s;  // M x M variational covariance (SPD)

  Eigen::Index inducing_count() const { return z.rows(); }
  SvgpState clone() const;
};

// Initialize inducing inputs by k-means on the rows of `points`, m = 0,
// S = prior covariance (jittered K_MM).
SvgpState init_svgp(const Matrix& points, int inducing, const KernelValues& kv,
                    std::mt19937_64& rng);

// ELBO = (total_n / batch) * E_q[log N(y | f, s2)] - KL(q(u) || p(u)).
// Differentiable w.r.t. enc, Z, m, S and the kernel parameters.
Var svgp_elbo(Tape& tape, Var enc, const Vector& y, SvgpState& state,
              KernelParams& params, double total_n);

// Marginal predictive mean/std at rows of zquery (no tape).
std::vector<GaussianPrediction> svgp_predict(const Matrix& zquery,
                                             const SvgpState& state,
                                             const KernelValues& kv);

// One natural-gradient update of (m, S) from gradients left in
// state.m.grad / state.s.grad by a backward pass over the ELBO.
void svgp_natgrad_step(SvgpState& state, double step);

// Plain-matrix k-means (Lloyd), deterministic given the rng. Returns k
// centroids; used for inducing point initialization.
Matrix kmeans(const Matrix& points, int k, std::mt19937_64& rng,
              int iters = 25);

// Baseline exact-GP surrogate on raw coordinates: fits hyperparameters by
// Adam ascent on the exact LML, then serves posterior predictions.
class ExactGpModel {
 public:
  explicit ExactGpModel(bool with_linear_kernel = false)
      : with_linear_(with_linear_kernel) {}

  void fit(const Matrix& x, const Vector& y, int steps = 120, double lr = 0.05);
  std::vector<GaussianPrediction> predict(const Matrix& xq) const;
  const KernelValues& kernel() const { return kv_; }

 private:
  bool with_linear_;
  KernelValues kv_;
  Matrix x_;
  Vector y_;
};

}  // namespace ftbo::gp

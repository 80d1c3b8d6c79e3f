#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

// Minimal reverse-mode differentiation on dense 64-bit matrices.
//
// A Tape records the forward computation; backward() walks the tape in
// reverse and accumulates gradients into the Parameter objects that were
// registered on it. Scalars are 1x1 matrices, vectors are nx1 (or 1xn)
// matrices. Gradient buffers are zeroed at the start of every backward,
// so repeated backward calls never accumulate silently.
namespace ftbo::diff {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// A trainable value plus its gradient sink. One Parameter can be shared by
// several tapes over its lifetime; grad always has the shape of value.
struct Parameter {
  Matrix value;
  Matrix grad;

  Parameter() = default;
  explicit Parameter(Matrix v)
      : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
};

class Tape;

// Handle to a node on a Tape. Cheap to copy, invalid when default-built.
class Var {
 public:
  Var() = default;
  bool valid() const { return tape_ != nullptr; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::int32_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::int32_t id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves ----
  Var constant(Matrix v);
  Var scalar(double v);
  // Registering the same Parameter twice returns the same node.
  Var param(Parameter& p);

  // ---- arithmetic ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);      // elementwise
  Var scale(Var a, double c); // a * c
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var sum(Var a);   // 1x1
  Var mean(Var a);  // 1x1
  Var trace(Var a); // 1x1
  Var add_rowvec(Var a, Var row);  // row broadcast over the rows of a
  Var add_scalar(Var a, Var s);    // s 1x1 broadcast over all entries
  Var mul_scalar(Var a, Var s);    // s 1x1
  Var div_scalar(Var a, Var s);    // s 1x1

  // ---- elementwise functions ----
  Var gelu(Var a);      // exact erf form
  Var softplus(Var a);  // log(1 + exp(x)), numerically stable
  Var log(Var a);
  Var exp(Var a);
  Var square(Var a);
  Var clamp_min(Var a, double lo);  // gradient is zero where clamped

  // ---- structural ----
  Var concat_rows(const std::vector<Var>& parts);
  Var gather_rows(Var a, std::vector<int> idx);
  // Per-row layer normalization with affine output; gamma/beta are 1xK.
  Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
  // Multi-head self-attention over `batch` independent segments of `tokens`
  // rows each. q, k, v are (batch*tokens) x d stacked example-major; heads
  // partition the d columns.
  Var self_attention(Var q, Var k, Var v, int batch, int tokens, int heads);

  // ---- kernels and GP linear algebra ----
  // Additive Matern-3/2 + linear kernel Gram matrix between the rows of
  // a (n x d) and b (m x d). lengthscale / matern_var / linear_var are
  // 1x1 nodes holding the constrained positive values.
  Var matern_linear_gram(Var a, Var b, Var lengthscale, Var matern_var,
                         Var linear_var);
  // Diagonal k(a_i, a_i) as an n x 1 column.
  Var matern_linear_diag(Var a, Var matern_var, Var linear_var);
  // Lower Cholesky factor of 0.5*(a + a^T) + jitter*I. Retries once with
  // the fallback jitter, then throws.
  Var cholesky(Var a, double jitter = 1e-6, double retry_jitter = 1e-4);
  Var solve_lower(Var l, Var b);    // L^{-1} b
  Var solve_lower_t(Var l, Var b);  // L^{-T} b
  Var log_diag_sum(Var a);          // sum_i log a_ii, 1x1
  Var sqnorm_cols(Var a);           // per-column squared norm, (cols x 1)
  Var quadform_cols(Var s, Var a);  // a_j^T S a_j per column, (cols x 1)

  // Populates Parameter::grad for every parameter registered on this tape.
  // loss must be 1x1 and finite; throws otherwise.
  void backward(Var loss);

  const Matrix& value(Var v) const;
  // Gradient of the last backward() w.r.t. an arbitrary node (testing aid).
  const Matrix& grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Parameter* sink = nullptr;
    // Accumulates into the grads of this node's inputs.
    std::function<void(Tape&)> back;
  };

  Var make(Matrix value, bool needs_grad, std::function<void(Tape&)> back);
  Node& node(Var v);
  const Node& node(Var v) const;
  Matrix& grad_buf(std::int32_t id);
  void check_same_tape(Var v) const;

  std::vector<Node> nodes_;
  std::vector<std::pair<Parameter*, std::int32_t>> param_nodes_;
};

// Cholesky of 0.5*(a+a^T) + jitter*I with one retry at retry_jitter.
// Shared by tape ops and the plain (non-differentiable) GP code.
Eigen::LLT<Matrix> jittered_llt(const Matrix& a, double jitter = 1e-6,
                                double retry_jitter = 1e-4);

}  // namespace ftbo::diff

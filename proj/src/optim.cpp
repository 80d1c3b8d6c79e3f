#include "ftbo/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ftbo::diff {

AdamW::AdamW(std::vector<Parameter*> params, double lr, double weight_decay,
             double beta1, double beta2, double eps)
    : params_(std::move(params)),
      lr_(lr),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  if (lr_ <= 0.0) throw std::invalid_argument("AdamW: learning rate must be > 0");
  slots_.reserve(params_.size());
  for (Parameter* p : params_)
    slots_.push_back({Matrix::Zero(p->rows(), p->cols()),
                      Matrix::Zero(p->rows(), p->cols())});
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    Slot& s = slots_[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols())
      throw std::invalid_argument("AdamW: gradient shape mismatch");
    s.m = beta1_ * s.m + (1.0 - beta1_) * p.grad;
    s.v = beta2_ * s.v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    const Matrix mhat = s.m / bc1;
    const Matrix vhat = s.v / bc2;
    p.value -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
    if (weight_decay_ != 0.0) p.value -= lr_ * weight_decay_ * p.value;
  }
}

void natural_gradient_step(Vector& m, Matrix& s, const Vector& grad_m,
                           const Matrix& grad_s, double step, double jitter) {
  if (step == 0.0) return;
  if (step < 0.0 || step > 1.0)
    throw std::invalid_argument("natural_gradient_step: step must be in (0, 1]");
  const Eigen::Index n = m.size();
  if (s.rows() != n || s.cols() != n || grad_m.size() != n ||
      grad_s.rows() != n || grad_s.cols() != n)
    throw std::invalid_argument("natural_gradient_step: shape mismatch");

  Eigen::LLT<Matrix> llt(Matrix(0.5 * (s + s.transpose())));
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument(
        "natural_gradient_step: S is not positive definite");

  // theta2 = -1/2 S^{-1}, eta2-gradient is grad_s: S' = (S^{-1} - 2g s)^{-1}.
  const Matrix identity = Matrix::Identity(n, n);
  const Matrix s_inv = llt.solve(identity);
  const Matrix gs_sym = 0.5 * (grad_s + grad_s.transpose());
  Matrix new_prec = s_inv - 2.0 * step * gs_sym;
  new_prec = 0.5 * (new_prec + new_prec.transpose());

  Matrix new_s;
  Eigen::LLT<Matrix> pllt(new_prec);
  if (pllt.info() == Eigen::Success) {
    new_s = pllt.solve(identity);
  } else {
    // Precision left the PSD cone: floor its eigenvalues so that the
    // resulting covariance has eigenvalues at most 1/jitter.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(new_prec);
    Vector ev = eig.eigenvalues().cwiseMax(jitter);
    new_s = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() *
            eig.eigenvectors().transpose();
  }
  new_s = 0.5 * (new_s + new_s.transpose());

  // theta1 = S^{-1} m, eta1-gradient is grad_m - 2 grad_s m.
  const Vector theta1 = llt.solve(m);
  const Vector new_theta1 = theta1 + step * (grad_m - 2.0 * (gs_sym * m));
  m = new_s * new_theta1;

  // Keep S factorizable: floor eigenvalues at jitter if Cholesky fails.
  Eigen::LLT<Matrix> check(new_s);
  if (check.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(new_s);
    Vector ev = eig.eigenvalues().cwiseMax(jitter);
    new_s = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
    new_s = 0.5 * (new_s + new_s.transpose());
  }
  s = new_s;
}

}  // namespace ftbo::diff

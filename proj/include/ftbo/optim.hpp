#pragma once

#include "ftbo/diff.hpp"

#include <cstdint>
#include <vector>

namespace ftbo::diff {

// Decoupled weight decay Adam. Keeps first/second moment accumulators per
// parameter; step() consumes Parameter::grad.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, double lr, double weight_decay = 0.0,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::int64_t step_count() const { return t_; }

 private:
  struct Slot {
    Matrix m;
    Matrix v;
  };
  std::vector<Parameter*> params_;
  std::vector<Slot> slots_;
  double lr_;
  double weight_decay_;
  double beta1_;
  double beta2_;
  double eps_;
  std::int64_t t_ = 0;
};

// One natural-gradient ascent step for a Gaussian q(u) = N(m, S) in the
// expectation parameterization (eta1 = m, eta2 = S + m m^T). grad_m / grad_s
// are ordinary ELBO gradients w.r.t. m and S. S stays symmetric positive
// definite; eigenvalues are floored at `jitter` if the update leaves the
// cone. step == 0 leaves (m, S) untouched. Throws if S is not SPD on entry.
void natural_gradient_step(Vector& m, Matrix& s, const Vector& grad_m,
                           const Matrix& grad_s, double step,
                           double jitter = 1e-6);

}  // namespace ftbo::diff

#include "ftbo/diff.hpp"

#include <cmath>
#include <utility>

namespace ftbo::diff {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;
constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

double softplus_scalar(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Matrix& Var::value() const {
  if (!valid()) throw std::logic_error("value() on an invalid Var");
  return tape_->value(*this);
}

Eigen::LLT<Matrix> jittered_llt(const Matrix& a, double jitter,
                                double retry_jitter) {
  if (a.rows() != a.cols()) throw std::invalid_argument("cholesky: non-square");
  Matrix sym = 0.5 * (a + a.transpose());
  sym.diagonal().array() += jitter;
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() == Eigen::Success) return llt;
  sym.diagonal().array() += retry_jitter - jitter;
  llt.compute(sym);
  if (llt.info() == Eigen::Success) return llt;
  throw std::runtime_error("cholesky failed after jitter retries");
}

Var Tape::make(Matrix value, bool needs_grad, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Tape::Node& Tape::node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id_)); }
const Tape::Node& Tape::node(Var v) const {
  return nodes_.at(static_cast<std::size_t>(v.id_));
}

Matrix& Tape::grad_buf(std::int32_t id) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.size() == 0)
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::check_same_tape(Var v) const {
  if (!v.valid() || v.tape_ != this)
    throw std::logic_error("Var does not belong to this tape");
}

const Matrix& Tape::value(Var v) const {
  check_same_tape(v);
  return node(v).value;
}

const Matrix& Tape::grad(Var v) const {
  check_same_tape(v);
  const Node& n = node(v);
  if (n.grad.size() == 0)
    throw std::logic_error("no gradient recorded for this node");
  return n.grad;
}

Var Tape::constant(Matrix v) { return make(std::move(v), false, nullptr); }

Var Tape::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Tape::param(Parameter& p) {
  for (const auto& [ptr, id] : param_nodes_)
    if (ptr == &p) return Var(this, id);
  Var v = make(p.value, true, nullptr);
  node(v).sink = &p;
  param_nodes_.emplace_back(&p, v.id_);
  return v;
}

Var Tape::add(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("add: shape mismatch");
  const std::int32_t ia = a.id_, ib = b.id_;
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = make(node(a).value + node(b).value, ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, ib, io](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      if (t.nodes_[ia].needs_grad) t.grad_buf(ia) += g;
      if (t.nodes_[ib].needs_grad) t.grad_buf(ib) += g;
    };
  return out;
}

Var Tape::sub(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("sub: shape mismatch");
  const std::int32_t ia = a.id_, ib = b.id_;
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = make(node(a).value - node(b).value, ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, ib, io](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      if (t.nodes_[ia].needs_grad) t.grad_buf(ia) += g;
      if (t.nodes_[ib].needs_grad) t.grad_buf(ib) -= g;
    };
  return out;
}

Var Tape::mul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("mul: shape mismatch");
  const std::int32_t ia = a.id_, ib = b.id_;
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = make(node(a).value.cwiseProduct(node(b).value), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, ib, io](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      if (t.nodes_[ia].needs_grad)
        t.grad_buf(ia) += g.cwiseProduct(t.nodes_[ib].value);
      if (t.nodes_[ib].needs_grad)
        t.grad_buf(ib) += g.cwiseProduct(t.nodes_[ia].value);
    };
  return out;
}

Var Tape::scale(Var a, double c) {
  check_same_tape(a);
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  Var out = make(node(a).value * c, ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io, c](Tape& t) { t.grad_buf(ia) += c * t.grad_buf(io); };
  return out;
}

Var Tape::matmul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: shape mismatch");
  const std::int32_t ia = a.id_, ib = b.id_;
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = make(node(a).value * node(b).value, ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, ib, io](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      if (t.nodes_[ia].needs_grad)
        t.grad_buf(ia) += g * t.nodes_[ib].value.transpose();
      if (t.nodes_[ib].needs_grad)
        t.grad_buf(ib) += t.nodes_[ia].value.transpose() * g;
    };
  return out;
}

Var Tape::transpose(Var a) {
  check_same_tape(a);
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  Var out = make(node(a).value.transpose(), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io](Tape& t) {
      t.grad_buf(ia) += t.grad_buf(io).transpose();
    };
  return out;
}

Var Tape::sum(Var a) {
  check_same_tape(a);
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  Matrix m(1, 1);
  m(0, 0) = node(a).value.sum();
  Var out = make(std::move(m), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io](Tape& t) {
      t.grad_buf(ia).array() += t.grad_buf(io)(0, 0);
    };
  return out;
}

Var Tape::mean(Var a) {
  const double inv = 1.0 / static_cast<double>(a.rows() * a.cols());
  return scale(sum(a), inv);
}

Var Tape::trace(Var a) {
  check_same_tape(a);
  if (a.rows() != a.cols()) throw std::invalid_argument("trace: non-square");
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  Matrix m(1, 1);
  m(0, 0) = node(a).value.trace();
  Var out = make(std::move(m), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io](Tape& t) {
      t.grad_buf(ia).diagonal().array() += t.grad_buf(io)(0, 0);
    };
  return out;
}

Var Tape::add_rowvec(Var a, Var row) {
  check_same_tape(a);
  check_same_tape(row);
  if (row.rows() != 1 || row.cols() != a.cols())
    throw std::invalid_argument("add_rowvec: shape mismatch");
  const std::int32_t ia = a.id_, ir = row.id_;
  bool ng = node(a).needs_grad || node(row).needs_grad;
  Matrix v = node(a).value;
  v.rowwise() += node(row).value.row(0);
  Var out = make(std::move(v), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, ir, io](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      if (t.nodes_[ia].needs_grad) t.grad_buf(ia) += g;
      if (t.nodes_[ir].needs_grad) t.grad_buf(ir) += g.colwise().sum();
    };
  return out;
}

Var Tape::add_scalar(Var a, Var s) {
  check_same_tape(a);
  check_same_tape(s);
  if (s.rows() != 1 || s.cols() != 1)
    throw std::invalid_argument("add_scalar: s must be 1x1");
  const std::int32_t ia = a.id_, is = s.id_;
  bool ng = node(a).needs_grad || node(s).needs_grad;
  Var out = make(node(a).value.array() + node(s).value(0, 0), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, is, io](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      if (t.nodes_[ia].needs_grad) t.grad_buf(ia) += g;
      if (t.nodes_[is].needs_grad) t.grad_buf(is)(0, 0) += g.sum();
    };
  return out;
}

Var Tape::mul_scalar(Var a, Var s) {
  check_same_tape(a);
  check_same_tape(s);
  if (s.rows() != 1 || s.cols() != 1)
    throw std::invalid_argument("mul_scalar: s must be 1x1");
  const std::int32_t ia = a.id_, is = s.id_;
  bool ng = node(a).needs_grad || node(s).needs_grad;
  Var out = make(node(a).value * node(s).value(0, 0), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, is, io](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      if (t.nodes_[ia].needs_grad)
        t.grad_buf(ia) += g * t.nodes_[is].value(0, 0);
      if (t.nodes_[is].needs_grad)
        t.grad_buf(is)(0, 0) += g.cwiseProduct(t.nodes_[ia].value).sum();
    };
  return out;
}

Var Tape::div_scalar(Var a, Var s) {
  check_same_tape(a);
  check_same_tape(s);
  if (s.rows() != 1 || s.cols() != 1)
    throw std::invalid_argument("div_scalar: s must be 1x1");
  const std::int32_t ia = a.id_, is = s.id_;
  bool ng = node(a).needs_grad || node(s).needs_grad;
  const double sv = node(s).value(0, 0);
  Var out = make(node(a).value / sv, ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, is, io](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      const double d = t.nodes_[is].value(0, 0);
      if (t.nodes_[ia].needs_grad) t.grad_buf(ia) += g / d;
      if (t.nodes_[is].needs_grad)
        t.grad_buf(is)(0, 0) -=
            g.cwiseProduct(t.nodes_[io].value).sum() / d;
    };
  return out;
}

Var Tape::gelu(Var a) {
  check_same_tape(a);
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  const Matrix& x = node(a).value;
  Matrix y = x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  });
  Var out = make(std::move(y), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      const Matrix& x = t.nodes_[ia].value;
      t.grad_buf(ia) += g.cwiseProduct(x.unaryExpr([](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      }));
    };
  return out;
}

Var Tape::softplus(Var a) {
  check_same_tape(a);
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  Matrix y = node(a).value.unaryExpr(&softplus_scalar);
  Var out = make(std::move(y), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io](Tape& t) {
      t.grad_buf(ia) += t.grad_buf(io).cwiseProduct(
          t.nodes_[ia].value.unaryExpr(&sigmoid_scalar));
    };
  return out;
}

Var Tape::log(Var a) {
  check_same_tape(a);
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  Var out = make(node(a).value.array().log().matrix(), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io](Tape& t) {
      t.grad_buf(ia) +=
          t.grad_buf(io).cwiseQuotient(t.nodes_[ia].value);
    };
  return out;
}

Var Tape::exp(Var a) {
  check_same_tape(a);
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  Var out = make(node(a).value.array().exp().matrix(), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io](Tape& t) {
      t.grad_buf(ia) += t.grad_buf(io).cwiseProduct(t.nodes_[io].value);
    };
  return out;
}

Var Tape::square(Var a) {
  check_same_tape(a);
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  Var out = make(node(a).value.array().square().matrix(), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io](Tape& t) {
      t.grad_buf(ia) +=
          2.0 * t.grad_buf(io).cwiseProduct(t.nodes_[ia].value);
    };
  return out;
}

Var Tape::clamp_min(Var a, double lo) {
  check_same_tape(a);
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  Var out = make(node(a).value.cwiseMax(lo), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io, lo](Tape& t) {
      const Matrix& x = t.nodes_[ia].value;
      const Matrix& g = t.grad_buf(io);
      t.grad_buf(ia).array() +=
          g.array() * (x.array() > lo).cast<double>();
    };
  return out;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  bool ng = false;
  for (Var p : parts) {
    check_same_tape(p);
    if (p.cols() != cols)
      throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
    ng = ng || node(p).needs_grad;
  }
  Matrix v(rows, cols);
  Eigen::Index at = 0;
  std::vector<std::int32_t> ids;
  std::vector<Eigen::Index> offsets;
  for (Var p : parts) {
    v.middleRows(at, p.rows()) = node(p).value;
    ids.push_back(p.id_);
    offsets.push_back(at);
    at += p.rows();
  }
  Var out = make(std::move(v), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ids, offsets, io](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        Tape::Node& p = t.nodes_[static_cast<std::size_t>(ids[i])];
        if (p.needs_grad)
          t.grad_buf(ids[i]) += g.middleRows(offsets[i], p.value.rows());
      }
    };
  return out;
}

Var Tape::gather_rows(Var a, std::vector<int> idx) {
  check_same_tape(a);
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  Matrix v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows())
      throw std::invalid_argument("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = node(a).value.row(idx[i]);
  }
  Var out = make(std::move(v), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io, idx = std::move(idx)](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      Matrix& ga = t.grad_buf(ia);
      for (std::size_t i = 0; i < idx.size(); ++i)
        ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    };
  return out;
}

Var Tape::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  check_same_tape(x);
  check_same_tape(gamma);
  check_same_tape(beta);
  const Eigen::Index k = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != k || beta.rows() != 1 ||
      beta.cols() != k)
    throw std::invalid_argument("layer_norm_rows: affine shape mismatch");
  const std::int32_t ix = x.id_, ig = gamma.id_, ib = beta.id_;
  bool ng = node(x).needs_grad || node(gamma).needs_grad || node(beta).needs_grad;

  const Matrix& xv = node(x).value;
  auto xhat = std::make_shared<Matrix>(xv.rows(), k);
  auto inv_std = std::make_shared<Vector>(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var =
        (xv.row(r).array() - mu).square().sum() / static_cast<double>(k);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    xhat->row(r) = (xv.row(r).array() - mu) * is;
  }
  Matrix y = (*xhat) * node(gamma).value.row(0).asDiagonal();
  y.rowwise() += node(beta).value.row(0);
  Var out = make(std::move(y), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ix, ig, ib, io, xhat, inv_std, k](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      if (t.nodes_[ig].needs_grad)
        t.grad_buf(ig) += g.cwiseProduct(*xhat).colwise().sum();
      if (t.nodes_[ib].needs_grad) t.grad_buf(ib) += g.colwise().sum();
      if (t.nodes_[ix].needs_grad) {
        const Eigen::RowVectorXd gamma_row =
            t.nodes_[static_cast<std::size_t>(ig)].value.row(0);
        Matrix& gx = t.grad_buf(ix);
        const double invk = 1.0 / static_cast<double>(k);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gamma_row);
          const double m1 = dxhat.mean();
          const double m2 = dxhat.cwiseProduct(xhat->row(r)).sum() * invk;
          gx.row(r) += ((*inv_std)(r) *
                        (dxhat.array() - m1 - xhat->row(r).array() * m2))
                           .matrix();
        }
      }
    };
  return out;
}

Var Tape::self_attention(Var q, Var k, Var v, int batch, int tokens,
                         int heads) {
  check_same_tape(q);
  check_same_tape(k);
  check_same_tape(v);
  const Eigen::Index n = q.rows(), d = q.cols();
  if (k.rows() != n || v.rows() != n || k.cols() != d || v.cols() != d)
    throw std::invalid_argument("self_attention: shape mismatch");
  if (n != static_cast<Eigen::Index>(batch) * tokens)
    throw std::invalid_argument("self_attention: bad batch layout");
  if (d % heads != 0)
    throw std::invalid_argument("self_attention: heads must divide d");
  const Eigen::Index hd = d / heads;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::int32_t iq = q.id_, ik = k.id_, iv = v.id_;
  bool ng = node(q).needs_grad || node(k).needs_grad || node(v).needs_grad;

  const Matrix& qv = node(q).value;
  const Matrix& kv = node(k).value;
  const Matrix& vv = node(v).value;
  Matrix out_v(n, d);
  // Softmax probabilities per (segment, head), kept for backward.
  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(static_cast<std::size_t>(batch) * heads);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * tokens;
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * hd;
      Matrix scores = qv.block(r0, c0, tokens, hd) *
                      kv.block(r0, c0, tokens, hd).transpose() * inv_sqrt_hd;
      for (Eigen::Index r = 0; r < tokens; ++r) {
        const double mx = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - mx).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      out_v.block(r0, c0, tokens, hd) =
          scores * vv.block(r0, c0, tokens, hd);
      probs->push_back(std::move(scores));
    }
  }
  Var out = make(std::move(out_v), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [iq, ik, iv, io, probs, batch, tokens, heads, hd,
                      inv_sqrt_hd](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      const Matrix& qv = t.nodes_[iq].value;
      const Matrix& kv = t.nodes_[ik].value;
      const Matrix& vv = t.nodes_[iv].value;
      const bool nq = t.nodes_[iq].needs_grad;
      const bool nk = t.nodes_[ik].needs_grad;
      const bool nv = t.nodes_[iv].needs_grad;
      Matrix* gq = nq ? &t.grad_buf(iq) : nullptr;
      Matrix* gk = nk ? &t.grad_buf(ik) : nullptr;
      Matrix* gv = nv ? &t.grad_buf(iv) : nullptr;
      std::size_t pi = 0;
      for (int b = 0; b < batch; ++b) {
        const Eigen::Index r0 = static_cast<Eigen::Index>(b) * tokens;
        for (int h = 0; h < heads; ++h, ++pi) {
          const Eigen::Index c0 = static_cast<Eigen::Index>(h) * hd;
          const Matrix& p = (*probs)[pi];
          const Matrix go = g.block(r0, c0, tokens, hd);
          if (gv) gv->block(r0, c0, tokens, hd) += p.transpose() * go;
          if (nq || nk) {
            Matrix dp = go * vv.block(r0, c0, tokens, hd).transpose();
            // softmax backward per row: ds = p .* (dp - sum(dp .* p))
            Matrix ds(tokens, tokens);
            for (Eigen::Index r = 0; r < tokens; ++r) {
              const double dot = dp.row(r).cwiseProduct(p.row(r)).sum();
              ds.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)).matrix();
            }
            ds *= inv_sqrt_hd;
            if (gq)
              gq->block(r0, c0, tokens, hd) +=
                  ds * kv.block(r0, c0, tokens, hd);
            if (gk)
              gk->block(r0, c0, tokens, hd) +=
                  ds.transpose() * qv.block(r0, c0, tokens, hd);
          }
        }
      }
    };
  return out;
}

Var Tape::matern_linear_gram(Var a, Var b, Var lengthscale, Var matern_var,
                             Var linear_var) {
  check_same_tape(a);
  check_same_tape(b);
  check_same_tape(lengthscale);
  check_same_tape(matern_var);
  check_same_tape(linear_var);
  if (a.cols() != b.cols())
    throw std::invalid_argument("matern_linear_gram: dim mismatch");
  for (Var s : {lengthscale, matern_var, linear_var})
    if (s.rows() != 1 || s.cols() != 1)
      throw std::invalid_argument("matern_linear_gram: params must be 1x1");
  const std::int32_t ia = a.id_, ib = b.id_, il = lengthscale.id_,
                     im = matern_var.id_, iv = linear_var.id_;
  bool ng = node(a).needs_grad || node(b).needs_grad ||
            node(lengthscale).needs_grad || node(matern_var).needs_grad ||
            node(linear_var).needs_grad;

  const Matrix& av = node(a).value;
  const Matrix& bv = node(b).value;
  const double ell = node(lengthscale).value(0, 0);
  const double s2m = node(matern_var).value(0, 0);
  const double s2v = node(linear_var).value(0, 0);
  const double alpha = kSqrt3 / ell;

  auto dots = std::make_shared<Matrix>(av * bv.transpose());
  auto dist = std::make_shared<Matrix>(av.rows(), bv.rows());
  const Vector a2 = av.rowwise().squaredNorm();
  const Vector b2 = bv.rowwise().squaredNorm();
  for (Eigen::Index i = 0; i < av.rows(); ++i)
    for (Eigen::Index j = 0; j < bv.rows(); ++j) {
      const double r2 = std::max(0.0, a2(i) + b2(j) - 2.0 * (*dots)(i, j));
      (*dist)(i, j) = std::sqrt(r2);
    }
  auto edecay = std::make_shared<Matrix>((-alpha * dist->array()).exp());
  Matrix kmat = s2m * (1.0 + alpha * dist->array()) * edecay->array() +
                s2v * dots->array();
  Var out = make(std::move(kmat), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, ib, il, im, iv, io, dots, dist, edecay, ell, s2m,
                      s2v, alpha](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      const Matrix& av = t.nodes_[ia].value;
      const Matrix& bv = t.nodes_[ib].value;
      if (t.nodes_[im].needs_grad)
        t.grad_buf(im)(0, 0) +=
            (g.array() * (1.0 + alpha * dist->array()) * edecay->array())
                .sum();
      if (t.nodes_[iv].needs_grad)
        t.grad_buf(iv)(0, 0) += (g.array() * dots->array()).sum();
      if (t.nodes_[il].needs_grad)
        t.grad_buf(il)(0, 0) += (g.array() * dist->array().square() *
                                 edecay->array())
                                    .sum() *
                                s2m * alpha * alpha / ell;
      if (t.nodes_[ia].needs_grad || t.nodes_[ib].needs_grad) {
        // d k / d a_i = -s2m a^2 e^{-a r} (a_i - b_j) + s2v b_j
        const Matrix c = g.cwiseProduct(*edecay) * (s2m * alpha * alpha);
        if (t.nodes_[ia].needs_grad) {
          t.grad_buf(ia) +=
              -(c.rowwise().sum().asDiagonal() * av - c * bv) +
              s2v * (g * bv);
        }
        if (t.nodes_[ib].needs_grad) {
          t.grad_buf(ib) +=
              -(c.colwise().sum().transpose().asDiagonal() * bv -
                c.transpose() * av) +
              s2v * (g.transpose() * av);
        }
      }
    };
  return out;
}

Var Tape::matern_linear_diag(Var a, Var matern_var, Var linear_var) {
  check_same_tape(a);
  check_same_tape(matern_var);
  check_same_tape(linear_var);
  const std::int32_t ia = a.id_, im = matern_var.id_, iv = linear_var.id_;
  bool ng = node(a).needs_grad || node(matern_var).needs_grad ||
            node(linear_var).needs_grad;
  const double s2m = node(matern_var).value(0, 0);
  const double s2v = node(linear_var).value(0, 0);
  auto a2 = std::make_shared<Vector>(node(a).value.rowwise().squaredNorm());
  Matrix v = (s2m + s2v * a2->array()).matrix();
  Var out = make(std::move(v), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, im, iv, io, a2, s2v](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      if (t.nodes_[im].needs_grad) t.grad_buf(im)(0, 0) += g.sum();
      if (t.nodes_[iv].needs_grad)
        t.grad_buf(iv)(0, 0) += (g.array() * a2->array()).sum();
      if (t.nodes_[ia].needs_grad)
        t.grad_buf(ia) +=
            2.0 * s2v * (g.col(0).asDiagonal() * t.nodes_[ia].value);
    };
  return out;
}

Var Tape::cholesky(Var a, double jitter, double retry_jitter) {
  check_same_tape(a);
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  Eigen::LLT<Matrix> llt = jittered_llt(node(a).value, jitter, retry_jitter);
  Matrix l = llt.matrixL();
  Var out = make(std::move(l), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io](Tape& t) {
      // Murray (2016): Sigma_bar = L^{-T} Phi(L^T L_bar) L^{-1}, with Phi
      // taking the lower triangle and halving the diagonal; symmetrized
      // because the forward symmetrizes its input.
      const Matrix& l = t.nodes_[io].value;
      // Ignore any gradient on the (structurally zero) upper triangle.
      Matrix lbar =
          t.grad_buf(io).triangularView<Eigen::Lower>().toDenseMatrix();
      Matrix phi = (l.transpose() * lbar)
                       .triangularView<Eigen::Lower>()
                       .toDenseMatrix();
      phi.diagonal() *= 0.5;
      auto ut = l.transpose().triangularView<Eigen::Upper>();
      Matrix tmp = ut.solve(phi);
      Matrix sbar = ut.solve(tmp.transpose()).transpose();
      t.grad_buf(ia) += 0.5 * (sbar + sbar.transpose());
    };
  return out;
}

Var Tape::solve_lower(Var l, Var b) {
  check_same_tape(l);
  check_same_tape(b);
  if (l.rows() != l.cols() || l.rows() != b.rows())
    throw std::invalid_argument("solve_lower: shape mismatch");
  const std::int32_t il = l.id_, ib = b.id_;
  bool ng = node(l).needs_grad || node(b).needs_grad;
  Matrix x = node(l).value.triangularView<Eigen::Lower>().solve(node(b).value);
  Var out = make(std::move(x), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [il, ib, io](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      Matrix gb = t.nodes_[il]
                      .value.transpose()
                      .triangularView<Eigen::Upper>()
                      .solve(g);
      if (t.nodes_[ib].needs_grad) t.grad_buf(ib) += gb;
      if (t.nodes_[il].needs_grad)
        t.grad_buf(il) -= (gb * t.nodes_[io].value.transpose())
                              .triangularView<Eigen::Lower>()
                              .toDenseMatrix();
    };
  return out;
}

Var Tape::solve_lower_t(Var l, Var b) {
  check_same_tape(l);
  check_same_tape(b);
  if (l.rows() != l.cols() || l.rows() != b.rows())
    throw std::invalid_argument("solve_lower_t: shape mismatch");
  const std::int32_t il = l.id_, ib = b.id_;
  bool ng = node(l).needs_grad || node(b).needs_grad;
  Matrix x = node(l)
                 .value.transpose()
                 .triangularView<Eigen::Upper>()
                 .solve(node(b).value);
  Var out = make(std::move(x), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [il, ib, io](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      Matrix gb =
          t.nodes_[il].value.triangularView<Eigen::Lower>().solve(g);
      if (t.nodes_[ib].needs_grad) t.grad_buf(ib) += gb;
      if (t.nodes_[il].needs_grad)
        t.grad_buf(il) -= (t.nodes_[io].value * gb.transpose())
                              .triangularView<Eigen::Lower>()
                              .toDenseMatrix();
    };
  return out;
}

Var Tape::log_diag_sum(Var a) {
  check_same_tape(a);
  if (a.rows() != a.cols())
    throw std::invalid_argument("log_diag_sum: non-square");
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  Matrix m(1, 1);
  m(0, 0) = node(a).value.diagonal().array().log().sum();
  Var out = make(std::move(m), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io](Tape& t) {
      const double g = t.grad_buf(io)(0, 0);
      t.grad_buf(ia).diagonal().array() +=
          g / t.nodes_[ia].value.diagonal().array();
    };
  return out;
}

Var Tape::sqnorm_cols(Var a) {
  check_same_tape(a);
  const std::int32_t ia = a.id_;
  bool ng = node(a).needs_grad;
  Matrix v = node(a).value.colwise().squaredNorm().transpose();
  Var out = make(std::move(v), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [ia, io](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      t.grad_buf(ia) +=
          2.0 * (t.nodes_[ia].value * g.col(0).asDiagonal());
    };
  return out;
}

Var Tape::quadform_cols(Var s, Var a) {
  check_same_tape(s);
  check_same_tape(a);
  if (s.rows() != s.cols() || s.rows() != a.rows())
    throw std::invalid_argument("quadform_cols: shape mismatch");
  const std::int32_t is = s.id_, ia = a.id_;
  bool ng = node(s).needs_grad || node(a).needs_grad;
  auto sa = std::make_shared<Matrix>(node(s).value * node(a).value);
  Matrix v(a.cols(), 1);
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    v(j, 0) = node(a).value.col(j).dot(sa->col(j));
  Var out = make(std::move(v), ng, nullptr);
  const std::int32_t io = out.id_;
  if (ng)
    node(out).back = [is, ia, io, sa](Tape& t) {
      const Matrix& g = t.grad_buf(io);
      const Matrix& av = t.nodes_[ia].value;
      const Matrix& sv = t.nodes_[is].value;
      if (t.nodes_[is].needs_grad) {
        Matrix& gs = t.grad_buf(is);
        for (Eigen::Index j = 0; j < av.cols(); ++j)
          gs.noalias() += g(j, 0) * av.col(j) * av.col(j).transpose();
      }
      if (t.nodes_[ia].needs_grad) {
        Matrix st = sv.transpose() * av;
        t.grad_buf(ia) += (*sa + st) * g.col(0).asDiagonal();
      }
    };
  return out;
}

void Tape::backward(Var loss) {
  check_same_tape(loss);
  if (loss.rows() != 1 || loss.cols() != 1)
    throw std::invalid_argument("backward: loss must be a scalar");
  const double lv = node(loss).value(0, 0);
  if (!std::isfinite(lv))
    throw std::runtime_error("backward: loss is not finite");

  for (Node& n : nodes_)
    if (n.grad.size() != 0) n.grad.setZero();
  for (auto& [p, id] : param_nodes_) p->zero_grad();

  grad_buf(loss.id_)(0, 0) = 1.0;
  for (std::int32_t i = loss.id_; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.back) n.back(*this);
    if (n.sink) n.sink->grad += n.grad;
  }
  for (auto& [p, id] : param_nodes_) {
    if (!p->grad.allFinite())
      throw std::runtime_error("backward: non-finite gradient encountered");
  }
}

}  // namespace ftbo::diff

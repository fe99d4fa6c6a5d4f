#include "dcgp/tape.hpp"

#include <cmath>
#include <utility>

#include "dcgp/errors.hpp"
#include "dcgp/kernels.hpp"

namespace dcgp {

namespace {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Lower triangle with the diagonal halved; used by the Cholesky adjoint.
DenseMatrix phi(const DenseMatrix &x) {
  DenseMatrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < i; ++j) out(i, j) = x(i, j);
    out(i, i) = 0.5 * x(i, i);
  }
  return out;
}

DenseMatrix lower_triangle(const DenseMatrix &x) {
  DenseMatrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j <= i; ++j) out(i, j) = x(i, j);
  }
  return out;
}

}  // namespace

Var Tape::push(DenseMatrix value, bool requires_grad, std::function<void()> backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(DenseMatrix v) { return push(std::move(v), false, nullptr); }

Var Tape::param(DenseMatrix v) { return push(std::move(v), true, nullptr); }

const DenseMatrix &Tape::grad(Var v) const {
  const Node &n = nodes_[v.id];
  return n.grad;
}

DenseMatrix &Tape::grad_ref(std::size_t id) {
  Node &n = nodes_[id];
  if (n.grad.empty() && n.value.size() > 0) {
    n.grad = DenseMatrix(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

void Tape::accumulate(std::size_t id, const DenseMatrix &contribution) {
  DenseMatrix &g = grad_ref(id);
  if (!g.same_shape(contribution)) {
    throw DimensionMismatch("Tape: adjoint shape mismatch");
  }
  for (std::size_t k = 0; k < g.size(); ++k) g.flat(k) += contribution.flat(k);
}

Var Tape::add(Var a, Var b) {
  DenseMatrix v = dcgp::add(value(a), value(b));
  const bool rg = requires_grad(a) || requires_grad(b);
  Var out{nodes_.size()};
  auto back = [this, a, b, out]() {
    const DenseMatrix &g = nodes_[out.id].grad;
    if (requires_grad(a)) accumulate(a.id, g);
    if (requires_grad(b)) accumulate(b.id, g);
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::sub(Var a, Var b) {
  DenseMatrix v = dcgp::sub(value(a), value(b));
  const bool rg = requires_grad(a) || requires_grad(b);
  Var out{nodes_.size()};
  auto back = [this, a, b, out]() {
    const DenseMatrix &g = nodes_[out.id].grad;
    if (requires_grad(a)) accumulate(a.id, g);
    if (requires_grad(b)) accumulate(b.id, dcgp::scale(g, -1.0));
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::hadamard(Var a, Var b) {
  DenseMatrix v = dcgp::hadamard(value(a), value(b));
  const bool rg = requires_grad(a) || requires_grad(b);
  Var out{nodes_.size()};
  auto back = [this, a, b, out]() {
    const DenseMatrix &g = nodes_[out.id].grad;
    if (requires_grad(a)) accumulate(a.id, dcgp::hadamard(g, value(b)));
    if (requires_grad(b)) accumulate(b.id, dcgp::hadamard(g, value(a)));
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::scale(Var a, double s) {
  DenseMatrix v = dcgp::scale(value(a), s);
  const bool rg = requires_grad(a);
  Var out{nodes_.size()};
  auto back = [this, a, s, out]() {
    accumulate(a.id, dcgp::scale(nodes_[out.id].grad, s));
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::matmul(Var a, Var b) {
  DenseMatrix v = dcgp::matmul(value(a), value(b));
  const bool rg = requires_grad(a) || requires_grad(b);
  Var out{nodes_.size()};
  auto back = [this, a, b, out]() {
    const DenseMatrix &g = nodes_[out.id].grad;
    if (requires_grad(a)) accumulate(a.id, dcgp::matmul(g, dcgp::transpose(value(b))));
    if (requires_grad(b)) accumulate(b.id, dcgp::matmul(dcgp::transpose(value(a)), g));
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::transpose_of(Var a) {
  DenseMatrix v = dcgp::transpose(value(a));
  const bool rg = requires_grad(a);
  Var out{nodes_.size()};
  auto back = [this, a, out]() {
    accumulate(a.id, dcgp::transpose(nodes_[out.id].grad));
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::sum(Var a) {
  double acc = 0.0;
  const DenseMatrix &av = value(a);
  for (std::size_t k = 0; k < av.size(); ++k) acc += av.flat(k);
  const bool rg = requires_grad(a);
  Var out{nodes_.size()};
  auto back = [this, a, out]() {
    const double g = nodes_[out.id].grad.flat(0);
    accumulate(a.id, DenseMatrix(value(a).rows(), value(a).cols(), g));
  };
  return push(DenseMatrix(1, 1, acc), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::row_sum(Var a) {
  const DenseMatrix &av = value(a);
  DenseMatrix v(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) acc += av(i, j);
    v(i, 0) = acc;
  }
  const bool rg = requires_grad(a);
  Var out{nodes_.size()};
  auto back = [this, a, out]() {
    const DenseMatrix &g = nodes_[out.id].grad;
    const DenseMatrix &av = value(a);
    DenseMatrix contrib(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
      for (std::size_t j = 0; j < av.cols(); ++j) contrib(i, j) = g(i, 0);
    }
    accumulate(a.id, contrib);
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::fill(Var s, std::size_t rows, std::size_t cols) {
  if (value(s).size() != 1) throw DimensionMismatch("fill: source must be scalar");
  DenseMatrix v(rows, cols, value(s).flat(0));
  const bool rg = requires_grad(s);
  Var out{nodes_.size()};
  auto back = [this, s, out]() {
    const DenseMatrix &g = nodes_[out.id].grad;
    double acc = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) acc += g.flat(k);
    accumulate(s.id, DenseMatrix(1, 1, acc));
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::mul_scalar(Var a, Var s) {
  if (value(s).size() != 1) throw DimensionMismatch("mul_scalar: s must be scalar");
  const double sv = value(s).flat(0);
  DenseMatrix v = dcgp::scale(value(a), sv);
  const bool rg = requires_grad(a) || requires_grad(s);
  Var out{nodes_.size()};
  auto back = [this, a, s, out]() {
    const DenseMatrix &g = nodes_[out.id].grad;
    if (requires_grad(a)) accumulate(a.id, dcgp::scale(g, value(s).flat(0)));
    if (requires_grad(s)) accumulate(s.id, DenseMatrix(1, 1, dot_flat(g, value(a))));
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::exp_of(Var a) {
  const DenseMatrix &av = value(a);
  DenseMatrix v(av.rows(), av.cols());
  for (std::size_t k = 0; k < av.size(); ++k) v.flat(k) = std::exp(av.flat(k));
  const bool rg = requires_grad(a);
  Var out{nodes_.size()};
  auto back = [this, a, out]() {
    accumulate(a.id, dcgp::hadamard(nodes_[out.id].grad, nodes_[out.id].value));
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::sqrt_clamped(Var a) {
  const DenseMatrix &av = value(a);
  DenseMatrix v(av.rows(), av.cols());
  for (std::size_t k = 0; k < av.size(); ++k) {
    const double x = av.flat(k);
    if (x < -1e-10) {
      throw NegativeVariance("sqrt_clamped: variance below -1e-10");
    }
    v.flat(k) = x > 0.0 ? std::sqrt(x) : 0.0;
  }
  const bool rg = requires_grad(a);
  Var out{nodes_.size()};
  auto back = [this, a, out]() {
    const DenseMatrix &g = nodes_[out.id].grad;
    const DenseMatrix &val = nodes_[out.id].value;
    DenseMatrix contrib(g.rows(), g.cols());
    for (std::size_t k = 0; k < g.size(); ++k) {
      contrib.flat(k) = val.flat(k) > 1e-150 ? 0.5 * g.flat(k) / val.flat(k) : 0.0;
    }
    accumulate(a.id, contrib);
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::cholesky_of(Var a, double base_jitter) {
  // Apply the base jitter unconditionally rather than attempting a clean
  // factorization first: trying j=0 makes the factorization — and hence the
  // objective and its gradients — jump discontinuously between optimizer
  // steps when the matrix drifts near singularity. The floored variant keeps
  // the training objective smooth in the parameters.
  CholeskyFactor factor = dcgp::cholesky_floored(value(a), base_jitter);
  const bool rg = requires_grad(a);
  Var out{nodes_.size()};
  auto back = [this, a, out]() {
    // Iain Murray's adjoint: A_bar = L^{-T} Phi(L^T L_bar) L^{-1}, symmetrized.
    const DenseMatrix &lbar = nodes_[out.id].grad;
    const DenseMatrix &l = nodes_[out.id].value;
    CholeskyFactor f{l, nodes_[out.id].aux_scalar};
    DenseMatrix p = phi(dcgp::matmul(dcgp::transpose(l), lbar));
    DenseMatrix s1 = dcgp::tri_solve(f, p, /*transpose=*/true);         // L^{-T} P
    DenseMatrix s2t = dcgp::tri_solve(f, dcgp::transpose(s1), true);    // (S1 L^{-1})^T
    DenseMatrix abar = dcgp::scale(dcgp::add(s2t, dcgp::transpose(s2t)), 0.5);
    accumulate(a.id, abar);
  };
  Var v = push(std::move(factor.L), rg, rg ? std::function<void()>(back) : nullptr);
  nodes_[v.id].aux_scalar = factor.jitter;
  return v;
}

double Tape::cholesky_jitter(Var l) const { return nodes_[l.id].aux_scalar; }

Var Tape::tri_solve_with(Var l, Var b, bool transpose) {
  CholeskyFactor f{value(l), 0.0};
  DenseMatrix v = dcgp::tri_solve(f, value(b), transpose);
  const bool rg = requires_grad(l) || requires_grad(b);
  Var out{nodes_.size()};
  auto back = [this, l, b, transpose, out]() {
    const DenseMatrix &g = nodes_[out.id].grad;
    const DenseMatrix &x = nodes_[out.id].value;
    CholeskyFactor f{value(l), 0.0};
    // Solve with the opposite triangle to move the adjoint across.
    DenseMatrix bbar = dcgp::tri_solve(f, g, !transpose);
    if (requires_grad(b)) accumulate(b.id, bbar);
    if (requires_grad(l)) {
      DenseMatrix outer = transpose ? dcgp::matmul(x, dcgp::transpose(bbar))
                                    : dcgp::matmul(bbar, dcgp::transpose(x));
      accumulate(l.id, dcgp::scale(lower_triangle(outer), -1.0));
    }
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::sum_log_diag(Var l) {
  const DenseMatrix &lv = value(l);
  double acc = 0.0;
  for (std::size_t i = 0; i < lv.rows(); ++i) acc += std::log(lv(i, i));
  const bool rg = requires_grad(l);
  Var out{nodes_.size()};
  auto back = [this, l, out]() {
    const double g = nodes_[out.id].grad.flat(0);
    const DenseMatrix &lv = value(l);
    DenseMatrix contrib(lv.rows(), lv.cols());
    for (std::size_t i = 0; i < lv.rows(); ++i) contrib(i, i) = g / lv(i, i);
    accumulate(l.id, contrib);
  };
  return push(DenseMatrix(1, 1, acc), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::rbf_kernel(Var a, Var b, Var log_lengthscale, Var log_variance) {
  const DenseMatrix &av = value(a);
  const DenseMatrix &bv = value(b);
  if (av.cols() != bv.cols()) {
    throw DimensionMismatch("rbf_kernel: patch dimensions differ");
  }
  const bool symmetric = a.id == b.id;
  const double ls = std::exp(value(log_lengthscale).flat(0));
  const double var = std::exp(value(log_variance).flat(0));
  const double inv2l2 = 1.0 / (2.0 * ls * ls);

  DenseMatrix d2(av.rows(), bv.rows());
  if (symmetric) {
    for (std::size_t i = 0; i < av.rows(); ++i) {
      for (std::size_t j = i + 1; j < av.rows(); ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < av.cols(); ++k) {
          const double diff = av(i, k) - av(j, k);
          acc += diff * diff;
        }
        d2(i, j) = acc;
        d2(j, i) = acc;
      }
    }
  } else {
    d2 = squared_distances(av, bv);
  }
  DenseMatrix k(d2.rows(), d2.cols());
  for (std::size_t i = 0; i < d2.size(); ++i) {
    k.flat(i) = var * std::exp(-d2.flat(i) * inv2l2);
  }

  const bool rg = requires_grad(a) || requires_grad(b) ||
                  requires_grad(log_lengthscale) || requires_grad(log_variance);
  Var out{nodes_.size()};
  auto back = [this, a, b, log_lengthscale, log_variance, out]() {
    const DenseMatrix &g = nodes_[out.id].grad;
    const DenseMatrix &kv = nodes_[out.id].value;
    const DenseMatrix &d2v = nodes_[out.id].aux;
    const DenseMatrix &av = value(a);
    const DenseMatrix &bv = value(b);
    const double ls = std::exp(value(log_lengthscale).flat(0));
    const double invl2 = 1.0 / (ls * ls);
    DenseMatrix w = dcgp::hadamard(g, kv);

    if (requires_grad(log_variance)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) acc += w.flat(i);
      accumulate(log_variance.id, DenseMatrix(1, 1, acc));
    }
    if (requires_grad(log_lengthscale)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) acc += w.flat(i) * d2v.flat(i);
      accumulate(log_lengthscale.id, DenseMatrix(1, 1, acc * invl2));
    }
    if (requires_grad(a)) {
      DenseMatrix contrib = dcgp::matmul(w, bv);
      for (std::size_t i = 0; i < av.rows(); ++i) {
        double row_w = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) row_w += w(i, j);
        for (std::size_t k = 0; k < av.cols(); ++k) {
          contrib(i, k) = (contrib(i, k) - row_w * av(i, k)) * invl2;
        }
      }
      accumulate(a.id, contrib);
    }
    if (requires_grad(b)) {
      DenseMatrix contrib = dcgp::matmul(dcgp::transpose(w), av);
      for (std::size_t j = 0; j < bv.rows(); ++j) {
        double col_w = 0.0;
        for (std::size_t i = 0; i < w.rows(); ++i) col_w += w(i, j);
        for (std::size_t k = 0; k < bv.cols(); ++k) {
          contrib(j, k) = (contrib(j, k) - col_w * bv(j, k)) * invl2;
        }
      }
      accumulate(b.id, contrib);
    }
  };
  Var v = push(std::move(k), rg, rg ? std::function<void()>(back) : nullptr);
  nodes_[v.id].aux = std::move(d2);
  return v;
}

Var Tape::gather_flat(Var src, std::vector<std::uint32_t> idx, std::size_t rows,
                      std::size_t cols) {
  if (idx.size() != rows * cols) {
    throw DimensionMismatch("gather_flat: index count does not match output shape");
  }
  const DenseMatrix &sv = value(src);
  DenseMatrix v(rows, cols);
  for (std::size_t k = 0; k < idx.size(); ++k) v.flat(k) = sv.flat(idx[k]);
  const bool rg = requires_grad(src);
  Var out{nodes_.size()};
  auto back = [this, src, idx = std::move(idx), out]() {
    const DenseMatrix &g = nodes_[out.id].grad;
    const DenseMatrix &sv = value(src);
    DenseMatrix contrib(sv.rows(), sv.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) contrib.flat(idx[k]) += g.flat(k);
    accumulate(src.id, contrib);
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::concat_cols(const std::vector<Var> &columns) {
  if (columns.empty()) throw DimensionMismatch("concat_cols: no columns");
  const std::size_t rows = value(columns.front()).rows();
  DenseMatrix v(rows, columns.size());
  bool rg = false;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const DenseMatrix &col = value(columns[c]);
    if (col.rows() != rows || col.cols() != 1) {
      throw DimensionMismatch("concat_cols: column shape mismatch");
    }
    for (std::size_t i = 0; i < rows; ++i) v(i, c) = col(i, 0);
    rg = rg || requires_grad(columns[c]);
  }
  Var out{nodes_.size()};
  auto back = [this, columns, out]() {
    const DenseMatrix &g = nodes_[out.id].grad;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (!requires_grad(columns[c])) continue;
      DenseMatrix contrib(g.rows(), 1);
      for (std::size_t i = 0; i < g.rows(); ++i) contrib(i, 0) = g(i, c);
      accumulate(columns[c].id, contrib);
    }
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::tril_softplus_diag(Var raw) {
  const DenseMatrix &rv = value(raw);
  if (rv.rows() != rv.cols()) {
    throw DimensionMismatch("tril_softplus_diag: matrix not square");
  }
  DenseMatrix v(rv.rows(), rv.cols());
  for (std::size_t i = 0; i < rv.rows(); ++i) {
    for (std::size_t j = 0; j < i; ++j) v(i, j) = rv(i, j);
    v(i, i) = softplus(rv(i, i));
  }
  const bool rg = requires_grad(raw);
  Var out{nodes_.size()};
  auto back = [this, raw, out]() {
    const DenseMatrix &g = nodes_[out.id].grad;
    const DenseMatrix &rv = value(raw);
    DenseMatrix contrib(rv.rows(), rv.cols());
    for (std::size_t i = 0; i < rv.rows(); ++i) {
      for (std::size_t j = 0; j < i; ++j) contrib(i, j) = g(i, j);
      contrib(i, i) = g(i, i) * sigmoid(rv(i, i));
    }
    accumulate(raw.id, contrib);
  };
  return push(std::move(v), rg, rg ? std::function<void()>(back) : nullptr);
}

Var Tape::log_softmax_pick(Var logits, std::size_t y) {
  const DenseMatrix &lv = value(logits);
  if (lv.rows() != 1) throw DimensionMismatch("log_softmax_pick: logits must be 1 x C");
  if (y >= lv.cols()) throw LabelOutOfRange("log_softmax_pick: label out of range");
  double max_logit = lv.flat(0);
  for (std::size_t k = 1; k < lv.size(); ++k) max_logit = std::max(max_logit, lv.flat(k));
  double z = 0.0;
  for (std::size_t k = 0; k < lv.size(); ++k) z += std::exp(lv.flat(k) - max_logit);
  const double log_z = max_logit + std::log(z);
  const double val = lv.flat(y) - log_z;

  DenseMatrix softmax(1, lv.cols());
  for (std::size_t k = 0; k < lv.size(); ++k) softmax.flat(k) = std::exp(lv.flat(k) - log_z);

  const bool rg = requires_grad(logits);
  Var out{nodes_.size()};
  auto back = [this, logits, y, out]() {
    const double g = nodes_[out.id].grad.flat(0);
    const DenseMatrix &sm = nodes_[out.id].aux;
    DenseMatrix contrib(1, sm.cols());
    for (std::size_t k = 0; k < sm.size(); ++k) contrib.flat(k) = -g * sm.flat(k);
    contrib.flat(y) += g;
    accumulate(logits.id, contrib);
  };
  Var v = push(DenseMatrix(1, 1, val), rg, rg ? std::function<void()>(back) : nullptr);
  nodes_[v.id].aux = std::move(softmax);
  return v;
}

void Tape::backward(Var root) {
  if (value(root).size() != 1) {
    throw DimensionMismatch("backward: root must be scalar");
  }
  grad_ref(root.id).flat(0) = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node &n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward();
  }
}

}  // namespace dcgp

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dcgp/matrix.hpp"

namespace dcgp {

// Handle into a Tape. Default-constructed handles are invalid.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

// Reverse-mode tape over matrix-valued nodes. Each op records its value and a
// backward closure; backward() walks nodes in reverse construction order.
// Scalars are 1x1 matrices.
class Tape {
public:
  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  Var constant(DenseMatrix v);
  Var param(DenseMatrix v);
  Var scalar_constant(double v) { return constant(DenseMatrix(1, 1, v)); }

  const DenseMatrix &value(Var v) const { return nodes_[v.id].value; }
  const DenseMatrix &grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double s);
  Var matmul(Var a, Var b);
  Var transpose_of(Var a);
  Var sum(Var a);                                 // 1x1
  Var row_sum(Var a);                             // rows x 1
  Var fill(Var s, std::size_t rows, std::size_t cols);  // broadcast a scalar
  Var mul_scalar(Var a, Var s);                   // matrix times 1x1 scalar
  Var exp_of(Var a);                              // elementwise
  // sqrt(max(x, 0)); throws NegativeVariance below -1e-10 before clamping.
  Var sqrt_clamped(Var a);

  Var cholesky_of(Var a, double base_jitter);
  double cholesky_jitter(Var l) const;
  Var tri_solve_with(Var l, Var b, bool transpose);
  Var sum_log_diag(Var l);

  // RBF kernel matrix between the rows of a and b with log hyperparameters.
  // When a and b are the same node the result is made exactly symmetric.
  Var rbf_kernel(Var a, Var b, Var log_lengthscale, Var log_variance);

  // out.flat(k) = src.flat(idx[k]); adjoint scatters with accumulation.
  Var gather_flat(Var src, std::vector<std::uint32_t> idx, std::size_t rows,
                  std::size_t cols);

  // Column-wise concatenation of equally sized columns (each rows x 1).
  Var concat_cols(const std::vector<Var> &columns);

  // Lower triangle of raw with softplus applied to the diagonal.
  Var tril_softplus_diag(Var raw);

  // logits[y] - logsumexp(logits) for a 1 x C logits row.
  Var log_softmax_pick(Var logits, std::size_t y);

  // Seeds d(root)/d(root) = 1 and accumulates adjoints into every node that
  // requires grad. root must be 1x1.
  void backward(Var root);

private:
  struct Node {
    DenseMatrix value;
    DenseMatrix grad;
    bool requires_grad = false;
    std::function<void()> backward;
    double aux_scalar = 0.0;          // cholesky jitter
    DenseMatrix aux;                  // cached squared distances etc.
  };

  Var push(DenseMatrix value, bool requires_grad, std::function<void()> backward);
  void accumulate(std::size_t id, const DenseMatrix &contribution);
  DenseMatrix &grad_ref(std::size_t id);

  std::vector<Node> nodes_;
};

}  // namespace dcgp

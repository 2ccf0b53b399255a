#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass; backward() replays the
// recorded adjoint rules in reverse. Parameter leaves alias external storage,
// so gradients land directly in the caller's gradient buffer and accumulate
// across tapes until the caller clears them.
namespace capts::autograd {

class Tape {
 public:
  using Var = std::size_t;

  Tape() { nodes_.reserve(128); }

  // Leaf aliasing external value/gradient storage (rows x cols).
  Var parameter(const double* value, double* grad, int rows, int cols);
  // Leaf without gradient.
  Var constant(std::vector<double> values, int rows, int cols);
  Var zeros(int rows, int cols) { return constant(std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0), rows, cols); }

  // Rows of an external table; gradient is scattered back into table_grad.
  Var gather_rows(const double* table, double* table_grad, int cols, std::span<const int> rows);

  Var matmul(Var a, Var b);     // (n x k) * (k x m)
  Var matmul_nt(Var a, Var b);  // (n x k) * (m x k)^T
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcast a 1 x c row over every row of a
  Var scale(Var a, double s);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var concat_cols(Var a, Var b);
  Var broadcast_rows(Var row, int n);
  // Row softmax over columns with mask[col] != 0; fully masked rows give 0.
  Var masked_softmax_rows(Var a, std::span<const std::uint8_t> mask);
  Var clip(Var a, double lo, double hi);

  // Sum of w_i * BCE(p_i, y_i) over a column vector. Probabilities are
  // clamped to [eps, 1 - eps]; clamped entries pass no gradient.
  Var weighted_bce(Var p, std::span<const double> targets, std::span<const double> weights,
                   double eps, std::size_t* clamp_count = nullptr);
  // Sum of w_i * (p_i - t_i)^2 over a column vector.
  Var weighted_sq_error(Var p, std::span<const double> targets, std::span<const double> weights);

  void backward(Var root);

  int rows(Var v) const { return nodes_[v].rows; }
  int cols(Var v) const { return nodes_[v].cols; }
  std::span<const double> value(Var v) const {
    const auto& n = nodes_[v];
    return {n.val, static_cast<std::size_t>(n.rows) * n.cols};
  }
  std::span<const double> grad(Var v) const {
    const auto& n = nodes_[v];
    return {n.grad, n.grad ? static_cast<std::size_t>(n.rows) * n.cols : 0};
  }
  double scalar(Var v) const { return nodes_[v].val[0]; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    int rows = 0;
    int cols = 0;
    const double* val = nullptr;
    double* grad = nullptr;  // null when no gradient flows into this node
    std::vector<double> own_val;
    std::vector<double> own_grad;
    std::function<void(Tape&)> backward;
  };

  Var push(int rows, int cols, bool needs_grad);
  double* mval(Var v) { return nodes_[v].own_val.data(); }
  Node& node(Var v) { return nodes_[v]; }

  std::vector<Node> nodes_;
};

}  // namespace capts::autograd

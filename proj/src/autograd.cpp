#include "capts/autograd.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

namespace capts::autograd {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Tape::Var Tape::push(int rows, int cols, bool needs_grad) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  const auto size = static_cast<std::size_t>(rows) * cols;
  n.own_val.assign(size, 0.0);
  if (needs_grad) n.own_grad.assign(size, 0.0);
  nodes_.push_back(std::move(n));
  auto& back = nodes_.back();
  back.val = back.own_val.data();
  back.grad = needs_grad ? back.own_grad.data() : nullptr;
  return nodes_.size() - 1;
}

Tape::Var Tape::parameter(const double* value, double* grad, int rows, int cols) {
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.val = value;
  n.grad = grad;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tape::Var Tape::constant(std::vector<double> values, int rows, int cols) {
  require(values.size() == static_cast<std::size_t>(rows) * cols, "constant: size mismatch");
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.own_val = std::move(values);
  nodes_.push_back(std::move(n));
  nodes_.back().val = nodes_.back().own_val.data();
  return nodes_.size() - 1;
}

Tape::Var Tape::gather_rows(const double* table, double* table_grad, int cols, std::span<const int> rows) {
  const int n = static_cast<int>(rows.size());
  const Var out = push(n, cols, table_grad != nullptr);
  double* o = mval(out);
  for (int r = 0; r < n; ++r)
    std::copy_n(table + static_cast<std::size_t>(rows[r]) * cols, cols, o + static_cast<std::size_t>(r) * cols);
  if (table_grad) {
    std::vector<int> idx(rows.begin(), rows.end());
    node(out).backward = [out, table_grad, cols, idx = std::move(idx)](Tape& t) {
      const double* g = t.node(out).grad;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        double* dst = table_grad + static_cast<std::size_t>(idx[r]) * cols;
        const double* src = g + r * cols;
        for (int c = 0; c < cols; ++c) dst[c] += src[c];
      }
    };
  }
  return out;
}

Tape::Var Tape::matmul(Var a, Var b) {
  const int n = rows(a), k = cols(a), m = cols(b);
  require(rows(b) == k, "matmul: inner dimension mismatch");
  const bool ng = node(a).grad || node(b).grad;
  const Var out = push(n, m, ng);
  MMap(mval(out), n, m).noalias() = CMap(node(a).val, n, k) * CMap(node(b).val, k, m);
  if (ng) {
    node(out).backward = [a, b, out, n, k, m](Tape& t) {
      const CMap G(t.node(out).grad, n, m);
      if (double* ga = t.node(a).grad) MMap(ga, n, k).noalias() += G * CMap(t.node(b).val, k, m).transpose();
      if (double* gb = t.node(b).grad) MMap(gb, k, m).noalias() += CMap(t.node(a).val, n, k).transpose() * G;
    };
  }
  return out;
}

Tape::Var Tape::matmul_nt(Var a, Var b) {
  const int n = rows(a), k = cols(a), m = rows(b);
  require(cols(b) == k, "matmul_nt: inner dimension mismatch");
  const bool ng = node(a).grad || node(b).grad;
  const Var out = push(n, m, ng);
  MMap(mval(out), n, m).noalias() = CMap(node(a).val, n, k) * CMap(node(b).val, m, k).transpose();
  if (ng) {
    node(out).backward = [a, b, out, n, k, m](Tape& t) {
      const CMap G(t.node(out).grad, n, m);
      if (double* ga = t.node(a).grad) MMap(ga, n, k).noalias() += G * CMap(t.node(b).val, m, k);
      if (double* gb = t.node(b).grad) MMap(gb, m, k).noalias() += G.transpose() * CMap(t.node(a).val, n, k);
    };
  }
  return out;
}

Tape::Var Tape::add(Var a, Var b) {
  require(rows(a) == rows(b) && cols(a) == cols(b), "add: shape mismatch");
  const bool ng = node(a).grad || node(b).grad;
  const Var out = push(rows(a), cols(a), ng);
  const auto size = static_cast<std::size_t>(rows(a)) * cols(a);
  for (std::size_t i = 0; i < size; ++i) mval(out)[i] = node(a).val[i] + node(b).val[i];
  if (ng) {
    node(out).backward = [a, b, out, size](Tape& t) {
      const double* G = t.node(out).grad;
      if (double* ga = t.node(a).grad)
        for (std::size_t i = 0; i < size; ++i) ga[i] += G[i];
      if (double* gb = t.node(b).grad)
        for (std::size_t i = 0; i < size; ++i) gb[i] += G[i];
    };
  }
  return out;
}

Tape::Var Tape::add_row(Var a, Var row) {
  const int n = rows(a), c = cols(a);
  require(rows(row) == 1 && cols(row) == c, "add_row: shape mismatch");
  const bool ng = node(a).grad || node(row).grad;
  const Var out = push(n, c, ng);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) mval(out)[i * c + j] = node(a).val[i * c + j] + node(row).val[j];
  if (ng) {
    node(out).backward = [a, row, out, n, c](Tape& t) {
      const double* G = t.node(out).grad;
      if (double* ga = t.node(a).grad)
        for (int i = 0; i < n * c; ++i) ga[i] += G[i];
      if (double* gr = t.node(row).grad)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < c; ++j) gr[j] += G[i * c + j];
    };
  }
  return out;
}

Tape::Var Tape::scale(Var a, double s) {
  const bool ng = node(a).grad != nullptr;
  const Var out = push(rows(a), cols(a), ng);
  const auto size = static_cast<std::size_t>(rows(a)) * cols(a);
  for (std::size_t i = 0; i < size; ++i) mval(out)[i] = s * node(a).val[i];
  if (ng) {
    node(out).backward = [a, out, size, s](Tape& t) {
      const double* G = t.node(out).grad;
      double* ga = t.node(a).grad;
      for (std::size_t i = 0; i < size; ++i) ga[i] += s * G[i];
    };
  }
  return out;
}

Tape::Var Tape::tanh(Var a) {
  const bool ng = node(a).grad != nullptr;
  const Var out = push(rows(a), cols(a), ng);
  const auto size = static_cast<std::size_t>(rows(a)) * cols(a);
  for (std::size_t i = 0; i < size; ++i) mval(out)[i] = std::tanh(node(a).val[i]);
  if (ng) {
    node(out).backward = [a, out, size](Tape& t) {
      const double* G = t.node(out).grad;
      const double* Y = t.node(out).val;
      double* ga = t.node(a).grad;
      for (std::size_t i = 0; i < size; ++i) ga[i] += G[i] * (1.0 - Y[i] * Y[i]);
    };
  }
  return out;
}

Tape::Var Tape::sigmoid(Var a) {
  const bool ng = node(a).grad != nullptr;
  const Var out = push(rows(a), cols(a), ng);
  const auto size = static_cast<std::size_t>(rows(a)) * cols(a);
  for (std::size_t i = 0; i < size; ++i) mval(out)[i] = stable_sigmoid(node(a).val[i]);
  if (ng) {
    node(out).backward = [a, out, size](Tape& t) {
      const double* G = t.node(out).grad;
      const double* Y = t.node(out).val;
      double* ga = t.node(a).grad;
      for (std::size_t i = 0; i < size; ++i) ga[i] += G[i] * Y[i] * (1.0 - Y[i]);
    };
  }
  return out;
}

Tape::Var Tape::concat_cols(Var a, Var b) {
  const int n = rows(a), ca = cols(a), cb = cols(b);
  require(rows(b) == n, "concat_cols: row mismatch");
  const bool ng = node(a).grad || node(b).grad;
  const int c = ca + cb;
  const Var out = push(n, c, ng);
  for (int i = 0; i < n; ++i) {
    std::copy_n(node(a).val + i * ca, ca, mval(out) + i * c);
    std::copy_n(node(b).val + i * cb, cb, mval(out) + i * c + ca);
  }
  if (ng) {
    node(out).backward = [a, b, out, n, ca, cb, c](Tape& t) {
      const double* G = t.node(out).grad;
      if (double* ga = t.node(a).grad)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < ca; ++j) ga[i * ca + j] += G[i * c + j];
      if (double* gb = t.node(b).grad)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < cb; ++j) gb[i * cb + j] += G[i * c + ca + j];
    };
  }
  return out;
}

Tape::Var Tape::broadcast_rows(Var row, int n) {
  const int c = cols(row);
  require(rows(row) == 1, "broadcast_rows: expects a single row");
  const bool ng = node(row).grad != nullptr;
  const Var out = push(n, c, ng);
  for (int i = 0; i < n; ++i) std::copy_n(node(row).val, c, mval(out) + i * c);
  if (ng) {
    node(out).backward = [row, out, n, c](Tape& t) {
      const double* G = t.node(out).grad;
      double* gr = t.node(row).grad;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) gr[j] += G[i * c + j];
    };
  }
  return out;
}

Tape::Var Tape::masked_softmax_rows(Var a, std::span<const std::uint8_t> mask) {
  const int n = rows(a), c = cols(a);
  require(mask.size() == static_cast<std::size_t>(c), "masked_softmax_rows: mask size mismatch");
  const bool ng = node(a).grad != nullptr;
  const Var out = push(n, c, ng);
  const double* A = node(a).val;
  double* Y = mval(out);
  for (int i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (int j = 0; j < c; ++j)
      if (mask[j]) mx = std::max(mx, A[i * c + j]);
    if (mx == -INFINITY) continue;  // nothing unmasked: row stays zero
    double z = 0.0;
    for (int j = 0; j < c; ++j)
      if (mask[j]) z += (Y[i * c + j] = std::exp(A[i * c + j] - mx));
    for (int j = 0; j < c; ++j) Y[i * c + j] /= z;
  }
  if (ng) {
    node(out).backward = [a, out, n, c](Tape& t) {
      const double* G = t.node(out).grad;
      const double* Y = t.node(out).val;
      double* ga = t.node(a).grad;
      for (int i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += G[i * c + j] * Y[i * c + j];
        for (int j = 0; j < c; ++j) ga[i * c + j] += Y[i * c + j] * (G[i * c + j] - dot);
      }
    };
  }
  return out;
}

Tape::Var Tape::clip(Var a, double lo, double hi) {
  const bool ng = node(a).grad != nullptr;
  const Var out = push(rows(a), cols(a), ng);
  const auto size = static_cast<std::size_t>(rows(a)) * cols(a);
  for (std::size_t i = 0; i < size; ++i) mval(out)[i] = std::clamp(node(a).val[i], lo, hi);
  if (ng) {
    node(out).backward = [a, out, size, lo, hi](Tape& t) {
      const double* G = t.node(out).grad;
      const double* X = t.node(a).val;
      double* ga = t.node(a).grad;
      for (std::size_t i = 0; i < size; ++i)
        if (X[i] > lo && X[i] < hi) ga[i] += G[i];
    };
  }
  return out;
}

Tape::Var Tape::weighted_bce(Var p, std::span<const double> targets, std::span<const double> weights,
                             double eps, std::size_t* clamp_count) {
  const auto n = static_cast<std::size_t>(rows(p)) * cols(p);
  require(targets.size() == n && weights.size() == n, "weighted_bce: size mismatch");
  const bool ng = node(p).grad != nullptr;
  const Var out = push(1, 1, ng);
  const double* P = node(p).val;
  double loss = 0.0;
  std::vector<double> dp(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double q = P[i];
    const bool clamped = q < eps || q > 1.0 - eps;
    if (clamped) {
      q = std::clamp(q, eps, 1.0 - eps);
      if (clamp_count) ++*clamp_count;
    }
    const double y = targets[i];
    loss -= weights[i] * (y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
    if (!clamped) dp[i] = weights[i] * ((1.0 - y) / (1.0 - q) - y / q);
  }
  mval(out)[0] = loss;
  if (ng) {
    node(out).backward = [p, out, dp = std::move(dp)](Tape& t) {
      const double g = t.node(out).grad[0];
      double* gp = t.node(p).grad;
      for (std::size_t i = 0; i < dp.size(); ++i) gp[i] += g * dp[i];
    };
  }
  return out;
}

Tape::Var Tape::weighted_sq_error(Var p, std::span<const double> targets, std::span<const double> weights) {
  const auto n = static_cast<std::size_t>(rows(p)) * cols(p);
  require(targets.size() == n && weights.size() == n, "weighted_sq_error: size mismatch");
  const bool ng = node(p).grad != nullptr;
  const Var out = push(1, 1, ng);
  const double* P = node(p).val;
  double loss = 0.0;
  std::vector<double> dp(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = P[i] - targets[i];
    loss += weights[i] * d * d;
    dp[i] = 2.0 * weights[i] * d;
  }
  mval(out)[0] = loss;
  if (ng) {
    node(out).backward = [p, out, dp = std::move(dp)](Tape& t) {
      const double g = t.node(out).grad[0];
      double* gp = t.node(p).grad;
      for (std::size_t i = 0; i < dp.size(); ++i) gp[i] += g * dp[i];
    };
  }
  return out;
}

void Tape::backward(Var root) {
  require(rows(root) == 1 && cols(root) == 1, "backward: root must be a scalar");
  if (!node(root).grad) return;
  node(root).grad[0] += 1.0;
  for (Var v = root + 1; v-- > 0;)
    if (nodes_[v].backward) nodes_[v].backward(*this);
}

}  // namespace capts::autograd

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "okdd/tensor.hpp"

namespace okdd {

// Floor applied to probabilities before log/divide so losses never hit -inf.
inline constexpr double kProbFloor = 1e-12;

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch between " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
}

inline void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.shape().size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     " tensor, got shape " + shape_str(t.shape()));
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw ShapeError("matmul: inner dimensions of " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not agree");
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  {
    const double* A = a.values().data();
    const double* B = b.values().data();
    for (int i = 0; i < m; ++i)
      for (int l = 0; l < k; ++l) {
        const double av = A[i * k + l];
        const double* Br = B + static_cast<std::size_t>(l) * n;
        double* Or = out.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) Or[j] += av * Br[j];
      }
  }
  Tensor r = detail::op_result({m, n}, std::move(out), a.requires_grad() || b.requires_grad());
  detail::record(r, [an = a.node(), bn = b.node(), on = r.node(), m, k, n] {
    const double* G = on->grad.data();
    if (an->requires_grad) {
      an->ensure_grad();
      const double* B = bn->values.data();
      for (int i = 0; i < m; ++i)
        for (int l = 0; l < k; ++l) {
          const double* Gr = G + static_cast<std::size_t>(i) * n;
          const double* Br = B + static_cast<std::size_t>(l) * n;
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += Gr[j] * Br[j];
          an->grad[static_cast<std::size_t>(i) * k + l] += acc;
        }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      const double* A = an->values.data();
      for (int i = 0; i < m; ++i)
        for (int l = 0; l < k; ++l) {
          const double av = A[i * k + l];
          const double* Gr = G + static_cast<std::size_t>(i) * n;
          double* Dr = bn->grad.data() + static_cast<std::size_t>(l) * n;
          for (int j = 0; j < n; ++j) Dr[j] += av * Gr[j];
        }
    }
  });
  return r;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::int64_t i = 0; i < b.size(); ++i) out[i] += b.values()[i];
  Tensor r = detail::op_result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
  detail::record(r, [an = a.node(), bn = b.node(), on = r.node()] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
    }
  });
  return r;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::int64_t i = 0; i < b.size(); ++i) out[i] -= b.values()[i];
  Tensor r = detail::op_result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
  detail::record(r, [an = a.node(), bn = b.node(), on = r.node()] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
    }
  });
  return r;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::int64_t i = 0; i < b.size(); ++i) out[i] *= b.values()[i];
  Tensor r = detail::op_result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
  detail::record(r, [an = a.node(), bn = b.node(), on = r.node()] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += on->grad[i] * bn->values[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        bn->grad[i] += on->grad[i] * an->values[i];
    }
  });
  return r;
}

// rows of x plus a single bias row
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank("add_bias", x, 2);
  detail::require_rank("add_bias", bias, 1);
  const int rows = x.shape()[0], cols = x.shape()[1];
  if (bias.shape()[0] != cols)
    throw ShapeError("add_bias: bias shape " + shape_str(bias.shape()) +
                     " does not match row width of " + shape_str(x.shape()));
  std::vector<double> out(x.values().begin(), x.values().end());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out[static_cast<std::size_t>(i) * cols + j] += bias.values()[j];
  Tensor r = detail::op_result(x.shape(), std::move(out), x.requires_grad() || bias.requires_grad());
  detail::record(r, [xn = x.node(), bn = bias.node(), on = r.node(), rows, cols] {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
          bn->grad[j] += on->grad[static_cast<std::size_t>(i) * cols + j];
    }
  });
  return r;
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  Tensor r = detail::op_result(x.shape(), std::move(out), x.requires_grad());
  detail::record(r, [xn = x.node(), on = r.node()] {
    xn->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i)
      if (xn->values[i] > 0.0) xn->grad[i] += on->grad[i];
  });
  return r;
}

inline Tensor exp(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = std::exp(v);
  Tensor r = detail::op_result(x.shape(), std::move(out), x.requires_grad());
  detail::record(r, [xn = x.node(), on = r.node()] {
    xn->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * on->values[i];
  });
  return r;
}

inline Tensor log(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = std::log(v);
  Tensor r = detail::op_result(x.shape(), std::move(out), x.requires_grad());
  detail::record(r, [xn = x.node(), on = r.node()] {
    xn->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] / xn->values[i];
  });
  return r;
}

inline Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= c;
  Tensor r = detail::op_result(x.shape(), std::move(out), x.requires_grad());
  detail::record(r, [xn = x.node(), on = r.node(), c] {
    xn->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += c * on->grad[i];
  });
  return r;
}

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor r = detail::op_result({1}, {acc}, x.requires_grad());
  detail::record(r, [xn = x.node(), on = r.node()] {
    xn->ensure_grad();
    const double g = on->grad[0];
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
  });
  return r;
}

inline Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor r = detail::op_result({1}, {acc / n}, x.requires_grad());
  detail::record(r, [xn = x.node(), on = r.node(), n] {
    xn->ensure_grad();
    const double g = on->grad[0] / n;
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
  });
  return r;
}

namespace detail {

inline Tensor reduce_axis(const Tensor& x, int axis, bool take_mean, const char* op) {
  require_rank(op, x, 2);
  if (axis != 0 && axis != 1)
    throw ShapeError(std::string(op) + ": axis must be 0 or 1, got " + std::to_string(axis));
  const int rows = x.shape()[0], cols = x.shape()[1];
  const int out_len = axis == 0 ? cols : rows;
  const double div = take_mean ? static_cast<double>(axis == 0 ? rows : cols) : 1.0;
  std::vector<double> out(static_cast<std::size_t>(out_len), 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      out[axis == 0 ? j : i] += x.values()[static_cast<std::size_t>(i) * cols + j];
  for (double& v : out) v /= div;
  Tensor r = op_result({out_len}, std::move(out), x.requires_grad());
  record(r, [xn = x.node(), on = r.node(), rows, cols, axis, div] {
    xn->ensure_grad();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j)
        xn->grad[static_cast<std::size_t>(i) * cols + j] += on->grad[axis == 0 ? j : i] / div;
  });
  return r;
}

}  // namespace detail

inline Tensor sum_axis(const Tensor& x, int axis) {
  return detail::reduce_axis(x, axis, false, "sum_axis");
}

inline Tensor mean_axis(const Tensor& x, int axis) {
  return detail::reduce_axis(x, axis, true, "mean_axis");
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.values().begin(), x.values().end());
  Tensor r = detail::op_result(std::move(shape), std::move(out), x.requires_grad());
  detail::record(r, [xn = x.node(), on = r.node()] {
    xn->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
  });
  return r;
}

// collapse everything after the leading (batch) dimension
inline Tensor flatten(const Tensor& x) {
  if (x.shape().empty()) throw ShapeError("flatten: rank-0 tensor");
  const int batch = x.shape()[0];
  return reshape(x, {batch, static_cast<int>(x.size() / batch)});
}

// same-padded stride-1 convolution, odd square kernels
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  detail::require_rank("conv2d", x, 4);
  detail::require_rank("conv2d", w, 4);
  detail::require_rank("conv2d", bias, 1);
  const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int O = w.shape()[0], KC = w.shape()[1], KH = w.shape()[2], KW = w.shape()[3];
  if (KC != C || KH != KW || KH % 2 == 0)
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  if (bias.shape()[0] != O)
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(O) + " output channels");
  const int P = KH / 2;
  std::vector<double> out(static_cast<std::size_t>(B) * O * H * W, 0.0);
  const double* X = x.values().data();
  const double* K = w.values().data();
  auto xi = [&](int b, int c, int y, int xx) {
    return ((static_cast<std::size_t>(b) * C + c) * H + y) * W + xx;
  };
  auto oi = [&](int b, int o, int y, int xx) {
    return ((static_cast<std::size_t>(b) * O + o) * H + y) * W + xx;
  };
  auto ki = [&](int o, int c, int dy, int dx) {
    return ((static_cast<std::size_t>(o) * C + c) * KH + dy) * KW + dx;
  };
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          double acc = bias.values()[o];
          for (int c = 0; c < C; ++c)
            for (int dy = 0; dy < KH; ++dy) {
              const int sy = y + dy - P;
              if (sy < 0 || sy >= H) continue;
              for (int dx = 0; dx < KW; ++dx) {
                const int sx = xx + dx - P;
                if (sx < 0 || sx >= W) continue;
                acc += X[xi(b, c, sy, sx)] * K[ki(o, c, dy, dx)];
              }
            }
          out[oi(b, o, y, xx)] = acc;
        }
  const bool rg = x.requires_grad() || w.requires_grad() || bias.requires_grad();
  Tensor r = detail::op_result({B, O, H, W}, std::move(out), rg);
  detail::record(r, [xn = x.node(), wn = w.node(), bn = bias.node(), on = r.node(), B, C, H, W, O,
                     KH, KW, P] {
    auto xat = [&](int b, int c, int y, int xx) {
      return ((static_cast<std::size_t>(b) * C + c) * H + y) * W + xx;
    };
    auto oat = [&](int b, int o, int y, int xx) {
      return ((static_cast<std::size_t>(b) * O + o) * H + y) * W + xx;
    };
    auto kat = [&](int o, int c, int dy, int dx) {
      return ((static_cast<std::size_t>(o) * C + c) * KH + dy) * KW + dx;
    };
    const double* G = on->grad.data();
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
          for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) bn->grad[o] += G[oat(b, o, y, xx)];
    }
    if (xn->requires_grad || wn->requires_grad) {
      if (xn->requires_grad) xn->ensure_grad();
      if (wn->requires_grad) wn->ensure_grad();
      for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
          for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
              const double g = G[oat(b, o, y, xx)];
              if (g == 0.0) continue;
              for (int c = 0; c < C; ++c)
                for (int dy = 0; dy < KH; ++dy) {
                  const int sy = y + dy - P;
                  if (sy < 0 || sy >= H) continue;
                  for (int dx = 0; dx < KW; ++dx) {
                    const int sx = xx + dx - P;
                    if (sx < 0 || sx >= W) continue;
                    if (xn->requires_grad)
                      xn->grad[xat(b, c, sy, sx)] += g * wn->values[kat(o, c, dy, dx)];
                    if (wn->requires_grad)
                      wn->grad[kat(o, c, dy, dx)] += g * xn->values[xat(b, c, sy, sx)];
                  }
                }
            }
    }
  });
  return r;
}

// 2x2 max pooling, stride 2; ties break toward scan order (top-left first)
inline Tensor maxpool2(const Tensor& x) {
  detail::require_rank("maxpool2", x, 4);
  const int B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  if (H % 2 != 0 || W % 2 != 0)
    throw ShapeError("maxpool2: spatial dims of " + shape_str(x.shape()) + " must be even");
  const int OH = H / 2, OW = W / 2;
  std::vector<double> out(static_cast<std::size_t>(B) * C * OH * OW);
  std::vector<std::int64_t> argmax(out.size());
  const double* X = x.values().data();
  std::size_t oidx = 0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < OH; ++y)
        for (int xx = 0; xx < OW; ++xx, ++oidx) {
          double best = -1e300;
          std::int64_t best_i = -1;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t i =
                  ((static_cast<std::size_t>(b) * C + c) * H + 2 * y + dy) * W + 2 * xx + dx;
              if (X[i] > best) {
                best = X[i];
                best_i = static_cast<std::int64_t>(i);
              }
            }
          out[oidx] = best;
          argmax[oidx] = best_i;
        }
  Tensor r = detail::op_result({B, C, OH, OW}, std::move(out), x.requires_grad());
  detail::record(r, [xn = x.node(), on = r.node(), argmax = std::move(argmax)] {
    xn->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i)
      xn->grad[static_cast<std::size_t>(argmax[i])] += on->grad[i];
  });
  return r;
}

// Row-wise softmax of logits/T with max-subtraction stabilization.
inline Tensor softmax(const Tensor& logits, double temperature) {
  detail::require_rank("softmax", logits, 2);
  if (!(temperature > 0.0))
    throw std::invalid_argument("softmax: temperature must be positive, got " +
                                std::to_string(temperature));
  for (double v : logits.values())
    if (!std::isfinite(v)) throw std::invalid_argument("softmax: non-finite logit");
  const int rows = logits.shape()[0], cols = logits.shape()[1];
  std::vector<double> out(logits.values().begin(), logits.values().end());
  for (int i = 0; i < rows; ++i) {
    double* row = out.data() + static_cast<std::size_t>(i) * cols;
    double mx = -1e300;
    for (int j = 0; j < cols; ++j) {
      row[j] /= temperature;
      mx = std::max(mx, row[j]);
    }
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      denom += row[j];
    }
    for (int j = 0; j < cols; ++j) row[j] /= denom;
  }
  Tensor r = detail::op_result(logits.shape(), std::move(out), logits.requires_grad());
  detail::record(r, [xn = logits.node(), on = r.node(), rows, cols, temperature] {
    xn->ensure_grad();
    for (int i = 0; i < rows; ++i) {
      const double* q = on->values.data() + static_cast<std::size_t>(i) * cols;
      const double* g = on->grad.data() + static_cast<std::size_t>(i) * cols;
      double dot = 0.0;
      for (int j = 0; j < cols; ++j) dot += g[j] * q[j];
      double* dx = xn->grad.data() + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) dx[j] += q[j] * (g[j] - dot) / temperature;
    }
  });
  return r;
}

// -mean_i log q[i, label_i], with the probability floor applied inside log.
inline Tensor cross_entropy(const Tensor& q, std::span<const int> labels) {
  detail::require_rank("cross_entropy", q, 2);
  const int rows = q.shape()[0], cols = q.shape()[1];
  if (static_cast<int>(labels.size()) != rows)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  for (int i = 0; i < rows; ++i)
    if (labels[i] < 0 || labels[i] >= cols)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) +
                                  " outside [0, " + std::to_string(cols) + ")");
  double acc = 0.0;
  for (int i = 0; i < rows; ++i)
    acc -= std::log(std::max(q.values()[static_cast<std::size_t>(i) * cols + labels[i]], kProbFloor));
  Tensor r = detail::op_result({1}, {acc / rows}, q.requires_grad());
  detail::record(r, [qn = q.node(), on = r.node(),
                     labels = std::vector<int>(labels.begin(), labels.end()), rows, cols] {
    qn->ensure_grad();
    const double g = on->grad[0];
    for (int i = 0; i < rows; ++i) {
      const std::size_t idx = static_cast<std::size_t>(i) * cols + labels[i];
      const double v = qn->values[idx];
      if (v > kProbFloor) qn->grad[idx] -= g / (rows * v);
    }
  });
  return r;
}

// mean over rows of sum_j t_j * log(t_j / q_j), with 0 * log(0/x) == 0 and the
// probability floor applied before division. Differentiable in both arguments.
inline Tensor kl_divergence(const Tensor& t, const Tensor& q) {
  detail::require_same_shape("kl_divergence", t, q);
  detail::require_rank("kl_divergence", t, 2);
  const int rows = t.shape()[0];
  double acc = 0.0;
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const double tv = t.values()[i];
    if (tv <= 0.0) continue;
    acc += tv * (std::log(std::max(tv, kProbFloor)) - std::log(std::max(q.values()[i], kProbFloor)));
  }
  Tensor r = detail::op_result({1}, {acc / rows}, t.requires_grad() || q.requires_grad());
  detail::record(r, [tn = t.node(), qn = q.node(), on = r.node(), rows] {
    const double g = on->grad[0] / rows;
    if (qn->requires_grad) {
      qn->ensure_grad();
      for (std::size_t i = 0; i < qn->values.size(); ++i) {
        const double tv = tn->values[i], qv = qn->values[i];
        if (tv > 0.0 && qv > kProbFloor) qn->grad[i] -= g * tv / qv;
      }
    }
    if (tn->requires_grad) {
      tn->ensure_grad();
      for (std::size_t i = 0; i < tn->values.size(); ++i) {
        const double tv = tn->values[i];
        if (tv > kProbFloor)
          tn->grad[i] += g * (std::log(tv / std::max(qn->values[i], kProbFloor)) + 1.0);
      }
    }
  });
  return r;
}

inline Tensor select_col(const Tensor& x, int col) {
  detail::require_rank("select_col", x, 2);
  const int rows = x.shape()[0], cols = x.shape()[1];
  if (col < 0 || col >= cols)
    throw ShapeError("select_col: column " + std::to_string(col) + " outside " +
                     shape_str(x.shape()));
  std::vector<double> out(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) out[i] = x.values()[static_cast<std::size_t>(i) * cols + col];
  Tensor r = detail::op_result({rows}, std::move(out), x.requires_grad());
  detail::record(r, [xn = x.node(), on = r.node(), rows, cols, col] {
    xn->ensure_grad();
    for (int i = 0; i < rows; ++i)
      xn->grad[static_cast<std::size_t>(i) * cols + col] += on->grad[i];
  });
  return r;
}

inline Tensor concat_cols(std::span<const Tensor> cols) {
  detail::require(!cols.empty(), "concat_cols: no columns");
  const int rows = cols[0].shape()[0];
  bool rg = false;
  for (const Tensor& c : cols) {
    detail::require_rank("concat_cols", c, 1);
    detail::require_same_shape("concat_cols", cols[0], c);
    rg = rg || c.requires_grad();
  }
  const int k = static_cast<int>(cols.size());
  std::vector<double> out(static_cast<std::size_t>(rows) * k);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(i) * k + j] = cols[j].values()[i];
  Tensor r = detail::op_result({rows, k}, std::move(out), rg);
  std::vector<std::shared_ptr<detail::Node>> parents;
  parents.reserve(cols.size());
  for (const Tensor& c : cols) parents.push_back(c.node());
  detail::record(r, [parents = std::move(parents), on = r.node(), rows, k] {
    for (int j = 0; j < k; ++j) {
      auto& p = parents[j];
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (int i = 0; i < rows; ++i) p->grad[i] += on->grad[static_cast<std::size_t>(i) * k + j];
    }
  });
  return r;
}

// out[i, j] = v[i] * m[i, j]
inline Tensor scale_rows(const Tensor& v, const Tensor& m) {
  detail::require_rank("scale_rows", v, 1);
  detail::require_rank("scale_rows", m, 2);
  const int rows = m.shape()[0], cols = m.shape()[1];
  if (v.shape()[0] != rows)
    throw ShapeError("scale_rows: vector shape " + shape_str(v.shape()) +
                     " does not match rows of " + shape_str(m.shape()));
  std::vector<double> out(m.values().begin(), m.values().end());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out[static_cast<std::size_t>(i) * cols + j] *= v.values()[i];
  Tensor r = detail::op_result(m.shape(), std::move(out), v.requires_grad() || m.requires_grad());
  detail::record(r, [vn = v.node(), mn = m.node(), on = r.node(), rows, cols] {
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (int i = 0; i < rows; ++i) {
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
          acc += on->grad[idx] * mn->values[idx];
        }
        vn->grad[i] += acc;
      }
    }
    if (mn->requires_grad) {
      mn->ensure_grad();
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
          mn->grad[idx] += on->grad[idx] * vn->values[i];
        }
    }
  });
  return r;
}

// constant copy; cuts the tensor out of the gradient graph
inline Tensor detach(const Tensor& x) {
  return Tensor::of(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), false);
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }
inline Tensor operator*(const Tensor& x, double c) { return scale(x, c); }

}  // namespace okdd

#include "minmt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace minmt {

namespace {

template <typename T>
bool is_scalar(const Tensor<T>& t) {
  return t.rank() == 0;
}

template <typename T>
void require_rank2(const char* op, const Tensor<T>& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_to_string(t.shape()));
  }
}

template <typename T>
Shape broadcast_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (is_scalar(b)) return a.shape();
  if (is_scalar(a)) return b.shape();
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                   shape_to_string(b.shape()));
}

enum class Binary { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(const char* name, Binary kind, const Tensor<T>& a, const Tensor<T>& b) {
  Shape shape = broadcast_shape(name, a, b);
  const std::size_t n = shape_numel(shape);
  const bool a_scalar = is_scalar(a) && a.shape() != shape;
  const bool b_scalar = is_scalar(b) && b.shape() != shape;
  auto ad = a.data();
  auto bd = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    T x = ad[a_scalar ? 0 : i];
    T y = bd[b_scalar ? 0 : i];
    switch (kind) {
      case Binary::kAdd: out[i] = x + y; break;
      case Binary::kSub: out[i] = x - y; break;
      case Binary::kMul: out[i] = x * y; break;
    }
  }
  return detail::make_result<T>(name, std::move(shape), std::move(out), {&a, &b},
                                [kind, a_scalar, b_scalar](Node<T>& self) {
    Node<T>& na = *self.inputs[0];
    Node<T>& nb = *self.inputs[1];
    const auto& g = self.grad;
    if (na.requires_grad) {
      auto& ga = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        T local = kind == Binary::kMul ? nb.data[b_scalar ? 0 : i] : T{1};
        ga[a_scalar ? 0 : i] += g[i] * local;
      }
    }
    if (nb.requires_grad) {
      auto& gb = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        T local = kind == Binary::kMul ? na.data[a_scalar ? 0 : i] : (kind == Binary::kSub ? T{-1} : T{1});
        gb[b_scalar ? 0 : i] += g[i] * local;
      }
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("add", Binary::kAdd, a, b);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("sub", Binary::kSub, a, b);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("mul", Binary::kMul, a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v *= factor;
  return detail::make_result<T>("scale", x.shape(), std::move(out), {&x}, [factor](Node<T>& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v = v > T{0} ? v : T{0};
  return detail::make_result<T>("relu", x.shape(), std::move(out), {&x}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    auto& gx = in.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (in.data[i] > T{0}) gx[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank2("add_row", x);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (bias.rank() != 1 || bias.dim(0) != cols) {
    throw ShapeError("add_row: bias " + shape_to_string(bias.shape()) + " does not match " +
                     shape_to_string(x.shape()));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bd[c];
  }
  return detail::make_result<T>("add_row", x.shape(), std::move(out), {&x, &bias}, [rows, cols](Node<T>& self) {
    const auto& g = self.grad;
    if (self.inputs[0]->requires_grad) {
      auto& gx = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& gb = self.inputs[1]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
      }
    }
  });
}

namespace {

// out[m x n] += a[m x k] * b[k x n]
template <typename T>
void gemm_accumulate(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* out_row = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      const T* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aip * b_row[j];
    }
  }
}

// Gradients of out = a * b given g = d(out).
template <typename T>
void gemm_backward(Node<T>& na, Node<T>& nb, const std::vector<T>& g, std::size_t m, std::size_t k, std::size_t n) {
  if (na.requires_grad) {
    auto& ga = na.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const T* g_row = g.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T* b_row = nb.data.data() + p * n;
        T acc = T{0};
        for (std::size_t j = 0; j < n; ++j) acc += g_row[j] * b_row[j];
        ga[i * k + p] += acc;
      }
    }
  }
  if (nb.requires_grad) {
    auto& gb = nb.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const T* g_row = g.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = na.data[i * k + p];
        T* gb_row = gb.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) gb_row[j] += aip * g_row[j];
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  std::vector<T> out(m * n, T{0});
  gemm_accumulate(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result<T>("matmul", Shape{m, n}, std::move(out), {&a, &b}, [m, k, n](Node<T>& self) {
    gemm_backward(*self.inputs[0], *self.inputs[1], self.grad, m, k, n);
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_rank2("transpose", x);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(rows * cols);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = xd[r * cols + c];
  }
  return detail::make_result<T>("transpose", Shape{cols, rows}, std::move(out), {&x}, [rows, cols](Node<T>& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += self.grad[c * rows + r];
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank2("linear", x);
  require_rank2("linear", weight);
  const std::size_t m = x.dim(0), k = x.dim(1), n = weight.dim(1);
  if (weight.dim(0) != k) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " does not match weight " +
                     shape_to_string(weight.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != n) {
    throw ShapeError("linear: bias " + shape_to_string(bias.shape()) + " does not match weight " +
                     shape_to_string(weight.shape()));
  }
  std::vector<T> out(m * n);
  auto bd = bias.data();
  for (std::size_t i = 0; i < m; ++i) std::copy(bd.begin(), bd.end(), out.begin() + i * n);
  gemm_accumulate(x.data().data(), weight.data().data(), out.data(), m, k, n);
  return detail::make_result<T>("linear", Shape{m, n}, std::move(out), {&x, &weight, &bias},
                                [m, k, n](Node<T>& self) {
    gemm_backward(*self.inputs[0], *self.inputs[1], self.grad, m, k, n);
    if (self.inputs[2]->requires_grad) {
      auto& gb = self.inputs[2]->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T{0};
  for (T v : x.data()) total += v;
  return detail::make_result<T>("sum", Shape{}, std::vector<T>{total}, {&x}, [](Node<T>& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (T& g : gx) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T total = T{0};
  for (T v : x.data()) total += v;
  const T count = static_cast<T>(x.size());
  return detail::make_result<T>("mean", Shape{}, std::vector<T>{total / count}, {&x}, [count](Node<T>& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (T& g : gx) g += self.grad[0] / count;
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_to_string(x.shape()));
  }
  const Shape& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  auto xd = x.data();
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T max_value = xd[base];
      for (std::size_t j = 1; j < n; ++j) max_value = std::max(max_value, xd[base + j * inner]);
      T total = T{0};
      for (std::size_t j = 0; j < n; ++j) {
        T e = std::exp(xd[base + j * inner] - max_value);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  return detail::make_result<T>("softmax", shape, std::move(out), {&x}, [outer, inner, n](Node<T>& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T dot = T{0};
        for (std::size_t j = 0; j < n; ++j) dot += y[base + j * inner] * g[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: input must have at least one axis");
  const std::size_t d = x.shape().back();
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d) {
    throw ShapeError("layer_norm: gain " + shape_to_string(gain.shape()) + " / bias " +
                     shape_to_string(bias.shape()) + " must match last axis of " + shape_to_string(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(rows);
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * d;
    T mu = T{0};
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T{0};
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * is;
      out[r * d + j] = gd[j] * xhat[r * d + j] + bd[j];
    }
  }
  return detail::make_result<T>(
      "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& ng = *self.inputs[1];
        Node<T>& nb = *self.inputs[2];
        const auto& g = self.grad;
        if (ng.requires_grad) {
          auto& gg = ng.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (nb.requires_grad) {
          auto& gb = nb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (nx.requires_grad) {
          auto& gx = nx.ensure_grad();
          std::vector<T> gh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_gh = T{0}, mean_ghx = T{0};
            for (std::size_t j = 0; j < d; ++j) {
              gh[j] = g[r * d + j] * ng.data[j];
              mean_gh += gh[j];
              mean_ghx += gh[j] * xhat[r * d + j];
            }
            mean_gh /= static_cast<T>(d);
            mean_ghx /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              gx[r * d + j] += inv_std[r] * (gh[j] - mean_gh - xhat[r * d + j] * mean_ghx);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must be in [0, 1), got " + std::to_string(p));
  if (p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.size());
  for (T& m : mask) m = rng.uniform() < p ? T{0} : keep_scale;
  std::vector<T> out(x.size());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  return detail::make_result<T>("dropout", x.shape(), std::move(out), {&x}, [mask = std::move(mask)](Node<T>& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  require_rank2("embedding", table);
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int> rows(ids.begin(), ids.end());
  std::vector<T> out(rows.size() * d);
  auto td = table.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(rows[i]) + " outside vocabulary of " +
                              std::to_string(vocab));
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  const std::size_t n = rows.size();
  return detail::make_result<T>("embedding", Shape{n, d}, std::move(out), {&table},
                                [d, rows = std::move(rows)](Node<T>& self) {
    auto& gt = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      T* dst = gt.data() + static_cast<std::size_t>(rows[i]) * d;
      const T* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Tensor<T> cross_entropy_smoothed(const Tensor<T>& logits, std::span<const int> targets, double smoothing,
                                 int pad_id) {
  require_rank2("cross_entropy_smoothed", logits);
  const std::size_t positions = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != positions) {
    throw ShapeError("cross_entropy_smoothed: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(positions) + " positions");
  }
  if (!(smoothing >= 0.0 && smoothing < 1.0)) {
    throw std::invalid_argument("cross_entropy_smoothed: smoothing must be in [0, 1)");
  }
  if (pad_id < 0 || static_cast<std::size_t>(pad_id) >= vocab) {
    throw std::invalid_argument("cross_entropy_smoothed: pad id outside vocabulary");
  }
  if (smoothing > 0.0 && vocab < 3) {
    throw std::invalid_argument("cross_entropy_smoothed: smoothing needs at least 3 classes");
  }
  std::size_t counted = 0;
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw std::out_of_range("cross_entropy_smoothed: target id " + std::to_string(t) + " >= vocabulary size " +
                              std::to_string(vocab));
    }
    if (t != pad_id) ++counted;
  }
  if (counted == 0) throw std::invalid_argument("cross_entropy_smoothed: no non-pad targets");

  const double gold_mass = 1.0 - smoothing;
  const double other_mass = vocab > 2 ? smoothing / static_cast<double>(vocab - 2) : 0.0;
  const auto pad = static_cast<std::size_t>(pad_id);
  auto xd = logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < positions; ++r) {
    if (targets[r] == pad_id) continue;
    const T* row = xd.data() + r * vocab;
    // log p_j = (x_j - max) - log1p(sum of the non-max terms), which keeps
    // full precision for confident predictions.
    const std::size_t top = static_cast<std::size_t>(std::max_element(row, row + vocab) - row);
    const double max_value = static_cast<double>(row[top]);
    double rest = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      if (j != top) rest += std::exp(static_cast<double>(row[j]) - max_value);
    }
    const double log_z = std::log1p(rest);
    auto log_prob = [&](std::size_t j) { return (static_cast<double>(row[j]) - max_value) - log_z; };
    const auto gold = static_cast<std::size_t>(targets[r]);
    double loss = -gold_mass * log_prob(gold);
    if (other_mass > 0.0) {
      double others = 0.0;
      for (std::size_t j = 0; j < vocab; ++j) {
        if (j != gold && j != pad) others += log_prob(j);
      }
      loss -= other_mass * others;
    }
    total += loss;
  }
  const double denom = static_cast<double>(counted);
  std::vector<int> kept(targets.begin(), targets.end());
  return detail::make_result<T>(
      "cross_entropy_smoothed", Shape{}, std::vector<T>{static_cast<T>(total / denom)}, {&logits},
      [positions, vocab, pad, pad_id, gold_mass, other_mass, denom, kept = std::move(kept)](Node<T>& self) {
        Node<T>& in = *self.inputs[0];
        auto& gx = in.ensure_grad();
        const double upstream = static_cast<double>(self.grad[0]) / denom;
        for (std::size_t r = 0; r < positions; ++r) {
          if (kept[r] == pad_id) continue;
          const T* row = in.data.data() + r * vocab;
          const T max_value = *std::max_element(row, row + vocab);
          double z = 0.0;
          for (std::size_t j = 0; j < vocab; ++j) z += std::exp(static_cast<double>(row[j] - max_value));
          const auto gold = static_cast<std::size_t>(kept[r]);
          for (std::size_t j = 0; j < vocab; ++j) {
            const double p = std::exp(static_cast<double>(row[j] - max_value)) / z;
            const double q = j == gold ? gold_mass : (j == pad ? 0.0 : other_mass);
            gx[r * vocab + j] += static_cast<T>(upstream * (p - q));
          }
        }
      });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& queries, const Tensor<T>& keys, const Tensor<T>& values,
                    const AttentionMask& mask, std::size_t heads, std::vector<T>* weights,
                    double weight_dropout, Rng* rng) {
  require_rank2("attention", queries);
  if (!(weight_dropout >= 0.0 && weight_dropout < 1.0)) {
    throw std::invalid_argument("attention: dropout must be in [0, 1)");
  }
  if (weight_dropout > 0.0 && rng == nullptr) throw std::invalid_argument("attention: dropout needs an rng");
  require_rank2("attention", keys);
  require_rank2("attention", values);
  const std::size_t d = queries.dim(1);
  if (keys.dim(1) != d || values.dim(1) != d || keys.dim(0) != values.dim(0)) {
    throw ShapeError("attention: queries " + shape_to_string(queries.shape()) + ", keys " +
                     shape_to_string(keys.shape()) + ", values " + shape_to_string(values.shape()) +
                     " are inconsistent");
  }
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: feature size " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t batch = mask.batch, tq = mask.queries, tk = mask.keys;
  if (batch * tq != queries.dim(0) || batch * tk != keys.dim(0) || mask.allowed.size() != batch * tq * tk) {
    throw ShapeError("attention: mask [" + std::to_string(batch) + "x" + std::to_string(tq) + "x" +
                     std::to_string(tk) + "] does not match score shape for queries " +
                     shape_to_string(queries.shape()) + " and keys " + shape_to_string(keys.shape()));
  }
  const std::size_t dh = d / heads;
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));
  auto qd = queries.data();
  auto kd = keys.data();
  auto vd = values.data();
  std::vector<T> probs(batch * heads * tq * tk, T{0});
  // Dropout scale per weight; empty when dropout is off.
  std::vector<T> keep;
  const bool dropping = weight_dropout > 0.0;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - weight_dropout));
  if (dropping) keep.assign(probs.size(), T{0});
  std::vector<T> out(batch * tq * d, T{0});
  std::vector<T> scores(tk);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < tq; ++i) {
        const T* q_row = qd.data() + (b * tq + i) * d + h * dh;
        T max_score = -std::numeric_limits<T>::infinity();
        bool any = false;
        for (std::size_t j = 0; j < tk; ++j) {
          if (!mask.at(b, i, j)) continue;
          const T* k_row = kd.data() + (b * tk + j) * d + h * dh;
          T dot = T{0};
          for (std::size_t c = 0; c < dh; ++c) dot += q_row[c] * k_row[c];
          scores[j] = dot * inv_sqrt;
          max_score = any ? std::max(max_score, scores[j]) : scores[j];
          any = true;
        }
        if (!any) {
          throw std::invalid_argument("attention: query " + std::to_string(i) + " of batch element " +
                                      std::to_string(b) + " has no attendable position");
        }
        T* p_row = probs.data() + ((b * heads + h) * tq + i) * tk;
        T total = T{0};
        for (std::size_t j = 0; j < tk; ++j) {
          if (!mask.at(b, i, j)) continue;
          p_row[j] = std::exp(scores[j] - max_score);
          total += p_row[j];
        }
        T* o_row = out.data() + (b * tq + i) * d + h * dh;
        T* keep_row = dropping ? keep.data() + ((b * heads + h) * tq + i) * tk : nullptr;
        for (std::size_t j = 0; j < tk; ++j) {
          if (p_row[j] == T{0}) continue;
          p_row[j] /= total;
          T w = p_row[j];
          if (keep_row) {
            keep_row[j] = rng->uniform() < weight_dropout ? T{0} : keep_scale;
            w *= keep_row[j];
          }
          const T* v_row = vd.data() + (b * tk + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) o_row[c] += w * v_row[c];
        }
      }
    }
  }
  if (weights) *weights = probs;
  return detail::make_result<T>(
      "attention", Shape{batch * tq, d}, std::move(out), {&queries, &keys, &values},
      [batch, heads, tq, tk, d, dh, inv_sqrt, probs = std::move(probs), keep = std::move(keep)](Node<T>& self) {
        Node<T>& nq = *self.inputs[0];
        Node<T>& nk = *self.inputs[1];
        Node<T>& nv = *self.inputs[2];
        T* gq = nq.requires_grad ? nq.ensure_grad().data() : nullptr;
        T* gk = nk.requires_grad ? nk.ensure_grad().data() : nullptr;
        T* gv = nv.requires_grad ? nv.ensure_grad().data() : nullptr;
        std::vector<T> dp(tk);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < tq; ++i) {
              const std::size_t row_at = ((b * heads + h) * tq + i) * tk;
              const T* p_row = probs.data() + row_at;
              const T* keep_row = keep.empty() ? nullptr : keep.data() + row_at;
              const T* g_row = self.grad.data() + (b * tq + i) * d + h * dh;
              T dot = T{0};
              for (std::size_t j = 0; j < tk; ++j) {
                dp[j] = T{0};
                if (p_row[j] == T{0}) continue;
                const T m = keep_row ? keep_row[j] : T{1};
                const T* v_row = nv.data.data() + (b * tk + j) * d + h * dh;
                T acc = T{0};
                for (std::size_t c = 0; c < dh; ++c) acc += g_row[c] * v_row[c];
                dp[j] = acc * m;
                dot += p_row[j] * dp[j];
                if (gv && m != T{0}) {
                  const T w = p_row[j] * m;
                  T* gv_row = gv + (b * tk + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gv_row[c] += w * g_row[c];
                }
              }
              const T* q_row = nq.data.data() + (b * tq + i) * d + h * dh;
              T* gq_row = gq ? gq + (b * tq + i) * d + h * dh : nullptr;
              for (std::size_t j = 0; j < tk; ++j) {
                if (p_row[j] == T{0}) continue;
                const T ds = p_row[j] * (dp[j] - dot) * inv_sqrt;
                const T* k_row = nk.data.data() + (b * tk + j) * d + h * dh;
                if (gq_row) {
                  for (std::size_t c = 0; c < dh; ++c) gq_row[c] += ds * k_row[c];
                }
                if (gk) {
                  T* gk_row = gk + (b * tk + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gk_row[c] += ds * q_row[c];
                }
              }
            }
          }
        }
      });
}

#define MINMT_INSTANTIATE_OPS(T)                                                                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                                        \
  template Tensor<T> relu(const Tensor<T>&);                                                            \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> transpose(const Tensor<T>&);                                                       \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> sum(const Tensor<T>&);                                                             \
  template Tensor<T> mean(const Tensor<T>&);                                                            \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);               \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&);                                           \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);                                 \
  template Tensor<T> cross_entropy_smoothed(const Tensor<T>&, std::span<const int>, double, int);       \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const AttentionMask&, \
                               std::size_t, std::vector<T>*, double, Rng*);

MINMT_INSTANTIATE_OPS(float)
MINMT_INSTANTIATE_OPS(double)

#undef MINMT_INSTANTIATE_OPS

}  // namespace minmt

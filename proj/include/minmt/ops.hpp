#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "minmt/random.hpp"
#include "minmt/tensor.hpp"

namespace minmt {

// Elementwise; shapes must match, or one side is a rank-0 scalar.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> relu(const Tensor<T>& x);

// x[N x d] + bias[d] added to every row.
template <typename T> Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& x);
// x[N x in] * weight[in x out] + bias[out], fused.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// Max-subtracted softmax along `axis` of an arbitrary-rank tensor.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Normalizes over the last axis with population variance, then gain * xhat + bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));

// Inverted dropout. Identity when p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng);

// Gathers rows of table[V x d]; result [ids.size() x d].
template <typename T> Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);

/// Label-smoothed cross entropy averaged over non-pad positions.
///
/// The target distribution puts (1 - smoothing) on the gold id and spreads
/// `smoothing` uniformly over the other V - 2 ids (gold and pad excluded).
template <typename T>
Tensor<T> cross_entropy_smoothed(const Tensor<T>& logits, std::span<const int> targets, double smoothing, int pad_id);

// Which (query, key) pairs may interact, per batch element.
struct AttentionMask {
  std::size_t batch = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<std::uint8_t> allowed;  // [batch x queries x keys]

  AttentionMask() = default;
  AttentionMask(std::size_t b, std::size_t q, std::size_t k, bool value = true)
      : batch(b), queries(q), keys(k), allowed(b * q * k, value ? 1 : 0) {}

  bool at(std::size_t b, std::size_t q, std::size_t k) const { return allowed[(b * queries + q) * keys + k] != 0; }
  void set(std::size_t b, std::size_t q, std::size_t k, bool value) {
    allowed[(b * queries + q) * keys + k] = value ? 1 : 0;
  }
};

/// Scaled dot-product attention over `heads` slices of the feature axis.
///
/// queries: [batch*Tq x d]; keys, values: [batch*Tk x d]. Each head attends
/// with softmax(Q K^T / sqrt(d/heads)) and disallowed pairs get -inf before
/// the softmax. A query row with no allowed key is an error. When `weights`
/// is non-null it receives the [batch x heads x Tq x Tk] attention weights
/// (before dropout). With weight_dropout > 0 the weights are dropped out
/// using `rng`, which must then be non-null.
template <typename T>
Tensor<T> attention(const Tensor<T>& queries, const Tensor<T>& keys, const Tensor<T>& values,
                    const AttentionMask& mask, std::size_t heads, std::vector<T>* weights = nullptr,
                    double weight_dropout = 0.0, Rng* rng = nullptr);

}  // namespace minmt

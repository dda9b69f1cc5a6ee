#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "minmt/corpus.hpp"
#include "minmt/ops.hpp"
#include "minmt/random.hpp"
#include "minmt/tensor.hpp"

namespace minmt {

struct TransformerConfig {
  std::size_t enc_layers = 6;
  std::size_t dec_layers = 6;
  std::size_t heads = 4;
  std::size_t embed_dim = 256;
  std::size_t ff_dim = 1024;
  double dropout = 0.1;
  std::size_t max_positions = 512;
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;

  // 4+4 layers, 10 heads, embedding 300 (feed-forward 1200).
  static TransformerConfig word_level(std::size_t src_vocab, std::size_t tgt_vocab);
  // 6+6 layers, 4 heads, embedding 256 (feed-forward 1024).
  static TransformerConfig bpe(std::size_t src_vocab, std::size_t tgt_vocab);

  std::size_t head_dim() const { return embed_dim / heads; }
  // Throws std::invalid_argument.
  void validate() const;

  bool operator==(const TransformerConfig&) const = default;
};

/// Closed-form parameter count:
///   (Vs + Vt) d                                     embeddings
/// + Le (4d^2 + 4d + 2 d ff + ff + d + 2*2d)         encoder layers
/// + Ld (8d^2 + 8d + 2 d ff + ff + d + 3*2d)         decoder layers
/// + d Vt + Vt                                       output projection
std::size_t parameter_count(const TransformerConfig& config);

// [max_len x dim]; (pos, 2i) = sin(pos / 10000^(2i/dim)), (pos, 2i+1) = cos(...).
template <typename T>
Tensor<T> sinusoidal_positions(std::size_t max_len, std::size_t dim);

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]
};

template <typename T>
struct NormParams {
  Tensor<T> gain;
  Tensor<T> bias;
};

template <typename T>
struct AttentionParams {
  LinearParams<T> query, key, value, output;
};

template <typename T>
struct EncoderLayerParams {
  AttentionParams<T> self_attention;
  NormParams<T> self_norm;
  LinearParams<T> ff_in, ff_out;
  NormParams<T> ff_norm;
};

template <typename T>
struct DecoderLayerParams {
  AttentionParams<T> self_attention;
  NormParams<T> self_norm;
  AttentionParams<T> cross_attention;
  NormParams<T> cross_norm;
  LinearParams<T> ff_in, ff_out;
  NormParams<T> ff_norm;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Post-norm encoder-decoder Transformer with untied embeddings.
template <typename T>
class TransformerModel {
 public:
  // Allocates zero-filled parameters; see build_model for initialization.
  explicit TransformerModel(const TransformerConfig& config);

  const TransformerConfig& config() const { return config_; }

  // Stable order; the handles alias the model's storage.
  std::vector<NamedTensor<T>> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  Tensor<T> source_embedding;  // [Vs x d]
  Tensor<T> target_embedding;  // [Vt x d]
  std::vector<EncoderLayerParams<T>> encoder;
  std::vector<DecoderLayerParams<T>> decoder;
  LinearParams<T> output;      // [d x Vt]
  Tensor<T> positions;         // constant [max_positions x d]

 private:
  TransformerConfig config_;
};

// Xavier-uniform weights and embeddings, zero biases, unit norm gains.
template <typename T>
TransformerModel<T> build_model(const TransformerConfig& config, std::uint64_t seed);

// Same parameters at another precision.
template <typename To, typename From>
TransformerModel<To> convert_model(const TransformerModel<From>& model);

struct ForwardOptions {
  bool train = false;
  Rng* rng = nullptr;  // required when train && dropout > 0
};

// Key-padding mask: query i of element b may see key j iff keys.real(b, j).
AttentionMask padding_mask(const PaddedSequences& keys, std::size_t queries);
// Padding plus j <= i.
AttentionMask causal_mask(const PaddedSequences& sequence);

/// Projects inputs, attends per head, concatenates and applies the output
/// projection. `weights` receives the attention distribution when non-null.
template <typename T>
Tensor<T> multi_head_attention(const AttentionParams<T>& params, const Tensor<T>& queries, const Tensor<T>& memory,
                               const AttentionMask& mask, std::size_t heads, const ForwardOptions& options,
                               double dropout, std::vector<T>* weights = nullptr);

// [batch*S x d] encoder memory.
template <typename T>
Tensor<T> encode_source(const TransformerModel<T>& model, const PaddedSequences& source,
                        const ForwardOptions& options = {});

// [batch*T x Vt] unnormalised logits for decoder inputs `target`.
template <typename T>
Tensor<T> decoder_forward(const TransformerModel<T>& model, const Tensor<T>& memory, const PaddedSequences& source,
                          const PaddedSequences& target, const ForwardOptions& options = {});

}  // namespace minmt

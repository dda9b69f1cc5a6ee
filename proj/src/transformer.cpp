#include "minmt/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace minmt {

TransformerConfig TransformerConfig::word_level(std::size_t src_vocab, std::size_t tgt_vocab) {
  TransformerConfig c;
  c.enc_layers = 4;
  c.dec_layers = 4;
  c.heads = 10;
  c.embed_dim = 300;
  c.ff_dim = 1200;
  c.src_vocab_size = src_vocab;
  c.tgt_vocab_size = tgt_vocab;
  return c;
}

TransformerConfig TransformerConfig::bpe(std::size_t src_vocab, std::size_t tgt_vocab) {
  TransformerConfig c;
  c.enc_layers = 6;
  c.dec_layers = 6;
  c.heads = 4;
  c.embed_dim = 256;
  c.ff_dim = 1024;
  c.src_vocab_size = src_vocab;
  c.tgt_vocab_size = tgt_vocab;
  return c;
}

void TransformerConfig::validate() const {
  if (heads == 0) throw std::invalid_argument("heads must be positive");
  if (embed_dim == 0 || embed_dim % heads != 0) {
    throw std::invalid_argument("embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                                std::to_string(heads) + " heads");
  }
  if (embed_dim % 2 != 0) throw std::invalid_argument("embed_dim must be even for sinusoidal positions");
  if (ff_dim == 0) throw std::invalid_argument("ff_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
  if (max_positions == 0) throw std::invalid_argument("max_positions must be positive");
  if (src_vocab_size <= 4 || tgt_vocab_size <= 4) {
    throw std::invalid_argument("vocabulary sizes must exceed the 4 special tokens");
  }
}

std::size_t parameter_count(const TransformerConfig& c) {
  const std::size_t d = c.embed_dim, ff = c.ff_dim;
  const std::size_t feed_forward = 2 * d * ff + ff + d;
  const std::size_t enc_layer = 4 * d * d + 4 * d + feed_forward + 2 * 2 * d;
  const std::size_t dec_layer = 8 * d * d + 8 * d + feed_forward + 3 * 2 * d;
  return (c.src_vocab_size + c.tgt_vocab_size) * d + c.enc_layers * enc_layer + c.dec_layers * dec_layer +
         d * c.tgt_vocab_size + c.tgt_vocab_size;
}

template <typename T>
Tensor<T> sinusoidal_positions(std::size_t max_len, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("positional dimension must be even, got " + std::to_string(dim));
  if (max_len == 0) throw std::invalid_argument("positional length must be positive");
  std::vector<T> table(max_len * dim);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      table[pos * dim + 2 * i] = static_cast<T>(std::sin(angle));
      table[pos * dim + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return Tensor<T>(Shape{max_len, dim}, std::move(table));
}

namespace {

template <typename T>
LinearParams<T> make_linear(std::size_t in, std::size_t out) {
  return {Tensor<T>(Shape{in, out}, T{0}, true), Tensor<T>(Shape{out}, T{0}, true)};
}

template <typename T>
NormParams<T> make_norm(std::size_t d) {
  return {Tensor<T>(Shape{d}, T{1}, true), Tensor<T>(Shape{d}, T{0}, true)};
}

template <typename T>
AttentionParams<T> make_attention(std::size_t d) {
  return {make_linear<T>(d, d), make_linear<T>(d, d), make_linear<T>(d, d), make_linear<T>(d, d)};
}

template <typename T>
void append(std::vector<NamedTensor<T>>& out, const std::string& prefix, const LinearParams<T>& p) {
  out.push_back({prefix + ".weight", p.weight});
  out.push_back({prefix + ".bias", p.bias});
}

template <typename T>
void append(std::vector<NamedTensor<T>>& out, const std::string& prefix, const NormParams<T>& p) {
  out.push_back({prefix + ".gain", p.gain});
  out.push_back({prefix + ".bias", p.bias});
}

template <typename T>
void append(std::vector<NamedTensor<T>>& out, const std::string& prefix, const AttentionParams<T>& p) {
  append(out, prefix + ".query", p.query);
  append(out, prefix + ".key", p.key);
  append(out, prefix + ".value", p.value);
  append(out, prefix + ".output", p.output);
}

}  // namespace

template <typename T>
TransformerModel<T>::TransformerModel(const TransformerConfig& config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.embed_dim;
  source_embedding = Tensor<T>(Shape{config_.src_vocab_size, d}, T{0}, true);
  target_embedding = Tensor<T>(Shape{config_.tgt_vocab_size, d}, T{0}, true);
  for (std::size_t l = 0; l < config_.enc_layers; ++l) {
    encoder.push_back({make_attention<T>(d), make_norm<T>(d), make_linear<T>(d, config_.ff_dim),
                       make_linear<T>(config_.ff_dim, d), make_norm<T>(d)});
  }
  for (std::size_t l = 0; l < config_.dec_layers; ++l) {
    decoder.push_back({make_attention<T>(d), make_norm<T>(d), make_attention<T>(d), make_norm<T>(d),
                       make_linear<T>(d, config_.ff_dim), make_linear<T>(config_.ff_dim, d), make_norm<T>(d)});
  }
  output = make_linear<T>(d, config_.tgt_vocab_size);
  positions = sinusoidal_positions<T>(config_.max_positions, d);
}

template <typename T>
std::vector<NamedTensor<T>> TransformerModel<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  out.push_back({"source_embedding", source_embedding});
  out.push_back({"target_embedding", target_embedding});
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::string p = "encoder." + std::to_string(l);
    append(out, p + ".self_attention", encoder[l].self_attention);
    append(out, p + ".self_norm", encoder[l].self_norm);
    append(out, p + ".ff_in", encoder[l].ff_in);
    append(out, p + ".ff_out", encoder[l].ff_out);
    append(out, p + ".ff_norm", encoder[l].ff_norm);
  }
  for (std::size_t l = 0; l < decoder.size(); ++l) {
    const std::string p = "decoder." + std::to_string(l);
    append(out, p + ".self_attention", decoder[l].self_attention);
    append(out, p + ".self_norm", decoder[l].self_norm);
    append(out, p + ".cross_attention", decoder[l].cross_attention);
    append(out, p + ".cross_norm", decoder[l].cross_norm);
    append(out, p + ".ff_in", decoder[l].ff_in);
    append(out, p + ".ff_out", decoder[l].ff_out);
    append(out, p + ".ff_norm", decoder[l].ff_norm);
  }
  append(out, "output", output);
  return out;
}

template <typename T>
std::size_t TransformerModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

template <typename T>
void TransformerModel<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename T>
TransformerModel<T> build_model(const TransformerConfig& config, std::uint64_t seed) {
  TransformerModel<T> model(config);
  Rng rng(seed);
  for (auto& p : model.parameters()) {
    if (p.tensor.rank() != 2) continue;  // biases stay 0, gains stay 1
    const double fan_in = static_cast<double>(p.tensor.dim(0));
    const double fan_out = static_cast<double>(p.tensor.dim(1));
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (T& v : p.tensor.mutable_data()) v = static_cast<T>(rng.uniform(-limit, limit));
  }
  return model;
}

template <typename To, typename From>
TransformerModel<To> convert_model(const TransformerModel<From>& model) {
  TransformerModel<To> out(model.config());
  auto src = model.parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto in = src[i].tensor.data();
    auto target = dst[i].tensor.mutable_data();
    for (std::size_t j = 0; j < in.size(); ++j) target[j] = static_cast<To>(in[j]);
  }
  return out;
}

AttentionMask padding_mask(const PaddedSequences& keys, std::size_t queries) {
  AttentionMask mask(keys.batch, queries, keys.length, false);
  for (std::size_t b = 0; b < keys.batch; ++b)
    for (std::size_t i = 0; i < queries; ++i)
      for (std::size_t j = 0; j < keys.length; ++j) mask.set(b, i, j, keys.real(b, j));
  return mask;
}

AttentionMask causal_mask(const PaddedSequences& sequence) {
  AttentionMask mask(sequence.batch, sequence.length, sequence.length, false);
  for (std::size_t b = 0; b < sequence.batch; ++b)
    for (std::size_t i = 0; i < sequence.length; ++i)
      for (std::size_t j = 0; j <= i; ++j) mask.set(b, i, j, sequence.real(b, j));
  return mask;
}

namespace {

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double p, const ForwardOptions& options) {
  if (!options.train || p == 0.0) return x;
  if (!options.rng) throw std::invalid_argument("training forward pass with dropout needs an rng");
  return dropout(x, p, *options.rng);
}

template <typename T>
Tensor<T> feed_forward(const LinearParams<T>& in, const LinearParams<T>& out, const Tensor<T>& x) {
  return linear(relu(linear(x, in.weight, in.bias)), out.weight, out.bias);
}

template <typename T>
Tensor<T> add_and_norm(const Tensor<T>& residual, const Tensor<T>& sublayer, const NormParams<T>& norm) {
  return layer_norm(add(residual, sublayer), norm.gain, norm.bias);
}

template <typename T>
Tensor<T> embed(const TransformerModel<T>& model, const Tensor<T>& table, const PaddedSequences& seq,
                const ForwardOptions& options) {
  const auto& config = model.config();
  if (seq.batch == 0 || seq.length == 0) throw std::invalid_argument("empty batch");
  if (seq.length > config.max_positions) {
    throw std::invalid_argument("sequence length " + std::to_string(seq.length) + " exceeds max_positions " +
                                std::to_string(config.max_positions));
  }
  const std::size_t d = config.embed_dim;
  Tensor<T> x = scale(embedding(table, std::span<const int>(seq.ids)), static_cast<T>(std::sqrt(static_cast<double>(d))));
  std::vector<T> pos(seq.batch * seq.length * d);
  auto table_data = model.positions.data();
  for (std::size_t b = 0; b < seq.batch; ++b) {
    std::copy_n(table_data.begin(), seq.length * d, pos.begin() + static_cast<std::ptrdiff_t>(b * seq.length * d));
  }
  x = add(x, Tensor<T>(Shape{seq.batch * seq.length, d}, std::move(pos)));
  return maybe_dropout(x, config.dropout, options);
}

}  // namespace

template <typename T>
Tensor<T> multi_head_attention(const AttentionParams<T>& params, const Tensor<T>& queries, const Tensor<T>& memory,
                               const AttentionMask& mask, std::size_t heads, const ForwardOptions& options,
                               double dropout, std::vector<T>* weights) {
  Tensor<T> q = linear(queries, params.query.weight, params.query.bias);
  Tensor<T> k = linear(memory, params.key.weight, params.key.bias);
  Tensor<T> v = linear(memory, params.value.weight, params.value.bias);
  const bool drop = options.train && dropout > 0.0;
  if (drop && !options.rng) throw std::invalid_argument("training forward pass with dropout needs an rng");
  Tensor<T> context = attention(q, k, v, mask, heads, weights, drop ? dropout : 0.0, drop ? options.rng : nullptr);
  return linear(context, params.output.weight, params.output.bias);
}

template <typename T>
Tensor<T> encode_source(const TransformerModel<T>& model, const PaddedSequences& source,
                        const ForwardOptions& options) {
  const auto& config = model.config();
  for (int id : source.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.src_vocab_size) {
      throw std::out_of_range("source id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(config.src_vocab_size));
    }
  }
  Tensor<T> x = embed(model, model.source_embedding, source, options);
  const AttentionMask mask = padding_mask(source, source.length);
  for (const auto& layer : model.encoder) {
    Tensor<T> attended = multi_head_attention(layer.self_attention, x, x, mask, config.heads, options, config.dropout);
    x = add_and_norm(x, maybe_dropout(attended, config.dropout, options), layer.self_norm);
    Tensor<T> transformed = feed_forward(layer.ff_in, layer.ff_out, x);
    x = add_and_norm(x, maybe_dropout(transformed, config.dropout, options), layer.ff_norm);
  }
  return x;
}

template <typename T>
Tensor<T> decoder_forward(const TransformerModel<T>& model, const Tensor<T>& memory, const PaddedSequences& source,
                          const PaddedSequences& target, const ForwardOptions& options) {
  const auto& config = model.config();
  if (source.length > config.max_positions) {
    throw std::invalid_argument("source length " + std::to_string(source.length) + " exceeds max_positions " +
                                std::to_string(config.max_positions));
  }
  if (source.batch != target.batch) throw ShapeError("decoder_forward: source and target batch sizes differ");
  if (memory.rank() != 2 || memory.dim(0) != source.batch * source.length || memory.dim(1) != config.embed_dim) {
    throw ShapeError("decoder_forward: memory " + shape_to_string(memory.shape()) + " does not match source batch");
  }
  Tensor<T> x = embed(model, model.target_embedding, target, options);
  const AttentionMask self_mask = causal_mask(target);
  const AttentionMask cross_mask = padding_mask(source, target.length);
  for (const auto& layer : model.decoder) {
    Tensor<T> attended =
        multi_head_attention(layer.self_attention, x, x, self_mask, config.heads, options, config.dropout);
    x = add_and_norm(x, maybe_dropout(attended, config.dropout, options), layer.self_norm);
    Tensor<T> crossed =
        multi_head_attention(layer.cross_attention, x, memory, cross_mask, config.heads, options, config.dropout);
    x = add_and_norm(x, maybe_dropout(crossed, config.dropout, options), layer.cross_norm);
    Tensor<T> transformed = feed_forward(layer.ff_in, layer.ff_out, x);
    x = add_and_norm(x, maybe_dropout(transformed, config.dropout, options), layer.ff_norm);
  }
  return linear(x, model.output.weight, model.output.bias);
}

#define MINMT_INSTANTIATE_TRANSFORMER(T)                                                                       \
  template class TransformerModel<T>;                                                                         \
  template Tensor<T> sinusoidal_positions<T>(std::size_t, std::size_t);                                       \
  template TransformerModel<T> build_model<T>(const TransformerConfig&, std::uint64_t);                       \
  template Tensor<T> multi_head_attention(const AttentionParams<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                          const AttentionMask&, std::size_t, const ForwardOptions&, double,   \
                                          std::vector<T>*);                                                   \
  template Tensor<T> encode_source(const TransformerModel<T>&, const PaddedSequences&, const ForwardOptions&); \
  template Tensor<T> decoder_forward(const TransformerModel<T>&, const Tensor<T>&, const PaddedSequences&,    \
                                     const PaddedSequences&, const ForwardOptions&);

MINMT_INSTANTIATE_TRANSFORMER(float)
MINMT_INSTANTIATE_TRANSFORMER(double)

template TransformerModel<float> convert_model<float, float>(const TransformerModel<float>&);
template TransformerModel<float> convert_model<float, double>(const TransformerModel<double>&);
template TransformerModel<double> convert_model<double, float>(const TransformerModel<float>&);
template TransformerModel<double> convert_model<double, double>(const TransformerModel<double>&);

#undef MINMT_INSTANTIATE_TRANSFORMER

}  // namespace minmt

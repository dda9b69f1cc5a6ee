#include "minmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <type_traits>

#include <json.hpp>

namespace minmt {

static_assert(std::endian::native == std::endian::little, "ckpt-v1 payloads are little-endian");

namespace {

using nlohmann::json;

constexpr char kMagic[] = "ckpt-v1\n";
constexpr std::size_t kMagicSize = sizeof kMagic - 1;

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw CheckpointError("unknown checkpoint dtype '" + dtype + "'");
}

json config_to_json(const TransformerConfig& c) {
  return {{"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers},       {"heads", c.heads},
          {"embed_dim", c.embed_dim},   {"ff_dim", c.ff_dim},               {"dropout", c.dropout},
          {"max_positions", c.max_positions}, {"src_vocab_size", c.src_vocab_size},
          {"tgt_vocab_size", c.tgt_vocab_size}};
}

TransformerConfig config_from_json(const json& j) {
  TransformerConfig c;
  c.enc_layers = j.at("enc_layers").get<std::size_t>();
  c.dec_layers = j.at("dec_layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.ff_dim = j.at("ff_dim").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  c.src_vocab_size = j.at("src_vocab_size").get<std::size_t>();
  c.tgt_vocab_size = j.at("tgt_vocab_size").get<std::size_t>();
  return c;
}

json tokenizer_to_json(const TokenizerFiles& t) {
  return {{"mode", to_string(t.mode)},
          {"source_vocab", t.source_vocab.string()},
          {"target_vocab", t.target_vocab.string()},
          {"source_merges", t.source_merges.string()},
          {"target_merges", t.target_merges.string()}};
}

TokenizerFiles tokenizer_from_json(const json& j) {
  TokenizerFiles t;
  t.mode = parse_tokenization_mode(j.at("mode").get<std::string>());
  t.source_vocab = j.at("source_vocab").get<std::string>();
  t.target_vocab = j.at("target_vocab").get<std::string>();
  t.source_merges = j.at("source_merges").get<std::string>();
  t.target_merges = j.at("target_merges").get<std::string>();
  return t;
}

template <typename T>
void append_raw(std::string& out, std::span<const T> values) {
  const auto* bytes = reinterpret_cast<const char*>(values.data());
  out.append(bytes, values.size() * sizeof(T));
}

struct RawFile {
  CheckpointMeta meta;
  json header;
  std::string payload;
};

RawFile read_raw(const std::filesystem::path& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " (" + path.string() + ")";
  if (bytes.size() < kMagicSize || bytes.compare(0, kMagicSize, kMagic) != 0) {
    throw CheckpointError("not a ckpt-v1 file" + where);
  }
  if (bytes.size() < kMagicSize + 8) {
    throw CheckpointError("truncated checkpoint header: expected " + std::to_string(kMagicSize + 8) +
                          " bytes, got " + std::to_string(bytes.size()) + where);
  }
  std::uint64_t header_length = 0;
  std::memcpy(&header_length, bytes.data() + kMagicSize, 8);
  const std::size_t header_start = kMagicSize + 8;
  if (bytes.size() - header_start < header_length) {
    throw CheckpointError("truncated checkpoint header: expected " + std::to_string(header_start + header_length) +
                          " bytes, got " + std::to_string(bytes.size()) + where);
  }
  RawFile raw;
  try {
    raw.header = json::parse(bytes.substr(header_start, header_length));
    raw.meta.config = config_from_json(raw.header.at("config"));
    raw.meta.epoch = raw.header.at("epoch").get<std::int64_t>();
    raw.meta.metrics = raw.header.at("metrics").get<std::map<std::string, double>>();
    raw.meta.source_vocab_hash = raw.header.at("source_vocab_hash").get<std::string>();
    raw.meta.target_vocab_hash = raw.header.at("target_vocab_hash").get<std::string>();
    raw.meta.source_merges_hash = raw.header.at("source_merges_hash").get<std::string>();
    raw.meta.target_merges_hash = raw.header.at("target_merges_hash").get<std::string>();
    raw.meta.tokenizer = tokenizer_from_json(raw.header.at("tokenizer"));
    raw.meta.dtype = raw.header.at("dtype").get<std::string>();
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint header" + where + ": " + e.what());
  }
  const std::size_t payload_start = header_start + header_length;
  const auto expected = raw.header.at("payload_bytes").get<std::uint64_t>();
  const std::size_t actual = bytes.size() - payload_start;
  if (actual != expected) {
    throw CheckpointError("checkpoint payload size mismatch: expected " + std::to_string(expected) +
                          " bytes, got " + std::to_string(actual) + where);
  }
  if (with_payload) raw.payload = bytes.substr(payload_start);
  return raw;
}

template <typename T>
void read_values(const std::string& payload, std::size_t offset, const std::string& dtype, std::span<T> out) {
  if (dtype == "f32") {
    for (std::size_t i = 0; i < out.size(); ++i) {
      float v;
      std::memcpy(&v, payload.data() + offset + i * 4, 4);
      out[i] = static_cast<T>(v);
    }
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      double v;
      std::memcpy(&v, payload.data() + offset + i * 8, 8);
      out[i] = static_cast<T>(v);
    }
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TransformerModel<T>& model,
                     const OptimizerState<T>* optimizer, const CheckpointMeta& meta) {
  const auto params = model.parameters();
  std::string payload;
  json tensors = json::array();
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", payload.size()}});
    append_raw(payload, p.tensor.data());
  }
  json optimizer_json = nullptr;
  if (optimizer) {
    if (optimizer->first_moment.size() != params.size() || optimizer->second_moment.size() != params.size()) {
      throw CheckpointError("optimizer state does not match the model's parameter list");
    }
    optimizer_json = {{"step", optimizer->step}, {"offset", payload.size()}};
    for (std::size_t i = 0; i < params.size(); ++i) append_raw(payload, std::span<const T>(optimizer->first_moment[i]));
    for (std::size_t i = 0; i < params.size(); ++i) {
      append_raw(payload, std::span<const T>(optimizer->second_moment[i]));
    }
  }
  const json header = {{"format", "ckpt-v1"},
                       {"dtype", dtype_name<T>()},
                       {"config", config_to_json(model.config())},
                       {"epoch", meta.epoch},
                       {"metrics", meta.metrics},
                       {"source_vocab_hash", meta.source_vocab_hash},
                       {"target_vocab_hash", meta.target_vocab_hash},
                       {"source_merges_hash", meta.source_merges_hash},
                       {"target_merges_hash", meta.target_merges_hash},
                       {"tokenizer", tokenizer_to_json(meta.tokenizer)},
                       {"tensors", tensors},
                       {"optimizer", optimizer_json},
                       {"payload_bytes", payload.size()}};
  const std::string header_text = header.dump();
  const std::uint64_t header_length = header_text.size();

  std::filesystem::path temp = path;
  temp += ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + temp.string());
    out.write(kMagic, kMagicSize);
    out.write(reinterpret_cast<const char*>(&header_length), 8);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.flush();
    if (!out) throw CheckpointError("failed writing checkpoint " + temp.string());
  }
  std::filesystem::rename(temp, path);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) { return read_raw(path, false).meta; }

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path, const Vocabulary* source_vocab,
                                    const Vocabulary* target_vocab) {
  RawFile raw = read_raw(path, true);
  if (source_vocab && hex64(source_vocab->fingerprint()) != raw.meta.source_vocab_hash) {
    throw VocabMismatchError("source vocabulary hash " + hex64(source_vocab->fingerprint()) +
                             " does not match checkpoint " + raw.meta.source_vocab_hash + " (" + path.string() + ")");
  }
  if (target_vocab && hex64(target_vocab->fingerprint()) != raw.meta.target_vocab_hash) {
    throw VocabMismatchError("target vocabulary hash " + hex64(target_vocab->fingerprint()) +
                             " does not match checkpoint " + raw.meta.target_vocab_hash + " (" + path.string() + ")");
  }
  const std::size_t width = dtype_size(raw.meta.dtype);
  TransformerModel<T> model(raw.meta.config);
  auto params = model.parameters();
  const json& tensors = raw.header.at("tensors");
  if (tensors.size() != params.size()) {
    throw CheckpointError("checkpoint lists " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& entry = tensors[i];
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    if (name != params[i].name || shape != params[i].tensor.shape()) {
      throw CheckpointError("tensor " + std::to_string(i) + " is " + name + " " + shape_to_string(shape) +
                            ", expected " + params[i].name + " " + shape_to_string(params[i].tensor.shape()));
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    if (offset + params[i].tensor.size() * width > raw.payload.size()) {
      throw CheckpointError("tensor " + name + " runs past the end of the payload");
    }
    read_values(raw.payload, offset, raw.meta.dtype, params[i].tensor.mutable_data());
  }
  LoadedCheckpoint<T> loaded{raw.meta, std::move(model), {}};
  loaded.optimizer = OptimizerState<T>::zeros_like(params);
  const json& opt = raw.header.at("optimizer");
  if (!opt.is_null()) {
    loaded.optimizer.step = opt.at("step").get<std::int64_t>();
    std::size_t offset = opt.at("offset").get<std::size_t>();
    for (int which = 0; which < 2; ++which) {
      auto& buffers = which == 0 ? loaded.optimizer.first_moment : loaded.optimizer.second_moment;
      for (auto& buffer : buffers) {
        if (offset + buffer.size() * width > raw.payload.size()) {
          throw CheckpointError("optimizer state runs past the end of the payload");
        }
        read_values(raw.payload, offset, raw.meta.dtype, std::span<T>(buffer));
        offset += buffer.size() * width;
      }
    }
  }
  return loaded;
}

Tokenizer load_tokenizer(const TokenizerFiles& files) {
  Tokenizer tokenizer;
  tokenizer.mode = files.mode;
  tokenizer.source_vocab = Vocabulary::load(files.source_vocab);
  tokenizer.target_vocab = Vocabulary::load(files.target_vocab);
  if (files.mode == TokenizationMode::kBpe) {
    tokenizer.source_merges = MergeTable::load(files.source_merges);
    tokenizer.target_merges = MergeTable::load(files.target_merges);
  }
  return tokenizer;
}

Tokenizer load_tokenizer(const CheckpointMeta& meta) {
  Tokenizer tokenizer;
  try {
    tokenizer = load_tokenizer(meta.tokenizer);
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("cannot load the checkpoint's tokenizer: ") + e.what());
  }
  if (hex64(tokenizer.source_vocab.fingerprint()) != meta.source_vocab_hash) {
    throw VocabMismatchError("source vocabulary " + meta.tokenizer.source_vocab.string() +
                             " does not match the checkpoint (hash " + hex64(tokenizer.source_vocab.fingerprint()) +
                             " vs " + meta.source_vocab_hash + ")");
  }
  if (hex64(tokenizer.target_vocab.fingerprint()) != meta.target_vocab_hash) {
    throw VocabMismatchError("target vocabulary " + meta.tokenizer.target_vocab.string() +
                             " does not match the checkpoint (hash " + hex64(tokenizer.target_vocab.fingerprint()) +
                             " vs " + meta.target_vocab_hash + ")");
  }
  auto check_merges = [](const std::optional<MergeTable>& table, const std::string& expected, const char* side) {
    const std::string actual = table ? hex64(fnv1a64(table->serialize())) : std::string();
    if (actual != expected) {
      throw VocabMismatchError(std::string(side) + " merge table does not match the checkpoint (hash " + actual +
                               " vs " + expected + ")");
    }
  };
  check_merges(tokenizer.source_merges, meta.source_merges_hash, "source");
  check_merges(tokenizer.target_merges, meta.target_merges_hash, "target");
  return tokenizer;
}

#define MINMT_INSTANTIATE_CHECKPOINT(T)                                                                            \
  template void save_checkpoint(const std::filesystem::path&, const TransformerModel<T>&, const OptimizerState<T>*, \
                                const CheckpointMeta&);                                                             \
  template LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path&, const Vocabulary*, const Vocabulary*);

MINMT_INSTANTIATE_CHECKPOINT(float)
MINMT_INSTANTIATE_CHECKPOINT(double)

#undef MINMT_INSTANTIATE_CHECKPOINT

}  // namespace minmt

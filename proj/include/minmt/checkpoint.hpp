#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "minmt/tokenization.hpp"
#include "minmt/transformer.hpp"

namespace minmt {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VocabMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::int64_t step = 0;

  static OptimizerState zeros_like(const std::vector<NamedTensor<T>>& params);
};

// Where a model's tokenizer artifacts live, and how to verify them.
struct TokenizerFiles {
  TokenizationMode mode = TokenizationMode::kWord;
  std::filesystem::path source_vocab;
  std::filesystem::path target_vocab;
  std::filesystem::path source_merges;  // empty for word-level
  std::filesystem::path target_merges;
};

struct CheckpointMeta {
  TransformerConfig config;
  std::int64_t epoch = 0;
  std::map<std::string, double> metrics;
  std::string source_vocab_hash;
  std::string target_vocab_hash;
  std::string source_merges_hash;  // empty for word-level
  std::string target_merges_hash;
  TokenizerFiles tokenizer;
  std::string dtype;  // "f32" or "f64"
};

/// ckpt-v1 layout:
///   "ckpt-v1\n"
///   u64 little-endian header length
///   UTF-8 JSON header (config, vocab hashes, epoch, metrics, tensor table,
///   payload_bytes)
///   raw little-endian tensor payload
/// Written to a temporary file and renamed into place.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TransformerModel<T>& model,
                     const OptimizerState<T>* optimizer, const CheckpointMeta& meta);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

template <typename T>
struct LoadedCheckpoint {
  CheckpointMeta meta;
  TransformerModel<T> model;
  OptimizerState<T> optimizer;
};

// Verifies the vocabularies against the stored hashes when given.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path, const Vocabulary* source_vocab = nullptr,
                                    const Vocabulary* target_vocab = nullptr);

// Reads the artifacts listed in meta.tokenizer, verifying vocabulary hashes.
Tokenizer load_tokenizer(const CheckpointMeta& meta);
Tokenizer load_tokenizer(const TokenizerFiles& files);

}  // namespace minmt

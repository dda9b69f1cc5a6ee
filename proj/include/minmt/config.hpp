#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "minmt/decoding.hpp"
#include "minmt/tokenization.hpp"
#include "minmt/training.hpp"
#include "minmt/transformer.hpp"

namespace minmt {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Direction { kEnPcm, kPcmEn };

std::string to_string(Direction direction);
Direction parse_direction(std::string_view text);

enum class Precision { kFloat32, kFloat64 };

/// One experiment: data, tokenization, model shape, training and decoding.
///
/// File format: UTF-8 `key = value` lines, `#` starts a comment, no
/// sections. Unknown or repeated keys are errors. Paths are resolved against
/// the directory holding the file.
struct ExperimentConfig {
  std::filesystem::path base_dir;

  Direction direction = Direction::kEnPcm;
  // Split files are <prefix>.en and <prefix>.pcm.
  std::filesystem::path train_prefix;
  std::filesystem::path dev_prefix;
  std::filesystem::path test_prefix;
  std::filesystem::path output_dir;

  TokenizationMode tokenization = TokenizationMode::kWord;
  std::size_t bpe_merges = 4000;
  bool bpe_separate = false;
  std::size_t vocab_max_size = 30000;  // per language; 0 = keep every token
  std::int64_t vocab_min_freq = 1;

  std::string preset = "word";  // word | bpe | custom
  TransformerConfig model;      // vocabulary sizes are filled in after tokenization
  Precision precision = Precision::kFloat32;

  TrainConfig train;
  DecodeConfig decode;
  std::size_t report_rows = 10;
  std::uint64_t report_seed = 42;  // defaults to seed
  std::uint64_t seed = 42;

  static ExperimentConfig parse(std::string_view text, const std::filesystem::path& base_dir);
  static ExperimentConfig load(const std::filesystem::path& path);

  std::string source_suffix() const { return direction == Direction::kEnPcm ? ".en" : ".pcm"; }
  std::string target_suffix() const { return direction == Direction::kEnPcm ? ".pcm" : ".en"; }
  std::filesystem::path source_file(const std::filesystem::path& prefix) const;
  std::filesystem::path target_file(const std::filesystem::path& prefix) const;

  // Model shape for the given vocabulary sizes.
  TransformerConfig model_config(std::size_t src_vocab, std::size_t tgt_vocab) const;
  void validate() const;
};

}  // namespace minmt

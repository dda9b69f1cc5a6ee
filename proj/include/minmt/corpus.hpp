#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "minmt/tokenization.hpp"

namespace minmt {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Right-padded id matrix [batch x length] with its non-pad mask.
struct PaddedSequences {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;

  static PaddedSequences from(std::span<const std::vector<int>> sequences, int pad_id);

  int at(std::size_t b, std::size_t t) const { return ids[b * length + t]; }
  bool real(std::size_t b, std::size_t t) const { return mask[b * length + t] != 0; }
  std::size_t real_count() const;

  // Column slices used for teacher forcing: inputs drop the last column,
  // outputs drop the first.
  PaddedSequences without_last() const;
  PaddedSequences without_first() const;
};

enum class Split { kTrain, kDev, kTest };

struct SentencePair {
  std::string source;
  std::string target;
  bool operator==(const SentencePair&) const = default;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  Split split = Split::kTrain;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  std::vector<std::string> sources() const;
  std::vector<std::string> targets() const;
};

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t dropped_empty = 0;
  // "loaded=<n> dropped_empty=<n>"
  std::string summary() const;
};

struct LoadResult {
  ParallelCorpus corpus;
  LoadReport report;
};

// One sentence per line, LF or CRLF. Throws DataError naming the line of the
// first invalid UTF-8 sequence.
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

/// Aligns line i of both files. Pairs with an empty or whitespace-only side
/// are dropped and counted.
LoadResult load_parallel(const std::filesystem::path& source_path, const std::filesystem::path& target_path,
                         Split split = Split::kTrain);
void save_parallel(const ParallelCorpus& corpus, const std::filesystem::path& source_path,
                   const std::filesystem::path& target_path);

// Ids with <s> ... </s> on both sides.
struct EncodedPair {
  std::vector<int> source;
  std::vector<int> target;
};

std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const Tokenizer& tokenizer);

struct Batch {
  PaddedSequences source;
  PaddedSequences target;
  std::vector<std::size_t> pair_indices;

  // Padded source + padded target positions.
  std::size_t padded_tokens() const { return source.ids.size() + target.ids.size(); }
};

struct BatchPlan {
  std::vector<Batch> batches;
  std::size_t dropped_too_long = 0;
  std::size_t surviving = 0;
};

/// Drops pairs with a side longer than max_len tokens (sentinels excluded),
/// sorts the rest by length, packs neighbours into batches whose padded size
/// stays within token_budget, then shuffles the batch order with seed.
BatchPlan make_batches(std::span<const EncodedPair> pairs, std::size_t token_budget, std::size_t max_len,
                       std::uint64_t seed);

}  // namespace minmt

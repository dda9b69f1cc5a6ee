#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace minmt {

// Splits on runs of Unicode whitespace. Never yields empty tokens.
std::vector<std::string> whitespace_tokenize(std::string_view line);

// Token type -> frequency. Ordered so every consumer iterates deterministically.
using TokenCounts = std::map<std::string, std::int64_t>;

TokenCounts count_tokens(std::span<const std::string> lines);
void add_counts(TokenCounts& counts, std::span<const std::string> tokens);

struct Merge {
  std::string left;
  std::string right;
  bool operator==(const Merge&) const = default;
};

struct PairHash {
  std::size_t operator()(const std::pair<std::string, std::string>& p) const noexcept;
};

/// Learned BPE merges in priority order (index = rank).
class MergeTable {
 public:
  explicit MergeTable(std::string marker = "@@");

  // Throws std::invalid_argument on a duplicate pair.
  void push_back(Merge merge);

  std::size_t size() const { return merges_.size(); }
  bool empty() const { return merges_.empty(); }
  const std::vector<Merge>& merges() const { return merges_; }
  const std::string& marker() const { return marker_; }
  std::optional<std::size_t> rank(const std::string& left, const std::string& right) const;

  // "#bpe-merges v1 marker=<m> count=<n>" then one "left right" per line.
  std::string serialize() const;
  static MergeTable parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static MergeTable load(const std::filesystem::path& path);

  bool operator==(const MergeTable& other) const {
    return marker_ == other.marker_ && merges_ == other.merges_;
  }

 private:
  std::string marker_;
  std::vector<Merge> merges_;
  std::unordered_map<std::pair<std::string, std::string>, std::size_t, PairHash> ranks_;
};

/// Learns up to `num_merges` merges from word frequencies. Words start as
/// code-point sequences; each round merges the most frequent adjacent pair
/// (ties: lexicographically smallest (left, right)) and stops early once the
/// best pair occurs fewer than twice.
MergeTable learn_bpe(const TokenCounts& counts, std::size_t num_merges, std::string marker = "@@");

// Segments one token. All pieces but the last carry the marker suffix.
std::vector<std::string> segment_word(std::string_view word, const MergeTable& merges);

std::vector<std::string> apply_bpe(std::span<const std::string> tokens, const MergeTable& merges);

// Memoizing wrapper around segment_word for repeated tokens.
class BpeSegmenter {
 public:
  explicit BpeSegmenter(const MergeTable& merges) : merges_(&merges) {}
  std::vector<std::string> apply(std::span<const std::string> tokens);

 private:
  const MergeTable* merges_;
  std::unordered_map<std::string, std::vector<std::string>> cache_;
};

/// Joins marker-suffixed pieces with their successors. A marker on the very
/// last piece has nothing to join; it is stripped and *dangling is set.
std::vector<std::string> undo_bpe(std::span<const std::string> subwords, std::string_view marker = "@@",
                                  bool* dangling = nullptr);

class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kPad = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kNumSpecials = 4;

  static const std::string& special_token(int id);
  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  Vocabulary();
  // Non-special tokens in id order starting at kNumSpecials.
  explicit Vocabulary(std::vector<std::string> tokens);

  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return kNumSpecials + tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::string serialize() const;
  // FNV-1a 64 over serialize(); pairs checkpoints with vocabularies.
  std::uint64_t fingerprint() const;
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Tokens with count >= min_freq, most frequent first (ties lexicographic),
// at most max_size of them after the specials.
Vocabulary build_vocab(const TokenCounts& counts, std::size_t max_size, std::int64_t min_freq);

std::vector<int> encode_ids(std::span<const std::string> tokens, const Vocabulary& vocab, bool add_sentinels);
// Drops special ids.
std::vector<std::string> decode_ids(std::span<const int> ids, const Vocabulary& vocab);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

enum class TokenizationMode { kWord, kBpe };

std::string to_string(TokenizationMode mode);
TokenizationMode parse_tokenization_mode(std::string_view text);

/// Everything needed to turn raw lines into ids and ids back into text for
/// one translation direction.
struct Tokenizer {
  TokenizationMode mode = TokenizationMode::kWord;
  std::optional<MergeTable> source_merges;
  std::optional<MergeTable> target_merges;
  Vocabulary source_vocab;
  Vocabulary target_vocab;

  std::vector<std::string> segment_source(std::string_view line) const;
  std::vector<std::string> segment_target(std::string_view line) const;
  std::vector<int> encode_source(std::string_view line) const;
  std::vector<int> encode_target(std::string_view line) const;
  // Ids to a whitespace-joined, marker-free sentence.
  std::string detokenize_target(std::span<const int> ids) const;
};

}  // namespace minmt

#include "minmt/tokenization.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>
#include <unordered_set>

#include "minmt/utf8.hpp"

namespace minmt {

std::vector<std::string> whitespace_tokenize(std::string_view line) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  std::size_t start = std::string_view::npos;
  while (pos < line.size()) {
    const std::size_t here = pos;
    auto cp = utf8::decode(line, pos);
    if (!cp) pos = here + 1;
    if (cp && utf8::is_space(*cp)) {
      if (start != std::string_view::npos) tokens.emplace_back(line.substr(start, here - start));
      start = std::string_view::npos;
    } else if (start == std::string_view::npos) {
      start = here;
    }
  }
  if (start != std::string_view::npos) tokens.emplace_back(line.substr(start));
  return tokens;
}

void add_counts(TokenCounts& counts, std::span<const std::string> tokens) {
  for (const auto& token : tokens) ++counts[token];
}

TokenCounts count_tokens(std::span<const std::string> lines) {
  TokenCounts counts;
  for (const auto& line : lines) add_counts(counts, whitespace_tokenize(line));
  return counts;
}

std::size_t PairHash::operator()(const std::pair<std::string, std::string>& p) const noexcept {
  const std::size_t h1 = std::hash<std::string>{}(p.first);
  const std::size_t h2 = std::hash<std::string>{}(p.second);
  return h1 ^ (h2 + 0x9e3779b97f4a7c15ULL + (h1 << 6) + (h1 >> 2));
}

// ---------------------------------------------------------------- MergeTable

MergeTable::MergeTable(std::string marker) : marker_(std::move(marker)) {
  if (marker_.empty()) throw std::invalid_argument("continuation marker must not be empty");
}

void MergeTable::push_back(Merge merge) {
  auto key = std::make_pair(merge.left, merge.right);
  if (ranks_.count(key)) {
    throw std::invalid_argument("duplicate merge (" + merge.left + ", " + merge.right + ")");
  }
  ranks_.emplace(std::move(key), merges_.size());
  merges_.push_back(std::move(merge));
}

std::optional<std::size_t> MergeTable::rank(const std::string& left, const std::string& right) const {
  auto it = ranks_.find(std::make_pair(left, right));
  if (it == ranks_.end()) return std::nullopt;
  return it->second;
}

std::string MergeTable::serialize() const {
  std::string out = "#bpe-merges v1 marker=" + marker_ + " count=" + std::to_string(merges_.size()) + "\n";
  for (const auto& m : merges_) {
    out += m.left;
    out += ' ';
    out += m.right;
    out += '\n';
  }
  return out;
}

MergeTable MergeTable::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("merge file: missing header");
  static const std::string kPrefix = "#bpe-merges v1 marker=";
  if (line.rfind(kPrefix, 0) != 0) throw std::runtime_error("merge file: bad header '" + line + "'");
  const std::size_t count_at = line.rfind(" count=");
  if (count_at == std::string::npos || count_at < kPrefix.size()) {
    throw std::runtime_error("merge file: header lacks count");
  }
  std::string marker = line.substr(kPrefix.size(), count_at - kPrefix.size());
  std::size_t expected;
  try {
    std::size_t used = 0;
    const std::string count_text = line.substr(count_at + 7);
    expected = std::stoul(count_text, &used);
    if (used != count_text.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw std::runtime_error("merge file: bad count in header '" + line + "'");
  }
  MergeTable table(marker);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 == line.size() ||
        line.find(' ', space + 1) != std::string::npos) {
      throw std::runtime_error("merge file: line " + std::to_string(line_no) + " is not 'left right'");
    }
    table.push_back(Merge{line.substr(0, space), line.substr(space + 1)});
  }
  if (table.size() != expected) {
    throw std::runtime_error("merge file: header says " + std::to_string(expected) + " merges, found " +
                             std::to_string(table.size()));
  }
  return table;
}

void MergeTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

MergeTable MergeTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open merge file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

// ---------------------------------------------------------------- learning

namespace {

using Symbols = std::vector<std::string>;
using Pair = std::pair<std::string, std::string>;

void merge_in_place(Symbols& symbols, const std::string& left, const std::string& right) {
  Symbols merged;
  merged.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size();) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      merged.push_back(left + right);
      i += 2;
    } else {
      merged.push_back(std::move(symbols[i]));
      ++i;
    }
  }
  symbols = std::move(merged);
}

// Max-count pair first; equal counts in (left, right) order.
struct Ranked {
  std::int64_t count;
  Pair pair;
  bool operator<(const Ranked& o) const {
    if (count != o.count) return count > o.count;
    return pair < o.pair;
  }
};

}  // namespace

MergeTable learn_bpe(const TokenCounts& counts, std::size_t num_merges, std::string marker) {
  if (counts.empty()) throw std::invalid_argument("learn_bpe: empty token stream");
  MergeTable table(std::move(marker));

  std::vector<Symbols> words;
  std::vector<std::int64_t> freqs;
  for (const auto& [word, freq] : counts) {
    if (freq <= 0) continue;
    words.push_back(utf8::characters(word));
    freqs.push_back(freq);
  }
  if (words.empty()) throw std::invalid_argument("learn_bpe: empty token stream");

  std::unordered_map<Pair, std::int64_t, PairHash> pair_counts;
  std::unordered_map<Pair, std::unordered_set<std::size_t>, PairHash> occurs_in;
  for (std::size_t w = 0; w < words.size(); ++w) {
    for (std::size_t i = 0; i + 1 < words[w].size(); ++i) {
      Pair p{words[w][i], words[w][i + 1]};
      pair_counts[p] += freqs[w];
      occurs_in[p].insert(w);
    }
  }
  std::set<Ranked> queue;
  for (const auto& [p, c] : pair_counts) queue.insert(Ranked{c, p});

  while (table.size() < num_merges && !queue.empty()) {
    const Ranked best = *queue.begin();
    if (best.count < 2) break;
    table.push_back(Merge{best.pair.first, best.pair.second});

    std::unordered_map<Pair, std::int64_t, PairHash> delta;
    std::vector<std::size_t> affected(occurs_in[best.pair].begin(), occurs_in[best.pair].end());
    std::sort(affected.begin(), affected.end());
    for (std::size_t w : affected) {
      Symbols& symbols = words[w];
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        Pair p{symbols[i], symbols[i + 1]};
        delta[p] -= freqs[w];
        auto it = occurs_in.find(p);
        if (it != occurs_in.end()) it->second.erase(w);
      }
      merge_in_place(symbols, best.pair.first, best.pair.second);
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        Pair p{symbols[i], symbols[i + 1]};
        delta[p] += freqs[w];
        occurs_in[p].insert(w);
      }
    }
    for (const auto& [p, change] : delta) {
      if (change == 0) continue;
      auto it = pair_counts.find(p);
      const std::int64_t before = it == pair_counts.end() ? 0 : it->second;
      const std::int64_t after = before + change;
      if (before > 0) queue.erase(Ranked{before, p});
      if (after > 0) {
        pair_counts[p] = after;
        queue.insert(Ranked{after, p});
      } else {
        pair_counts.erase(p);
        occurs_in.erase(p);
      }
    }
  }
  return table;
}

// ---------------------------------------------------------------- applying

std::vector<std::string> segment_word(std::string_view word, const MergeTable& merges) {
  Symbols symbols = utf8::characters(word);
  while (symbols.size() > 1) {
    std::optional<std::size_t> best;
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto r = merges.rank(symbols[i], symbols[i + 1]);
      if (r && (!best || *r < *best)) {
        best = r;
        best_at = i;
      }
    }
    if (!best) break;
    const std::string left = symbols[best_at];
    const std::string right = symbols[best_at + 1];
    merge_in_place(symbols, left, right);
  }
  for (std::size_t i = 0; i + 1 < symbols.size(); ++i) symbols[i] += merges.marker();
  return symbols;
}

std::vector<std::string> apply_bpe(std::span<const std::string> tokens, const MergeTable& merges) {
  std::vector<std::string> out;
  for (const auto& token : tokens) {
    auto pieces = segment_word(token, merges);
    out.insert(out.end(), std::make_move_iterator(pieces.begin()), std::make_move_iterator(pieces.end()));
  }
  return out;
}

std::vector<std::string> BpeSegmenter::apply(std::span<const std::string> tokens) {
  std::vector<std::string> out;
  for (const auto& token : tokens) {
    auto it = cache_.find(token);
    if (it == cache_.end()) it = cache_.emplace(token, segment_word(token, *merges_)).first;
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

std::vector<std::string> undo_bpe(std::span<const std::string> subwords, std::string_view marker, bool* dangling) {
  std::vector<std::string> tokens;
  std::string pending;
  bool open = false;
  if (dangling) *dangling = false;
  for (const auto& piece : subwords) {
    const bool continued = piece.size() >= marker.size() &&
                           std::string_view(piece).substr(piece.size() - marker.size()) == marker;
    if (continued) {
      pending.append(piece, 0, piece.size() - marker.size());
      open = true;
    } else {
      pending += piece;
      tokens.push_back(std::move(pending));
      pending.clear();
      open = false;
    }
  }
  if (open) {
    if (dangling) *dangling = true;
    if (!pending.empty()) tokens.push_back(std::move(pending));
  }
  return tokens;
}

// ---------------------------------------------------------------- Vocabulary

const std::string& Vocabulary::special_token(int id) {
  static const std::string kSpecials[kNumSpecials] = {"<unk>", "<pad>", "<s>", "</s>"};
  if (!is_special(id)) throw std::out_of_range("not a special id: " + std::to_string(id));
  return kSpecials[id];
}

Vocabulary::Vocabulary() = default;

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const std::string& t = tokens_[i];
    if (t.empty()) throw std::invalid_argument("vocabulary: empty token at id " + std::to_string(i + kNumSpecials));
    for (int s = 0; s < kNumSpecials; ++s) {
      if (t == special_token(s)) throw std::invalid_argument("vocabulary: special token '" + t + "' listed explicitly");
    }
    if (!index_.emplace(t, static_cast<int>(i) + kNumSpecials).second) {
      throw std::invalid_argument("vocabulary: duplicate token '" + t + "'");
    }
  }
}

namespace {

int special_id(std::string_view token) {
  for (int s = 0; s < Vocabulary::kNumSpecials; ++s) {
    if (token == Vocabulary::special_token(s)) return s;
  }
  return -1;
}

}  // namespace

int Vocabulary::id(std::string_view token) const {
  if (const int s = special_id(token); s >= 0) return s;
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return special_id(token) >= 0 || index_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token(int id) const {
  if (is_special(id)) return special_token(id);
  if (id < 0 || static_cast<std::size_t>(id) >= size()) {
    throw std::out_of_range("vocabulary id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id - kNumSpecials)];
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

std::uint64_t Vocabulary::fingerprint() const { return fnv1a64(serialize()); }

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary build_vocab(const TokenCounts& counts, std::size_t max_size, std::int64_t min_freq) {
  std::vector<std::pair<std::string, std::int64_t>> kept;
  for (const auto& [token, freq] : counts) {
    if (freq < min_freq) continue;
    bool special = false;
    for (int s = 0; s < Vocabulary::kNumSpecials; ++s) special = special || token == Vocabulary::special_token(s);
    if (!special) kept.emplace_back(token, freq);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (kept.size() > max_size) kept.resize(max_size);
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [token, freq] : kept) tokens.push_back(std::move(token));
  return Vocabulary(std::move(tokens));
}

std::vector<int> encode_ids(std::span<const std::string> tokens, const Vocabulary& vocab, bool add_sentinels) {
  std::vector<int> ids;
  ids.reserve(tokens.size() + 2);
  if (add_sentinels) ids.push_back(Vocabulary::kBos);
  for (const auto& t : tokens) ids.push_back(vocab.id(t));
  if (add_sentinels) ids.push_back(Vocabulary::kEos);
  return ids;
}

std::vector<std::string> decode_ids(std::span<const int> ids, const Vocabulary& vocab) {
  std::vector<std::string> tokens;
  for (int id : ids) {
    if (!Vocabulary::is_special(id)) tokens.push_back(vocab.token(id));
  }
  return tokens;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string hex64(std::uint64_t value) {
  static const char* kDigits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[value & 0xF];
    value >>= 4;
  }
  return out;
}

// ---------------------------------------------------------------- Tokenizer

std::string to_string(TokenizationMode mode) { return mode == TokenizationMode::kBpe ? "bpe" : "word"; }

TokenizationMode parse_tokenization_mode(std::string_view text) {
  if (text == "word") return TokenizationMode::kWord;
  if (text == "bpe") return TokenizationMode::kBpe;
  throw std::invalid_argument("tokenization must be 'word' or 'bpe', got '" + std::string(text) + "'");
}

namespace {

std::vector<std::string> segment_with(std::string_view line, const std::optional<MergeTable>& merges) {
  auto tokens = whitespace_tokenize(line);
  if (!merges) return tokens;
  return apply_bpe(tokens, *merges);
}

}  // namespace

std::vector<std::string> Tokenizer::segment_source(std::string_view line) const {
  return segment_with(line, mode == TokenizationMode::kBpe ? source_merges : std::nullopt);
}

std::vector<std::string> Tokenizer::segment_target(std::string_view line) const {
  return segment_with(line, mode == TokenizationMode::kBpe ? target_merges : std::nullopt);
}

std::vector<int> Tokenizer::encode_source(std::string_view line) const {
  return encode_ids(segment_source(line), source_vocab, true);
}

std::vector<int> Tokenizer::encode_target(std::string_view line) const {
  return encode_ids(segment_target(line), target_vocab, true);
}

std::string Tokenizer::detokenize_target(std::span<const int> ids) const {
  auto pieces = decode_ids(ids, target_vocab);
  if (mode == TokenizationMode::kBpe) {
    const std::string marker = target_merges ? target_merges->marker() : "@@";
    pieces = undo_bpe(pieces, marker);
  }
  std::string out;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (i) out += ' ';
    out += pieces[i];
  }
  return out;
}

}  // namespace minmt

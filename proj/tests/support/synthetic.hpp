#pragma once

// Seeded synthetic text and tiny models for property tests.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "minmt/corpus.hpp"
#include "minmt/random.hpp"
#include "minmt/tokenization.hpp"
#include "minmt/transformer.hpp"

namespace minmt::testing {

// Contains no '@', so marker-suffixed words never occur in generated text.
inline const std::vector<std::string>& synthetic_alphabet() {
  static const std::vector<std::string> letters = {"a", "b", "d", "e", "g", "i", "k", "l", "m", "n",
                                                   "o", "p", "r", "s", "t", "u", "w", "y", "ẹ", "ọ",
                                                   "é", "ń", "A", "T", "?", ".", ",", "'", "1", "-"};
  return letters;
}

inline std::vector<std::string> synthetic_lexicon(std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  const auto& alphabet = synthetic_alphabet();
  std::vector<std::string> words;
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t len = 1 + rng.below(9);
    std::string w;
    for (std::size_t j = 0; j < len; ++j) w += alphabet[rng.below(alphabet.size())];
    words.push_back(w);
  }
  return words;
}

// Zipf-like word choice so frequent pairs emerge, as in natural text.
inline std::vector<std::string> synthetic_lines(std::size_t lines, std::size_t lexicon_size, std::uint64_t seed) {
  const auto lexicon = synthetic_lexicon(lexicon_size, seed ^ 0xabcdef);
  Rng rng(seed);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < lines; ++i) {
    const std::size_t len = 1 + rng.below(14);
    std::string line;
    for (std::size_t j = 0; j < len; ++j) {
      const double u = rng.uniform();
      const auto index = static_cast<std::size_t>(std::pow(u, 3.0) * static_cast<double>(lexicon.size()));
      if (j) line += ' ';
      line += lexicon[std::min(index, lexicon.size() - 1)];
    }
    out.push_back(line);
  }
  return out;
}

inline TransformerConfig tiny_config(std::size_t vocab, std::size_t dim, std::size_t heads, std::size_t layers,
                                     std::size_t ff) {
  TransformerConfig c;
  c.enc_layers = layers;
  c.dec_layers = layers;
  c.heads = heads;
  c.embed_dim = dim;
  c.ff_dim = ff;
  c.dropout = 0.0;
  c.max_positions = 64;
  c.src_vocab_size = vocab;
  c.tgt_vocab_size = vocab;
  return c;
}

// <s> w1 .. wn </s> with ids drawn from the non-special range.
inline std::vector<int> random_sentence(Rng& rng, std::size_t vocab, std::size_t min_len, std::size_t max_len) {
  const std::size_t len = min_len + rng.below(max_len - min_len + 1);
  std::vector<int> ids{Vocabulary::kBos};
  for (std::size_t i = 0; i < len; ++i) {
    ids.push_back(static_cast<int>(Vocabulary::kNumSpecials + rng.below(vocab - Vocabulary::kNumSpecials)));
  }
  ids.push_back(Vocabulary::kEos);
  return ids;
}

}  // namespace minmt::testing

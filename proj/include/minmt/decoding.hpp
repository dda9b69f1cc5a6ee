#pragma once

#include <span>
#include <vector>

#include "minmt/transformer.hpp"

namespace minmt {

struct DecodeConfig {
  std::size_t max_len = 100;
  std::size_t beam_size = 5;
  double length_penalty_alpha = 1.0;

  void validate() const;
};

// Generated ids exclude <s> and </s>.
struct Hypothesis {
  std::vector<int> ids;
  double log_prob = 0.0;
  double score = 0.0;     // log_prob / length_penalty(steps)
  bool finished = false;  // emitted </s>
};

// ((5 + length) / 6)^alpha, length counting the </s> step when emitted.
double length_penalty(std::size_t length, double alpha);

// Source ids are as produced by Tokenizer::encode_source (with sentinels).
// Every step takes the most probable next token (ties: lowest id) until </s>
// or cfg.max_len tokens.
template <typename T>
std::vector<int> greedy_decode(const TransformerModel<T>& model, std::span<const int> source, const DecodeConfig& cfg);

// Decodes many sources in lockstep; identical to greedy_decode on each.
template <typename T>
std::vector<std::vector<int>> greedy_decode_batch(const TransformerModel<T>& model,
                                                  std::span<const std::vector<int>> sources, const DecodeConfig& cfg,
                                                  std::size_t max_batch = 64);

/// Beam search over length-normalised log-probability. Each step keeps the
/// beam_size best expansions; those ending in </s> retire to the finished
/// pool. Returns the best finished hypothesis, or the best unfinished one if
/// none finished within max_len. Ties go to the lexicographically smaller id
/// sequence.
template <typename T>
Hypothesis beam_decode(const TransformerModel<T>& model, std::span<const int> source, const DecodeConfig& cfg);

// Teacher-forced log-probability of `ids`, plus </s> when `finished`.
template <typename T>
double sequence_log_prob(const TransformerModel<T>& model, std::span<const int> source, std::span<const int> ids,
                         bool finished);

}  // namespace minmt

#include "minmt/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace minmt {

void DecodeConfig::validate() const {
  if (max_len == 0) throw std::invalid_argument("decode max_len must be positive");
  if (beam_size == 0) throw std::invalid_argument("beam_size must be at least 1");
  if (!(length_penalty_alpha >= 0.0)) throw std::invalid_argument("length penalty alpha must be >= 0");
}

double length_penalty(std::size_t length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

namespace {

template <typename T>
void log_softmax_row(const T* logits, std::size_t vocab, std::vector<double>& out) {
  out.resize(vocab);
  double max_value = static_cast<double>(logits[0]);
  for (std::size_t j = 1; j < vocab; ++j) max_value = std::max(max_value, static_cast<double>(logits[j]));
  double z = 0.0;
  for (std::size_t j = 0; j < vocab; ++j) z += std::exp(static_cast<double>(logits[j]) - max_value);
  const double lse = max_value + std::log(z);
  for (std::size_t j = 0; j < vocab; ++j) out[j] = static_cast<double>(logits[j]) - lse;
}

// Repeats a one-sentence memory/source `copies` times along the batch axis.
template <typename T>
Tensor<T> tile_rows(const Tensor<T>& memory, std::size_t copies) {
  const auto data = memory.data();
  std::vector<T> out;
  out.reserve(data.size() * copies);
  for (std::size_t c = 0; c < copies; ++c) out.insert(out.end(), data.begin(), data.end());
  return Tensor<T>(Shape{memory.dim(0) * copies, memory.dim(1)}, std::move(out));
}

PaddedSequences tile_source(const PaddedSequences& source, std::size_t copies) {
  PaddedSequences out;
  out.batch = copies;
  out.length = source.length;
  for (std::size_t c = 0; c < copies; ++c) {
    out.ids.insert(out.ids.end(), source.ids.begin(), source.ids.end());
    out.mask.insert(out.mask.end(), source.mask.begin(), source.mask.end());
  }
  return out;
}

PaddedSequences single(std::span<const int> ids) {
  std::vector<std::vector<int>> rows{std::vector<int>(ids.begin(), ids.end())};
  return PaddedSequences::from(rows, Vocabulary::kPad);
}

// Log-probabilities of the next token for each prefix (all the same length).
template <typename T>
std::vector<std::vector<double>> next_log_probs(const TransformerModel<T>& model, const Tensor<T>& memory,
                                                const PaddedSequences& source,
                                                const std::vector<std::vector<int>>& prefixes) {
  const PaddedSequences target = PaddedSequences::from(prefixes, Vocabulary::kPad);
  Tensor<T> logits = decoder_forward(model, memory, source, target);
  const std::size_t vocab = logits.dim(1);
  std::vector<std::vector<double>> out(prefixes.size());
  for (std::size_t b = 0; b < prefixes.size(); ++b) {
    const std::size_t row = b * target.length + prefixes[b].size() - 1;
    log_softmax_row(logits.data().data() + row * vocab, vocab, out[b]);
  }
  return out;
}

struct Candidate {
  std::size_t parent;
  int token;
  double log_prob;
};

}  // namespace

template <typename T>
std::vector<int> greedy_decode(const TransformerModel<T>& model, std::span<const int> source, const DecodeConfig& cfg) {
  std::vector<std::vector<int>> sources{std::vector<int>(source.begin(), source.end())};
  return greedy_decode_batch(model, std::span<const std::vector<int>>(sources), cfg).front();
}

template <typename T>
std::vector<std::vector<int>> greedy_decode_batch(const TransformerModel<T>& model,
                                                  std::span<const std::vector<int>> sources, const DecodeConfig& cfg,
                                                  std::size_t max_batch) {
  cfg.validate();
  NoGradGuard no_grad;
  std::vector<std::vector<int>> results(sources.size());
  for (std::size_t start = 0; start < sources.size(); start += max_batch) {
    const std::size_t count = std::min(max_batch, sources.size() - start);
    const PaddedSequences source = PaddedSequences::from(sources.subspan(start, count), Vocabulary::kPad);
    const Tensor<T> memory = encode_source(model, source);
    std::vector<std::vector<int>> prefixes(count, std::vector<int>{Vocabulary::kBos});
    std::vector<double> cumulative(count, 0.0);
    std::vector<bool> done(count, false);
    std::size_t remaining = count;
    for (std::size_t step = 0; step < cfg.max_len && remaining > 0; ++step) {
      const auto log_probs = next_log_probs(model, memory, source, prefixes);
      for (std::size_t b = 0; b < count; ++b) {
        if (done[b]) {
          prefixes[b].push_back(Vocabulary::kPad);
          continue;
        }
        std::size_t best = 0;
        double best_value = cumulative[b] + log_probs[b][0];
        for (std::size_t v = 1; v < log_probs[b].size(); ++v) {
          const double value = cumulative[b] + log_probs[b][v];
          if (value > best_value) {
            best_value = value;
            best = v;
          }
        }
        cumulative[b] = best_value;
        if (static_cast<int>(best) == Vocabulary::kEos) {
          done[b] = true;
          --remaining;
          prefixes[b].push_back(Vocabulary::kPad);
        } else {
          prefixes[b].push_back(static_cast<int>(best));
          results[start + b].push_back(static_cast<int>(best));
        }
      }
    }
  }
  return results;
}

template <typename T>
Hypothesis beam_decode(const TransformerModel<T>& model, std::span<const int> source_ids, const DecodeConfig& cfg) {
  cfg.validate();
  NoGradGuard no_grad;
  const PaddedSequences source = single(source_ids);
  const Tensor<T> memory = encode_source(model, source);

  struct Alive {
    std::vector<int> prefix;  // starts with <s>
    double log_prob;
  };
  std::vector<Alive> alive{{{Vocabulary::kBos}, 0.0}};
  std::vector<Hypothesis> finished;

  auto sequence_less = [](const std::vector<int>& a, const std::vector<int>& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  };

  for (std::size_t step = 1; step <= cfg.max_len && !alive.empty(); ++step) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& a : alive) prefixes.push_back(a.prefix);
    const Tensor<T> tiled_memory = alive.size() == 1 ? memory : tile_rows(memory, alive.size());
    const PaddedSequences tiled_source = tile_source(source, alive.size());
    const auto log_probs = next_log_probs(model, tiled_memory, tiled_source, prefixes);

    std::vector<Candidate> candidates;
    candidates.reserve(alive.size() * log_probs.front().size());
    for (std::size_t a = 0; a < alive.size(); ++a) {
      for (std::size_t v = 0; v < log_probs[a].size(); ++v) {
        candidates.push_back({a, static_cast<int>(v), alive[a].log_prob + log_probs[a][v]});
      }
    }
    // Higher score first; equal scores by id sequence, i.e. parent prefix then token.
    auto better = [&](const Candidate& x, const Candidate& y) {
      if (x.log_prob != y.log_prob) return x.log_prob > y.log_prob;
      if (x.parent != y.parent) return sequence_less(alive[x.parent].prefix, alive[y.parent].prefix);
      return x.token < y.token;
    };
    const std::size_t keep = std::min(cfg.beam_size, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      better);

    std::vector<Alive> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const Candidate& cand = candidates[c];
      std::vector<int> prefix = alive[cand.parent].prefix;
      if (cand.token == Vocabulary::kEos) {
        Hypothesis h;
        h.ids.assign(prefix.begin() + 1, prefix.end());
        h.log_prob = cand.log_prob;
        h.score = cand.log_prob / length_penalty(step, cfg.length_penalty_alpha);
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        prefix.push_back(cand.token);
        next.push_back({std::move(prefix), cand.log_prob});
      }
    }
    alive = std::move(next);
  }

  std::vector<Hypothesis> pool = std::move(finished);
  if (pool.empty()) {
    for (const auto& a : alive) {
      Hypothesis h;
      h.ids.assign(a.prefix.begin() + 1, a.prefix.end());
      h.log_prob = a.log_prob;
      h.score = a.log_prob / length_penalty(h.ids.size(), cfg.length_penalty_alpha);
      pool.push_back(std::move(h));
    }
  }
  return *std::min_element(pool.begin(), pool.end(), [&](const Hypothesis& x, const Hypothesis& y) {
    if (x.score != y.score) return x.score > y.score;
    return sequence_less(x.ids, y.ids);
  });
}

template <typename T>
double sequence_log_prob(const TransformerModel<T>& model, std::span<const int> source_ids, std::span<const int> ids,
                         bool finished) {
  NoGradGuard no_grad;
  const PaddedSequences source = single(source_ids);
  const Tensor<T> memory = encode_source(model, source);
  std::vector<int> input{Vocabulary::kBos};
  input.insert(input.end(), ids.begin(), ids.end());
  std::vector<int> expected(ids.begin(), ids.end());
  if (finished) {
    expected.push_back(Vocabulary::kEos);
  } else {
    input.pop_back();
  }
  if (expected.empty()) return 0.0;
  const PaddedSequences target = single(input);
  const Tensor<T> logits = decoder_forward(model, memory, source, target);
  const std::size_t vocab = logits.dim(1);
  std::vector<double> row;
  double total = 0.0;
  for (std::size_t t = 0; t < expected.size(); ++t) {
    log_softmax_row(logits.data().data() + t * vocab, vocab, row);
    total += row[static_cast<std::size_t>(expected[t])];
  }
  return total;
}

#define MINMT_INSTANTIATE_DECODING(T)                                                                        \
  template std::vector<int> greedy_decode(const TransformerModel<T>&, std::span<const int>, const DecodeConfig&); \
  template std::vector<std::vector<int>> greedy_decode_batch(const TransformerModel<T>&,                     \
                                                             std::span<const std::vector<int>>,               \
                                                             const DecodeConfig&, std::size_t);               \
  template Hypothesis beam_decode(const TransformerModel<T>&, std::span<const int>, const DecodeConfig&);     \
  template double sequence_log_prob(const TransformerModel<T>&, std::span<const int>, std::span<const int>, bool);

MINMT_INSTANTIATE_DECODING(float)
MINMT_INSTANTIATE_DECODING(double)

#undef MINMT_INSTANTIATE_DECODING

}  // namespace minmt

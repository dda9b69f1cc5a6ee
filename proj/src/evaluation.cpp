#include "minmt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>

#include "minmt/random.hpp"
#include "minmt/tokenization.hpp"

namespace minmt {

namespace {

std::string fixed(double value, int digits) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.*f", digits, value);
  return buffer;
}

std::vector<std::string> scoring_tokens(const std::string& line, const BleuOptions& options) {
  auto tokens = whitespace_tokenize(line);
  if (options.lowercase) {
    for (auto& t : tokens) {
      for (char& c : t) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      }
    }
  }
  return tokens;
}

using Ngram = std::vector<std::string>;

std::map<Ngram, std::int64_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<Ngram, std::int64_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

void accumulate(BleuReport& stats, const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  stats.hyp_len += static_cast<std::int64_t>(hyp.size());
  stats.ref_len += static_cast<std::int64_t>(ref.size());
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto hyp_counts = ngram_counts(hyp, n);
    const auto ref_counts = ngram_counts(ref, n);
    for (const auto& [gram, count] : hyp_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) stats.matches[n - 1] += std::min(count, it->second);
      stats.totals[n - 1] += count;
    }
  }
}

void finalize(BleuReport& stats) {
  double log_sum = 0.0;
  int orders = 0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    if (stats.totals[n] == 0) {
      stats.precisions[n] = 0.0;
      continue;
    }
    stats.precisions[n] = static_cast<double>(stats.matches[n]) / static_cast<double>(stats.totals[n]);
    if (stats.matches[n] == 0) {
      zero = true;
    } else {
      log_sum += std::log(stats.precisions[n]);
      ++orders;
    }
  }
  if (stats.hyp_len == 0) {
    stats.brevity_penalty = 0.0;
  } else if (stats.hyp_len >= stats.ref_len) {
    stats.brevity_penalty = 1.0;
  } else {
    stats.brevity_penalty =
        std::exp(1.0 - static_cast<double>(stats.ref_len) / static_cast<double>(stats.hyp_len));
  }
  if (zero || orders == 0) {
    stats.bleu = 0.0;
  } else {
    stats.bleu = 100.0 * stats.brevity_penalty * std::exp(log_sum / orders);
  }
}

void check_aligned(std::size_t hyps, std::size_t refs) {
  if (hyps != refs) {
    throw std::invalid_argument("hypothesis/reference line count mismatch: " + std::to_string(hyps) + " vs " +
                                std::to_string(refs));
  }
  if (hyps == 0) throw std::invalid_argument("cannot score an empty corpus");
}

}  // namespace

std::string BleuReport::to_line() const {
  return "bleu=" + fixed(bleu, 2) + " p1=" + fixed(precisions[0], 4) + " p2=" + fixed(precisions[1], 4) +
         " p3=" + fixed(precisions[2], 4) + " p4=" + fixed(precisions[3], 4) + " bp=" + fixed(brevity_penalty, 4) +
         " hyp_len=" + std::to_string(hyp_len) + " ref_len=" + std::to_string(ref_len);
}

BleuReport corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references,
                       const BleuOptions& options) {
  check_aligned(hypotheses.size(), references.size());
  BleuReport stats;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    accumulate(stats, scoring_tokens(hypotheses[i], options), scoring_tokens(references[i], options));
  }
  finalize(stats);
  return stats;
}

std::vector<BleuReport> sentence_bleu(std::span<const std::string> hypotheses,
                                      std::span<const std::string> references, const BleuOptions& options) {
  check_aligned(hypotheses.size(), references.size());
  std::vector<BleuReport> out;
  out.reserve(hypotheses.size());
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    BleuReport stats;
    accumulate(stats, scoring_tokens(hypotheses[i], options), scoring_tokens(references[i], options));
    finalize(stats);
    out.push_back(stats);
  }
  return out;
}

namespace {

std::string untab(std::string s) {
  std::replace(s.begin(), s.end(), '\t', ' ');
  return s;
}

}  // namespace

std::string QualitativeReport::text() const {
  std::string out;
  for (const auto& row : rows) {
    out += "[line " + std::to_string(row.line) + "]\n";
    out += "Source            | " + row.source + "\n";
    out += "Reference         | " + row.reference + "\n";
    out += "Model Translation | " + row.hypothesis + "\n";
    out += "------------------+\n";
  }
  return out;
}

std::string QualitativeReport::tsv() const {
  std::string out = "line\tsource\treference\thypothesis\n";
  for (const auto& row : rows) {
    out += std::to_string(row.line) + "\t" + untab(row.source) + "\t" + untab(row.reference) + "\t" +
           untab(row.hypothesis) + "\n";
  }
  return out;
}

QualitativeReport qualitative_table(std::span<const std::string> sources, std::span<const std::string> references,
                                    std::span<const std::string> hypotheses, std::size_t n, std::uint64_t seed) {
  if (sources.size() != references.size() || sources.size() != hypotheses.size()) {
    throw std::invalid_argument("qualitative_table: sources, references and hypotheses must be aligned (" +
                                std::to_string(sources.size()) + ", " + std::to_string(references.size()) + ", " +
                                std::to_string(hypotheses.size()) + " lines)");
  }
  QualitativeReport report;
  if (n > sources.size()) {
    report.warnings.push_back("requested " + std::to_string(n) + " rows but corpus has " +
                              std::to_string(sources.size()) + "; showing all");
    n = sources.size();
  }
  std::vector<std::size_t> order(sources.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  order.resize(n);
  std::sort(order.begin(), order.end());
  for (std::size_t i : order) report.rows.push_back({i + 1, sources[i], references[i], hypotheses[i]});
  return report;
}

}  // namespace minmt

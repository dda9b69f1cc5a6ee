#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace minmt {

struct BleuOptions {
  bool lowercase = false;  // ASCII case folding only
};

struct BleuReport {
  double bleu = 0.0;                     // 0..100
  std::array<double, 4> precisions{};    // modified n-gram precisions, n = 1..4
  std::array<std::int64_t, 4> matches{};
  std::array<std::int64_t, 4> totals{};
  double brevity_penalty = 0.0;
  std::int64_t hyp_len = 0;
  std::int64_t ref_len = 0;

  // "bleu=<f> p1=<f> p2=<f> p3=<f> p4=<f> bp=<f> hyp_len=<n> ref_len=<n>"
  std::string to_line() const;
};

/// Single-reference corpus BLEU over whitespace tokens, unsmoothed.
///
/// Clipped n-gram matches and hypothesis n-gram totals are summed over the
/// corpus. An order with matches == 0 makes the score 0. An order with no
/// hypothesis n-grams at all (every line shorter than n) is left out of the
/// geometric mean. BP = min(1, exp(1 - ref_len / hyp_len)).
BleuReport corpus_bleu(std::span<const std::string> hypotheses, std::span<const std::string> references,
                       const BleuOptions& options = {});

// Per-line scores under the same definition, one report per line.
std::vector<BleuReport> sentence_bleu(std::span<const std::string> hypotheses,
                                      std::span<const std::string> references, const BleuOptions& options = {});

struct QualitativeRow {
  std::size_t line = 0;  // 1-based line in the test set
  std::string source;
  std::string reference;
  std::string hypothesis;
};

struct QualitativeReport {
  std::vector<QualitativeRow> rows;
  std::vector<std::string> warnings;

  std::string text() const;
  // Tab-separated with a header row; tabs inside fields become spaces.
  std::string tsv() const;
};

// Picks n lines with a seeded draw (n is clamped to the corpus size with a
// warning) and lists them in corpus order.
QualitativeReport qualitative_table(std::span<const std::string> sources, std::span<const std::string> references,
                                    std::span<const std::string> hypotheses, std::size_t n, std::uint64_t seed);

}  // namespace minmt

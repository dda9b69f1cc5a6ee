#include "minmt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "minmt/random.hpp"
#include "minmt/utf8.hpp"

namespace minmt {

PaddedSequences PaddedSequences::from(std::span<const std::vector<int>> sequences, int pad_id) {
  PaddedSequences out;
  out.batch = sequences.size();
  for (const auto& s : sequences) out.length = std::max(out.length, s.size());
  out.ids.assign(out.batch * out.length, pad_id);
  out.mask.assign(out.batch * out.length, 0);
  for (std::size_t b = 0; b < out.batch; ++b) {
    for (std::size_t t = 0; t < sequences[b].size(); ++t) {
      out.ids[b * out.length + t] = sequences[b][t];
      out.mask[b * out.length + t] = 1;
    }
  }
  return out;
}

std::size_t PaddedSequences::real_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

namespace {

PaddedSequences column_slice(const PaddedSequences& in, std::size_t first, std::size_t count) {
  PaddedSequences out;
  out.batch = in.batch;
  out.length = count;
  out.ids.resize(in.batch * count);
  out.mask.resize(in.batch * count);
  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::size_t t = 0; t < count; ++t) {
      out.ids[b * count + t] = in.ids[b * in.length + first + t];
      out.mask[b * count + t] = in.mask[b * in.length + first + t];
    }
  }
  return out;
}

}  // namespace

PaddedSequences PaddedSequences::without_last() const {
  if (length < 2) throw std::invalid_argument("sequence too short to split for teacher forcing");
  return column_slice(*this, 0, length - 1);
}

PaddedSequences PaddedSequences::without_first() const {
  if (length < 2) throw std::invalid_argument("sequence too short to split for teacher forcing");
  return column_slice(*this, 1, length - 1);
}

std::vector<std::string> ParallelCorpus::sources() const {
  std::vector<std::string> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.source);
  return out;
}

std::vector<std::string> ParallelCorpus::targets() const {
  std::vector<std::string> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.target);
  return out;
}

std::string LoadReport::summary() const {
  return "loaded=" + std::to_string(loaded) + " dropped_empty=" + std::to_string(dropped_empty);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (auto bad = utf8::first_invalid(line)) {
      throw DataError(path.string() + ": invalid UTF-8 on line " + std::to_string(lines.size() + 1) + " at byte " +
                      std::to_string(*bad));
    }
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& line : lines) out << line << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

LoadResult load_parallel(const std::filesystem::path& source_path, const std::filesystem::path& target_path,
                         Split split) {
  const auto sources = read_lines(source_path);
  const auto targets = read_lines(target_path);
  if (sources.size() != targets.size()) {
    throw DataError("line count mismatch: " + std::to_string(sources.size()) + " vs " +
                    std::to_string(targets.size()) + " (" + source_path.string() + ", " + target_path.string() +
                    ")");
  }
  LoadResult result;
  result.corpus.split = split;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (whitespace_tokenize(sources[i]).empty() || whitespace_tokenize(targets[i]).empty()) {
      ++result.report.dropped_empty;
      continue;
    }
    result.corpus.pairs.push_back(SentencePair{sources[i], targets[i]});
  }
  result.report.loaded = result.corpus.pairs.size();
  return result;
}

void save_parallel(const ParallelCorpus& corpus, const std::filesystem::path& source_path,
                   const std::filesystem::path& target_path) {
  write_lines(source_path, corpus.sources());
  write_lines(target_path, corpus.targets());
}

std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const Tokenizer& tokenizer) {
  std::vector<EncodedPair> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus.pairs) {
    out.push_back(EncodedPair{tokenizer.encode_source(p.source), tokenizer.encode_target(p.target)});
  }
  return out;
}

BatchPlan make_batches(std::span<const EncodedPair> pairs, std::size_t token_budget, std::size_t max_len,
                       std::uint64_t seed) {
  if (token_budget == 0 || max_len == 0) throw std::invalid_argument("token_budget and max_len must be positive");
  BatchPlan plan;
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::size_t src_len = pairs[i].source.size() >= 2 ? pairs[i].source.size() - 2 : 0;
    const std::size_t tgt_len = pairs[i].target.size() >= 2 ? pairs[i].target.size() - 2 : 0;
    if (src_len > max_len || tgt_len > max_len) {
      ++plan.dropped_too_long;
    } else {
      kept.push_back(i);
    }
  }
  plan.surviving = kept.size();
  if (kept.empty()) return plan;

  for (std::size_t i : kept) {
    const std::size_t cost = pairs[i].source.size() + pairs[i].target.size();
    if (cost > token_budget) {
      throw std::invalid_argument("token_budget " + std::to_string(token_budget) + " is smaller than pair " +
                                  std::to_string(i) + " which needs " + std::to_string(cost));
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
    if (pairs[a].source.size() != pairs[b].source.size()) return pairs[a].source.size() < pairs[b].source.size();
    return pairs[a].target.size() < pairs[b].target.size();
  });

  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> current;
  std::size_t max_src = 0, max_tgt = 0;
  for (std::size_t i : kept) {
    const std::size_t src = std::max(max_src, pairs[i].source.size());
    const std::size_t tgt = std::max(max_tgt, pairs[i].target.size());
    if (!current.empty() && (current.size() + 1) * (src + tgt) > token_budget) {
      groups.push_back(std::move(current));
      current.clear();
      max_src = max_tgt = 0;
    }
    current.push_back(i);
    max_src = std::max(max_src, pairs[i].source.size());
    max_tgt = std::max(max_tgt, pairs[i].target.size());
  }
  groups.push_back(std::move(current));

  Rng rng(seed);
  rng.shuffle(groups);
  for (const auto& group : groups) {
    std::vector<std::vector<int>> src, tgt;
    for (std::size_t i : group) {
      src.push_back(pairs[i].source);
      tgt.push_back(pairs[i].target);
    }
    Batch batch;
    batch.source = PaddedSequences::from(src, Vocabulary::kPad);
    batch.target = PaddedSequences::from(tgt, Vocabulary::kPad);
    batch.pair_indices = group;
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

}  // namespace minmt

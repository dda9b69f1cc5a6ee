#include "minmt/pipeline.hpp"

#include <fstream>
#include <limits>

namespace minmt {

namespace {

TokenCounts segmented_counts(const std::vector<std::string>& lines, const std::optional<MergeTable>& merges) {
  TokenCounts counts;
  std::optional<BpeSegmenter> segmenter;
  if (merges) segmenter.emplace(*merges);
  for (const auto& line : lines) {
    const auto words = whitespace_tokenize(line);
    if (segmenter) {
      add_counts(counts, segmenter->apply(words));
    } else {
      add_counts(counts, words);
    }
  }
  return counts;
}

void merge_counts(TokenCounts& into, const TokenCounts& from) {
  for (const auto& [token, count] : from) into[token] += count;
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const std::string& suffix) {
  std::filesystem::path p = prefix;
  p += suffix;
  return p;
}

}  // namespace

PreparedTokenizer prepare_tokenizer(const ExperimentConfig& config, const ParallelCorpus& train,
                                    const std::filesystem::path& dir) {
  if (train.empty()) throw DataError("cannot learn a tokenizer from an empty training split");
  std::filesystem::create_directories(dir);
  const auto sources = train.sources();
  const auto targets = train.targets();
  PreparedTokenizer out;
  out.tokenizer.mode = config.tokenization;
  out.files.mode = config.tokenization;
  const std::string src = config.source_suffix().substr(1);
  const std::string tgt = config.target_suffix().substr(1);

  if (config.tokenization == TokenizationMode::kBpe) {
    if (config.bpe_separate) {
      out.tokenizer.source_merges = learn_bpe(count_tokens(sources), config.bpe_merges);
      out.tokenizer.target_merges = learn_bpe(count_tokens(targets), config.bpe_merges);
      out.files.source_merges = dir / ("bpe." + src + ".merges");
      out.files.target_merges = dir / ("bpe." + tgt + ".merges");
      out.tokenizer.source_merges->save(out.files.source_merges);
      out.tokenizer.target_merges->save(out.files.target_merges);
    } else {
      TokenCounts joint = count_tokens(sources);
      merge_counts(joint, count_tokens(targets));
      MergeTable merges = learn_bpe(joint, config.bpe_merges);
      out.files.source_merges = out.files.target_merges = dir / "bpe.joint.merges";
      merges.save(out.files.source_merges);
      out.tokenizer.source_merges = merges;
      out.tokenizer.target_merges = std::move(merges);
    }
  }

  TokenCounts source_counts = segmented_counts(sources, out.tokenizer.source_merges);
  TokenCounts target_counts = segmented_counts(targets, out.tokenizer.target_merges);
  const std::size_t max_size = config.vocab_max_size == 0 ? std::numeric_limits<std::size_t>::max()
                                                          : config.vocab_max_size;
  if (config.tokenization == TokenizationMode::kBpe && !config.bpe_separate) {
    merge_counts(source_counts, target_counts);
    out.tokenizer.source_vocab = build_vocab(source_counts, max_size, config.vocab_min_freq);
    out.tokenizer.target_vocab = out.tokenizer.source_vocab;
    out.files.source_vocab = out.files.target_vocab = dir / "vocab.joint";
    out.tokenizer.source_vocab.save(out.files.source_vocab);
  } else {
    out.tokenizer.source_vocab = build_vocab(source_counts, max_size, config.vocab_min_freq);
    out.tokenizer.target_vocab = build_vocab(target_counts, max_size, config.vocab_min_freq);
    out.files.source_vocab = dir / ("vocab." + src);
    out.files.target_vocab = dir / ("vocab." + tgt);
    out.tokenizer.source_vocab.save(out.files.source_vocab);
    out.tokenizer.target_vocab.save(out.files.target_vocab);
  }
  return out;
}

ExperimentSplits load_splits(const ExperimentConfig& config, std::ostream* log) {
  ExperimentSplits splits;
  auto load = [&](const std::filesystem::path& prefix, Split split, const char* name) {
    ParallelCorpus corpus;
    corpus.split = split;
    if (prefix.empty()) return corpus;
    LoadResult result = load_parallel(with_suffix(prefix, config.source_suffix()),
                                      with_suffix(prefix, config.target_suffix()), split);
    if (log) *log << "split=" << name << '\t' << result.report.summary() << '\n';
    return std::move(result.corpus);
  };
  splits.train = load(config.train_prefix, Split::kTrain, "train");
  splits.dev = load(config.dev_prefix, Split::kDev, "dev");
  splits.test = load(config.test_prefix, Split::kTest, "test");
  if (splits.train.empty()) throw DataError("training split is empty");
  return splits;
}

template <typename T>
TranslationResult translate_lines(const TransformerModel<T>& model, const Tokenizer& tokenizer,
                                  const std::vector<std::string>& inputs, const DecodeConfig& decode) {
  decode.validate();
  TranslationResult result;
  result.lines.reserve(inputs.size());
  const std::size_t limit = model.config().max_positions;
  DecodeConfig cfg = decode;
  // The decoder input is <s> plus every generated token except the last.
  cfg.max_len = std::min(cfg.max_len, limit);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (whitespace_tokenize(inputs[i]).empty()) {
      result.lines.emplace_back();
      continue;
    }
    std::vector<int> ids = tokenizer.encode_source(inputs[i]);
    if (ids.size() > limit) {
      result.warnings.push_back("line " + std::to_string(i + 1) + ": source has " + std::to_string(ids.size() - 2) +
                                " tokens, truncated to " + std::to_string(limit - 2));
      ids.resize(limit);
      ids.back() = Vocabulary::kEos;
    }
    const Hypothesis best = beam_decode(model, std::span<const int>(ids), cfg);
    result.lines.push_back(tokenizer.detokenize_target(best.ids));
  }
  return result;
}

TranslationResult translate_with_checkpoint(const std::filesystem::path& checkpoint,
                                            const std::vector<std::string>& inputs, const DecodeConfig& decode) {
  const CheckpointMeta meta = read_checkpoint_meta(checkpoint);
  const Tokenizer tokenizer = load_tokenizer(meta);
  if (meta.dtype == "f64") {
    const auto loaded = load_checkpoint<double>(checkpoint, &tokenizer.source_vocab, &tokenizer.target_vocab);
    return translate_lines(loaded.model, tokenizer, inputs, decode);
  }
  const auto loaded = load_checkpoint<float>(checkpoint, &tokenizer.source_vocab, &tokenizer.target_vocab);
  return translate_lines(loaded.model, tokenizer, inputs, decode);
}

namespace {

template <typename T>
TrainedRun train_at(const ExperimentConfig& config, const ExperimentSplits& splits, const PreparedTokenizer& prepared,
                    const TrainHooks& hooks) {
  const TransformerConfig model_config =
      config.model_config(prepared.tokenizer.source_vocab.size(), prepared.tokenizer.target_vocab.size());
  TransformerModel<T> model = build_model<T>(model_config, config.seed);
  TrainConfig train = config.train;
  train.checkpoint_dir = config.output_dir / "checkpoints";
  TrainData data{&splits.train, splits.dev.empty() ? nullptr : &splits.dev,
                 splits.test.empty() ? nullptr : &splits.test};
  return minmt::train(model, train, data, prepared.tokenizer, prepared.files, hooks);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream& log, const TrainHooks& extra) {
  std::filesystem::create_directories(config.output_dir);
  log << "direction=" << to_string(config.direction) << "\ttokenization=" << to_string(config.tokenization)
      << "\tpreset=" << config.preset << "\tseed=" << config.seed
      << "\tselection_metric=" << to_string(config.train.selection_metric) << '\n';
  const ExperimentSplits splits = load_splits(config, &log);
  const PreparedTokenizer prepared = prepare_tokenizer(config, splits.train, config.output_dir / "tokenizer");
  log << "source_vocab=" << prepared.tokenizer.source_vocab.size()
      << "\ttarget_vocab=" << prepared.tokenizer.target_vocab.size() << '\n';
  const TransformerConfig model_config =
      config.model_config(prepared.tokenizer.source_vocab.size(), prepared.tokenizer.target_vocab.size());
  log << "parameters=" << parameter_count(model_config) << "\tenc_layers=" << model_config.enc_layers
      << "\tdec_layers=" << model_config.dec_layers << "\theads=" << model_config.heads
      << "\tembed_dim=" << model_config.embed_dim << "\tff_dim=" << model_config.ff_dim << '\n';

  TrainHooks hooks = extra;
  hooks.log = &log;
  ExperimentResult result;
  result.run = config.precision == Precision::kFloat64 ? train_at<double>(config, splits, prepared, hooks)
                                                       : train_at<float>(config, splits, prepared, hooks);
  log << "best_epoch=" << result.run.best_epoch << "\tbest_checkpoint=" << result.run.best_checkpoint.string()
      << '\n';

  if (!splits.test.empty()) {
    const auto translation = translate_with_checkpoint(result.run.best_checkpoint, splits.test.sources(), config.decode);
    for (const auto& w : translation.warnings) log << "warning: " << w << '\n';
    result.hypotheses = config.output_dir / "test.hyp";
    write_lines(result.hypotheses, translation.lines);
    result.test_bleu = corpus_bleu(translation.lines, splits.test.targets());
    log << "test\t" << result.test_bleu.to_line() << '\n';
    write_text(config.output_dir / "test.bleu", result.test_bleu.to_line() + "\n");
  }
  return result;
}

QualitativeReport experiment_report(const ExperimentConfig& config, std::ostream& log) {
  const ExperimentSplits splits = load_splits(config, &log);
  if (splits.test.empty()) throw DataError("report needs a non-empty test split");
  const auto checkpoint = config.output_dir / "checkpoints" / "best.ckpt";
  if (!std::filesystem::exists(checkpoint)) {
    throw CheckpointError("no trained model at " + checkpoint.string() + "; run train first");
  }
  const auto sources = splits.test.sources();
  const auto references = splits.test.targets();
  const auto translation = translate_with_checkpoint(checkpoint, sources, config.decode);
  for (const auto& w : translation.warnings) log << "warning: " << w << '\n';
  QualitativeReport report = qualitative_table(sources, references, translation.lines, config.report_rows,
                                               config.report_seed);
  write_text(config.output_dir / "report.tsv", report.tsv());
  return report;
}

template TranslationResult translate_lines(const TransformerModel<float>&, const Tokenizer&,
                                           const std::vector<std::string>&, const DecodeConfig&);
template TranslationResult translate_lines(const TransformerModel<double>&, const Tokenizer&,
                                           const std::vector<std::string>&, const DecodeConfig&);

}  // namespace minmt

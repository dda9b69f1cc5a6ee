#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "minmt/checkpoint.hpp"
#include "minmt/config.hpp"
#include "minmt/corpus.hpp"
#include "minmt/decoding.hpp"
#include "minmt/evaluation.hpp"
#include "minmt/training.hpp"

namespace minmt {

struct PreparedTokenizer {
  Tokenizer tokenizer;
  TokenizerFiles files;
};

/// Learns merges (BPE mode) and vocabularies from the training split and
/// writes them under `dir`. Joint BPE shares one merge table and one
/// vocabulary between the languages; word mode and separate BPE keep one
/// vocabulary per side.
PreparedTokenizer prepare_tokenizer(const ExperimentConfig& config, const ParallelCorpus& train,
                                    const std::filesystem::path& dir);

struct ExperimentSplits {
  ParallelCorpus train;
  ParallelCorpus dev;
  ParallelCorpus test;
};

// Loads every configured split and logs its drop accounting.
ExperimentSplits load_splits(const ExperimentConfig& config, std::ostream* log);

struct TranslationResult {
  std::vector<std::string> lines;
  std::vector<std::string> warnings;
};

/// Beam-decodes one line per input line. Empty lines translate to empty
/// lines; sources longer than the model's positional table are truncated
/// with a warning.
template <typename T>
TranslationResult translate_lines(const TransformerModel<T>& model, const Tokenizer& tokenizer,
                                  const std::vector<std::string>& inputs, const DecodeConfig& decode);

// Loads the checkpoint's model at its stored precision and translates.
TranslationResult translate_with_checkpoint(const std::filesystem::path& checkpoint,
                                            const std::vector<std::string>& inputs, const DecodeConfig& decode);

struct ExperimentResult {
  TrainedRun run;
  BleuReport test_bleu;
  std::filesystem::path hypotheses;
};

/// Full supervised run: tokenizers, training, beam decoding of the test split
/// with the selected checkpoint, and BLEU. Writes everything under
/// config.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& config, std::ostream& log, const TrainHooks& extra = {});

// Qualitative rows from the test split, translated with best.ckpt.
QualitativeReport experiment_report(const ExperimentConfig& config, std::ostream& log);

}  // namespace minmt

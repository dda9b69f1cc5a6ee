#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "minmt/checkpoint.hpp"
#include "minmt/config.hpp"
#include "minmt/corpus.hpp"
#include "minmt/evaluation.hpp"
#include "minmt/pipeline.hpp"
#include "minmt/tokenization.hpp"
#include "minmt/training.hpp"

namespace minmt::cli {

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string one_line(std::string message) {
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return message;
}

int fail(std::ostream& err, const char* category, const std::string& message, int code) {
  err << "error:" << category << ": " << one_line(message) << '\n';
  return code;
}

std::vector<std::string> read_all(const std::vector<std::string>& paths) {
  std::vector<std::string> lines;
  for (const auto& p : paths) {
    auto more = read_lines(p);
    lines.insert(lines.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  }
  return lines;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural machine translation for English and Nigerian Pidgin", "minmt"};
  app.require_subcommand(1);

  struct {
    std::vector<std::string> inputs;
    std::size_t merges = 4000;
    std::string output;
    std::string marker = "@@";
  } bpe;
  auto* learn_bpe_cmd = app.add_subcommand("learn-bpe", "Learn a BPE merge table from whitespace-tokenized text");
  learn_bpe_cmd->add_option("--input", bpe.inputs, "Training text files (one sentence per line)")->required();
  learn_bpe_cmd->add_option("--merges", bpe.merges, "Maximum number of merges")->capture_default_str();
  learn_bpe_cmd->add_option("--output", bpe.output, "Merge table to write")->required();
  learn_bpe_cmd->add_option("--marker", bpe.marker, "Continuation marker")->capture_default_str();

  struct {
    std::vector<std::string> inputs;
    std::string output;
    std::string merges;
    std::size_t max_size = 0;
    std::int64_t min_freq = 1;
  } vocab;
  auto* vocab_cmd = app.add_subcommand("build-vocab", "Build a vocabulary file from text");
  vocab_cmd->add_option("--input", vocab.inputs, "Text files")->required();
  vocab_cmd->add_option("--output", vocab.output, "Vocabulary file to write")->required();
  vocab_cmd->add_option("--bpe-merges", vocab.merges, "Segment with this merge table first");
  vocab_cmd->add_option("--max-size", vocab.max_size, "Keep at most this many tokens (0 = all)")
      ->capture_default_str();
  vocab_cmd->add_option("--min-freq", vocab.min_freq, "Drop tokens rarer than this")->capture_default_str();

  std::string train_config;
  bool paper_selection = false;
  auto* train_cmd = app.add_subcommand("train", "Train, select a checkpoint, decode and score the test split");
  train_cmd->add_option("--config", train_config, "Experiment config file")->required();
  train_cmd->add_flag("--paper-selection", paper_selection, "Select the checkpoint by test BLEU");

  struct {
    std::string checkpoint, input, output;
    std::size_t beam = 5;
    std::size_t max_len = 100;
    double alpha = 1.0;
  } translate;
  auto* translate_cmd = app.add_subcommand("translate", "Translate a file line by line with beam search");
  translate_cmd->add_option("--ckpt", translate.checkpoint, "Checkpoint file")->required();
  translate_cmd->add_option("--input", translate.input, "Source sentences, one per line")->required();
  translate_cmd->add_option("--output", translate.output, "Translations, one per input line")->required();
  translate_cmd->add_option("--beam", translate.beam, "Beam size")->capture_default_str();
  translate_cmd->add_option("--max-len", translate.max_len, "Maximum output tokens")->capture_default_str();
  translate_cmd->add_option("--length-penalty", translate.alpha, "Length penalty exponent")->capture_default_str();

  struct {
    std::string hyp, ref, per_sentence;
    bool lowercase = false;
  } score;
  auto* score_cmd = app.add_subcommand("score", "Corpus BLEU of a hypothesis file against a reference file");
  score_cmd->add_option("--hyp", score.hyp, "Hypotheses, one per line")->required();
  score_cmd->add_option("--ref", score.ref, "References, one per line")->required();
  score_cmd->add_flag("--lowercase", score.lowercase, "Fold ASCII case before scoring");
  score_cmd->add_option("--per-sentence", score.per_sentence, "Also write per-line BLEU to this file");

  std::string report_config;
  std::size_t report_rows = 0;
  auto* report_cmd = app.add_subcommand("report", "Print source, reference and model translation for sampled lines");
  report_cmd->add_option("--config", report_config, "Experiment config file")->required();
  report_cmd->add_option("--rows", report_rows, "Rows to show (default: report_rows from the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", e.what(), kUsage);
  }

  try {
    if (*learn_bpe_cmd) {
      if (bpe.marker.empty()) throw UsageError("--marker must not be empty");
      const auto lines = read_all(bpe.inputs);
      const MergeTable table = learn_bpe(count_tokens(lines), bpe.merges, bpe.marker);
      table.save(bpe.output);
      out << "merges=" << table.size() << "\toutput=" << bpe.output << '\n';
    } else if (*vocab_cmd) {
      const auto lines = read_all(vocab.inputs);
      TokenCounts counts;
      std::optional<MergeTable> table;
      if (!vocab.merges.empty()) table = MergeTable::load(vocab.merges);
      std::optional<BpeSegmenter> segmenter;
      if (table) segmenter.emplace(*table);
      for (const auto& line : lines) {
        const auto words = whitespace_tokenize(line);
        add_counts(counts, segmenter ? segmenter->apply(words) : words);
      }
      const std::size_t max_size = vocab.max_size == 0 ? std::numeric_limits<std::size_t>::max() : vocab.max_size;
      const Vocabulary v = build_vocab(counts, max_size, vocab.min_freq);
      v.save(vocab.output);
      out << "tokens=" << v.size() << "\tfingerprint=" << hex64(v.fingerprint()) << "\toutput=" << vocab.output
          << '\n';
    } else if (*train_cmd) {
      ExperimentConfig config = ExperimentConfig::load(train_config);
      if (paper_selection) {
        config.train.selection_metric = SelectionMetric::kTestBleu;
        config.validate();
      }
      const ExperimentResult result = run_experiment(config, out);
      if (result.hypotheses.empty()) out << "no test split configured; skipped final scoring\n";
    } else if (*translate_cmd) {
      if (!std::filesystem::exists(translate.checkpoint)) {
        throw CheckpointError("checkpoint not found: " + translate.checkpoint);
      }
      DecodeConfig decode;
      decode.beam_size = translate.beam;
      decode.max_len = translate.max_len;
      decode.length_penalty_alpha = translate.alpha;
      try {
        decode.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const auto inputs = read_lines(translate.input);
      const auto result = translate_with_checkpoint(translate.checkpoint, inputs, decode);
      for (const auto& w : result.warnings) err << "warning: " << w << '\n';
      write_lines(translate.output, result.lines);
      out << "translated=" << result.lines.size() << "\toutput=" << translate.output << '\n';
    } else if (*score_cmd) {
      const auto hyps = read_lines(score.hyp);
      const auto refs = read_lines(score.ref);
      BleuOptions options;
      options.lowercase = score.lowercase;
      BleuReport report;
      try {
        report = corpus_bleu(hyps, refs, options);
      } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
      }
      out << report.to_line() << '\n';
      if (!score.per_sentence.empty()) {
        std::vector<std::string> lines;
        for (const auto& r : sentence_bleu(hyps, refs, options)) lines.push_back(r.to_line());
        write_lines(score.per_sentence, lines);
      }
    } else if (*report_cmd) {
      ExperimentConfig config = ExperimentConfig::load(report_config);
      if (report_rows > 0) config.report_rows = report_rows;
      const QualitativeReport report = experiment_report(config, err);
      for (const auto& w : report.warnings) err << "warning: " << w << '\n';
      out << report.text();
    }
    return kOk;
  } catch (const UsageError& e) {
    return fail(err, "usage", e.what(), kUsage);
  } catch (const ConfigError& e) {
    return fail(err, "config", e.what(), kUsage);
  } catch (const CheckpointError& e) {
    return fail(err, "model", e.what(), kData);
  } catch (const TrainingDiverged& e) {
    return fail(err, "numeric", e.what(), kData);
  } catch (const NumericError& e) {
    return fail(err, "numeric", e.what(), kData);
  } catch (const DataError& e) {
    return fail(err, "data", e.what(), kData);
  } catch (const std::exception& e) {
    return fail(err, "data", e.what(), kData);
  }
}

}  // namespace minmt::cli

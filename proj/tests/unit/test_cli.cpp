#include <gtest/gtest.h>

#include <sstream>

#include "cli.hpp"
#include "minmt/config.hpp"
#include "minmt/corpus.hpp"
#include "minmt/tokenization.hpp"
#include "temp_dir.hpp"
#include "toy.hpp"

namespace minmt {
namespace {

using testing::TempDir;

struct Invocation {
  int code;
  std::string out;
  std::string err;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "minmt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

const char* kMinimal = "train_prefix = data/train\ndev_prefix = data/dev\noutput_dir = out\n";

TEST(Config, PathsResolveAgainstConfigDirectory) {
  const auto cfg = ExperimentConfig::parse(kMinimal, "/srv/exp");
  EXPECT_EQ(cfg.train_prefix, std::filesystem::path("/srv/exp/data/train"));
  EXPECT_EQ(cfg.output_dir, std::filesystem::path("/srv/exp/out"));
  EXPECT_EQ(cfg.source_file(cfg.train_prefix), std::filesystem::path("/srv/exp/data/train.en"));
  EXPECT_EQ(cfg.target_file(cfg.train_prefix), std::filesystem::path("/srv/exp/data/train.pcm"));
}

TEST(Config, DirectionSwapsSuffixes) {
  const auto cfg = ExperimentConfig::parse(std::string(kMinimal) + "direction = pcm-en\n", "/x");
  EXPECT_EQ(cfg.source_suffix(), ".pcm");
  EXPECT_EQ(cfg.target_suffix(), ".en");
}

TEST(Config, UnknownKeyNamesTheLine) {
  try {
    ExperimentConfig::parse(std::string(kMinimal) + "\nbogus = 1\n", "/x");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("line 5"), std::string::npos) << what;
    EXPECT_NE(what.find("bogus"), std::string::npos) << what;
  }
}

TEST(Config, RejectsMalformedInput) {
  EXPECT_THROW(ExperimentConfig::parse(std::string(kMinimal) + "seed = 1\nseed = 2\n", "/x"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse(std::string(kMinimal) + "seed = abc\n", "/x"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse(std::string(kMinimal) + "just words\n", "/x"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse(std::string(kMinimal) + "direction = en-fr\n", "/x"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("dev_prefix = d\noutput_dir = o\n", "/x"), ConfigError);
  EXPECT_THROW(ExperimentConfig::load("/nonexistent/minmt.cfg"), ConfigError);
}

TEST(Config, CommentsAndBlankLinesIgnored) {
  const auto cfg = ExperimentConfig::parse(std::string("# header\n\n") + kMinimal + "seed = 9   # trailing\n", "/x");
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.train.seed, 9u);
  EXPECT_EQ(cfg.report_seed, 9u);
}

TEST(Config, ShippedConfigsValidate) {
  const auto root = testing::source_root() / "configs";
  for (const char* name : {"paper-word-en-pcm.cfg", "paper-word-pcm-en.cfg", "paper-bpe-en-pcm.cfg",
                           "paper-bpe-pcm-en.cfg", "toy-overfit.cfg"}) {
    EXPECT_NO_THROW(ExperimentConfig::load(root / name)) << name;
  }
  const auto word = ExperimentConfig::load(root / "paper-word-en-pcm.cfg");
  const auto word_model = word.model_config(100, 100);
  EXPECT_EQ(word_model.enc_layers, 4u);
  EXPECT_EQ(word_model.embed_dim, 300u);
  const auto bpe = ExperimentConfig::load(root / "paper-bpe-pcm-en.cfg");
  EXPECT_EQ(bpe.direction, Direction::kPcmEn);
  EXPECT_EQ(bpe.model_config(100, 100).enc_layers, 6u);
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(invoke({"--help"}).code, 0);
  const auto none = invoke({});
  EXPECT_EQ(none.code, 1);
  EXPECT_EQ(none.err.rfind("error:usage:", 0), 0u) << none.err;
  EXPECT_EQ(invoke({"score", "--hyp", "x"}).code, 1);
  EXPECT_EQ(invoke({"frobnicate"}).code, 1);
}

TEST(Cli, ScoreIdenticalFiles) {
  TempDir dir("minmt-cli");
  testing::write_file(dir / "h.txt", "the cat sat\nwho be the slave ?\n");
  const auto r = invoke({"score", "--hyp", (dir / "h.txt").string(), "--ref", (dir / "h.txt").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("bleu=100.00 ", 0), 0u) << r.out;
}

TEST(Cli, ScoreMisalignedFilesIsDataError) {
  TempDir dir("minmt-cli");
  testing::write_file(dir / "h.txt", "a\nb\n");
  testing::write_file(dir / "r.txt", "a\n");
  const auto r = invoke({"score", "--hyp", (dir / "h.txt").string(), "--ref", (dir / "r.txt").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error:data:", 0), 0u) << r.err;
}

TEST(Cli, MissingCheckpointIsModelError) {
  TempDir dir("minmt-cli");
  testing::write_file(dir / "in.txt", "hello\n");
  const auto r = invoke({"translate", "--ckpt", (dir / "missing.ckpt").string(), "--input",
                         (dir / "in.txt").string(), "--output", (dir / "out.txt").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error:model:", 0), 0u) << r.err;
  EXPECT_EQ(r.err.find('\n'), r.err.size() - 1);
}

TEST(Cli, BadConfigIsUsageError) {
  TempDir dir("minmt-cli");
  testing::write_file(dir / "bad.cfg", "train_prefix = t\noutput_dir = o\nnope = 1\n");
  const auto r = invoke({"train", "--config", (dir / "bad.cfg").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error:config:", 0), 0u) << r.err;
}

TEST(Cli, LearnBpeAndBuildVocabWriteFiles) {
  TempDir dir("minmt-cli");
  testing::write_file(dir / "a.txt", "low lower lowest\nnewer wider low\n");
  const auto merges = dir / "merges.txt";
  const auto r1 = invoke({"learn-bpe", "--input", (dir / "a.txt").string(), "--merges", "10", "--output",
                          merges.string()});
  ASSERT_EQ(r1.code, 0) << r1.err;
  const auto table = MergeTable::load(merges);
  EXPECT_GT(table.size(), 0u);
  EXPECT_LE(table.size(), 10u);
  EXPECT_EQ(table.merges().front(), (Merge{"l", "o"}));

  const auto vocab_file = dir / "vocab.txt";
  const auto r2 = invoke({"build-vocab", "--input", (dir / "a.txt").string(), "--bpe-merges", merges.string(),
                          "--output", vocab_file.string()});
  ASSERT_EQ(r2.code, 0) << r2.err;
  const auto vocab = Vocabulary::load(vocab_file);
  EXPECT_GT(vocab.size(), Vocabulary::kNumSpecials);
  EXPECT_NE(r2.out.find("fingerprint=" + hex64(vocab.fingerprint())), std::string::npos);
}

TEST(Cli, TrainTranslateScoreRoundTrip) {
  TempDir dir("minmt-cli");
  const auto data = testing::source_root() / "data" / "toy" / "train";
  testing::write_file(dir / "exp.cfg", "train_prefix = " + data.string() + "\ndev_prefix = " + data.string() +
                                           "\ntest_prefix = " + data.string() +
                                           "\noutput_dir = run\ntokenization = word\npreset = custom\n"
                                           "enc_layers = 1\ndec_layers = 1\nheads = 2\nembed_dim = 16\n"
                                           "ff_dim = 32\ndropout = 0\nepochs = 2\ntoken_budget = 256\n"
                                           "warmup_steps = 10\ndecode_max_len = 12\ndev_decode_max_len = 12\n");
  const auto train = invoke({"train", "--config", (dir / "exp.cfg").string()});
  ASSERT_EQ(train.code, 0) << train.err;
  const auto best = dir / "run" / "checkpoints" / "best.ckpt";
  ASSERT_TRUE(std::filesystem::exists(best));
  ASSERT_TRUE(std::filesystem::exists(dir / "run" / "test.hyp"));

  const auto out = dir / "out.txt";
  const auto translate = invoke({"translate", "--ckpt", best.string(), "--input", data.string() + ".en", "--output",
                                 out.string(), "--max-len", "12"});
  ASSERT_EQ(translate.code, 0) << translate.err;
  EXPECT_EQ(read_lines(out).size(), read_lines(data.string() + ".en").size());

  const auto score = invoke({"score", "--hyp", out.string(), "--ref", data.string() + ".pcm"});
  EXPECT_EQ(score.code, 0) << score.err;
  EXPECT_EQ(score.out.rfind("bleu=", 0), 0u);

  const auto report = invoke({"report", "--config", (dir / "exp.cfg").string(), "--rows", "2"});
  EXPECT_EQ(report.code, 0) << report.err;
  EXPECT_NE(report.out.find("Source"), std::string::npos);
}

}  // namespace
}  // namespace minmt

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sstream>
#include <filesystem>
#include <limits>

#include "minmt/checkpoint.hpp"
#include "minmt/training.hpp"
#include "synthetic.hpp"
#include "temp_dir.hpp"
#include "toy.hpp"

namespace minmt {
namespace {

std::vector<NamedTensor<double>> single_param(std::vector<double> values, std::vector<double> grad) {
  const std::size_t n = values.size();
  Tensor<double> t({n}, std::move(values), true);
  auto g = t.mutable_grad();
  std::copy(grad.begin(), grad.end(), g.begin());
  return {{"w", t}};
}

TEST(Adam, ZeroGradientLeavesParametersButCountsStep) {
  auto params = single_param({1.0, -2.0}, {0.0, 0.0});
  auto state = OptimizerState<double>::zeros_like(params);
  adam_step(params, state, 1e-3, 0.9, 0.999, 1e-8);
  EXPECT_EQ(state.step, 1);
  EXPECT_EQ(params[0].tensor[0], 1.0);
  EXPECT_EQ(params[0].tensor[1], -2.0);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  auto params = single_param({0.0}, {0.5});
  auto state = OptimizerState<double>::zeros_like(params);
  adam_step(params, state, 1e-3, 0.9, 0.999, 1e-8);
  // m_hat = 0.5, v_hat = 0.25: delta = -lr * 0.5 / (0.5 + 1e-8).
  EXPECT_NEAR(params[0].tensor[0], -1e-3 * 0.5 / (0.5 + 1e-8), 1e-18);
  EXPECT_NEAR(params[0].tensor[0], -1e-3, 1e-10);
}

TEST(Adam, ConstantGradientStepsAreBoundedByLearningRate) {
  const double lr = 1e-3, eps = 1e-8;
  auto params = single_param({0.0, 0.0, 0.0}, {0.5, -3.0, 1e-4});
  auto state = OptimizerState<double>::zeros_like(params);
  for (int step = 0; step < 1000; ++step) {
    const std::vector<double> before(params[0].tensor.data().begin(), params[0].tensor.data().end());
    adam_step(params, state, lr, 0.9, 0.999, eps);
    for (std::size_t i = 0; i < before.size(); ++i) {
      EXPECT_LE(std::abs(params[0].tensor[i] - before[i]), lr * (1 + eps));
    }
  }
  EXPECT_EQ(state.step, 1000);
}

TEST(Adam, NonFiniteGradientNamesGroup) {
  auto params = single_param({0.0}, {std::numeric_limits<double>::quiet_NaN()});
  auto state = OptimizerState<double>::zeros_like(params);
  try {
    adam_step(params, state, 1e-3, 0.9, 0.999, 1e-8);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
  }
}

TEST(ClipGradNorm, RescalesOnlyAboveThreshold) {
  auto params = single_param({0.0, 0.0}, {3.0, 4.0});
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(params[0].tensor.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(params[0].tensor.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(params[0].tensor.grad()[1], 0.8, 1e-15);
}

TEST(LearningRate, ContinuousAtWarmup) {
  const std::int64_t w = 4000;
  EXPECT_DOUBLE_EQ(std::pow(static_cast<double>(w), -0.5), w * std::pow(static_cast<double>(w), -1.5));
  EXPECT_DOUBLE_EQ(lr_at(w, 256, w, 1.0), std::pow(256.0, -0.5) * std::pow(4000.0, -0.5));
}

TEST(LearningRate, FourTimesWarmupHalvesPeak) {
  EXPECT_DOUBLE_EQ(lr_at(4 * 4000, 256, 4000, 1.0), 0.5 * lr_at(4000, 256, 4000, 1.0));
  EXPECT_DOUBLE_EQ(lr_at(400, 300, 100, 2.0), 0.5 * lr_at(100, 300, 100, 2.0));
}

TEST(LearningRate, RisesThenDecays) {
  for (std::int64_t s = 1; s < 4000; ++s) ASSERT_LT(lr_at(s, 256, 4000, 1.0), lr_at(s + 1, 256, 4000, 1.0));
  for (std::int64_t s = 4000; s < 20000; ++s) ASSERT_GT(lr_at(s, 256, 4000, 1.0), lr_at(s + 1, 256, 4000, 1.0));
}

TEST(LearningRate, StepZeroIsAnError) { EXPECT_THROW(lr_at(0, 256, 4000, 1.0), std::invalid_argument); }

TEST(EpochRecord, LogLineFormat) {
  EpochRecord r;
  r.epoch = 3;
  r.train_loss = 1.5;
  r.lr = 2.5e-4;
  EXPECT_EQ(r.to_log_line(), "epoch=3\tloss=1.500000\tdev_bleu=-\tlr=2.500000e-04");
  r.dev_bleu = 12.345;
  EXPECT_EQ(r.to_log_line(), "epoch=3\tloss=1.500000\tdev_bleu=12.35\tlr=2.500000e-04");
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.label_smoothing = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

class ToyTraining : public ::testing::Test {
 protected:
  void SetUp() override { toy = testing::toy_setup(); }

  TransformerConfig small_model() const {
    auto c = toy->model_config();
    c.enc_layers = c.dec_layers = 1;
    c.embed_dim = 16;
    c.ff_dim = 32;
    return c;
  }

  TrainConfig short_run(std::int64_t epochs) const {
    TrainConfig t = toy->config.train;
    t.epochs = epochs;
    t.validate_every = 1;
    t.checkpoint_dir = toy->dir.path() / ("ckpt-" + std::to_string(counter_++));
    return t;
  }

  std::unique_ptr<testing::ToySetup> toy;
  mutable int counter_ = 0;
};

TEST_F(ToyTraining, SingleEpochHasOneRecordAndBestIsFinal) {
  auto model = build_model<float>(small_model(), 1);
  const auto run = train(model, short_run(1), toy->data(), toy->prepared.tokenizer, toy->prepared.files);
  ASSERT_EQ(run.epochs.size(), 1u);
  EXPECT_EQ(run.best_epoch, 1);
  EXPECT_EQ(run.epochs[0].epoch, 1);
  EXPECT_TRUE(run.epochs[0].dev_bleu.has_value());
  EXPECT_TRUE(std::filesystem::exists(run.best_checkpoint));
  EXPECT_TRUE(std::filesystem::exists(run.final_checkpoint));
  EXPECT_EQ(read_checkpoint_meta(run.best_checkpoint).epoch, read_checkpoint_meta(run.final_checkpoint).epoch);
}

TEST_F(ToyTraining, SameSeedSameLossTrajectory) {
  std::vector<double> losses[2];
  for (int r = 0; r < 2; ++r) {
    auto model = build_model<float>(small_model(), 5);
    TrainHooks hooks;
    hooks.after_step = [&, r](std::int64_t, double loss) { losses[r].push_back(loss); };
    train(model, short_run(3), toy->data(), toy->prepared.tokenizer, toy->prepared.files, hooks);
  }
  ASSERT_GE(losses[0].size(), 10u);
  ASSERT_EQ(losses[0].size(), losses[1].size());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(losses[0][i], losses[1][i], 1e-12);
}

TEST_F(ToyTraining, BestEpochAttainsMaximumOfSelectedMetric) {
  auto model = build_model<float>(small_model(), 2);
  auto cfg = short_run(12);
  cfg.warmup_steps = 20;
  const auto run = train(model, cfg, toy->data(), toy->prepared.tokenizer, toy->prepared.files);
  double best = -1;
  std::int64_t argmax = 0;
  for (const auto& e : run.epochs) {
    ASSERT_TRUE(e.dev_bleu.has_value());
    if (*e.dev_bleu > best) {
      best = *e.dev_bleu;
      argmax = e.epoch;
    }
  }
  EXPECT_EQ(run.best_epoch, argmax);
  EXPECT_EQ(read_checkpoint_meta(run.best_checkpoint).epoch, argmax);
  EXPECT_EQ(read_checkpoint_meta(run.best_checkpoint).metrics.at("dev_bleu"), best);
  EXPECT_EQ(read_checkpoint_meta(run.final_checkpoint).epoch, 12);
}

TEST_F(ToyTraining, TestSelectionUsesTestSplit) {
  auto model = build_model<float>(small_model(), 2);
  auto cfg = short_run(2);
  cfg.selection_metric = SelectionMetric::kTestBleu;
  const auto run = train(model, cfg, toy->data(), toy->prepared.tokenizer, toy->prepared.files);
  for (const auto& e : run.epochs) EXPECT_TRUE(e.test_bleu.has_value());
}

TEST_F(ToyTraining, EmptyTrainSplitIsAnError) {
  auto model = build_model<float>(small_model(), 1);
  const ParallelCorpus empty;
  TrainData data = toy->data();
  data.train = &empty;
  EXPECT_THROW(train(model, short_run(1), data, toy->prepared.tokenizer, toy->prepared.files), DataError);
}

TEST_F(ToyTraining, PeriodicCheckpointsAndLog) {
  auto model = build_model<float>(small_model(), 1);
  auto cfg = short_run(4);
  cfg.checkpoint_every = 2;
  std::ostringstream log;
  TrainHooks hooks;
  hooks.log = &log;
  train(model, cfg, toy->data(), toy->prepared.tokenizer, toy->prepared.files, hooks);
  EXPECT_TRUE(std::filesystem::exists(cfg.checkpoint_dir / "epoch-2.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(cfg.checkpoint_dir / "epoch-4.ckpt"));
  EXPECT_FALSE(std::filesystem::exists(cfg.checkpoint_dir / "epoch-3.ckpt"));
  EXPECT_NE(log.str().find("train_pairs=64\tdropped_too_long=0\tsurviving=64"), std::string::npos) << log.str();
  EXPECT_NE(log.str().find("epoch=4\tloss="), std::string::npos);
}

TEST_F(ToyTraining, DivergenceKeepsLastGoodCheckpoint) {
  auto model = build_model<float>(small_model(), 1);
  auto cfg = short_run(3);
  TrainHooks hooks;
  hooks.after_epoch = [&](const EpochRecord& r) {
    // Poison a weight after epoch 2; the next forward pass overflows.
    if (r.epoch == 2) model.output.weight.mutable_data()[0] = std::numeric_limits<float>::infinity();
    return true;
  };
  EXPECT_THROW(train(model, cfg, toy->data(), toy->prepared.tokenizer, toy->prepared.files, hooks),
               TrainingDiverged);
  EXPECT_EQ(read_checkpoint_meta(cfg.checkpoint_dir / "last.ckpt").epoch, 2);
}

TEST_F(ToyTraining, CheckpointRoundTripIsBitwise) {
  auto model = build_model<float>(small_model(), 4);
  const auto cfg = short_run(2);
  train(model, cfg, toy->data(), toy->prepared.tokenizer, toy->prepared.files);
  const auto loaded = load_checkpoint<float>(cfg.checkpoint_dir / "last.ckpt", &toy->prepared.tokenizer.source_vocab,
                                             &toy->prepared.tokenizer.target_vocab);
  const auto a = model.parameters(), b = loaded.model.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].name, b[k].name);
    ASSERT_EQ(a[k].tensor.shape(), b[k].tensor.shape());
    EXPECT_EQ(std::memcmp(a[k].tensor.data().data(), b[k].tensor.data().data(), a[k].tensor.size() * sizeof(float)), 0)
        << a[k].name;
  }
  EXPECT_GT(loaded.optimizer.step, 0);

  const std::vector<std::vector<int>> src{toy->prepared.tokenizer.encode_source(toy->splits.train.pairs[3].source)};
  const std::vector<std::vector<int>> tgt{toy->prepared.tokenizer.encode_target(toy->splits.train.pairs[3].target)};
  const auto s = PaddedSequences::from(src, Vocabulary::kPad), t = PaddedSequences::from(tgt, Vocabulary::kPad);
  const auto out_a = decoder_forward(model, encode_source(model, s), s, t);
  const auto out_b = decoder_forward(loaded.model, encode_source(loaded.model, s), s, t);
  EXPECT_EQ(std::memcmp(out_a.data().data(), out_b.data().data(), out_a.size() * sizeof(float)), 0);

  const double bleu_a = greedy_corpus_bleu(model, toy->prepared.tokenizer, toy->splits.dev, 30);
  const double bleu_b = greedy_corpus_bleu(loaded.model, load_tokenizer(loaded.meta), toy->splits.dev, 30);
  EXPECT_EQ(bleu_a, bleu_b);
  EXPECT_EQ(loaded.meta.metrics.at("dev_bleu"), bleu_a);
}

TEST_F(ToyTraining, WrongVocabularyIsRejected) {
  auto model = build_model<float>(small_model(), 4);
  const auto cfg = short_run(1);
  train(model, cfg, toy->data(), toy->prepared.tokenizer, toy->prepared.files);
  std::vector<std::string> tokens = toy->prepared.tokenizer.target_vocab.tokens();
  std::swap(tokens[0], tokens[1]);
  const Vocabulary shuffled(tokens);
  EXPECT_THROW(load_checkpoint<float>(cfg.checkpoint_dir / "last.ckpt", nullptr, &shuffled), VocabMismatchError);

  // The same check through the tokenizer files the checkpoint points at.
  shuffled.save(toy->prepared.files.target_vocab);
  EXPECT_THROW(load_tokenizer(read_checkpoint_meta(cfg.checkpoint_dir / "last.ckpt")), VocabMismatchError);
}

TEST_F(ToyTraining, TruncatedCheckpointNamesByteCounts) {
  auto model = build_model<float>(small_model(), 4);
  const auto path = toy->dir.path() / "model.ckpt";
  CheckpointMeta meta;
  meta.config = model.config();
  save_checkpoint<float>(path, model, nullptr, meta);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 100);
  try {
    load_checkpoint<float>(path);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected"), std::string::npos) << msg;
    EXPECT_NE(msg.find("got"), std::string::npos) << msg;
    EXPECT_NE(msg.find(path.string()), std::string::npos) << msg;
  }
  std::filesystem::resize_file(path, 20);
  EXPECT_THROW(load_checkpoint<float>(path), CheckpointError);
  testing::write_file(path, "not a checkpoint at all");
  EXPECT_THROW(read_checkpoint_meta(path), CheckpointError);
}

TEST_F(ToyTraining, PrecisionCastOnLoad) {
  auto model = build_model<double>(small_model(), 4);
  const auto path = toy->dir.path() / "model64.ckpt";
  CheckpointMeta meta;
  meta.config = model.config();
  save_checkpoint<double>(path, model, nullptr, meta);
  EXPECT_EQ(read_checkpoint_meta(path).dtype, "f64");
  const auto as_float = load_checkpoint<float>(path);
  EXPECT_EQ(as_float.model.parameters()[0].tensor[0], static_cast<float>(model.parameters()[0].tensor[0]));
}

// Memorising the toy corpus: the loss falls in 10-epoch windows and levels
// off just above the entropy of the smoothed target distribution.
TEST_F(ToyTraining, OverfitApproachesSmoothedEntropyFloor) {
  auto model = build_model<float>(toy->model_config(), toy->config.seed);
  const auto cfg = toy->config.train;
  const auto run = train(model, cfg, toy->data(), toy->prepared.tokenizer, toy->prepared.files);
  ASSERT_EQ(run.epochs.size(), 100u);

  const double eps = cfg.label_smoothing;
  const double others = static_cast<double>(toy->prepared.tokenizer.target_vocab.size() - 2);
  const double floor = -(1 - eps) * std::log(1 - eps) - eps * std::log(eps / others);
  for (const auto& e : run.epochs) EXPECT_GE(e.train_loss, floor * (1 - 1e-6)) << "epoch " << e.epoch;
  EXPECT_LE(run.epochs.back().train_loss, floor * 1.05) << "floor " << floor;

  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t w = 0; w + 10 <= run.epochs.size(); w += 10) {
    double mean = 0;
    for (std::size_t i = w; i < w + 10; ++i) mean += run.epochs[i].train_loss / 10;
    EXPECT_LE(mean, previous) << "window starting at epoch " << w + 1;
    previous = mean;
  }
  EXPECT_GE(run.epochs.back().dev_bleu.value_or(0), 99.0);
}

}  // namespace
}  // namespace minmt

#include <gtest/gtest.h>

#include "decode_oracle.hpp"
#include "minmt/decoding.hpp"
#include "synthetic.hpp"

namespace minmt {
namespace {

using testing::random_sentence;
using testing::tiny_config;

// Random weights give near-uniform outputs; a sharper output layer makes the
// search problems non-trivial.
template <typename T>
TransformerModel<T> peaked_model(std::size_t vocab, std::uint64_t seed, double sharpen = 4.0) {
  auto model = build_model<T>(tiny_config(vocab, 8, 2, 1, 16), seed);
  for (T& w : model.output.weight.mutable_data()) w *= static_cast<T>(sharpen);
  Rng rng(seed * 31 + 7);
  for (T& b : model.output.bias.mutable_data()) b = static_cast<T>(rng.uniform(-1.5, 1.5));
  return model;
}

DecodeConfig config(std::size_t max_len, std::size_t beam, double alpha) {
  DecodeConfig c;
  c.max_len = max_len;
  c.beam_size = beam;
  c.length_penalty_alpha = alpha;
  return c;
}

TEST(LengthPenalty, Formula) {
  EXPECT_DOUBLE_EQ(length_penalty(1, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(length_penalty(7, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(length_penalty(13, 0.5), std::sqrt(3.0));
  EXPECT_DOUBLE_EQ(length_penalty(40, 0.0), 1.0);
}

TEST(DecodeConfig, Validation) {
  EXPECT_THROW(config(0, 1, 1).validate(), std::invalid_argument);
  EXPECT_THROW(config(5, 0, 1).validate(), std::invalid_argument);
  EXPECT_THROW(config(5, 1, -0.5).validate(), std::invalid_argument);
}

TEST(Greedy, ForcedEndOfSentenceGivesEmptyOutput) {
  auto model = build_model<float>(tiny_config(9, 8, 2, 1, 16), 1);
  for (float& w : model.output.weight.mutable_data()) w = 0;
  for (float& b : model.output.bias.mutable_data()) b = 0;
  model.output.bias.mutable_data()[Vocabulary::kEos] = 10;
  const std::vector<int> src{2, 5, 6, 3};
  EXPECT_TRUE(greedy_decode(model, src, config(20, 1, 1)).empty());
  const auto beam = beam_decode(model, src, config(20, 4, 1));
  EXPECT_TRUE(beam.ids.empty());
  EXPECT_TRUE(beam.finished);
}

TEST(Greedy, NeverExceedsMaxLen) {
  auto model = build_model<float>(tiny_config(9, 8, 2, 1, 16), 1);
  // </s> can never win, so decoding runs to the cap.
  model.output.bias.mutable_data()[Vocabulary::kEos] = -50;
  const std::vector<int> src{2, 5, 3};
  for (std::size_t max_len : {1u, 2u, 7u, 15u}) {
    EXPECT_EQ(greedy_decode(model, src, config(max_len, 1, 1)).size(), max_len);
    const auto beam = beam_decode(model, src, config(max_len, 3, 1));
    EXPECT_EQ(beam.ids.size(), max_len);
    EXPECT_FALSE(beam.finished);
  }
}

TEST(Greedy, MatchesManualUnrollingOnThreeTokenVocabulary) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto model = peaked_model<double>(Vocabulary::kNumSpecials + 3, seed);
    Rng rng(seed);
    const auto src = random_sentence(rng, 7, 1, 5);
    EXPECT_EQ(greedy_decode(model, src, config(8, 1, 1)), testing::oracle_greedy(model, src, 8)) << "seed " << seed;
  }
}

TEST(Greedy, TiesGoToLowestId) {
  auto model = build_model<double>(tiny_config(8, 8, 2, 1, 16), 2);
  for (double& w : model.output.weight.mutable_data()) w = 0;
  for (double& b : model.output.bias.mutable_data()) b = 0;
  model.output.bias.mutable_data()[5] = 1;
  model.output.bias.mutable_data()[7] = 1;
  model.output.bias.mutable_data()[Vocabulary::kEos] = -5;
  EXPECT_EQ(greedy_decode(model, std::vector<int>{2, 6, 3}, config(3, 1, 1)), (std::vector<int>{5, 5, 5}));
  EXPECT_EQ(beam_decode(model, std::vector<int>{2, 6, 3}, config(3, 4, 1)).ids, (std::vector<int>{5, 5, 5}));
}

TEST(Greedy, BatchMatchesSingle) {
  const auto model = peaked_model<float>(12, 9);
  Rng rng(3);
  std::vector<std::vector<int>> sources;
  for (int i = 0; i < 9; ++i) sources.push_back(random_sentence(rng, 12, 1, 8));
  const auto batched = greedy_decode_batch(model, std::span<const std::vector<int>>(sources), config(10, 1, 1), 4);
  for (std::size_t i = 0; i < sources.size(); ++i) EXPECT_EQ(batched[i], greedy_decode(model, sources[i], config(10, 1, 1)));
}

TEST(Beam, WidthOneEqualsGreedy) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto model = peaked_model<float>(10 + seed % 5, seed);
    Rng rng(seed + 100);
    for (int input = 0; input < 5; ++input) {
      const auto src = random_sentence(rng, 10, 1, 6);
      const auto cfg = config(12, 1, 1.0);
      EXPECT_EQ(beam_decode(model, src, cfg).ids, greedy_decode(model, src, cfg));
    }
  }
}

TEST(Beam, FullWidthMatchesExhaustiveSearch) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (double alpha : {0.0, 1.0}) {
      const auto model = peaked_model<double>(5, seed);
      Rng rng(seed);
      const auto src = random_sentence(rng, 5, 1, 3);
      const auto expected = testing::oracle_exhaustive(model, src, 3, alpha);
      const auto got = beam_decode(model, src, config(3, 125, alpha));
      EXPECT_EQ(got.ids, expected.ids) << "seed " << seed << " alpha " << alpha;
      EXPECT_NEAR(got.score, expected.score, 1e-9);
    }
  }
}

TEST(Beam, AlphaZeroRanksBySummedLogProbability) {
  const auto model = peaked_model<double>(6, 4);
  const std::vector<int> src{2, 4, 5, 3};
  const auto h = beam_decode(model, src, config(4, 216, 0.0));
  EXPECT_DOUBLE_EQ(h.score, h.log_prob);
  EXPECT_NEAR(h.log_prob, testing::oracle_finished_log_prob(model, src, h.ids), 1e-9);
  EXPECT_NEAR(h.log_prob, sequence_log_prob(model, src, h.ids, true), 1e-12);
}

// Only finished hypotheses are compared: the no-</s> fallback carries no
// end-of-sentence term, so its score is not on the same scale.
TEST(Beam, WiderBeamNeverScoresWorse) {
  std::size_t compared = 0;
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const auto model = peaked_model<double>(7, seed, 3.0);
    Rng rng(seed);
    const auto src = random_sentence(rng, 7, 1, 4);
    double previous = -std::numeric_limits<double>::infinity();
    for (std::size_t beam = 1; beam <= 8; ++beam) {
      const auto h = beam_decode(model, src, config(6, beam, 1.0));
      if (!h.finished) continue;
      EXPECT_GE(h.score, previous - 1e-12) << "seed " << seed << " beam " << beam;
      previous = std::max(previous, h.score);
      ++compared;
    }
  }
  EXPECT_GT(compared, 100u);
}

TEST(Beam, Deterministic) {
  const auto model = peaked_model<float>(11, 5);
  const std::vector<int> src{2, 6, 7, 8, 3};
  const auto a = beam_decode(model, src, config(10, 5, 1.0));
  const auto b = beam_decode(model, src, config(10, 5, 1.0));
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_EQ(a.score, b.score);
}

}  // namespace
}  // namespace minmt

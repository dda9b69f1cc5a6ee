#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "minmt/checkpoint.hpp"
#include "minmt/corpus.hpp"
#include "minmt/transformer.hpp"

namespace minmt {

enum class SelectionMetric { kDevBleu, kTestBleu };

std::string to_string(SelectionMetric metric);
SelectionMetric parse_selection_metric(std::string_view text);

struct TrainConfig {
  std::int64_t epochs = 200;
  std::size_t token_budget = 4096;
  std::size_t max_len = 100;
  double lr_factor = 1.0;
  std::int64_t warmup_steps = 4000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double label_smoothing = 0.1;
  double clip_norm = 1.0;  // 0 disables clipping
  std::uint64_t seed = 42;
  SelectionMetric selection_metric = SelectionMetric::kDevBleu;
  std::int64_t checkpoint_every = 0;  // epoch-<e>.ckpt every N epochs; 0 = never
  std::int64_t validate_every = 1;    // the final epoch is always validated
  std::size_t dev_decode_max_len = 100;
  std::filesystem::path checkpoint_dir;  // empty = no checkpoints

  void validate() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bias-corrected Adam on every parameter that has a gradient; increments
/// state.step. Throws NumericError naming the group on a non-finite gradient.
template <typename T>
void adam_step(const std::vector<NamedTensor<T>>& params, OptimizerState<T>& state, double lr, double beta1,
               double beta2, double eps);

// Rescales all gradients so their joint L2 norm is at most max_norm. Returns
// the norm before clipping.
template <typename T>
double clip_grad_norm(const std::vector<NamedTensor<T>>& params, double max_norm);

// factor * d^-0.5 * min(step^-0.5, step * warmup^-1.5); step >= 1.
double lr_at(std::int64_t step, std::size_t embed_dim, std::int64_t warmup, double factor);

struct EpochRecord {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> dev_bleu;
  std::optional<double> test_bleu;
  double lr = 0.0;

  // Tab-separated "epoch=<e> loss=<f> dev_bleu=<f> lr=<f>"; dev_bleu is "-"
  // on epochs that were not validated.
  std::string to_log_line() const;
};

struct TrainedRun {
  std::vector<EpochRecord> epochs;
  std::int64_t best_epoch = 0;
  std::int64_t steps = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
  BatchPlan first_epoch_plan_summary;  // counts only; batches cleared
};

struct TrainData {
  const ParallelCorpus* train = nullptr;
  const ParallelCorpus* dev = nullptr;
  const ParallelCorpus* test = nullptr;
};

struct TrainHooks {
  std::ostream* log = nullptr;
  // Called after every optimizer step with the batch loss.
  std::function<void(std::int64_t step, double loss)> after_step;
  // Return false to end training after this epoch.
  std::function<bool(const EpochRecord&)> after_epoch;
};

// Greedy-decodes `corpus` sources and scores them against its targets.
template <typename T>
double greedy_corpus_bleu(const TransformerModel<T>& model, const Tokenizer& tokenizer, const ParallelCorpus& corpus,
                          std::size_t max_len);

/// Teacher-forced training with per-epoch validation, checkpoints
/// (last.ckpt, best.ckpt, optional epoch-<e>.ckpt) and best-epoch selection
/// by the configured metric. A NaN/Inf during training raises
/// TrainingDiverged; last.ckpt then still holds the last good epoch.
template <typename T>
TrainedRun train(TransformerModel<T>& model, const TrainConfig& config, const TrainData& data,
                 const Tokenizer& tokenizer, const TokenizerFiles& tokenizer_files, const TrainHooks& hooks = {});

// Mean cross entropy over a batch (teacher forcing).
template <typename T>
Tensor<T> batch_loss(const TransformerModel<T>& model, const Batch& batch, double label_smoothing,
                     const ForwardOptions& options);

}  // namespace minmt

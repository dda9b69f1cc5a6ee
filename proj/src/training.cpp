#include "minmt/training.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "minmt/decoding.hpp"
#include "minmt/evaluation.hpp"

namespace minmt {

std::string to_string(SelectionMetric metric) {
  return metric == SelectionMetric::kDevBleu ? "dev_bleu" : "test_bleu";
}

SelectionMetric parse_selection_metric(std::string_view text) {
  if (text == "dev_bleu") return SelectionMetric::kDevBleu;
  if (text == "test_bleu") return SelectionMetric::kTestBleu;
  throw std::invalid_argument("unknown selection metric '" + std::string(text) + "' (expected dev_bleu or test_bleu)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (token_budget == 0) throw std::invalid_argument("token_budget must be positive");
  if (max_len == 0) throw std::invalid_argument("max_len must be positive");
  if (!(lr_factor > 0.0)) throw std::invalid_argument("lr_factor must be positive");
  if (warmup_steps < 1) throw std::invalid_argument("warmup_steps must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw std::invalid_argument("label_smoothing must lie in [0, 1)");
  }
  if (!(clip_norm >= 0.0)) throw std::invalid_argument("clip_norm must be >= 0");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  if (validate_every < 1) throw std::invalid_argument("validate_every must be >= 1");
  if (dev_decode_max_len == 0) throw std::invalid_argument("dev_decode_max_len must be positive");
}

double lr_at(std::int64_t step, std::size_t embed_dim, std::int64_t warmup, double factor) {
  if (step < 1) throw std::invalid_argument("lr_at: step must be >= 1, got " + std::to_string(step));
  if (warmup < 1) throw std::invalid_argument("lr_at: warmup must be >= 1");
  if (embed_dim == 0) throw std::invalid_argument("lr_at: embed_dim must be positive");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return factor * std::pow(static_cast<double>(embed_dim), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

template <typename T>
OptimizerState<T> OptimizerState<T>::zeros_like(const std::vector<NamedTensor<T>>& params) {
  OptimizerState state;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.tensor.size(), T{0});
    state.second_moment.emplace_back(p.tensor.size(), T{0});
  }
  return state;
}

template <typename T>
void adam_step(const std::vector<NamedTensor<T>>& params, OptimizerState<T>& state, double lr, double beta1,
               double beta2, double eps) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state has " + std::to_string(state.first_moment.size()) +
                     " buffers for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (state.first_moment[i].size() != p.tensor.size() || state.second_moment[i].size() != p.tensor.size()) {
      throw ShapeError("adam_step: moment buffers do not match parameter " + p.name);
    }
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient in parameter group " + p.name);
      }
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(beta1, t);
  const double correction2 = 1.0 - std::pow(beta2, t);
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> tensor = params[i].tensor;
    if (!tensor.has_grad()) continue;
    const auto grad = tensor.grad();
    auto values = tensor.mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = static_cast<double>(grad[j]);
      const double m_new = beta1 * static_cast<double>(m[j]) + (1.0 - beta1) * g;
      const double v_new = beta2 * static_cast<double>(v[j]) + (1.0 - beta2) * g * g;
      m[j] = static_cast<T>(m_new);
      v[j] = static_cast<T>(v_new);
      const double update = lr * (m_new / correction1) / (std::sqrt(v_new / correction2) + eps);
      values[j] = static_cast<T>(static_cast<double>(values[j]) - update);
    }
  }
}

template <typename T>
double clip_grad_norm(const std::vector<NamedTensor<T>>& params, double max_norm) {
  double squared = 0.0;
  for (const auto& p : params) {
    for (T g : p.tensor.grad()) squared += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(squared);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& p : params) {
      Tensor<T> tensor = p.tensor;
      if (!tensor.has_grad()) continue;
      for (T& g : tensor.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * factor);
    }
  }
  return norm;
}

std::string EpochRecord::to_log_line() const {
  char buffer[160];
  if (dev_bleu) {
    std::snprintf(buffer, sizeof buffer, "epoch=%lld\tloss=%.6f\tdev_bleu=%.2f\tlr=%.6e", static_cast<long long>(epoch),
                  train_loss, *dev_bleu, lr);
  } else {
    std::snprintf(buffer, sizeof buffer, "epoch=%lld\tloss=%.6f\tdev_bleu=-\tlr=%.6e", static_cast<long long>(epoch),
                  train_loss, lr);
  }
  return buffer;
}

template <typename T>
Tensor<T> batch_loss(const TransformerModel<T>& model, const Batch& batch, double label_smoothing,
                     const ForwardOptions& options) {
  const PaddedSequences decoder_input = batch.target.without_last();
  const PaddedSequences decoder_output = batch.target.without_first();
  const Tensor<T> memory = encode_source(model, batch.source, options);
  const Tensor<T> logits = decoder_forward(model, memory, batch.source, decoder_input, options);
  return cross_entropy_smoothed(logits, std::span<const int>(decoder_output.ids), label_smoothing, Vocabulary::kPad);
}

template <typename T>
double greedy_corpus_bleu(const TransformerModel<T>& model, const Tokenizer& tokenizer, const ParallelCorpus& corpus,
                          std::size_t max_len) {
  if (corpus.empty()) throw std::invalid_argument("cannot compute BLEU on an empty split");
  std::vector<std::vector<int>> sources;
  sources.reserve(corpus.size());
  for (const auto& pair : corpus.pairs) {
    std::vector<int> ids = tokenizer.encode_source(pair.source);
    // Keep within the positional table; the sentinel pair is preserved.
    const std::size_t limit = model.config().max_positions;
    if (ids.size() > limit) {
      ids.resize(limit);
      ids.back() = Vocabulary::kEos;
    }
    sources.push_back(std::move(ids));
  }
  DecodeConfig cfg;
  cfg.max_len = std::min(max_len, model.config().max_positions - 1);
  cfg.beam_size = 1;
  const auto outputs = greedy_decode_batch(model, std::span<const std::vector<int>>(sources), cfg);
  std::vector<std::string> hypotheses;
  hypotheses.reserve(outputs.size());
  for (const auto& ids : outputs) hypotheses.push_back(tokenizer.detokenize_target(ids));
  const auto references = corpus.targets();
  return corpus_bleu(hypotheses, references).bleu;
}

namespace {

template <typename T>
CheckpointMeta make_meta(const TransformerModel<T>& model, const Tokenizer& tokenizer, const TokenizerFiles& files,
                         std::int64_t epoch, const EpochRecord* record) {
  CheckpointMeta meta;
  meta.config = model.config();
  meta.epoch = epoch;
  meta.source_vocab_hash = hex64(tokenizer.source_vocab.fingerprint());
  meta.target_vocab_hash = hex64(tokenizer.target_vocab.fingerprint());
  if (tokenizer.source_merges) meta.source_merges_hash = hex64(fnv1a64(tokenizer.source_merges->serialize()));
  if (tokenizer.target_merges) meta.target_merges_hash = hex64(fnv1a64(tokenizer.target_merges->serialize()));
  meta.tokenizer = files;
  if (record) {
    meta.metrics["train_loss"] = record->train_loss;
    meta.metrics["lr"] = record->lr;
    if (record->dev_bleu) meta.metrics["dev_bleu"] = *record->dev_bleu;
    if (record->test_bleu) meta.metrics["test_bleu"] = *record->test_bleu;
  }
  return meta;
}

void log_line(const TrainHooks& hooks, const std::string& line) {
  if (hooks.log) *hooks.log << line << '\n' << std::flush;
}

}  // namespace

template <typename T>
TrainedRun train(TransformerModel<T>& model, const TrainConfig& config, const TrainData& data,
                 const Tokenizer& tokenizer, const TokenizerFiles& tokenizer_files, const TrainHooks& hooks) {
  config.validate();
  if (data.train == nullptr || data.train->empty()) throw DataError("training split is empty");
  if (tokenizer.source_vocab.size() != model.config().src_vocab_size ||
      tokenizer.target_vocab.size() != model.config().tgt_vocab_size) {
    throw std::invalid_argument("model vocabulary sizes (" + std::to_string(model.config().src_vocab_size) + ", " +
                                std::to_string(model.config().tgt_vocab_size) + ") do not match the tokenizer (" +
                                std::to_string(tokenizer.source_vocab.size()) + ", " +
                                std::to_string(tokenizer.target_vocab.size()) + ")");
  }
  const ParallelCorpus* selection_split =
      config.selection_metric == SelectionMetric::kDevBleu ? data.dev : data.test;
  if (selection_split == nullptr || selection_split->empty()) {
    throw DataError("selection metric " + to_string(config.selection_metric) + " needs a non-empty " +
                    (config.selection_metric == SelectionMetric::kDevBleu ? "dev" : "test") + " split");
  }

  const std::vector<EncodedPair> encoded = encode_corpus(*data.train, tokenizer);
  const auto params = model.parameters();
  OptimizerState<T> optimizer = OptimizerState<T>::zeros_like(params);

  const bool checkpoints = !config.checkpoint_dir.empty();
  TrainedRun run;
  if (checkpoints) {
    std::filesystem::create_directories(config.checkpoint_dir);
    run.final_checkpoint = config.checkpoint_dir / "last.ckpt";
    run.best_checkpoint = config.checkpoint_dir / "best.ckpt";
    save_checkpoint(run.final_checkpoint, model, &optimizer, make_meta(model, tokenizer, tokenizer_files, 0, nullptr));
  }

  double best_value = -std::numeric_limits<double>::infinity();
  Rng dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    BatchPlan plan = make_batches(encoded, config.token_budget, config.max_len,
                                  config.seed + static_cast<std::uint64_t>(epoch));
    if (epoch == 1) {
      log_line(hooks, "train_pairs=" + std::to_string(encoded.size()) +
                          "\tdropped_too_long=" + std::to_string(plan.dropped_too_long) +
                          "\tsurviving=" + std::to_string(plan.surviving) +
                          "\tbatches=" + std::to_string(plan.batches.size()));
      run.first_epoch_plan_summary.dropped_too_long = plan.dropped_too_long;
      run.first_epoch_plan_summary.surviving = plan.surviving;
    }
    if (plan.batches.empty()) throw DataError("no training pair fits within max_len=" + std::to_string(config.max_len));

    EpochRecord record;
    record.epoch = epoch;
    double weighted_loss = 0.0;
    double weight = 0.0;
    try {
      for (const Batch& batch : plan.batches) {
        model.zero_grad();
        ForwardOptions options{true, &dropout_rng};
        Tensor<T> loss = batch_loss(model, batch, config.label_smoothing, options);
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value)) throw NumericError("non-finite training loss");
        loss.backward();
        if (config.clip_norm > 0.0) clip_grad_norm(params, config.clip_norm);
        const double lr = lr_at(optimizer.step + 1, model.config().embed_dim, config.warmup_steps, config.lr_factor);
        adam_step(params, optimizer, lr, config.adam_beta1, config.adam_beta2, config.adam_eps);
        record.lr = lr;
        const double tokens = static_cast<double>(batch.target.without_first().real_count());
        weighted_loss += value * tokens;
        weight += tokens;
        ++run.steps;
        if (hooks.after_step) hooks.after_step(optimizer.step, value);
      }
    } catch (const NumericError& e) {
      std::string message = "training diverged in epoch " + std::to_string(epoch) + ": " + e.what();
      if (checkpoints) message += "; last good checkpoint kept at " + run.final_checkpoint.string();
      throw TrainingDiverged(message);
    }
    record.train_loss = weighted_loss / weight;

    const bool validate = epoch % config.validate_every == 0 || epoch == config.epochs;
    if (validate) {
      if (data.dev && !data.dev->empty()) {
        record.dev_bleu = greedy_corpus_bleu(model, tokenizer, *data.dev, config.dev_decode_max_len);
      }
      if (config.selection_metric == SelectionMetric::kTestBleu) {
        record.test_bleu = greedy_corpus_bleu(model, tokenizer, *data.test, config.dev_decode_max_len);
      }
    }
    log_line(hooks, record.to_log_line());
    run.epochs.push_back(record);

    const std::optional<double>& selected =
        config.selection_metric == SelectionMetric::kDevBleu ? record.dev_bleu : record.test_bleu;
    const bool improved = selected && *selected > best_value;
    if (improved) {
      best_value = *selected;
      run.best_epoch = epoch;
    }
    if (checkpoints) {
      const CheckpointMeta meta = make_meta(model, tokenizer, tokenizer_files, epoch, &record);
      save_checkpoint(run.final_checkpoint, model, &optimizer, meta);
      if (improved) save_checkpoint(run.best_checkpoint, model, &optimizer, meta);
      if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
        save_checkpoint(config.checkpoint_dir / ("epoch-" + std::to_string(epoch) + ".ckpt"), model, &optimizer,
                        meta);
      }
    }
    if (hooks.after_epoch && !hooks.after_epoch(record)) break;
  }
  if (run.best_epoch == 0) run.best_epoch = run.epochs.back().epoch;
  return run;
}

#define MINMT_INSTANTIATE_TRAINING(T)                                                                              \
  template struct OptimizerState<T>;                                                                               \
  template void adam_step(const std::vector<NamedTensor<T>>&, OptimizerState<T>&, double, double, double, double); \
  template double clip_grad_norm(const std::vector<NamedTensor<T>>&, double);                                      \
  template Tensor<T> batch_loss(const TransformerModel<T>&, const Batch&, double, const ForwardOptions&);          \
  template double greedy_corpus_bleu(const TransformerModel<T>&, const Tokenizer&, const ParallelCorpus&,          \
                                     std::size_t);                                                                 \
  template TrainedRun train(TransformerModel<T>&, const TrainConfig&, const TrainData&, const Tokenizer&,          \
                            const TokenizerFiles&, const TrainHooks&);

MINMT_INSTANTIATE_TRAINING(float)
MINMT_INSTANTIATE_TRAINING(double)

#undef MINMT_INSTANTIATE_TRAINING

}  // namespace minmt

#include "minmt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace minmt {

std::string to_string(Direction direction) { return direction == Direction::kEnPcm ? "en-pcm" : "pcm-en"; }

Direction parse_direction(std::string_view text) {
  if (text == "en-pcm") return Direction::kEnPcm;
  if (text == "pcm-en") return Direction::kPcmEn;
  throw ConfigError("unknown direction '" + std::string(text) + "' (expected en-pcm or pcm-en)");
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view value) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("'" + std::string(key) + "' expects an integer, got '" + std::string(value) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view value) {
  std::string text(value);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) {
    throw ConfigError("'" + std::string(key) + "' expects a number, got '" + text + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("'" + std::string(key) + "' expects true or false, got '" + std::string(value) + "'");
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(std::string_view text, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  std::vector<std::function<void(TransformerConfig&)>> overrides;
  bool seed_for_report = true;
  std::uint64_t report_seed = 0;

  auto path_of = [&](std::string_view value) { return base_dir / std::filesystem::path(std::string(value)); };
  auto size_field = [&](std::size_t TransformerConfig::*field) {
    return [&overrides, field](std::string_view key, std::string_view value) {
      const auto v = parse_int<std::size_t>(key, value);
      overrides.push_back([field, v](TransformerConfig& m) { m.*field = v; });
    };
  };

  using Setter = std::function<void(std::string_view, std::string_view)>;
  const std::map<std::string, Setter, std::less<>> setters = {
      {"direction", [&](auto, auto v) { cfg.direction = parse_direction(v); }},
      {"train_prefix", [&](auto, auto v) { cfg.train_prefix = path_of(v); }},
      {"dev_prefix", [&](auto, auto v) { cfg.dev_prefix = path_of(v); }},
      {"test_prefix", [&](auto, auto v) { cfg.test_prefix = path_of(v); }},
      {"output_dir", [&](auto, auto v) { cfg.output_dir = path_of(v); }},
      {"tokenization",
       [&](auto, auto v) {
         try {
           cfg.tokenization = parse_tokenization_mode(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       }},
      {"bpe_merges", [&](auto k, auto v) { cfg.bpe_merges = parse_int<std::size_t>(k, v); }},
      {"bpe_separate", [&](auto k, auto v) { cfg.bpe_separate = parse_bool(k, v); }},
      {"vocab_max_size", [&](auto k, auto v) { cfg.vocab_max_size = parse_int<std::size_t>(k, v); }},
      {"vocab_min_freq", [&](auto k, auto v) { cfg.vocab_min_freq = parse_int<std::int64_t>(k, v); }},
      {"preset",
       [&](auto, auto v) {
         if (v != "word" && v != "bpe" && v != "custom") {
           throw ConfigError("unknown preset '" + std::string(v) + "' (expected word, bpe or custom)");
         }
         cfg.preset = std::string(v);
       }},
      {"enc_layers", size_field(&TransformerConfig::enc_layers)},
      {"dec_layers", size_field(&TransformerConfig::dec_layers)},
      {"heads", size_field(&TransformerConfig::heads)},
      {"embed_dim", size_field(&TransformerConfig::embed_dim)},
      {"ff_dim", size_field(&TransformerConfig::ff_dim)},
      {"max_positions", size_field(&TransformerConfig::max_positions)},
      {"dropout",
       [&](auto k, auto v) {
         const double d = parse_real(k, v);
         overrides.push_back([d](TransformerConfig& m) { m.dropout = d; });
       }},
      {"precision",
       [&](auto, auto v) {
         if (v == "f32") {
           cfg.precision = Precision::kFloat32;
         } else if (v == "f64") {
           cfg.precision = Precision::kFloat64;
         } else {
           throw ConfigError("unknown precision '" + std::string(v) + "' (expected f32 or f64)");
         }
       }},
      {"epochs", [&](auto k, auto v) { cfg.train.epochs = parse_int<std::int64_t>(k, v); }},
      {"token_budget", [&](auto k, auto v) { cfg.train.token_budget = parse_int<std::size_t>(k, v); }},
      {"max_len", [&](auto k, auto v) { cfg.train.max_len = parse_int<std::size_t>(k, v); }},
      {"lr_factor", [&](auto k, auto v) { cfg.train.lr_factor = parse_real(k, v); }},
      {"warmup_steps", [&](auto k, auto v) { cfg.train.warmup_steps = parse_int<std::int64_t>(k, v); }},
      {"adam_beta1", [&](auto k, auto v) { cfg.train.adam_beta1 = parse_real(k, v); }},
      {"adam_beta2", [&](auto k, auto v) { cfg.train.adam_beta2 = parse_real(k, v); }},
      {"adam_eps", [&](auto k, auto v) { cfg.train.adam_eps = parse_real(k, v); }},
      {"label_smoothing", [&](auto k, auto v) { cfg.train.label_smoothing = parse_real(k, v); }},
      {"clip_norm", [&](auto k, auto v) { cfg.train.clip_norm = parse_real(k, v); }},
      {"selection_metric",
       [&](auto, auto v) {
         try {
           cfg.train.selection_metric = parse_selection_metric(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       }},
      {"checkpoint_every", [&](auto k, auto v) { cfg.train.checkpoint_every = parse_int<std::int64_t>(k, v); }},
      {"validate_every", [&](auto k, auto v) { cfg.train.validate_every = parse_int<std::int64_t>(k, v); }},
      {"dev_decode_max_len", [&](auto k, auto v) { cfg.train.dev_decode_max_len = parse_int<std::size_t>(k, v); }},
      {"beam_size", [&](auto k, auto v) { cfg.decode.beam_size = parse_int<std::size_t>(k, v); }},
      {"length_penalty", [&](auto k, auto v) { cfg.decode.length_penalty_alpha = parse_real(k, v); }},
      {"decode_max_len", [&](auto k, auto v) { cfg.decode.max_len = parse_int<std::size_t>(k, v); }},
      {"report_rows", [&](auto k, auto v) { cfg.report_rows = parse_int<std::size_t>(k, v); }},
      {"report_seed",
       [&](auto k, auto v) {
         report_seed = parse_int<std::uint64_t>(k, v);
         seed_for_report = false;
       }},
      {"seed", [&](auto k, auto v) { cfg.seed = parse_int<std::uint64_t>(k, v); }},
  };

  std::set<std::string, std::less<>> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key");
    if (value.empty()) throw ConfigError(where + "missing value for '" + std::string(key) + "'");
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(where + "unknown key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) throw ConfigError(where + "duplicate key '" + std::string(key) + "'");
    try {
      it->second(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }

  if (cfg.preset == "word") {
    cfg.model = TransformerConfig::word_level(0, 0);
  } else if (cfg.preset == "bpe") {
    cfg.model = TransformerConfig::bpe(0, 0);
  } else {
    cfg.model = TransformerConfig{};
  }
  for (const auto& apply : overrides) apply(cfg.model);
  cfg.train.seed = cfg.seed;
  if (seed_for_report) report_seed = cfg.seed;
  cfg.report_seed = report_seed;
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const auto base = std::filesystem::absolute(path).parent_path();
  try {
    return parse(buffer.str(), base);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::filesystem::path ExperimentConfig::source_file(const std::filesystem::path& prefix) const {
  std::filesystem::path p = prefix;
  p += source_suffix();
  return p;
}

std::filesystem::path ExperimentConfig::target_file(const std::filesystem::path& prefix) const {
  std::filesystem::path p = prefix;
  p += target_suffix();
  return p;
}

TransformerConfig ExperimentConfig::model_config(std::size_t src_vocab, std::size_t tgt_vocab) const {
  TransformerConfig m = model;
  m.src_vocab_size = src_vocab;
  m.tgt_vocab_size = tgt_vocab;
  return m;
}

void ExperimentConfig::validate() const {
  if (train_prefix.empty()) throw ConfigError("missing required key 'train_prefix'");
  if (output_dir.empty()) throw ConfigError("missing required key 'output_dir'");
  if (train.selection_metric == SelectionMetric::kDevBleu && dev_prefix.empty()) {
    throw ConfigError("selection_metric dev_bleu needs 'dev_prefix'");
  }
  if (train.selection_metric == SelectionMetric::kTestBleu && test_prefix.empty()) {
    throw ConfigError("selection_metric test_bleu needs 'test_prefix'");
  }
  if (tokenization == TokenizationMode::kBpe && bpe_merges == 0) throw ConfigError("bpe_merges must be positive");
  if (vocab_min_freq < 1) throw ConfigError("vocab_min_freq must be >= 1");
  try {
    // Placeholder vocabulary sizes; only the shape is checked here.
    model_config(Vocabulary::kNumSpecials + 1, Vocabulary::kNumSpecials + 1).validate();
    train.validate();
    decode.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace minmt

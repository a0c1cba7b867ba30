#pragma once

// Run configuration: a fixed key registry resolved from defaults, a
// line-based `key = value` file, command-line overrides, and (for precision)
// the DURALIGN_PRECISION environment variable. Unknown keys are errors; the
// fully resolved configuration is echoed before every run.

#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "duralign/data.hpp"
#include "duralign/errors.hpp"
#include "duralign/model.hpp"

namespace duralign {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      // model
      {"vocab_size", "20", "token vocabulary size"},
      {"embed_dim", "32", "token embedding dimension M"},
      {"feature_dim", "8", "spectrogram feature dimension F"},
      {"latent_dim", "4", "per-token latent dimension Z"},
      {"decoder_blocks", "6", "decoder block count L"},
      {"decoder_conv_width", "3", "decoder depthwise conv width (odd)"},
      {"duration_conv_width", "3", "duration predictor conv width (odd)"},
      {"lambda_dur", "100", "duration loss weight"},
      {"beta_start", "100", "KL weight ramp start step"},
      {"beta_end", "1000", "KL weight ramp end step"},
      {"warmup_steps", "400", "learning-rate warmup steps"},
      {"lr_dim", "32", "dimension term of the learning-rate schedule"},
      {"grad_clip", "1.0", "global gradient-norm cap (0 disables)"},
      {"batch_size", "8", "utterances per training step"},
      {"norm", "batch", "normalization in the upsampler conv: batch|layer"},
      {"bn_momentum", "0.99", "batch-norm running statistics momentum"},
      {"train_length", "target", "upsample length during training: target|predicted"},
      // soft-DTW
      {"gamma", "0.05", "soft-min smoothing"},
      {"warp", "128", "warp penalty"},
      {"band_half_width", "30", "diagonal band half width (total width = 2x)"},
      {"cost_indexing", "paper", "branch cost indexing: paper|symmetric"},
      // synthetic corpus
      {"utterance_count", "200", "corpus size"},
      {"tokens_min", "3", "tokens per utterance, minimum"},
      {"tokens_max", "10", "tokens per utterance, maximum"},
      {"dur_min", "2", "frames per token, minimum"},
      {"dur_max", "8", "frames per token, maximum"},
      {"noise_std", "0.05", "frame noise standard deviation"},
      {"crossfade", "1", "blend one frame on each side of token boundaries"},
      // run
      {"seed", "1", "global seed"},
      {"precision", "32", "tensor precision: 32|64 (env DURALIGN_PRECISION overrides)"},
      {"threads", "1", "worker threads for batched training"},
  };
  return keys;
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
  }

  static bool known(const std::string& key) {
    for (const auto& k : config_keys())
      if (key == k.name) return true;
    return false;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown configuration key: " + key);
    values_[key] = value;
  }

  /// Parses `key = value` lines; blank lines and '#' comments are skipped.
  void load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      std::string stripped = line.substr(0, line.find('#'));
      auto notspace = [](char c) { return !std::isspace(static_cast<unsigned char>(c)); };
      auto first = std::find_if(stripped.begin(), stripped.end(), notspace);
      if (first == stripped.end()) continue;
      auto eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(lineno) + ": expected `key = value`");
      auto trim = [&](std::string s) {
        size_t b = s.find_first_not_of(" \t\r");
        size_t e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      std::string key = trim(stripped.substr(0, eq));
      std::string value = trim(stripped.substr(eq + 1));
      if (key.empty() || value.empty())
        throw ConfigError(path + ":" + std::to_string(lineno) + ": expected `key = value`");
      set(key, value);
    }
  }

  /// Applies DURALIGN_PRECISION on top of file and command-line settings.
  void apply_env() {
    if (const char* p = std::getenv("DURALIGN_PRECISION")) {
      std::string v = p;
      if (v != "32" && v != "64") throw ConfigError("DURALIGN_PRECISION must be 32 or 64");
      values_["precision"] = v;
    }
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key: " + key);
    return it->second;
  }

  int64_t get_int(const std::string& key) const {
    const std::string& s = get(key);
    try {
      size_t pos = 0;
      int64_t v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key " + key + ": expected integer, got `" + s + "`");
    }
  }

  double get_double(const std::string& key) const {
    const std::string& s = get(key);
    try {
      size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key " + key + ": expected number, got `" + s + "`");
    }
  }

  bool get_bool(const std::string& key) const {
    const std::string& s = get(key);
    if (s == "1" || s == "true" || s == "on") return true;
    if (s == "0" || s == "false" || s == "off") return false;
    throw ConfigError("key " + key + ": expected boolean, got `" + s + "`");
  }

  int precision() const {
    int64_t p = get_int("precision");
    if (p != 32 && p != 64) throw ConfigError("precision must be 32 or 64");
    return static_cast<int>(p);
  }

  int threads() const {
    int64_t t = get_int("threads");
    if (t < 1) throw ConfigError("threads must be >= 1");
    return static_cast<int>(t);
  }

  ModelConfig model() const {
    ModelConfig m;
    m.vocab_size = static_cast<int>(get_int("vocab_size"));
    m.embed_dim = static_cast<int>(get_int("embed_dim"));
    m.feature_dim = static_cast<int>(get_int("feature_dim"));
    m.latent_dim = static_cast<int>(get_int("latent_dim"));
    m.decoder_blocks = static_cast<int>(get_int("decoder_blocks"));
    m.decoder_conv_width = static_cast<int>(get_int("decoder_conv_width"));
    m.duration_conv_width = static_cast<int>(get_int("duration_conv_width"));
    m.dtw = dtw();
    m.lambda_dur = get_double("lambda_dur");
    m.beta_start = get_int("beta_start");
    m.beta_end = get_int("beta_end");
    m.warmup_steps = get_int("warmup_steps");
    m.lr_dim = static_cast<int>(get_int("lr_dim"));
    m.grad_clip = get_double("grad_clip");
    if (m.grad_clip < 0) throw ConfigError("grad_clip must be >= 0");
    m.seed = static_cast<uint64_t>(get_int("seed"));
    m.batch_size = static_cast<int>(get_int("batch_size"));
    const std::string& norm = get("norm");
    if (norm == "layer")
      m.layer_norm = true;
    else if (norm != "batch")
      throw ConfigError("norm must be batch or layer");
    m.bn_momentum = get_double("bn_momentum");
    const std::string& tl = get("train_length");
    if (tl == "predicted")
      m.train_length_predicted = true;
    else if (tl != "target")
      throw ConfigError("train_length must be target or predicted");
    m.validate();
    return m;
  }

  SoftDtwConfig dtw() const {
    SoftDtwConfig d;
    d.gamma = get_double("gamma");
    d.warp = get_double("warp");
    d.band_half_width = static_cast<int>(get_int("band_half_width"));
    const std::string& ci = get("cost_indexing");
    if (ci == "symmetric")
      d.cost_indexing = CostIndexing::symmetric;
    else if (ci != "paper")
      throw ConfigError("cost_indexing must be paper or symmetric");
    if (!(d.gamma > 0)) throw ConfigError("gamma must be positive");
    if (d.warp < 0) throw ConfigError("warp must be nonnegative");
    if (d.band_half_width < 1) throw ConfigError("band_half_width must be >= 1");
    return d;
  }

  SyntheticCorpusSpec corpus() const {
    SyntheticCorpusSpec s;
    s.vocab_size = static_cast<int>(get_int("vocab_size"));
    s.utterance_count = static_cast<int>(get_int("utterance_count"));
    s.tokens_min = static_cast<int>(get_int("tokens_min"));
    s.tokens_max = static_cast<int>(get_int("tokens_max"));
    s.dur_min = static_cast<int>(get_int("dur_min"));
    s.dur_max = static_cast<int>(get_int("dur_max"));
    s.feature_dim = static_cast<int>(get_int("feature_dim"));
    s.noise_std = get_double("noise_std");
    s.crossfade = get_bool("crossfade");
    s.seed = static_cast<uint64_t>(get_int("seed"));
    s.validate();
    return s;
  }

  /// Reproducibility record: sorted `key = value` lines.
  void echo(std::ostream& os) const {
    for (const auto& [key, value] : values_) os << key << " = " << value << "\n";
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace duralign

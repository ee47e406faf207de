#pragma once

// Model and training hyperparameters plus the plain-text key = value
// configuration format.
//
//   # comment
//   preset = micro          (optional, must come first; later keys override)
//   model_dim = 16
//   fusion_strategy = parallel
//
// Unknown keys are rejected.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "structsum/error.hpp"

namespace structsum {

enum class FusionStrategy {
  kParallel,
  kSequentialDiscourseFirst,
  kSequentialActionFirst,
  kDiscourseOnly,
  kActionOnly,
  kNone,
};

inline constexpr std::string_view fusion_name(FusionStrategy f) {
  switch (f) {
    case FusionStrategy::kParallel: return "parallel";
    case FusionStrategy::kSequentialDiscourseFirst: return "sequential-discourse-first";
    case FusionStrategy::kSequentialActionFirst: return "sequential-action-first";
    case FusionStrategy::kDiscourseOnly: return "discourse-only";
    case FusionStrategy::kActionOnly: return "action-only";
    case FusionStrategy::kNone: return "none";
  }
  return "none";
}

inline std::optional<FusionStrategy> parse_fusion(std::string_view s) {
  for (auto f : {FusionStrategy::kParallel, FusionStrategy::kSequentialDiscourseFirst,
                 FusionStrategy::kSequentialActionFirst, FusionStrategy::kDiscourseOnly, FusionStrategy::kActionOnly,
                 FusionStrategy::kNone}) {
    if (fusion_name(f) == s) return f;
  }
  return std::nullopt;
}

inline bool uses_discourse(FusionStrategy f) { return f != FusionStrategy::kActionOnly && f != FusionStrategy::kNone; }
inline bool uses_action(FusionStrategy f) { return f != FusionStrategy::kDiscourseOnly && f != FusionStrategy::kNone; }

struct EncoderConfig {
  std::size_t model_dim = 64;
  std::size_t ffn_dim = 128;
  std::size_t encoder_layers = 2;
  std::size_t encoder_heads = 2;
  std::size_t gat_layers = 2;
  std::size_t gat_heads = 2;
  std::size_t relation_embed_dim = 16;
  double dropout = 0.1;
  std::size_t max_positions = 1024;
  bool gat_reverse_edges = false;

  void validate() const {
    if (model_dim == 0 || ffn_dim == 0 || encoder_layers == 0 || encoder_heads == 0 || gat_layers == 0 ||
        gat_heads == 0 || relation_embed_dim == 0 || max_positions == 0) {
      throw ShapeError("EncoderConfig: all sizes and counts must be >= 1");
    }
    if (model_dim % encoder_heads != 0) throw ShapeError("EncoderConfig: model_dim must be divisible by encoder_heads");
    if (gat_layers > 1 && model_dim % gat_heads != 0) {
      throw ShapeError("EncoderConfig: model_dim must be divisible by gat_heads");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ShapeError("EncoderConfig: dropout must be in [0, 1)");
  }
};

struct DecoderConfig {
  std::size_t model_dim = 64;
  std::size_t ffn_dim = 128;
  std::size_t decoder_layers = 2;
  std::size_t decoder_heads = 2;
  std::size_t graph_attn_heads = 2;
  FusionStrategy fusion_strategy = FusionStrategy::kParallel;
  double rezero_init = 1.0;
  double dropout = 0.1;

  void validate() const {
    if (model_dim == 0 || ffn_dim == 0 || decoder_layers == 0 || decoder_heads == 0 || graph_attn_heads == 0) {
      throw ShapeError("DecoderConfig: all sizes and counts must be >= 1");
    }
    if (model_dim % decoder_heads != 0 || model_dim % graph_attn_heads != 0) {
      throw ShapeError("DecoderConfig: model_dim must be divisible by decoder_heads and graph_attn_heads");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ShapeError("DecoderConfig: dropout must be in [0, 1)");
  }
};

struct TrainConfig {
  double base_lr = 3e-5;
  double new_module_lr = 3e-4;
  std::size_t base_warmup_steps = 120;
  std::size_t new_warmup_steps = 60;
  std::size_t max_steps = 1000;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  double grad_clip_norm = 1.0;
  std::size_t eval_every = 100;
  std::size_t min_freq = 1;
  std::size_t max_summary_len = 40;

  void validate() const {
    if (!(base_lr > 0.0) || !(new_module_lr > 0.0)) throw ShapeError("TrainConfig: learning rates must be > 0");
    if (batch_size < 1) throw ShapeError("TrainConfig: batch_size must be >= 1");
    if (eval_every < 1) throw ShapeError("TrainConfig: eval_every must be >= 1");
    if (min_freq < 1) throw ShapeError("TrainConfig: min_freq must be >= 1");
  }
};

struct Config {
  EncoderConfig encoder;
  DecoderConfig decoder;
  TrainConfig train;

  void validate() const {
    encoder.validate();
    decoder.validate();
    train.validate();
    if (encoder.model_dim != decoder.model_dim) throw ShapeError("Config: encoder and decoder model_dim differ");
  }

  // Desk-scale preset used by the tests and the overfit run.
  static Config micro() {
    Config c;
    c.encoder.model_dim = c.decoder.model_dim = 16;
    c.encoder.ffn_dim = c.decoder.ffn_dim = 32;
    c.encoder.encoder_layers = 2;
    c.encoder.encoder_heads = 2;
    c.encoder.gat_layers = 2;
    c.encoder.gat_heads = 2;
    c.encoder.relation_embed_dim = 8;
    c.encoder.max_positions = 512;
    c.encoder.dropout = c.decoder.dropout = 0.0;
    c.decoder.decoder_layers = 2;
    c.decoder.decoder_heads = 2;
    c.decoder.graph_attn_heads = 2;
    c.decoder.fusion_strategy = FusionStrategy::kParallel;
    c.decoder.rezero_init = 1.0;
    c.train.base_lr = 3e-3;
    c.train.new_module_lr = 3e-3;
    c.train.base_warmup_steps = 40;
    c.train.new_warmup_steps = 20;
    c.train.max_steps = 2000;
    c.train.batch_size = 4;
    c.train.seed = 7;
    c.train.grad_clip_norm = 1.0;
    c.train.eval_every = 100;
    c.train.min_freq = 1;
    c.train.max_summary_len = 24;
    return c;
  }

  // Graph encoders 768-d, 2 layers, 2 heads, dropout 0.2; graph cross
  // attentions 2 heads; ReZero alpha starts at 1; base lr 3e-5 with 120
  // warmup steps, new-module lr 3e-4 with 60. The base transformer sizes
  // follow BART-base.
  static Config paper_scale() {
    Config c;
    c.encoder.model_dim = c.decoder.model_dim = 768;
    c.encoder.ffn_dim = c.decoder.ffn_dim = 3072;
    c.encoder.encoder_layers = 6;
    c.encoder.encoder_heads = 12;
    c.encoder.gat_layers = 2;
    c.encoder.gat_heads = 2;
    c.encoder.relation_embed_dim = 16;
    c.encoder.max_positions = 1024;
    c.encoder.dropout = c.decoder.dropout = 0.2;
    c.decoder.decoder_layers = 6;
    c.decoder.decoder_heads = 12;
    c.decoder.graph_attn_heads = 2;
    c.decoder.fusion_strategy = FusionStrategy::kParallel;
    c.decoder.rezero_init = 1.0;
    c.train.base_lr = 3e-5;
    c.train.new_module_lr = 3e-4;
    c.train.base_warmup_steps = 120;
    c.train.new_warmup_steps = 60;
    c.train.max_steps = 20000;
    c.train.batch_size = 8;
    c.train.seed = 1;
    c.train.grad_clip_norm = 1.0;
    c.train.eval_every = 500;
    c.train.min_freq = 1;
    c.train.max_summary_len = 80;
    return c;
  }

  static std::optional<Config> preset(std::string_view name) {
    if (name == "micro") return micro();
    if (name == "paper-scale") return paper_scale();
    return std::nullopt;
  }
};

namespace detail {

// Shortest decimal form that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct ConfigField {
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw DataError("config: " + key + " expects a non-negative integer, got \"" + v + "\"");
  return static_cast<std::size_t>(x);
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw DataError("config: " + key + " expects a number, got \"" + v + "\"");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw DataError("config: " + key + " expects true/false, got \"" + v + "\"");
}

#define STRUCTSUM_SIZE_FIELD(name, expr)                                                         \
  {name, {[](const Config& c) { return std::to_string(c.expr); },                                \
          [](Config& c, const std::string& v) { c.expr = parse_size(name, v); }}}
#define STRUCTSUM_DOUBLE_FIELD(name, expr)                                                       \
  {name, {[](const Config& c) { return format_double(c.expr); },                                 \
          [](Config& c, const std::string& v) { c.expr = parse_double(name, v); }}}

inline const std::map<std::string, ConfigField>& config_fields() {
  static const std::map<std::string, ConfigField> fields = {
      {"model_dim",
       {[](const Config& c) { return std::to_string(c.encoder.model_dim); },
        [](Config& c, const std::string& v) { c.encoder.model_dim = c.decoder.model_dim = parse_size("model_dim", v); }}},
      {"ffn_dim",
       {[](const Config& c) { return std::to_string(c.encoder.ffn_dim); },
        [](Config& c, const std::string& v) { c.encoder.ffn_dim = c.decoder.ffn_dim = parse_size("ffn_dim", v); }}},
      {"dropout",
       {[](const Config& c) { return format_double(c.encoder.dropout); },
        [](Config& c, const std::string& v) { c.encoder.dropout = c.decoder.dropout = parse_double("dropout", v); }}},
      STRUCTSUM_SIZE_FIELD("encoder_layers", encoder.encoder_layers),
      STRUCTSUM_SIZE_FIELD("encoder_heads", encoder.encoder_heads),
      STRUCTSUM_SIZE_FIELD("gat_layers", encoder.gat_layers),
      STRUCTSUM_SIZE_FIELD("gat_heads", encoder.gat_heads),
      STRUCTSUM_SIZE_FIELD("relation_embed_dim", encoder.relation_embed_dim),
      STRUCTSUM_SIZE_FIELD("max_positions", encoder.max_positions),
      {"gat_reverse_edges",
       {[](const Config& c) { return std::string(c.encoder.gat_reverse_edges ? "true" : "false"); },
        [](Config& c, const std::string& v) { c.encoder.gat_reverse_edges = parse_bool("gat_reverse_edges", v); }}},
      STRUCTSUM_SIZE_FIELD("decoder_layers", decoder.decoder_layers),
      STRUCTSUM_SIZE_FIELD("decoder_heads", decoder.decoder_heads),
      STRUCTSUM_SIZE_FIELD("graph_attn_heads", decoder.graph_attn_heads),
      {"fusion_strategy",
       {[](const Config& c) { return std::string(fusion_name(c.decoder.fusion_strategy)); },
        [](Config& c, const std::string& v) {
          auto f = parse_fusion(v);
          if (!f) throw DataError("config: unknown fusion_strategy \"" + v + "\"");
          c.decoder.fusion_strategy = *f;
        }}},
      STRUCTSUM_DOUBLE_FIELD("rezero_init", decoder.rezero_init),
      STRUCTSUM_DOUBLE_FIELD("base_lr", train.base_lr),
      STRUCTSUM_DOUBLE_FIELD("new_module_lr", train.new_module_lr),
      STRUCTSUM_SIZE_FIELD("base_warmup_steps", train.base_warmup_steps),
      STRUCTSUM_SIZE_FIELD("new_warmup_steps", train.new_warmup_steps),
      STRUCTSUM_SIZE_FIELD("max_steps", train.max_steps),
      STRUCTSUM_SIZE_FIELD("batch_size", train.batch_size),
      STRUCTSUM_SIZE_FIELD("seed", train.seed),
      STRUCTSUM_DOUBLE_FIELD("grad_clip_norm", train.grad_clip_norm),
      STRUCTSUM_SIZE_FIELD("eval_every", train.eval_every),
      STRUCTSUM_SIZE_FIELD("min_freq", train.min_freq),
      STRUCTSUM_SIZE_FIELD("max_summary_len", train.max_summary_len),
  };
  return fields;
}

#undef STRUCTSUM_SIZE_FIELD
#undef STRUCTSUM_DOUBLE_FIELD

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

inline Config parse_config(std::istream& in, const std::string& source = "<config>") {
  Config c;
  std::string line;
  std::size_t lineno = 0;
  bool any_key = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string text = detail::trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw DataError(source + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(std::string_view(text).substr(0, eq));
    const std::string value = detail::trim(std::string_view(text).substr(eq + 1));
    try {
      if (key == "preset") {
        if (any_key) throw DataError("config: preset must precede other keys");
        auto p = Config::preset(value);
        if (!p) throw DataError("config: unknown preset \"" + value + "\"");
        c = *p;
      } else {
        auto it = detail::config_fields().find(key);
        if (it == detail::config_fields().end()) throw DataError("config: unknown key \"" + key + "\"");
        it->second.set(c, value);
      }
    } catch (const DataError& e) {
      throw DataError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
    any_key = true;
  }
  c.validate();
  return c;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  return parse_config(in, path);
}

inline std::string serialize_config(const Config& c) {
  std::string out;
  for (const auto& [key, field] : detail::config_fields()) out += key + " = " + field.get(c) + "\n";
  return out;
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t config_hash(const Config& c) { return fnv1a64(serialize_config(c)); }

}  // namespace structsum

#pragma once

// Multi-granularity decoder.
//
// Each layer runs, post-norm throughout:
//   x1  = LN(y + SelfAttn(y, causal))
//   xU  = LN(x1 + CrossAttn(x1, token states))
//   xS  = graph fusion of xU (see fuse_parallel / fuse_sequential)
//   x2  = LN(xU + alpha * xS)            alpha: one trainable scalar per layer
//   out = LN(x2 + FFN(x2))
// With FusionStrategy::kNone the graph step is skipped and x2 = LN(xU).

#include <optional>
#include <string>
#include <vector>

#include "structsum/config.hpp"
#include "structsum/encoder.hpp"
#include "structsum/layers.hpp"
#include "structsum/log.hpp"

namespace structsum {

struct DecoderLayer {
  MultiHeadAttention self_attn;
  Norm ln_self;
  MultiHeadAttention cross_attn;
  Norm ln_cross;
  std::optional<MultiHeadAttention> discourse_attn;
  std::optional<MultiHeadAttention> action_attn;
  std::optional<FeedForward> fusion;  // 2d -> d (parallel) or d -> d (single graph)
  std::optional<Tensor> rezero_alpha;  // [1]
  Norm ln_graph;
  FeedForward ffn;
  Norm ln_ffn;

  static DecoderLayer create(ParamStore& store, const std::string& name, const DecoderConfig& cfg,
                             std::uint64_t seed) {
    const std::size_t d = cfg.model_dim;
    DecoderLayer l;
    l.self_attn = MultiHeadAttention::create(store, name + ".self_attn", d, cfg.decoder_heads, seed);
    l.ln_self = Norm::create(store, name + ".ln_self", d);
    l.cross_attn = MultiHeadAttention::create(store, name + ".cross_attn", d, cfg.decoder_heads, seed);
    l.ln_cross = Norm::create(store, name + ".ln_cross", d);
    l.ln_graph = Norm::create(store, name + ".ln_graph", d);
    l.ffn = FeedForward::create(store, name + ".ffn", d, cfg.ffn_dim, d, seed);
    l.ln_ffn = Norm::create(store, name + ".ln_ffn", d);
    const FusionStrategy f = cfg.fusion_strategy;
    if (uses_discourse(f)) {
      l.discourse_attn = MultiHeadAttention::create(store, name + ".discourse_attn", d, cfg.graph_attn_heads, seed);
    }
    if (uses_action(f)) {
      l.action_attn = MultiHeadAttention::create(store, name + ".action_attn", d, cfg.graph_attn_heads, seed);
    }
    if (f == FusionStrategy::kParallel) {
      l.fusion = FeedForward::create(store, name + ".fusion", 2 * d, d, d, seed);
    } else if (f == FusionStrategy::kDiscourseOnly || f == FusionStrategy::kActionOnly) {
      l.fusion = FeedForward::create(store, name + ".fusion", d, d, d, seed);
    }
    if (f != FusionStrategy::kNone) {
      l.rezero_alpha = store.add(name + ".rezero_alpha", Tensor::full({1}, cfg.rezero_init));
    }
    return l;
  }
};

struct SummaryDecoder {
  Tensor token_embedding;  // shared with the utterance encoder
  std::vector<DecoderLayer> layers;
  Tensor output_proj;  // W_p, [d, vocab]
};

// Attention probabilities recorded per layer for inspection.
struct DecoderTrace {
  std::vector<AttentionTrace> self_attn, cross_attn, discourse_attn, action_attn;
};

namespace detail {

inline Tensor graph_attend(const MultiHeadAttention& attn, const Tensor& query, const EncodedGraph& g,
                           AttentionTrace* trace) {
  if (g.node_states.dim(0) == 0) logging::debug("graph cross-attention over an empty node set; contributing zeros");
  return attn(query, g.node_states, nullptr, trace);
}

}  // namespace detail

// x^D and x^A attend from xU independently; x^S = FFN([x^D || x^A]).
// Single-graph layers use x^S = FFN(x^D) or FFN(x^A).
inline Tensor fuse_parallel(const Tensor& xU, const EncodedGraph* gD, const EncodedGraph* gA, const DecoderLayer& layer,
                            DecoderTrace* trace = nullptr) {
  if (!layer.fusion) throw ShapeError("fuse_parallel: layer has no fusion network");
  std::vector<Tensor> parts;
  if (layer.discourse_attn) {
    if (!gD) throw ShapeError("fuse_parallel: discourse graph required");
    parts.push_back(detail::graph_attend(*layer.discourse_attn, xU, *gD,
                                         trace ? &trace->discourse_attn.emplace_back() : nullptr));
  }
  if (layer.action_attn) {
    if (!gA) throw ShapeError("fuse_parallel: action graph required");
    parts.push_back(
        detail::graph_attend(*layer.action_attn, xU, *gA, trace ? &trace->action_attn.emplace_back() : nullptr));
  }
  return (*layer.fusion)(parts.size() == 1 ? parts[0] : concat_last(parts));
}

enum class GraphOrder { kDiscourseFirst, kActionFirst };

// t = xU + Attn_first(xU); x^S = Attn_second(t).
inline Tensor fuse_sequential(const Tensor& xU, const EncodedGraph& gD, const EncodedGraph& gA,
                              const DecoderLayer& layer, GraphOrder order, DecoderTrace* trace = nullptr) {
  if (!layer.discourse_attn || !layer.action_attn) throw ShapeError("fuse_sequential: layer lacks graph attentions");
  AttentionTrace* td = trace ? &trace->discourse_attn.emplace_back() : nullptr;
  AttentionTrace* ta = trace ? &trace->action_attn.emplace_back() : nullptr;
  if (order == GraphOrder::kDiscourseFirst) {
    Tensor t = add(xU, detail::graph_attend(*layer.discourse_attn, xU, gD, td));
    return detail::graph_attend(*layer.action_attn, t, gA, ta);
  }
  Tensor t = add(xU, detail::graph_attend(*layer.action_attn, xU, gA, ta));
  return detail::graph_attend(*layer.discourse_attn, t, gD, td);
}

inline Tensor decoder_layer(const Tensor& y, const EncodedConversation& enc, const EncodedGraph* gD,
                            const EncodedGraph* gA, const DecoderLayer& layer, const Mask& causal,
                            const DecoderConfig& cfg, const ForwardContext& ctx, DecoderTrace* trace = nullptr) {
  const std::size_t T = y.dim(0);
  if (causal.shape != Shape{T, T}) throw ShapeError("decoder_layer: causal mask must be [T, T]");
  if (enc.token_mask.size() != enc.token_states.dim(0)) throw ShapeError("decoder_layer: token mask length mismatch");
  const FusionStrategy f = cfg.fusion_strategy;
  if (uses_discourse(f) && !gD) throw ShapeError("decoder_layer: fusion strategy needs the discourse graph");
  if (uses_action(f) && !gA) throw ShapeError("decoder_layer: fusion strategy needs the action graph");

  Tensor sa = layer.self_attn(y, y, &causal, trace ? &trace->self_attn.emplace_back() : nullptr);
  Tensor x1 = layer.ln_self(add(y, ctx.drop(sa)));
  const Mask memory_mask{{1, enc.token_mask.size()}, enc.token_mask};
  Tensor ca = layer.cross_attn(x1, enc.token_states, &memory_mask, trace ? &trace->cross_attn.emplace_back() : nullptr);
  Tensor xU = layer.ln_cross(add(x1, ctx.drop(ca)));

  Tensor fused = xU;
  if (f != FusionStrategy::kNone) {
    Tensor xS;
    switch (f) {
      case FusionStrategy::kSequentialDiscourseFirst:
        xS = fuse_sequential(xU, *gD, *gA, layer, GraphOrder::kDiscourseFirst, trace);
        break;
      case FusionStrategy::kSequentialActionFirst:
        xS = fuse_sequential(xU, *gD, *gA, layer, GraphOrder::kActionFirst, trace);
        break;
      default:
        xS = fuse_parallel(xU, gD, gA, layer, trace);
        break;
    }
    fused = add(xU, mul(*layer.rezero_alpha, ctx.drop(xS)));
  }
  Tensor x2 = layer.ln_graph(fused);
  return layer.ln_ffn(add(x2, ctx.drop(layer.ffn(x2))));
}

inline Tensor project_logits(const Tensor& states, const Tensor& output_proj) {
  if (states.rank() != 2 || output_proj.rank() != 2 || states.dim(1) != output_proj.dim(0)) {
    throw ShapeError("project_logits: states " + shape_str(states.shape()) + " vs W_p " +
                     shape_str(output_proj.shape()));
  }
  return matmul(states, output_proj);
}

// Teacher-forcing-compatible decoder pass: logits for every prefix position
// in one causal-masked pass. prefix[0] must be the summary-start token.
inline Tensor decode_forward(const std::vector<TokenId>& prefix, const EncodedConversation& enc,
                             const EncodedGraph* gD, const EncodedGraph* gA, const SummaryDecoder& params,
                             const DecoderConfig& cfg, const ForwardContext& ctx, DecoderTrace* trace = nullptr) {
  if (prefix.empty() || prefix.front() != Vocabulary::kSummaryStart) {
    throw ShapeError("decode_forward: prefix must start with the summary-start token");
  }
  const std::size_t vocab = params.token_embedding.dim(0);
  for (TokenId id : prefix) {
    if (id >= vocab) throw ShapeError("decode_forward: token id out of range");
  }
  const std::size_t T = prefix.size();
  Tensor y = add(gather_rows(params.token_embedding, prefix), sinusoidal_positions(T, cfg.model_dim));
  y = ctx.drop(y);
  const Mask causal = Mask::causal(T);
  for (const auto& layer : params.layers) y = decoder_layer(y, enc, gD, gA, layer, causal, cfg, ctx, trace);
  return project_logits(y, params.output_proj);
}

}  // namespace structsum

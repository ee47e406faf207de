#pragma once

// Utterance encoder and the two structured graph encoders.
//
// The utterance encoder is a post-norm transformer over the whole
// conversation flattened as  u_0 <sep> u_1 <sep> ... u_m, each u_i starting
// with the utterance-start token; the state at that token represents u_i.
//
// A structured GAT layer scores each message j -> i per head as
//   LeakyReLU_0.2( a_self . W v_i + a_nbr . W v_j + a_rel . R[rel(i, j)] )
// which equals a^T [W v_i || W v_j || W_e e_ij] with a split in three and
// W_e e_ij the relation's embedding row. Scores are softmax-normalized over
// the neighbors of i, messages W v_j are summed with those weights and ELU
// is applied. Heads are concatenated on inner layers and averaged on the
// last one.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "structsum/config.hpp"
#include "structsum/graphs.hpp"
#include "structsum/layers.hpp"
#include "structsum/text.hpp"

namespace structsum {

struct EncoderLayer {
  MultiHeadAttention self_attn;
  Norm ln_attn;
  FeedForward ffn;
  Norm ln_ffn;

  static EncoderLayer create(ParamStore& store, const std::string& name, const EncoderConfig& cfg, std::uint64_t seed) {
    return {MultiHeadAttention::create(store, name + ".self_attn", cfg.model_dim, cfg.encoder_heads, seed),
            Norm::create(store, name + ".ln_attn", cfg.model_dim),
            FeedForward::create(store, name + ".ffn", cfg.model_dim, cfg.ffn_dim, cfg.model_dim, seed),
            Norm::create(store, name + ".ln_ffn", cfg.model_dim)};
  }
};

struct UtteranceEncoder {
  Tensor token_embedding;  // [vocab, d], shared with the decoder
  std::vector<EncoderLayer> layers;
};

struct EncodedConversation {
  Tensor token_states;                    // [L, d]
  std::vector<std::uint8_t> token_mask;   // 1 = real token
  std::vector<std::size_t> utterance_offsets;
  Tensor utterance_anchor_states;         // [m + 1, d], rows of token_states at the offsets
};

struct FlatConversation {
  std::vector<TokenId> ids;
  std::vector<std::size_t> utterance_offsets;
};

inline FlatConversation flatten_conversation(const Conversation& conv) {
  FlatConversation flat;
  for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
    const auto& u = conv.utterances[i];
    if (u.tokens.empty() || u.tokens.front() != Vocabulary::kUtteranceStart) {
      throw ShapeError("encode_utterances: utterance " + std::to_string(i) + " is not tokenized");
    }
    if (i > 0) flat.ids.push_back(Vocabulary::kSeparator);
    flat.utterance_offsets.push_back(flat.ids.size());
    flat.ids.insert(flat.ids.end(), u.tokens.begin(), u.tokens.end());
  }
  return flat;
}

// Transformer encoder over one id sequence. `key_mask` (optional, 1 keeps)
// hides padded positions from every attention.
inline Tensor encode_tokens(const std::vector<TokenId>& ids, const std::vector<std::uint8_t>* key_mask,
                            const UtteranceEncoder& params, const EncoderConfig& cfg, const ForwardContext& ctx) {
  const std::size_t vocab = params.token_embedding.dim(0);
  if (ids.empty()) throw ShapeError("encode_tokens: empty sequence");
  if (ids.size() > cfg.max_positions) {
    throw ShapeError("encode_tokens: length " + std::to_string(ids.size()) + " exceeds max_positions " +
                     std::to_string(cfg.max_positions));
  }
  for (TokenId id : ids) {
    if (id >= vocab) throw ShapeError("encode_tokens: token id " + std::to_string(id) + " >= vocabulary size");
  }
  std::optional<Mask> mask;
  if (key_mask) {
    if (key_mask->size() != ids.size()) throw ShapeError("encode_tokens: mask length differs from sequence");
    mask = Mask{{1, ids.size()}, *key_mask};
  }
  Tensor x = add(gather_rows(params.token_embedding, ids), sinusoidal_positions(ids.size(), cfg.model_dim));
  x = ctx.drop(x);
  for (const auto& layer : params.layers) {
    Tensor a = layer.self_attn(x, x, mask ? &*mask : nullptr);
    x = layer.ln_attn(add(x, ctx.drop(a)));
    Tensor f = layer.ffn(x);
    x = layer.ln_ffn(add(x, ctx.drop(f)));
  }
  return x;
}

inline EncodedConversation encode_utterances(const Conversation& conv, const UtteranceEncoder& params,
                                             const EncoderConfig& cfg, const ForwardContext& ctx) {
  FlatConversation flat = flatten_conversation(conv);
  EncodedConversation enc;
  enc.token_states = encode_tokens(flat.ids, nullptr, params, cfg, ctx);
  enc.token_mask.assign(flat.ids.size(), 1);
  enc.utterance_offsets = flat.utterance_offsets;
  enc.utterance_anchor_states = gather_rows(enc.token_states, flat.utterance_offsets);
  return enc;
}

// Discourse node i starts from the utterance-start state of utterance i.
inline Tensor init_discourse_nodes(const EncodedConversation& enc, const DiscourseGraph& g) {
  if (g.node_count != enc.utterance_offsets.size()) {
    throw ShapeError("init_discourse_nodes: graph has " + std::to_string(g.node_count) + " nodes for " +
                     std::to_string(enc.utterance_offsets.size()) + " utterances");
  }
  return enc.utterance_anchor_states;
}

// Each action node phrase is encoded on its own as [<s>] + tokens and its
// output states are averaged. Returns [nodes, d] (zero rows for an empty graph).
inline Tensor init_action_nodes(const ActionGraph& g, const UtteranceEncoder& params, const EncoderConfig& cfg,
                                const Vocabulary& vocab, const ForwardContext& ctx) {
  if (g.nodes.empty()) return Tensor::zeros({0, cfg.model_dim});
  std::vector<Tensor> rows;
  rows.reserve(g.nodes.size());
  for (const auto& node : g.nodes) {
    if (node.surface.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw ShapeError("init_action_nodes: empty node surface");
    }
    std::vector<TokenId> ids{Vocabulary::kUtteranceStart};
    for (TokenId id : vocab.encode(node.surface)) ids.push_back(id);
    Tensor states = encode_tokens(ids, nullptr, params, cfg, ctx);
    Tensor avg = Tensor::full({1, ids.size()}, 1.0 / static_cast<double>(ids.size()));
    rows.push_back(matmul(avg, states));
  }
  return concat_rows(rows);
}

// ------------------------------------------------------------------- GAT

struct GatLayer {
  Tensor w;               // [in, heads * head_dim]
  Tensor att_self;        // [heads, head_dim]
  Tensor att_neighbor;    // [heads, head_dim]
  Tensor att_relation;    // [heads, relation_dim]
  Tensor relation_embed;  // [relations, relation_dim]
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  bool concat = true;

  static GatLayer create(ParamStore& store, const std::string& name, std::size_t in, std::size_t heads,
                         std::size_t head_dim, bool concat, std::size_t relations, std::size_t relation_dim,
                         std::uint64_t seed) {
    GatLayer l;
    l.heads = heads;
    l.head_dim = head_dim;
    l.concat = concat;
    auto r1 = param_rng(seed, name + ".w");
    l.w = store.add(name + ".w", xavier_uniform({in, heads * head_dim}, in, heads * head_dim, r1));
    auto r2 = param_rng(seed, name + ".att_self");
    l.att_self = store.add(name + ".att_self", xavier_uniform({heads, head_dim}, head_dim, 1, r2));
    auto r3 = param_rng(seed, name + ".att_neighbor");
    l.att_neighbor = store.add(name + ".att_neighbor", xavier_uniform({heads, head_dim}, head_dim, 1, r3));
    auto r4 = param_rng(seed, name + ".att_relation");
    l.att_relation = store.add(name + ".att_relation", xavier_uniform({heads, relation_dim}, relation_dim, 1, r4));
    auto r5 = param_rng(seed, name + ".relation_embed");
    l.relation_embed =
        store.add(name + ".relation_embed", xavier_uniform({relations, relation_dim}, relations, relation_dim, r5));
    return l;
  }

  std::size_t out_dim() const { return concat ? heads * head_dim : head_dim; }
};

// Attention coefficients of one GAT layer, [E, heads], aligned with the
// adjacency's message list.
struct GatTrace {
  std::vector<Tensor> alphas;
};

inline Tensor gat_layer(const Tensor& nodes, const GraphAdjacency& adj, const GatLayer& p, GatTrace* trace = nullptr) {
  const std::size_t N = nodes.dim(0);
  if (N != adj.node_count) throw ShapeError("gat_layer: node tensor does not match adjacency");
  std::vector<std::uint8_t> has_neighbor(N, 0);
  for (std::size_t e = 0; e < adj.edge_count(); ++e) {
    if (adj.relation[e] >= p.relation_embed.dim(0)) throw ShapeError("gat_layer: relation id out of range");
    has_neighbor[adj.receiver[e]] = 1;
  }
  for (std::size_t i = 0; i < N; ++i) {
    if (!has_neighbor[i]) throw ShapeError("gat_layer: node " + std::to_string(i) + " has no neighbors");
  }
  const std::size_t H = p.heads, F = p.head_dim, E = adj.edge_count();
  Tensor projected = reshape(matmul(nodes, p.w), {N, H, F});
  Tensor score_self = sum_last(mul(projected, p.att_self));         // [N, H]
  Tensor score_nbr = sum_last(mul(projected, p.att_neighbor));      // [N, H]
  Tensor score_rel = matmul(p.relation_embed, transpose(p.att_relation));  // [R, H]
  Tensor scores = add(add(gather_rows(score_self, adj.receiver), gather_rows(score_nbr, adj.sender)),
                      gather_rows(score_rel, adj.relation));
  Tensor alpha = segment_softmax(leaky_relu(scores, 0.2), adj.receiver, N);  // [E, H]
  if (trace) trace->alphas.push_back(alpha);
  Tensor messages = mul(gather_rows(projected, adj.sender), reshape(alpha, {E, H, 1}));
  Tensor agg = reshape(scatter_add_rows(messages, adj.receiver, N), {N, H * F});
  Tensor combined;
  if (p.concat || H == 1) {
    combined = agg;
  } else {
    combined = slice_last(agg, 0, F);
    for (std::size_t h = 1; h < H; ++h) combined = add(combined, slice_last(agg, h * F, F));
    combined = scale(combined, 1.0 / static_cast<double>(H));
  }
  return elu(combined);
}

struct GraphEncoder {
  std::vector<GatLayer> layers;

  static GraphEncoder create(ParamStore& store, const std::string& name, const EncoderConfig& cfg,
                             std::size_t relations, std::uint64_t seed) {
    GraphEncoder g;
    for (std::size_t l = 0; l < cfg.gat_layers; ++l) {
      const bool last = l + 1 == cfg.gat_layers;
      const std::size_t head_dim = last ? cfg.model_dim : cfg.model_dim / cfg.gat_heads;
      g.layers.push_back(GatLayer::create(store, name + ".layer" + std::to_string(l), cfg.model_dim, cfg.gat_heads,
                                          head_dim, !last, relations, cfg.relation_embed_dim, seed));
    }
    return g;
  }
};

struct EncodedGraph {
  Tensor node_states;  // [nodes, d]
  GraphAdjacency adjacency;
};

// Stacked GAT layers, each followed by dropout and a residual connection.
inline EncodedGraph encode_graph(const Tensor& init_nodes, const GraphAdjacency& adj, const GraphEncoder& params,
                                 const ForwardContext& ctx, GatTrace* trace = nullptr) {
  if (params.layers.empty()) throw ShapeError("encode_graph: at least one GAT layer required");
  Tensor h = init_nodes;
  if (adj.node_count > 0) {
    for (const auto& layer : params.layers) h = add(h, ctx.drop(gat_layer(h, adj, layer, trace)));
  }
  return {h, adj};
}

}  // namespace structsum

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "structsum/config.hpp"
#include "structsum/decoder.hpp"
#include "structsum/encoder.hpp"
#include "structsum/graphs.hpp"
#include "structsum/pov.hpp"
#include "structsum/svo.hpp"
#include "structsum/text.hpp"

namespace structsum {

// One training/inference unit: a tokenized conversation, its two graphs and
// the summary target ([<sum>] + tokens + [</s>], empty when unknown).
struct Example {
  Conversation conversation;
  DiscourseGraph discourse;
  ActionGraph action;
  std::vector<TokenId> target;
};

struct ExampleOptions {
  bool naive_svo = false;  // extract triples from POV-rewritten turns instead of annotations
  std::optional<std::uint64_t> random_discourse_seed;  // random-graph ablation
};

inline std::vector<ActionTriple> action_triples_for(const CorpusRecord& record, bool naive_svo) {
  const AnnotationBundle empty;
  const AnnotationBundle& a = record.annotations ? *record.annotations : empty;
  if (!naive_svo) return a.action_triples;
  return naive_svo_extract(transform_pov(record.conversation, a.coref_clusters));
}

inline Example make_example(const CorpusRecord& record, const Vocabulary& vocab, const ExampleOptions& opts = {}) {
  Example ex;
  ex.conversation = tokenize(record.conversation, vocab);
  const std::vector<DiscourseEdge> no_edges;
  ex.discourse = build_discourse_graph(record.conversation,
                                       record.annotations ? record.annotations->discourse_edges : no_edges);
  if (opts.random_discourse_seed) {
    ex.discourse = random_graph(ex.discourse, *opts.random_discourse_seed ^ fnv1a64(record.conversation.id));
  }
  ex.action = build_action_graph(action_triples_for(record, opts.naive_svo));
  if (record.conversation.reference_summary) ex.target = summary_target(*record.conversation.reference_summary, vocab);
  return ex;
}

// Parameter-name test for the "newly added modules" optimizer group: both
// graph encoders, the graph cross-attentions, the fusion networks and the
// ReZero scalars.
inline bool is_new_module_param(const std::string& name) {
  return name.rfind("gat_", 0) == 0 || name.find(".discourse_attn.") != std::string::npos ||
         name.find(".action_attn.") != std::string::npos || name.find(".fusion.") != std::string::npos ||
         name.ends_with(".rezero_alpha");
}

class Model {
 public:
  Model(Config config, Vocabulary vocab, std::uint64_t seed) : config_(std::move(config)), vocab_(std::move(vocab)) {
    config_.validate();
    const std::size_t d = config_.encoder.model_dim;
    const std::size_t V = vocab_.size();
    {
      auto rng = param_rng(seed, "embed.tokens");
      embedding_ = store_.add("embed.tokens", Tensor::randn({V, d}, rng, 1.0));
    }
    encoder_.token_embedding = embedding_;
    for (std::size_t l = 0; l < config_.encoder.encoder_layers; ++l)
      encoder_.layers.push_back(
          EncoderLayer::create(store_, "encoder.layer" + std::to_string(l), config_.encoder, seed));
    const FusionStrategy f = config_.decoder.fusion_strategy;
    if (uses_discourse(f)) {
      gat_discourse_ = GraphEncoder::create(store_, "gat_discourse", config_.encoder,
                                            discourse_relation_vocab(config_.encoder.gat_reverse_edges), seed);
    }
    if (uses_action(f)) {
      gat_action_ = GraphEncoder::create(store_, "gat_action", config_.encoder, kActionRelationCount, seed);
    }
    decoder_.token_embedding = embedding_;
    for (std::size_t l = 0; l < config_.decoder.decoder_layers; ++l)
      decoder_.layers.push_back(
          DecoderLayer::create(store_, "decoder.layer" + std::to_string(l), config_.decoder, seed));
    {
      auto rng = param_rng(seed, "output_proj");
      decoder_.output_proj = store_.add("output_proj", xavier_uniform({d, V}, d, V, rng));
    }
  }

  // Parameters share storage with the store, so copies would alias.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const Config& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const UtteranceEncoder& utterance_encoder() const { return encoder_; }
  const std::optional<GraphEncoder>& discourse_encoder() const { return gat_discourse_; }
  const std::optional<GraphEncoder>& action_encoder() const { return gat_action_; }
  const SummaryDecoder& decoder() const { return decoder_; }
  SummaryDecoder& decoder() { return decoder_; }

  std::vector<double> rezero_alphas() const {
    std::vector<double> out;
    for (const auto& l : decoder_.layers)
      if (l.rezero_alpha) out.push_back(l.rezero_alpha->item());
    return out;
  }

  ForwardContext context(bool train, Rng* rng) const {
    return {train, rng, train ? config_.encoder.dropout : 0.0};
  }

  struct Encoded {
    EncodedConversation conversation;
    std::optional<EncodedGraph> discourse;
    std::optional<EncodedGraph> action;
  };

  Encoded encode(const Example& ex, const ForwardContext& ctx, GatTrace* discourse_trace = nullptr,
                 GatTrace* action_trace = nullptr) const {
    Encoded out;
    out.conversation = encode_utterances(ex.conversation, encoder_, config_.encoder, ctx);
    if (gat_discourse_) {
      Tensor init = init_discourse_nodes(out.conversation, ex.discourse);
      out.discourse = encode_graph(init, discourse_adjacency(ex.discourse, config_.encoder.gat_reverse_edges),
                                   *gat_discourse_, ctx, discourse_trace);
    }
    if (gat_action_) {
      Tensor init = init_action_nodes(ex.action, encoder_, config_.encoder, vocab_, ctx);
      out.action = encode_graph(init, action_adjacency(ex.action), *gat_action_, ctx, action_trace);
    }
    return out;
  }

  Tensor decode(const std::vector<TokenId>& prefix, const Encoded& enc, const ForwardContext& ctx,
                DecoderTrace* trace = nullptr) const {
    return decode_forward(prefix, enc.conversation, enc.discourse ? &*enc.discourse : nullptr,
                          enc.action ? &*enc.action : nullptr, decoder_, config_.decoder, ctx, trace);
  }

  // Teacher-forced logits: positions predict target[1..], fed target[..L-1].
  Tensor forward(const Example& ex, const ForwardContext& ctx) const {
    if (ex.target.size() < 2) throw ShapeError("Model::forward: target needs at least two tokens");
    const std::vector<TokenId> prefix(ex.target.begin(), ex.target.end() - 1);
    return decode(prefix, encode(ex, ctx), ctx);
  }

 private:
  Config config_;
  Vocabulary vocab_;
  ParamStore store_;
  Tensor embedding_;
  UtteranceEncoder encoder_;
  std::optional<GraphEncoder> gat_discourse_;
  std::optional<GraphEncoder> gat_action_;
  SummaryDecoder decoder_;
};

}  // namespace structsum

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "../support/reference.hpp"
#include "structsum/gradcheck_suite.hpp"
#include "structsum/micro.hpp"
#include "structsum/model.hpp"
#include "structsum/training.hpp"

namespace structsum {
namespace {

constexpr FusionStrategy kAllStrategies[] = {
    FusionStrategy::kParallel,      FusionStrategy::kSequentialDiscourseFirst, FusionStrategy::kSequentialActionFirst,
    FusionStrategy::kDiscourseOnly, FusionStrategy::kActionOnly,               FusionStrategy::kNone};

struct Instance {
  Vocabulary vocab = micro::vocabulary();
  CorpusRecord record;
  Example example;
};

Instance instance(std::uint64_t seed, std::size_t turns = 4) {
  Instance in;
  Rng rng(seed);
  in.record = micro::record(rng, turns, 3);
  in.example = make_example(in.record, in.vocab);
  return in;
}

Tensor eval_logits(const Model& m, const Example& ex) {
  NoGradGuard g;
  return m.forward(ex, m.context(false, nullptr));
}

TEST(Attention, MatchesDenseReferenceWithAndWithoutMask) {
  Rng rng(1);
  for (std::size_t heads : {1, 2, 4}) {
    ParamStore store;
    const auto attn = MultiHeadAttention::create(store, "a", 8, heads, 5);
    const Tensor q = Tensor::randn({5, 8}, rng), m = Tensor::randn({7, 8}, rng);
    const Mask mask = Mask::causal(7);
    const Tensor sq = Tensor::randn({7, 8}, rng);
    EXPECT_LT(reference::max_abs_diff(reference::attention(store, "a", reference::of(q), reference::of(m), heads),
                                      attn(q, m)),
              1e-12);
    EXPECT_LT(reference::max_abs_diff(
                  reference::attention(store, "a", reference::of(sq), reference::of(sq), heads,
                                       [](std::size_t i, std::size_t j) { return j <= i; }),
                  attn(sq, sq, &mask)),
              1e-12);
  }
}

TEST(Attention, EmptyMemoryGivesZeros) {
  ParamStore store;
  const auto attn = MultiHeadAttention::create(store, "a", 4, 2, 1);
  const Tensor out = attn(Tensor::full({3, 4}, 1.0), Tensor::zeros({0, 4}));
  EXPECT_EQ(out.shape(), (Shape{3, 4}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Gat, MatchesDenseMaskedReferenceOnRandomGraphs) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    GraphAdjacency adj;
    adj.node_count = n;
    adj.relation_count = 5;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i == j || rng.uniform() < 0.3) adj.add(i, j, i == j ? 4 : rng.below(4));
    const bool concat = trial % 2 == 0;
    const std::size_t heads = 1 + trial % 3;
    ParamStore store;
    const auto layer = GatLayer::create(store, "g", 6, heads, concat ? 2 : 6, concat, 5, 3, 100 + trial);
    const Tensor x = Tensor::randn({n, 6}, rng);
    const auto want = reference::gat(store, "g", reference::of(x), reference::densify(adj), heads, concat);
    EXPECT_LT(reference::max_abs_diff(want, gat_layer(x, adj, layer)), 1e-12) << "trial " << trial;
  }
}

TEST(Gat, AttentionRowsSumToOnePerReceiver) {
  Instance in = instance(3);
  Model m(micro::config(), in.vocab, 1);
  GatTrace trace;
  NoGradGuard g;
  m.encode(in.example, m.context(false, nullptr), &trace, nullptr);
  const auto adj = discourse_adjacency(in.example.discourse);
  ASSERT_EQ(trace.alphas.size(), 2u);
  const Tensor& a = trace.alphas[0];
  std::vector<double> sums(adj.node_count * a.dim(1), 0.0);
  for (std::size_t e = 0; e < adj.edge_count(); ++e)
    for (std::size_t h = 0; h < a.dim(1); ++h) sums[adj.receiver[e] * a.dim(1) + h] += a.at({e, h});
  for (double s : sums) EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Gat, IsolatedNodeIsRejected) {
  ParamStore store;
  const auto layer = GatLayer::create(store, "g", 2, 1, 2, true, 2, 2, 1);
  GraphAdjacency adj;
  adj.node_count = 2;
  adj.relation_count = 2;
  adj.add(0, 0, 1);
  EXPECT_THROW(gat_layer(Tensor::zeros({2, 2}), adj, layer), ShapeError);
}

TEST(Model, WholeForwardMatchesIndependentReferenceForEveryStrategy) {
  for (std::uint64_t seed : {1, 2, 3}) {
    Instance in = instance(seed, 3 + seed);
    for (FusionStrategy f : kAllStrategies) {
      Model m(micro::config(f), in.vocab, seed);
      // Move alphas away from their init so the fusion branch is exercised.
      for (std::size_t i = 0; i < m.params().size(); ++i)
        if (m.params().names()[i].ends_with(".rezero_alpha")) m.params().tensors()[i].mutable_data()[0] = 0.7;
      const auto enc = reference::encode(m.params(), m.config(), in.vocab, in.example);
      const std::vector<TokenId> prefix(in.example.target.begin(), in.example.target.end() - 1);
      const auto want = reference::decode(m.params(), m.config(), enc, prefix);
      EXPECT_LT(reference::max_abs_diff(want, eval_logits(m, in.example)), 1e-9) << fusion_name(f) << " seed " << seed;
    }
  }
}

TEST(Model, GraphCrossAttentionsMatchDenseReference) {
  Instance in = instance(4);
  Model m(micro::config(FusionStrategy::kParallel), in.vocab, 4);
  NoGradGuard g;
  const auto ctx = m.context(false, nullptr);
  const auto enc = m.encode(in.example, ctx);
  const auto ref = reference::encode(m.params(), m.config(), in.vocab, in.example);
  EXPECT_LT(reference::max_abs_diff(ref.tokens, enc.conversation.token_states), 1e-9);
  EXPECT_LT(reference::max_abs_diff(ref.discourse, enc.discourse->node_states), 1e-9);
  EXPECT_LT(reference::max_abs_diff(ref.action, enc.action->node_states), 1e-9);
  Rng rng(5);
  const Tensor q = Tensor::randn({4, 16}, rng);
  const auto& layer = m.decoder().layers[1];
  EXPECT_LT(reference::max_abs_diff(reference::attention(m.params(), "decoder.layer1.cross_attn", reference::of(q),
                                                         ref.tokens, 2),
                                    layer.cross_attn(q, enc.conversation.token_states)),
            1e-9);
  EXPECT_LT(reference::max_abs_diff(reference::attention(m.params(), "decoder.layer1.discourse_attn", reference::of(q),
                                                         ref.discourse, 2),
                                    layer.discourse_attn->operator()(q, enc.discourse->node_states)),
            1e-9);
  EXPECT_LT(reference::max_abs_diff(reference::attention(m.params(), "decoder.layer1.action_attn", reference::of(q),
                                                         ref.action, 2),
                                    layer.action_attn->operator()(q, enc.action->node_states)),
            1e-9);
}

TEST(Model, RezeroZeroEqualsNoGraphs) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Instance in = instance(seed + 10);
    Config with = micro::config(FusionStrategy::kParallel);
    with.decoder.rezero_init = 0.0;
    Model a(with, in.vocab, seed), b(micro::config(FusionStrategy::kNone), in.vocab, seed);
    EXPECT_LT(reference::max_abs_diff(reference::of(eval_logits(b, in.example)), eval_logits(a, in.example)), 1e-9);
  }
}

TEST(Model, ParametersExistOnlyForUsedModules) {
  const Vocabulary v = micro::vocabulary();
  auto has_prefix = [](const Model& m, const std::string& p) {
    for (const auto& n : m.params().names())
      if (n.find(p) != std::string::npos) return true;
    return false;
  };
  Model none(micro::config(FusionStrategy::kNone), v, 1);
  EXPECT_FALSE(has_prefix(none, "gat_"));
  EXPECT_FALSE(has_prefix(none, "rezero_alpha"));
  EXPECT_FALSE(has_prefix(none, "discourse_attn"));
  EXPECT_TRUE(none.rezero_alphas().empty());
  Model d(micro::config(FusionStrategy::kDiscourseOnly), v, 1);
  EXPECT_TRUE(has_prefix(d, "gat_discourse"));
  EXPECT_FALSE(has_prefix(d, "gat_action"));
  EXPECT_FALSE(has_prefix(d, "action_attn"));
  Model s(micro::config(FusionStrategy::kSequentialActionFirst), v, 1);
  EXPECT_FALSE(has_prefix(s, ".fusion."));
  EXPECT_EQ(s.rezero_alphas(), (std::vector<double>{1.0, 1.0}));
}

TEST(Model, SharedParametersAreIdenticalAcrossStrategies) {
  const Vocabulary v = micro::vocabulary();
  Model a(micro::config(FusionStrategy::kParallel), v, 9), b(micro::config(FusionStrategy::kNone), v, 9);
  for (std::size_t i = 0; i < b.params().size(); ++i) {
    const auto& name = b.params().names()[i];
    ASSERT_TRUE(a.params().contains(name)) << name;
    const auto x = a.params().get(name).data(), y = b.params().tensors()[i].data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end())) << name;
  }
}

TEST(Model, NewModuleGroupClassification) {
  EXPECT_TRUE(is_new_module_param("gat_discourse.layer0.w"));
  EXPECT_TRUE(is_new_module_param("decoder.layer1.discourse_attn.q.w"));
  EXPECT_TRUE(is_new_module_param("decoder.layer0.action_attn.o.b"));
  EXPECT_TRUE(is_new_module_param("decoder.layer0.fusion.in.w"));
  EXPECT_TRUE(is_new_module_param("decoder.layer0.rezero_alpha"));
  EXPECT_FALSE(is_new_module_param("decoder.layer0.cross_attn.q.w"));
  EXPECT_FALSE(is_new_module_param("decoder.layer0.ln_graph.gain"));
  EXPECT_FALSE(is_new_module_param("embed.tokens"));
}

TEST(Model, ShapeContractsAreEnforced) {
  Instance in = instance(6);
  Model m(micro::config(), in.vocab, 1);
  NoGradGuard g;
  const auto ctx = m.context(false, nullptr);
  const auto enc = m.encode(in.example, ctx);
  EXPECT_THROW(m.decode({Vocabulary::kUtteranceStart}, enc, ctx), ShapeError);
  EXPECT_THROW(m.decode({Vocabulary::kSummaryStart, 999}, enc, ctx), ShapeError);
  EXPECT_EQ(m.decode({Vocabulary::kSummaryStart, 7, 8}, enc, ctx).shape(), (Shape{3, in.vocab.size()}));
  EXPECT_THROW(init_discourse_nodes(enc.conversation, DiscourseGraph{9, {}}), ShapeError);
  Example missing = in.example;
  Model::Encoded no_graphs{enc.conversation, std::nullopt, std::nullopt};
  EXPECT_THROW(m.decode({Vocabulary::kSummaryStart}, no_graphs, ctx), ShapeError);
  Config tight = micro::config();
  tight.encoder.max_positions = 4;
  Model small(tight, in.vocab, 1);
  EXPECT_THROW(small.encode(in.example, ctx), ShapeError);
}

TEST(Model, DecoderIsCausal) {
  Instance in = instance(7);
  Model m(micro::config(), in.vocab, 2);
  NoGradGuard g;
  const auto ctx = m.context(false, nullptr);
  const auto enc = m.encode(in.example, ctx);
  const Tensor a = m.decode({Vocabulary::kSummaryStart, 7, 8}, enc, ctx);
  const Tensor b = m.decode({Vocabulary::kSummaryStart, 7, 9}, enc, ctx);
  for (std::size_t i = 0; i < 2 * in.vocab.size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
}

TEST(Model, ConversationWithoutAnnotationsStillEncodes) {
  Instance in = instance(8);
  in.record.annotations.reset();
  const Example ex = make_example(in.record, in.vocab);
  EXPECT_EQ(ex.discourse.annotated_edge_count(), 0u);
  EXPECT_TRUE(ex.action.nodes.empty());
  Model m(micro::config(), in.vocab, 1);
  EXPECT_EQ(eval_logits(m, ex).dim(1), in.vocab.size());
}

TEST(Model, FullGradientCheckOnSequentialStrategy) {
  // A sampled subset of coordinates keeps this fast; the acceptance suite
  // checks every coordinate of the parallel model.
  const auto r = model_grad_check(3, 1e-4, 1e-3, FusionStrategy::kSequentialDiscourseFirst, 13);
  EXPECT_LT(r.error, 1e-3);
}

// ------------------------------------------------------------- persistence

TEST(Checkpoint, RoundTripRestoresIdenticalLogits) {
  Instance in = instance(9);
  Model a(micro::config(), in.vocab, 1), b(micro::config(), in.vocab, 2);
  const auto path = (std::filesystem::path(testing::TempDir()) / "rt.ckpt").string();
  const CheckpointHeader header{config_hash(a.config()), 17};
  save_checkpoint(path, a.params(), header);
  const auto loaded = load_checkpoint(path, b.params());
  EXPECT_EQ(loaded.step, 17u);
  EXPECT_EQ(loaded.config_hash, header.config_hash);
  EXPECT_EQ(checkpoint_hash(a.params(), header), checkpoint_hash(b.params(), header));
  const Tensor la = eval_logits(a, in.example), lb = eval_logits(b, in.example);
  EXPECT_TRUE(std::equal(la.data().begin(), la.data().end(), lb.data().begin()));
}

TEST(Checkpoint, MismatchAndCorruptionAreDataErrors) {
  const Vocabulary v = micro::vocabulary();
  Model a(micro::config(), v, 1);
  const auto dir = std::filesystem::path(testing::TempDir());
  const auto path = (dir / "mm.ckpt").string();
  save_checkpoint(path, a.params(), {});
  Model none(micro::config(FusionStrategy::kNone), v, 1);
  EXPECT_THROW(load_checkpoint(path, none.params()), DataError);  // unexpected tensors
  Config wide = micro::config();
  wide.encoder.ffn_dim = wide.decoder.ffn_dim = 8;
  Model other(wide, v, 1);
  EXPECT_THROW(load_checkpoint(path, other.params()), DataError);
  std::ofstream((dir / "bad.ckpt").string()) << "SSUMCKP1 truncated";
  EXPECT_THROW(read_checkpoint((dir / "bad.ckpt").string()), DataError);
  EXPECT_THROW(read_checkpoint((dir / "absent.ckpt").string()), DataError);
}

TEST(Config, SerializeParseRoundTripAndPresets) {
  for (const char* name : {"micro", "paper-scale"}) {
    const Config c = *Config::preset(name);
    std::istringstream in(serialize_config(c));
    EXPECT_EQ(serialize_config(parse_config(in)), serialize_config(c)) << name;
  }
  const Config p = Config::paper_scale();
  EXPECT_EQ(p.encoder.model_dim, 768u);
  EXPECT_EQ(p.encoder.gat_heads, 2u);
  EXPECT_EQ(p.encoder.gat_layers, 2u);
  EXPECT_EQ(p.encoder.dropout, 0.2);
  EXPECT_EQ(p.train.base_lr, 3e-5);
  EXPECT_EQ(p.train.new_module_lr, 3e-4);
  EXPECT_EQ(p.train.base_warmup_steps, 120u);
  EXPECT_EQ(p.train.new_warmup_steps, 60u);
}

TEST(Config, PresetLineThenOverrides) {
  std::istringstream in("# comment\npreset = micro\nmodel_dim = 8\nfusion_strategy = sequential-action-first\n");
  const Config c = parse_config(in);
  EXPECT_EQ(c.encoder.model_dim, 8u);
  EXPECT_EQ(c.decoder.model_dim, 8u);
  EXPECT_EQ(c.decoder.fusion_strategy, FusionStrategy::kSequentialActionFirst);
  EXPECT_EQ(c.train.max_steps, Config::micro().train.max_steps);
}

TEST(Config, RejectsUnknownKeysBadValuesAndInvalidCombinations) {
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return parse_config(in);
  };
  EXPECT_THROW(parse("colour = red\n"), DataError);
  EXPECT_THROW(parse("model_dim = many\n"), DataError);
  EXPECT_THROW(parse("fusion_strategy = diagonal\n"), DataError);
  EXPECT_THROW(parse("preset = micro\nmodel_dim = 15\n"), ShapeError);  // not divisible by heads
  EXPECT_THROW(parse("model_dim = 16\npreset = micro\n"), DataError);
  EXPECT_THROW(load_config("/no/such/config.cfg"), DataError);
}

}  // namespace
}  // namespace structsum

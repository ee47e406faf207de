// Acceptance checks, one PASS/FAIL line per criterion. Exit status is
// nonzero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "../support/reference.hpp"
#include "../support/rouge_oracle.hpp"
#include "structsum/structsum.hpp"

namespace fs = std::filesystem;
using namespace structsum;

namespace {

const std::string kSource = STRUCTSUM_SOURCE_DIR;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli_call(std::vector<std::string> args) {
  args.insert(args.begin(), "structsum");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string field(const std::string& tsv, const std::string& key) {
  std::istringstream in(tsv);
  for (std::string line; std::getline(in, line);)
    if (line.rfind(key + "\t", 0) == 0) return line.substr(key.size() + 1);
  return {};
}

Tensor eval_logits(const Model& m, const Example& ex) {
  NoGradGuard g;
  return m.forward(ex, m.context(false, nullptr));
}

// ------------------------------------------------------------ criteria

Outcome gradients() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (const auto& r : op_grad_checks()) {
    worst = std::max(worst, r.error);
    o.require(r.error < 1e-6, r.name + " error " + sci(r.error));
  }
  const auto model = model_grad_check();
  const double secs = seconds_since(t0);
  o.require(model.error < 1e-3, "model error " + sci(model.error));
  o.require(secs < 120.0, "took " + sci(secs) + "s");
  if (o.pass)
    o.detail = "max op error " + sci(worst) + ", model error " + sci(model.error) + ", " + sci(secs) + "s";
  return o;
}

Outcome rezero_equivalence() {
  Outcome o;
  const Vocabulary vocab = micro::vocabulary();
  double worst = 0.0;
  Rng rng(2024);
  for (int i = 0; i < 10; ++i) {
    const Example ex = make_example(micro::record(rng, 2 + rng.below(6), 1 + rng.below(4)), vocab);
    const std::uint64_t seed = 500 + i;
    const Tensor none = eval_logits(Model(micro::config(FusionStrategy::kNone), vocab, seed), ex);
    for (FusionStrategy f : {FusionStrategy::kParallel, FusionStrategy::kSequentialDiscourseFirst,
                             FusionStrategy::kSequentialActionFirst, FusionStrategy::kDiscourseOnly,
                             FusionStrategy::kActionOnly}) {
      Config cfg = micro::config(f);
      cfg.decoder.rezero_init = 0.0;
      const double d = reference::max_abs_diff(reference::of(none), eval_logits(Model(cfg, vocab, seed), ex));
      worst = std::max(worst, d);
      o.require(d <= 1e-9, std::string(fusion_name(f)) + " instance " + std::to_string(i) + " differs by " + sci(d));
    }
  }
  if (o.pass) o.detail = "10 instances x 5 strategies, max diff " + sci(worst);
  return o;
}

Outcome dense_oracles() {
  Outcome o;
  Rng rng(31);
  double worst = 0.0;
  auto check = [&](double d, const std::string& what) {
    worst = std::max(worst, d);
    o.require(d <= 1e-9, what + " differs by " + sci(d));
  };
  // Standalone GAT layers on arbitrary relation graphs.
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    GraphAdjacency adj;
    adj.node_count = n;
    adj.relation_count = 6;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i == j || rng.uniform() < 0.35) adj.add(i, j, i == j ? 5 : rng.below(5));
    const bool concat = trial % 2 == 0;
    const std::size_t heads = 1 + trial % 3;
    ParamStore store;
    const auto layer = GatLayer::create(store, "g", 8, heads, concat ? 4 : 8, concat, 6, 3, 900 + trial);
    const Tensor x = Tensor::randn({n, 8}, rng);
    check(reference::max_abs_diff(reference::gat(store, "g", reference::of(x), reference::densify(adj), heads, concat),
                                  gat_layer(x, adj, layer)),
          "gat trial " + std::to_string(trial));
  }
  // Full encoders and the three decoder cross-attentions on random conversations.
  const Vocabulary vocab = micro::vocabulary();
  for (int trial = 0; trial < 10; ++trial) {
    const Example ex = make_example(micro::record(rng, 2 + rng.below(11), 1 + rng.below(5)), vocab);
    Model m(micro::config(), vocab, 40 + trial);
    NoGradGuard g;
    const auto enc = m.encode(ex, m.context(false, nullptr));
    const auto ref = reference::encode(m.params(), m.config(), vocab, ex);
    const std::string tag = " trial " + std::to_string(trial);
    check(reference::max_abs_diff(ref.discourse, enc.discourse->node_states), "discourse encoder" + tag);
    check(reference::max_abs_diff(ref.action, enc.action->node_states), "action encoder" + tag);
    const Tensor q = Tensor::randn({1 + rng.below(6), m.config().decoder.model_dim}, rng);
    for (std::size_t l = 0; l < m.decoder().layers.size(); ++l) {
      const auto& layer = m.decoder().layers[l];
      const std::string base = "decoder.layer" + std::to_string(l);
      const std::size_t h = m.config().decoder.decoder_heads, gh = m.config().decoder.graph_attn_heads;
      check(reference::max_abs_diff(reference::attention(m.params(), base + ".cross_attn", reference::of(q), ref.tokens, h),
                                    layer.cross_attn(q, enc.conversation.token_states)),
            "utterance cross-attention" + tag);
      check(reference::max_abs_diff(
                reference::attention(m.params(), base + ".discourse_attn", reference::of(q), ref.discourse, gh),
                (*layer.discourse_attn)(q, enc.discourse->node_states)),
            "discourse cross-attention" + tag);
      check(reference::max_abs_diff(reference::attention(m.params(), base + ".action_attn", reference::of(q), ref.action, gh),
                                    (*layer.action_attn)(q, enc.action->node_states)),
            "action cross-attention" + tag);
    }
  }
  if (o.pass) o.detail = "30 GAT graphs, 10 conversations, max diff " + sci(worst);
  return o;
}

Outcome overfit() {
  Outcome o;
  const std::string corpus = kSource + "/data/synthetic16/conversations.jsonl";
  const std::string ann = kSource + "/data/synthetic16/annotations.jsonl";
  const fs::path work = fs::temp_directory_path() / "structsum_acceptance";
  fs::remove_all(work);
  std::string hashes[2];
  double train_secs = 0.0;
  for (int run = 0; run < 2; ++run) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = cli_call({"train", "--config", kSource + "/configs/micro.cfg", "--corpus", corpus, "--annotations", ann,
                             "--out", (work / ("run" + std::to_string(run))).string()});
    train_secs = std::max(train_secs, seconds_since(t0));
    if (r.code != 0) {
      o.require(false, "train exited " + std::to_string(r.code) + ": " + r.err);
      return o;
    }
    hashes[run] = field(r.out, "checkpoint_hash");
    if (run == 0) {
      const double loss = std::stod(field(r.out, "corpus_loss"));
      o.require(loss < 0.1, "corpus loss " + sci(loss));
      o.detail = "loss " + sci(loss);
    }
  }
  o.require(!hashes[0].empty() && hashes[0] == hashes[1], "checkpoint hashes differ: " + hashes[0] + " vs " + hashes[1]);
  o.require(train_secs < 600.0, "training took " + sci(train_secs) + "s");

  // Decode in process from the saved checkpoint.
  const std::string ckpt = (work / "run0" / "checkpoint.bin").string();
  const Model model = cli::detail::load_model(ckpt);
  const auto records = load_corpus(corpus, ann);
  std::size_t exact = 0;
  std::vector<RougeTriple> scores;
  for (const auto& r : records) {
    CorpusRecord unlabeled = r;
    unlabeled.conversation.reference_summary.reset();
    const auto hyp = greedy_decode(model, make_example(unlabeled, model.vocab()), model.config().train.max_summary_len);
    const std::string text = model.vocab().detokenize(hyp.tokens);
    exact += tokenize_text(text) == tokenize_text(*r.conversation.reference_summary);
    scores.push_back(rouge_all(text, *r.conversation.reference_summary));
  }
  const auto mean = mean_rouge(scores);
  o.require(exact >= 14, std::to_string(exact) + "/16 exact");
  o.require(mean.r1.f >= 0.95, "ROUGE-1 F " + sci(mean.r1.f));

  // The CLI path must reproduce the same numbers.
  const std::string hyp_path = (work / "hyp.jsonl").string();
  const auto s = cli_call({"summarize", "--checkpoint", ckpt, "--corpus", corpus, "--annotations", ann, "--out", hyp_path});
  const auto e = cli_call({"evaluate", "--hyp", hyp_path, "--ref", corpus});
  if (s.code != 0 || e.code != 0) {
    o.require(false, "summarize/evaluate failed: " + s.err + e.err);
    return o;
  }
  std::string last;
  std::istringstream lines(e.out);
  for (std::string line; std::getline(lines, line);)
    if (!line.empty()) last = line;
  const Json footer = Json::parse(last);
  o.require(std::abs(footer["r1"][0].get<double>() - mean.r1.f) < 1e-12 &&
                std::abs(footer["r2"][0].get<double>() - mean.r2.f) < 1e-12 &&
                std::abs(footer["rl"][0].get<double>() - mean.rl.f) < 1e-12,
            "CLI ROUGE differs from in-process ROUGE");
  if (o.pass)
    o.detail += ", " + std::to_string(exact) + "/16 exact, R1 " + sci(mean.r1.f) + ", R2 " + sci(mean.r2.f) + ", RL " +
                sci(mean.rl.f) + ", hash " + hashes[0] + " twice, " + sci(train_secs) + "s per run";
  fs::remove_all(work);
  return o;
}

Outcome rouge_oracles() {
  Outcome o;
  Rng rng(77);
  auto seq = [&](std::size_t min_len) {
    oracle::Seq s(min_len + rng.below(13 - min_len));
    for (auto& x : s) x = static_cast<int>(rng.below(5));
    return s;
  };
  for (int i = 0; i < 200; ++i) {
    const auto cand = seq(0), ref = seq(1);
    for (std::size_t n : {1, 2}) {
      if (ref.size() < n) continue;
      o.require(std::abs(rouge_n(cand, ref, n).f - oracle::rouge_n_f(cand, ref, n)) < 1e-12,
                "ROUGE-" + std::to_string(n) + " pair " + std::to_string(i));
    }
    o.require(lcs_length(cand, ref) == oracle::lcs(cand, ref), "LCS pair " + std::to_string(i));
    o.require(std::abs(rouge_l(cand, ref).f - oracle::rouge_l_f(cand, ref)) < 1e-12, "ROUGE-L pair " + std::to_string(i));
  }
  const auto w = rouge_all("the cat sat", "the cat");
  o.require(std::abs(w.r1.p - 2.0 / 3.0) < 1e-15 && w.r1.r == 1.0 && std::abs(w.r1.f - 0.8) < 1e-15,
            "worked example P/R/F");
  if (o.pass) o.detail = "200 random pairs, worked example P=2/3 R=1 F=0.8";
  return o;
}

Outcome pov_example() {
  Outcome o;
  Conversation conv;
  conv.id = "pov";
  conv.utterances = {{0, "Amanda", "I'll bring it to you tomorrow", {}}, {1, "Jerry", "Thanks!", {}}};
  const auto out = transform_pov(conv, {{{0, 2, 3, "cakes"}}});
  const std::string want = "Amanda'll bring cakes to Jerry tomorrow";
  o.require(out.at(0) == want, "got \"" + out.at(0) + "\"");
  o.require(out.at(1) == "Thanks!", "second turn changed to \"" + out.at(1) + "\"");
  if (o.pass) o.detail = "\"" + want + "\"";
  return o;
}

Outcome ablation() {
  Outcome o;
  const auto corpus = load_corpus(kSource + "/data/synthetic16/conversations.jsonl",
                                  kSource + "/data/synthetic16/annotations.jsonl");
  const auto split = split_corpus(corpus, 0.25);
  Config cfg = micro::config();
  cfg.train.max_steps = 60;
  cfg.train.eval_every = 20;
  std::map<std::string, Tensor> logits;
  const std::vector<std::string> names = {
      std::string(fusion_name(FusionStrategy::kParallel)), std::string(fusion_name(FusionStrategy::kSequentialDiscourseFirst)),
      std::string(fusion_name(FusionStrategy::kSequentialActionFirst)), "random-discourse-graph", "rezero-init-0",
      "rezero-init-1"};
  const auto rows = run_ablation(split, cfg, names, [&](const AblationVariant& v, const Model& m, const std::vector<Example>& h) {
    logits[v.name] = eval_logits(m, h.front());
  });
  for (const auto& r : rows) {
    if (r.variant == "random-discourse-graph") o.require(r.edge_counts_preserved, "random graph changed edge counts");
    if (r.variant == "rezero-init-0" || r.variant == "rezero-init-1") {
      const double want = r.variant == "rezero-init-0" ? 0.0 : 1.0;
      o.require(!r.alphas_initial.empty(), r.variant + " has no alpha trace");
      for (double a : r.alphas_initial) o.require(a == want, r.variant + " starts at " + sci(a));
      bool traced = false;
      for (const auto& rec : r.trace) traced = traced || (rec.step > 0 && rec.alphas.has_value());
      o.require(traced, r.variant + " trace has no post-update samples");
    }
  }
  double min_gap = 1e300;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j) {
      const double d = reference::max_abs_diff(reference::of(logits.at(names[i])), logits.at(names[j]));
      min_gap = std::min(min_gap, d);
      o.require(d > 1e-6, names[i] + " vs " + names[j] + " logits differ by only " + sci(d));
    }
  if (o.pass) o.detail = "6 variants, min pairwise fusion logit gap " + sci(min_gap) + ", alpha traces start at 0 and 1";
  return o;
}

Outcome mini_stats() {
  Outcome o;
  const auto corpus = load_corpus(kSource + "/data/mini/conversations.jsonl", kSource + "/data/mini/annotations.jsonl");
  const auto s = corpus_stats(corpus);
  o.require(s.conversation_count == 10, "conversation count");
  o.require(s.mean_participants == 24.0 / 10.0, "participants " + sci(s.mean_participants));
  o.require(s.mean_turns == 45.0 / 10.0, "turns " + sci(s.mean_turns));
  o.require(s.mean_discourse_edges == 38.0 / 10.0, "edges " + sci(s.mean_discourse_edges));
  o.require(s.mean_action_triples == 21.0 / 10.0, "triples " + sci(s.mean_action_triples));
  const std::map<std::string, std::size_t> hand = {
      {"Comment", 4},     {"ClarificationQuestion", 4}, {"Elaboration", 2}, {"Acknowledgement", 2},
      {"Continuation", 3}, {"Explanation", 1},          {"QuestionAnswerPair", 13}, {"Alternation", 1},
      {"Result", 3},      {"Background", 1},            {"Narration", 1},   {"Correction", 1},
      {"Parallel", 2}};
  const auto dist = relation_distribution(corpus);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const std::string name(kRelationNames[i]);
    const auto it = hand.find(name);
    const std::size_t want = it == hand.end() ? 0 : it->second;
    o.require(dist[i] == want, name + " " + std::to_string(dist[i]) + " != " + std::to_string(want));
  }
  if (o.pass) o.detail = "participants 2.4, turns 4.5, edges 3.8, triples 2.1, 16 relation counts";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient checks", gradients},
      {"ReZero alpha=0 equals no graphs", rezero_equivalence},
      {"GAT and cross-attention dense oracles", dense_oracles},
      {"overfit synthetic corpus", overfit},
      {"ROUGE oracles", rouge_oracles},
      {"POV rewrite example", pov_example},
      {"ablation harness", ablation},
      {"mini corpus statistics", mini_stats},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << (i + 1) << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return all ? 0 : 1;
}

#pragma once

// Command-line entry point. Exit codes: 0 success, 1 usage error, 2 data
// error, 3 a verification command (gradcheck) found a failure.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "structsum/ablation.hpp"
#include "structsum/gradcheck_suite.hpp"
#include "structsum/graphs.hpp"
#include "structsum/model.hpp"
#include "structsum/params.hpp"
#include "structsum/rouge.hpp"
#include "structsum/text.hpp"
#include "structsum/training.hpp"

namespace structsum::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitCheckFailed = 3;

inline constexpr const char* kSchemas = R"(File formats (one JSON object per line unless noted):

  conversations   {"id": str, "turns": [{"speaker": str, "text": str}], "summary": str?}
  annotations     {"id": str,
                   "discourse_edges": [{"src": int, "dst": int, "rel": str}],
                   "coref": [[{"turn": int, "start": int, "end": int, "canon": str}]],
                   "triples": [{"who": str, "doing": str, "what": str, "turn": int}]}
                  rel is one of the 16 relation names, case-insensitive:
                    Comment ClarificationQuestion Elaboration Acknowledgement
                    Continuation Explanation Conditional QuestionAnswerPair
                    Alternation QElab Result Background Narration Correction
                    Parallel Contrast
                  coref spans index whitespace-separated words; end is exclusive
  graph dump      {"id": str, "kind": "discourse"|"action", "nodes": [...],
                   "edges": [[src, dst, rel], ...], "approximate": bool?}
  config          plain text, "key = value" per line, '#' comments,
                  optional first line "preset = micro|paper-scale"
  train report    {"step": int, "loss": float, "alphas": [float]}
  hypotheses      {"id": str, "summary": str, "tokens": [str], "log_probs": [float]}
  evaluation      {"id": str, "r1": [f,p,r], "r2": [f,p,r], "rl": [f,p,r]}
                  footer: {"id": "__mean__", "count": int, "r1": ..., "r2": ..., "rl": ...,
                           "compare": {...}?, "p_values": {"r1": p, "r2": p, "rl": p}?}
  checkpoint      binary archive "SSUMCKP1": config hash, step, then
                  (name, shape, little-endian float64 payload) per parameter;
                  vocab.txt and config.cfg sit next to it

Exit codes: 0 success, 1 usage error, 2 data error, 3 gradcheck failure.
Log verbosity: STRUCTSUM_LOG=error|warn|info|debug (default warn).
)";

// A flag value that parsed but is not acceptable.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

// Writes to `path`, or to `fallback` when path is empty.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) {
    if (!path.empty()) file_ = open_out(path);
    os_ = path.empty() ? &fallback : &file_;
  }
  std::ostream& operator*() { return *os_; }

 private:
  std::ofstream file_;
  std::ostream* os_;
};

inline std::optional<std::string> opt_path(const std::string& s) {
  return s.empty() ? std::nullopt : std::optional<std::string>(s);
}

// id -> summary from any line-delimited file whose records carry both.
inline std::vector<std::pair<std::string, std::string>> read_summaries(const std::string& path) {
  std::vector<std::pair<std::string, std::string>> out;
  std::map<std::string, bool> seen;
  structsum::detail::for_each_record(path, [&](const Json& j, std::size_t line) {
    const auto id = structsum::detail::required<std::string>(j, "id", path, line);
    const auto summary = structsum::detail::required<std::string>(j, "summary", path, line);
    if (seen[id]) throw structsum::detail::record_error(path, line, "duplicate id \"" + id + "\"");
    seen[id] = true;
    out.emplace_back(id, summary);
  });
  return out;
}

struct Sidecars {
  std::string vocab;
  std::string config;
};

inline Sidecars sidecars_for(const std::string& checkpoint) {
  const auto dir = std::filesystem::path(checkpoint).parent_path();
  return {(dir / "vocab.txt").string(), (dir / "config.cfg").string()};
}

inline Model load_model(const std::string& checkpoint) {
  const auto side = sidecars_for(checkpoint);
  if (!std::filesystem::exists(side.vocab)) throw DataError("missing vocabulary " + side.vocab);
  Config cfg = load_config(side.config);
  Model model(cfg, Vocabulary::load(side.vocab), cfg.train.seed);
  const auto header = load_checkpoint(checkpoint, model.params());
  if (header.config_hash != config_hash(cfg)) {
    throw DataError(checkpoint + ": config hash does not match " + side.config);
  }
  return model;
}

}  // namespace detail

// ------------------------------------------------------------- commands

struct BuildGraphsArgs {
  std::string corpus, annotations, out;
  bool naive_svo = false;
};

inline int build_graphs(const BuildGraphsArgs& a, std::ostream& out) {
  const auto corpus = load_corpus(a.corpus, a.annotations);
  detail::Sink sink(a.out, out);
  for (const auto& r : corpus) {
    const std::vector<DiscourseEdge> none;
    const auto dg = build_discourse_graph(r.conversation, r.annotations ? r.annotations->discourse_edges : none);
    const auto ag = build_action_graph(action_triples_for(r, a.naive_svo));
    *sink << discourse_graph_json(r.conversation.id, r.conversation, dg).dump() << '\n';
    *sink << action_graph_json(r.conversation.id, ag, a.naive_svo).dump() << '\n';
  }
  return kExitOk;
}

struct StatsArgs {
  std::string corpus, annotations;
  bool json = false;
};

inline int stats(const StatsArgs& a, std::ostream& out) {
  const auto corpus = load_corpus(a.corpus, detail::opt_path(a.annotations));
  const auto s = corpus_stats(corpus);
  const auto dist = relation_distribution(corpus);
  std::size_t total = 0;
  for (auto c : dist) total += c;
  if (a.json) {
    Json rel = Json::object();
    for (std::size_t i = 0; i < dist.size(); ++i) rel[std::string(kRelationNames[i])] = dist[i];
    Json j = {{"conversations", s.conversation_count},
              {"participants", s.mean_participants},
              {"turns", s.mean_turns},
              {"discourse_edges", s.mean_discourse_edges},
              {"action_triples", s.mean_action_triples},
              {"relations", std::move(rel)}};
    out << j.dump() << '\n';
    return kExitOk;
  }
  out << "conversations\t" << s.conversation_count << '\n'
      << "participants\t" << detail::fmt(s.mean_participants) << '\n'
      << "turns\t" << detail::fmt(s.mean_turns) << '\n'
      << "discourse_edges\t" << detail::fmt(s.mean_discourse_edges) << '\n'
      << "action_triples\t" << detail::fmt(s.mean_action_triples) << "\n\n"
      << "relation\tcount\tpercent\n";
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const double pct = total ? 100.0 * static_cast<double>(dist[i]) / static_cast<double>(total) : 0.0;
    std::ostringstream p;
    p << std::fixed << std::setprecision(2) << pct;
    out << kRelationNames[i] << '\t' << dist[i] << '\t' << p.str() << '\n';
  }
  return kExitOk;
}

struct TrainArgs {
  std::string config, corpus, annotations, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_steps;
  bool naive_svo = false;
};

inline int train_command(const TrainArgs& a, std::ostream& out) {
  Config cfg = load_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.max_steps) cfg.train.max_steps = *a.max_steps;
  cfg.validate();
  const auto corpus = load_corpus(a.corpus, a.annotations);
  std::vector<Conversation> convs;
  for (const auto& r : corpus) {
    if (!r.conversation.reference_summary) throw DataError(a.corpus + ": conversation " + r.conversation.id + " has no summary");
    convs.push_back(r.conversation);
  }
  const Vocabulary vocab = build_vocabulary(convs, cfg.train.min_freq);
  ExampleOptions opts;
  opts.naive_svo = a.naive_svo;
  std::vector<Example> examples;
  for (const auto& r : corpus) examples.push_back(make_example(r, vocab, opts));

  std::filesystem::create_directories(a.out);
  const auto dir = std::filesystem::path(a.out);
  auto report = detail::open_out((dir / "report.jsonl").string());
  Model model(cfg, vocab, cfg.train.seed);
  TrainOptions options;
  options.on_record = [&](const StepRecord& r) { report << to_json(r).dump() << '\n'; };
  const auto result = train(model, examples, cfg.train, options);

  const CheckpointHeader header{config_hash(cfg), result.records.back().step};
  const auto ckpt = (dir / "checkpoint.bin").string();
  save_checkpoint(ckpt, model.params(), header);
  vocab.save((dir / "vocab.txt").string());
  detail::open_out((dir / "config.cfg").string()) << serialize_config(cfg);
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << checkpoint_hash(model.params(), header);
  out << "checkpoint\t" << ckpt << '\n'
      << "checkpoint_hash\t" << hash.str() << '\n'
      << "final_loss\t" << detail::fmt(result.records.back().loss) << '\n'
      << "corpus_loss\t" << detail::fmt(corpus_loss(model, examples)) << '\n';
  return kExitOk;
}

struct SummarizeArgs {
  std::string checkpoint, corpus, annotations, out;
  std::optional<std::size_t> max_len;
  bool naive_svo = false;
};

inline int summarize(const SummarizeArgs& a, std::ostream& out) {
  const Model model = detail::load_model(a.checkpoint);
  const auto corpus = load_corpus(a.corpus, detail::opt_path(a.annotations));
  const std::size_t max_len = a.max_len.value_or(model.config().train.max_summary_len);
  ExampleOptions opts;
  opts.naive_svo = a.naive_svo;
  detail::Sink sink(a.out, out);
  for (const auto& r : corpus) {
    CorpusRecord unlabeled = r;
    unlabeled.conversation.reference_summary.reset();
    const Example ex = make_example(unlabeled, model.vocab(), opts);
    const auto hyp = greedy_decode(model, ex, max_len);
    Json tokens = Json::array();
    for (auto id : hyp.tokens) tokens.push_back(model.vocab().token(id));
    *sink << Json{{"id", r.conversation.id},
                  {"summary", model.vocab().detokenize(hyp.tokens)},
                  {"tokens", std::move(tokens)},
                  {"log_probs", hyp.log_probs}}
                 .dump()
          << '\n';
  }
  return kExitOk;
}

struct EvaluateArgs {
  std::string hyp, ref, compare, out;
  std::size_t permutation_iters = 10000;
  std::uint64_t seed = 1;
};

inline Json rouge_record(const std::string& id, const RougeTriple& t) {
  return {{"id", id}, {"r1", rouge_json(t.r1)}, {"r2", rouge_json(t.r2)}, {"rl", rouge_json(t.rl)}};
}

inline std::vector<RougeTriple> score_against(const std::vector<std::pair<std::string, std::string>>& hyps,
                                              const std::map<std::string, std::string>& refs,
                                              const std::string& hyp_path) {
  std::vector<RougeTriple> out;
  for (const auto& [id, summary] : hyps) {
    auto it = refs.find(id);
    if (it == refs.end()) throw DataError(hyp_path + ": no reference summary for id \"" + id + "\"");
    if (tokenize_text(it->second).empty()) throw DataError("empty reference summary for id \"" + id + "\"");
    out.push_back(rouge_all(summary, it->second));
  }
  return out;
}

inline int evaluate(const EvaluateArgs& a, std::ostream& out) {
  const auto hyps = detail::read_summaries(a.hyp);
  std::map<std::string, std::string> refs;
  for (auto& [id, s] : detail::read_summaries(a.ref)) refs[id] = s;
  const auto scores = score_against(hyps, refs, a.hyp);
  detail::Sink sink(a.out, out);
  for (std::size_t i = 0; i < hyps.size(); ++i) *sink << rouge_record(hyps[i].first, scores[i]).dump() << '\n';
  Json footer = rouge_record("__mean__", mean_rouge(scores));
  footer["count"] = scores.size();
  if (!a.compare.empty()) {
    auto others = detail::read_summaries(a.compare);
    std::map<std::string, std::string> by_id(others.begin(), others.end());
    std::vector<std::pair<std::string, std::string>> aligned;
    for (const auto& [id, s] : hyps) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError(a.compare + ": missing id \"" + id + "\"");
      aligned.emplace_back(id, it->second);
    }
    const auto other = score_against(aligned, refs, a.compare);
    Json cmp = rouge_record("__compare__", mean_rouge(other));
    cmp.erase("id");
    footer["compare"] = std::move(cmp);
    Json p = Json::object();
    const std::pair<const char*, RougeScore RougeTriple::*> metrics[] = {
        {"r1", &RougeTriple::r1}, {"r2", &RougeTriple::r2}, {"rl", &RougeTriple::rl}};
    for (const auto& [name, field] : metrics) {
      std::vector<double> xa, xb;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        xa.push_back((scores[i].*field).f);
        xb.push_back((other[i].*field).f);
      }
      try {
        p[name] = permutation_test(xa, xb, a.permutation_iters, a.seed);
      } catch (const ShapeError& e) {
        throw DataError(std::string("permutation test: ") + e.what());
      }
    }
    footer["p_values"] = std::move(p);
  }
  *sink << footer.dump() << '\n';
  return kExitOk;
}

struct AblateArgs {
  std::string config, corpus, annotations, variants, out;
  double holdout = 0.25;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_steps;
};

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = structsum::detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline int ablate(const AblateArgs& a, std::ostream& out) {
  Config cfg = load_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.max_steps) cfg.train.max_steps = *a.max_steps;
  cfg.validate();
  const auto names = split_list(a.variants);
  if (names.empty()) throw UsageError("--variants lists no variants");
  for (const auto& n : names) {
    try {
      parse_variant(n, cfg);
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  }
  const auto split = split_corpus(load_corpus(a.corpus, a.annotations), a.holdout);
  const auto rows = run_ablation(split, cfg, names);
  out << format_ablation_table(rows);
  if (!a.out.empty()) {
    auto f = detail::open_out(a.out);
    for (const auto& r : rows) f << ablation_json(r).dump() << '\n';
  }
  return kExitOk;
}

struct GradcheckArgs {
  std::uint64_t seed = 3;
  bool skip_model = false;
};

inline int gradcheck(const GradcheckArgs& a, std::ostream& out) {
  bool ok = true;
  double op_max = 0.0;
  for (const auto& r : op_grad_checks(a.seed)) {
    out << (r.passed() ? "ok  " : "FAIL") << '\t' << r.name << '\t' << detail::fmt(r.error) << '\n';
    op_max = std::max(op_max, r.error);
    ok = ok && r.passed();
  }
  out << "max_op_error\t" << detail::fmt(op_max) << "\t(eps 1e-5, tolerance 1e-6)\n";
  if (!a.skip_model) {
    const auto m = model_grad_check(a.seed);
    out << "model_error\t" << detail::fmt(m.error) << "\t(eps 1e-4, tolerance 1e-3)\n";
    ok = ok && m.passed();
  }
  out << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? kExitOk : kExitCheckFailed;
}

// ------------------------------------------------------------- dispatch

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Dialogue summarization with discourse and action graphs", "structsum"};
  app.footer(kSchemas);
  app.require_subcommand(1);

  BuildGraphsArgs bg;
  auto* c_bg = app.add_subcommand("build-graphs", "Write discourse and action graph dumps");
  c_bg->add_option("--corpus", bg.corpus, "Conversation file")->required();
  c_bg->add_option("--annotations", bg.annotations, "Annotation file")->required();
  c_bg->add_option("--out", bg.out, "Output graph dump file")->required();
  c_bg->add_flag("--use-naive-svo", bg.naive_svo, "Extract triples from POV-rewritten turns");

  StatsArgs st;
  auto* c_st = app.add_subcommand("stats", "Corpus statistics and relation distribution");
  c_st->add_option("--corpus", st.corpus, "Conversation file")->required();
  c_st->add_option("--annotations", st.annotations, "Annotation file");
  c_st->add_flag("--json", st.json, "Emit one JSON object");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a model; writes checkpoint, vocabulary, config and report");
  c_tr->add_option("--config", tr.config, "Config file")->required();
  c_tr->add_option("--corpus", tr.corpus, "Conversation file")->required();
  c_tr->add_option("--annotations", tr.annotations, "Annotation file")->required();
  c_tr->add_option("--out", tr.out, "Output directory")->required();
  c_tr->add_option("--seed", tr.seed, "Override the config seed");
  c_tr->add_option("--max-steps", tr.max_steps, "Override max_steps");
  c_tr->add_flag("--use-naive-svo", tr.naive_svo, "Extract triples from POV-rewritten turns");

  SummarizeArgs sm;
  auto* c_sm = app.add_subcommand("summarize", "Greedy-decode a summary per conversation");
  c_sm->add_option("--checkpoint", sm.checkpoint, "checkpoint.bin written by train")->required();
  c_sm->add_option("--corpus", sm.corpus, "Conversation file")->required();
  c_sm->add_option("--annotations", sm.annotations, "Annotation file");
  c_sm->add_option("--out", sm.out, "Hypothesis file (default stdout)");
  c_sm->add_option("--max-len", sm.max_len, "Maximum generated tokens");
  c_sm->add_flag("--use-naive-svo", sm.naive_svo, "Extract triples from POV-rewritten turns");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "ROUGE-1/2/L per example plus corpus mean");
  c_ev->add_option("--hyp", ev.hyp, "Hypothesis file")->required();
  c_ev->add_option("--ref", ev.ref, "Reference file (conversation file or hypothesis-shaped)")->required();
  c_ev->add_option("--compare", ev.compare, "Second hypothesis file for a paired permutation test");
  c_ev->add_option("--permutation-iters", ev.permutation_iters, "Permutation iterations")
      ->check(CLI::Range(std::size_t{100}, std::size_t{100000000}));
  c_ev->add_option("--seed", ev.seed, "Permutation seed");
  c_ev->add_option("--out", ev.out, "Output file (default stdout)");

  AblateArgs ab;
  auto* c_ab = app.add_subcommand("ablate", "Train and score several variants on a held-out split");
  c_ab->add_option("--config", ab.config, "Base config file")->required();
  c_ab->add_option("--variants", ab.variants,
                   "Comma-separated: parallel, sequential-discourse-first, sequential-action-first, "
                   "discourse-only, action-only, none, random-discourse-graph, rezero-init-0, rezero-init-1")
      ->required();
  c_ab->add_option("--corpus", ab.corpus, "Conversation file")->required();
  c_ab->add_option("--annotations", ab.annotations, "Annotation file")->required();
  c_ab->add_option("--holdout", ab.holdout, "Held-out fraction")->check(CLI::Range(0.0, 1.0));
  c_ab->add_option("--seed", ab.seed, "Override the config seed");
  c_ab->add_option("--max-steps", ab.max_steps, "Override max_steps");
  c_ab->add_option("--out", ab.out, "Per-variant JSON records with alpha traces");

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of every op and the micro model");
  c_gc->add_option("--seed", gc.seed, "Seed for inputs and parameters");
  c_gc->add_flag("--ops-only", gc.skip_model, "Skip the full-model check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*c_bg) return build_graphs(bg, out);
    if (*c_st) return stats(st, out);
    if (*c_tr) return train_command(tr, out);
    if (*c_sm) return summarize(sm, out);
    if (*c_ev) return evaluate(ev, out);
    if (*c_ab) return ablate(ab, out);
    if (*c_gc) return gradcheck(gc, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace structsum::cli

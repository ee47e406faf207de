#pragma once

// Variant-comparison harness: every variant is trained from the same seed
// and schedule on the training split and scored with ROUGE on a held-out
// split.
//
// Variant names:
//   parallel | sequential-discourse-first | sequential-action-first |
//   discourse-only | action-only | none      fusion strategy
//   random-discourse-graph                   base strategy on random discourse
//                                            graphs with per-conversation
//                                            edge counts preserved
//   rezero-init-0 | rezero-init-1            ReZero alpha initialization

#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "structsum/model.hpp"
#include "structsum/rouge.hpp"
#include "structsum/training.hpp"

namespace structsum {

struct AblationVariant {
  std::string name;
  FusionStrategy fusion = FusionStrategy::kParallel;
  double rezero_init = 1.0;
  bool random_discourse = false;
};

inline AblationVariant parse_variant(const std::string& name, const Config& base) {
  AblationVariant v{name, base.decoder.fusion_strategy, base.decoder.rezero_init, false};
  if (auto f = parse_fusion(name)) {
    v.fusion = *f;
  } else if (name == "random-discourse-graph") {
    v.random_discourse = true;
  } else if (name == "rezero-init-0") {
    v.rezero_init = 0.0;
  } else if (name == "rezero-init-1") {
    v.rezero_init = 1.0;
  } else {
    throw DataError("unknown ablation variant \"" + name + "\"");
  }
  return v;
}

struct AblationRow {
  std::string variant;
  FusionStrategy fusion = FusionStrategy::kParallel;
  double rezero_init = 1.0;
  RougeTriple rouge;
  std::vector<double> alphas_initial;
  std::vector<double> alphas_final;
  std::vector<StepRecord> trace;
  bool edge_counts_preserved = true;
};

struct AblationSplit {
  std::vector<CorpusRecord> train;
  std::vector<CorpusRecord> heldout;
};

// Last `round(fraction * n)` conversations (at least one) are held out.
inline AblationSplit split_corpus(const std::vector<CorpusRecord>& corpus, double heldout_fraction) {
  if (corpus.size() < 2) throw DataError("ablation needs at least two conversations");
  std::size_t k = static_cast<std::size_t>(std::lround(heldout_fraction * static_cast<double>(corpus.size())));
  k = std::clamp<std::size_t>(k, 1, corpus.size() - 1);
  AblationSplit s;
  s.train.assign(corpus.begin(), corpus.end() - static_cast<std::ptrdiff_t>(k));
  s.heldout.assign(corpus.end() - static_cast<std::ptrdiff_t>(k), corpus.end());
  return s;
}

using AblationInspector =
    std::function<void(const AblationVariant&, const Model&, const std::vector<Example>& heldout)>;

inline std::vector<AblationRow> run_ablation(const AblationSplit& split, const Config& base,
                                             const std::vector<std::string>& variant_names,
                                             const AblationInspector& inspect = {}) {
  std::vector<AblationVariant> variants;
  for (const auto& n : variant_names) variants.push_back(parse_variant(n, base));
  std::vector<AblationRow> rows;
  if (variants.empty()) return rows;

  std::vector<Conversation> convs;
  for (const auto& r : split.train) convs.push_back(r.conversation);
  const Vocabulary vocab = build_vocabulary(convs, base.train.min_freq);

  for (const auto& v : variants) {
    Config cfg = base;
    cfg.decoder.fusion_strategy = v.fusion;
    cfg.decoder.rezero_init = v.rezero_init;
    ExampleOptions opts;
    if (v.random_discourse) opts.random_discourse_seed = cfg.train.seed;

    AblationRow row;
    row.variant = v.name;
    row.fusion = v.fusion;
    row.rezero_init = v.rezero_init;
    std::vector<Example> train_set, heldout;
    for (const auto& r : split.train) {
      train_set.push_back(make_example(r, vocab, opts));
      if (v.random_discourse) {
        const Example plain = make_example(r, vocab);
        row.edge_counts_preserved = row.edge_counts_preserved &&
                                    plain.discourse.annotated_edge_count() ==
                                        train_set.back().discourse.annotated_edge_count();
      }
    }
    for (const auto& r : split.heldout) heldout.push_back(make_example(r, vocab, opts));

    Model model(cfg, vocab, cfg.train.seed);
    TrainReport report = train(model, train_set, cfg.train);
    row.trace = report.records;
    row.alphas_initial = report.records.front().alphas.value_or(std::vector<double>{});
    row.alphas_final = model.rezero_alphas();

    std::vector<RougeTriple> scores;
    for (std::size_t i = 0; i < heldout.size(); ++i) {
      const auto hyp = greedy_decode(model, heldout[i], cfg.train.max_summary_len);
      const auto& ref = split.heldout[i].conversation.reference_summary;
      if (ref && !tokenize_text(*ref).empty()) scores.push_back(rouge_all(vocab.detokenize(hyp.tokens), *ref));
    }
    row.rouge = mean_rouge(scores);
    if (inspect) inspect(v, model, heldout);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::size_t max_layers = 0;
  for (const auto& r : rows) max_layers = std::max(max_layers, r.alphas_final.size());
  std::ostringstream os;
  os << "variant\tR1-F\tR1-P\tR1-R\tR2-F\tR2-P\tR2-R\tRL-F\tRL-P\tRL-R";
  for (std::size_t l = 0; l < max_layers; ++l) os << "\talpha" << l << "_init\talpha" << l << "_final";
  os << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    os << r.variant;
    for (const RougeScore* s : {&r.rouge.r1, &r.rouge.r2, &r.rouge.rl}) os << '\t' << s->f << '\t' << s->p << '\t' << s->r;
    for (std::size_t l = 0; l < max_layers; ++l) {
      if (l < r.alphas_final.size()) {
        os << '\t' << r.alphas_initial.at(l) << '\t' << r.alphas_final[l];
      } else {
        os << "\t-\t-";
      }
    }
    os << '\n';
  }
  return os.str();
}

inline Json ablation_json(const AblationRow& r) {
  Json trace = Json::array();
  for (const auto& rec : r.trace)
    if (rec.alphas) trace.push_back(to_json(rec));
  return {{"variant", r.variant},
          {"fusion", std::string(fusion_name(r.fusion))},
          {"rezero_init", r.rezero_init},
          {"r1", rouge_json(r.rouge.r1)},
          {"r2", rouge_json(r.rouge.r2)},
          {"rl", rouge_json(r.rouge.rl)},
          {"alphas_initial", r.alphas_initial},
          {"alphas_final", r.alphas_final},
          {"alpha_trace", std::move(trace)},
          {"edge_counts_preserved", r.edge_counts_preserved}};
}

}  // namespace structsum

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "structsum/config.hpp"
#include "structsum/log.hpp"
#include "structsum/model.hpp"
#include "structsum/optim.hpp"
#include "structsum/params.hpp"

namespace structsum {

struct LossValue {
  Tensor mean;             // scalar, mean NLL over counted positions (optimized)
  double total = 0.0;      // summed NLL
  std::size_t tokens = 0;  // positions that contributed
};

// Negative log-likelihood of `targets` under `logits` ([T, V]); positions
// whose target is pad_id are skipped. The caller applies the shift, so
// logits[t] scores targets[t].
inline LossValue compute_loss(const Tensor& logits, const std::vector<TokenId>& targets, TokenId pad_id) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw ShapeError("compute_loss: logits " + shape_str(logits.shape()) + " vs " + std::to_string(targets.size()) +
                     " targets");
  }
  std::vector<std::size_t> rows, ids;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == pad_id) continue;
    rows.push_back(t);
    ids.push_back(targets[t]);
  }
  if (rows.empty()) throw ShapeError("compute_loss: every target position is padding");
  Tensor picked = pick(gather_rows(log_softmax(logits), rows), ids);
  Tensor total = neg(sum(picked));
  LossValue out;
  out.total = total.item();
  out.tokens = rows.size();
  out.mean = scale(total, 1.0 / static_cast<double>(rows.size()));
  return out;
}

// Next-token targets for a teacher-forced pass over target[..L-1].
inline std::vector<TokenId> shifted_targets(const std::vector<TokenId>& target) {
  return {target.begin() + 1, target.end()};
}

enum class ParamGroup { kBase, kNew };

// Linear warmup from 0 to the group's rate, constant afterwards.
inline double lr_at(std::size_t step, ParamGroup group, const TrainConfig& cfg) {
  const double lr = group == ParamGroup::kBase ? cfg.base_lr : cfg.new_module_lr;
  const std::size_t warmup = group == ParamGroup::kBase ? cfg.base_warmup_steps : cfg.new_warmup_steps;
  if (warmup == 0 || step >= warmup) return lr;
  return lr * static_cast<double>(step) / static_cast<double>(warmup);
}

struct Optimizer {
  std::vector<Tensor> base;
  std::vector<Tensor> fresh;
  AdamState base_state;
  AdamState new_state;

  explicit Optimizer(ParamStore& store) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      (is_new_module_param(store.names()[i]) ? fresh : base).push_back(store.tensors()[i]);
    }
  }
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::optional<std::vector<double>> alphas;
};

struct TrainReport {
  std::vector<StepRecord> records;
  std::string checkpoint;
};

inline Json to_json(const StepRecord& r) {
  Json alphas = Json::array();
  if (r.alphas)
    for (double a : *r.alphas) alphas.push_back(a);
  return {{"step", r.step}, {"loss", r.loss}, {"alphas", std::move(alphas)}};
}

// Sum of per-example NLL over a batch, divided by the batch's token count.
inline LossValue batch_loss(const Model& model, std::span<const Example* const> batch, const ForwardContext& ctx) {
  Tensor total;
  LossValue out;
  for (const Example* ex : batch) {
    LossValue l = compute_loss(model.forward(*ex, ctx), shifted_targets(ex->target), Vocabulary::kPad);
    Tensor s = scale(l.mean, static_cast<double>(l.tokens));
    total = total.defined() ? add(total, s) : s;
    out.total += l.total;
    out.tokens += l.tokens;
  }
  if (!total.defined()) throw ShapeError("batch_loss: empty batch");
  out.mean = scale(total, 1.0 / static_cast<double>(out.tokens));
  return out;
}

// Forward, loss, backward, global-norm clip, Adam per group at lr_at(step),
// gradients zeroed. Returns the batch loss before the update.
inline double train_step(std::span<const Example* const> batch, Model& model, Optimizer& opt, std::size_t step,
                         const TrainConfig& cfg, Rng& dropout_rng) {
  model.params().zero_grad();
  LossValue loss = batch_loss(model, batch, model.context(true, &dropout_rng));
  const double value = loss.mean.item();
  if (!std::isfinite(value)) {
    throw NumericError("train_step: non-finite loss " + std::to_string(value) + " at step " + std::to_string(step));
  }
  loss.mean.backward();
  auto& all = model.params().tensors();
  const double norm = clip_grad_norm(all, cfg.grad_clip_norm);
  if (!std::isfinite(norm)) throw NumericError("train_step: non-finite gradient norm at step " + std::to_string(step));
  opt.base_state.lr = lr_at(step, ParamGroup::kBase, cfg);
  opt.new_state.lr = lr_at(step, ParamGroup::kNew, cfg);
  adam_step(opt.base, opt.base_state);
  if (!opt.fresh.empty()) adam_step(opt.fresh, opt.new_state);
  model.params().zero_grad();
  return value;
}

// Seed-determined batch order: the example list is reshuffled every epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : order_(n), batch_size_(std::min(batch_size, n)), rng_(seed) {
    if (n == 0) throw ShapeError("BatchSampler: no examples");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    shuffle();
  }

  std::vector<std::size_t> next() {
    if (pos_ + batch_size_ > order_.size()) {
      shuffle();
      pos_ = 0;
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_size_));
    pos_ += batch_size_;
    return out;
  }

 private:
  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  }

  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t pos_ = 0;
  Rng rng_;
};

struct TrainOptions {
  std::function<void(const StepRecord&)> on_record;  // called for every record
  bool stop_at_loss = false;
  double target_loss = 0.0;  // with stop_at_loss: stop once an eval-point full-corpus loss is below this
};

inline double corpus_loss(const Model& model, const std::vector<Example>& examples) {
  NoGradGuard no_grad;
  std::vector<const Example*> ptrs;
  for (const auto& e : examples) ptrs.push_back(&e);
  return batch_loss(model, ptrs, model.context(false, nullptr)).mean.item();
}

// Step 0 records the untouched model (loss of the first batch, initial
// alphas). Steps 1..max_steps record their batch loss; alphas are sampled
// after the update every eval_every steps and at the last step.
inline TrainReport train(Model& model, const std::vector<Example>& examples, const TrainConfig& cfg,
                         const TrainOptions& options = {}) {
  cfg.validate();
  Optimizer opt(model.params());
  BatchSampler sampler(examples.size(), cfg.batch_size, cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  TrainReport report;
  auto emit = [&](StepRecord r) {
    if (options.on_record) options.on_record(r);
    report.records.push_back(std::move(r));
  };
  auto gather = [&](const std::vector<std::size_t>& idx) {
    std::vector<const Example*> batch;
    for (std::size_t i : idx) batch.push_back(&examples[i]);
    return batch;
  };

  {
    NoGradGuard no_grad;
    BatchSampler peek(examples.size(), cfg.batch_size, cfg.seed);
    const auto first = gather(peek.next());
    emit({0, batch_loss(model, first, model.context(false, nullptr)).mean.item(), model.rezero_alphas()});
  }
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const auto batch = gather(sampler.next());
    const double loss = train_step(batch, model, opt, step, cfg, dropout_rng);
    StepRecord r{step, loss, std::nullopt};
    const bool eval_point = step % cfg.eval_every == 0 || step == cfg.max_steps;
    if (eval_point) r.alphas = model.rezero_alphas();
    emit(r);
    if (eval_point) {
      logging::info("step " + std::to_string(step) + " loss " + std::to_string(loss));
      if (options.stop_at_loss && corpus_loss(model, examples) < options.target_loss) break;
    }
  }
  return report;
}

// ------------------------------------------------------------------ decoding

struct SummaryHypothesis {
  std::vector<TokenId> tokens;     // generated content, without <sum> / </s>
  std::vector<double> log_probs;   // one per decoding step, including the final </s> step
};

// Greedy decoding over a generic next-token scorer: `next_logits(prefix)`
// returns the logit row for the token after `prefix`. Argmax ties go to the
// lowest id.
inline SummaryHypothesis greedy_decode_with(const std::function<std::vector<double>(const std::vector<TokenId>&)>& next_logits,
                                            std::size_t max_len, TokenId start = Vocabulary::kSummaryStart,
                                            TokenId eos = Vocabulary::kEos) {
  if (max_len < 1) throw ShapeError("greedy_decode: max_len must be >= 1");
  SummaryHypothesis hyp;
  std::vector<TokenId> prefix{start};
  for (std::size_t step = 0; step < max_len; ++step) {
    const auto row = next_logits(prefix);
    if (row.empty()) throw ShapeError("greedy_decode: empty logit row");
    std::size_t best = 0;
    for (std::size_t v = 1; v < row.size(); ++v)
      if (row[v] > row[best]) best = v;
    double mx = row[best], z = 0.0;
    for (double x : row) z += std::exp(x - mx);
    hyp.log_probs.push_back(-std::log(z));
    if (best == eos) break;
    hyp.tokens.push_back(best);
    prefix.push_back(best);
  }
  return hyp;
}

inline SummaryHypothesis greedy_decode(const Model& model, const Example& ex, std::size_t max_len) {
  NoGradGuard no_grad;
  const ForwardContext ctx = model.context(false, nullptr);
  const auto enc = model.encode(ex, ctx);
  return greedy_decode_with(
      [&](const std::vector<TokenId>& prefix) {
        Tensor logits = model.decode(prefix, enc, ctx);
        const std::size_t V = logits.dim(1);
        auto d = logits.data();
        return std::vector<double>(d.end() - static_cast<std::ptrdiff_t>(V), d.end());
      },
      max_len);
}

}  // namespace structsum

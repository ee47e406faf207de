#pragma once

// Finite-difference verification of every differentiable operation and of
// the full micro model.

#include <functional>
#include <string>
#include <vector>

#include "structsum/decoder.hpp"
#include "structsum/encoder.hpp"
#include "structsum/gradcheck.hpp"
#include "structsum/micro.hpp"
#include "structsum/model.hpp"
#include "structsum/training.hpp"

namespace structsum {

struct GradCheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return error < tolerance; }
};

namespace detail {

// Scalarizes a tensor-valued op with fixed random weights so every output
// coordinate contributes a distinct gradient.
inline std::function<Tensor(const Tensor&)> weighted(std::function<Tensor(const Tensor&)> op, Shape out_shape,
                                                     std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = Tensor::randn(std::move(out_shape), rng);
  return [op = std::move(op), w](const Tensor& x) { return sum(mul(op(x), w)); };
}

}  // namespace detail

inline std::vector<GradCheckResult> op_grad_checks(std::uint64_t seed = 11, double eps = 1e-5, double tol = 1e-6) {
  Rng rng(seed);
  std::vector<GradCheckResult> out;
  auto check = [&](const std::string& name, const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
    out.push_back({name, grad_check(f, x, eps), tol});
  };
  auto randn = [&](Shape s) { return Tensor::randn(std::move(s), rng); };
  auto positive = [&](Shape s) {
    Tensor t = Tensor::randn(std::move(s), rng);
    for (double& v : t.mutable_data()) v = 0.5 + std::abs(v);
    return t;
  };
  std::uint64_t wseed = seed * 1000;

  const Tensor b34 = randn({3, 4}), row4 = randn({4}), col31 = randn({3, 1});
  check("add(broadcast)", detail::weighted([&](const Tensor& x) { return add(x, row4); }, {3, 4}, ++wseed), randn({3, 4}));
  check("add(rhs broadcast)", detail::weighted([&](const Tensor& x) { return add(b34, x); }, {3, 4}, ++wseed), randn({3, 1}));
  check("sub", detail::weighted([&](const Tensor& x) { return sub(b34, x); }, {3, 4}, ++wseed), randn({4}));
  check("mul", detail::weighted([&](const Tensor& x) { return mul(x, x); }, {3, 4}, ++wseed), randn({3, 4}));
  check("mul(broadcast)", detail::weighted([&](const Tensor& x) { return mul(col31, x); }, {3, 4}, ++wseed), randn({3, 4}));
  check("div", detail::weighted([&](const Tensor& x) { return div(b34, x); }, {3, 4}, ++wseed), positive({3, 4}));
  check("scale", detail::weighted([](const Tensor& x) { return scale(x, -1.7); }, {5}, ++wseed), randn({5}));
  check("exp", detail::weighted([](const Tensor& x) { return exp(x); }, {5}, ++wseed), randn({5}));
  check("log", detail::weighted([](const Tensor& x) { return log(x); }, {5}, ++wseed), positive({5}));
  check("tanh", detail::weighted([](const Tensor& x) { return tanh(x); }, {5}, ++wseed), randn({5}));
  check("relu", detail::weighted([](const Tensor& x) { return relu(x); }, {6}, ++wseed), randn({6}));
  check("leaky_relu", detail::weighted([](const Tensor& x) { return leaky_relu(x, 0.2); }, {6}, ++wseed), randn({6}));
  check("elu", detail::weighted([](const Tensor& x) { return elu(x); }, {6}, ++wseed), randn({6}));
  check("gelu", detail::weighted([](const Tensor& x) { return gelu(x); }, {6}, ++wseed), randn({6}));

  const Tensor m45 = randn({4, 5}), batched = randn({2, 4, 5});
  check("matmul(lhs)", detail::weighted([&](const Tensor& x) { return matmul(x, m45); }, {3, 5}, ++wseed), randn({3, 4}));
  check("matmul(rhs)", detail::weighted([&](const Tensor& x) { return matmul(b34, x); }, {3, 5}, ++wseed), randn({4, 5}));
  check("matmul(batched)", detail::weighted([&](const Tensor& x) { return matmul(x, batched); }, {2, 3, 5}, ++wseed),
        randn({2, 3, 4}));
  const Tensor lhs234 = randn({2, 3, 4});
  check("matmul(broadcast rhs)", detail::weighted([&](const Tensor& x) { return matmul(lhs234, x); }, {2, 3, 5}, ++wseed),
        randn({4, 5}));
  check("transpose", detail::weighted([](const Tensor& x) { return transpose(x); }, {4, 3}, ++wseed), randn({3, 4}));
  check("reshape", detail::weighted([](const Tensor& x) { return reshape(x, {2, 6}); }, {2, 6}, ++wseed), randn({3, 4}));
  check("slice_last", detail::weighted([](const Tensor& x) { return slice_last(x, 1, 2); }, {3, 2}, ++wseed), randn({3, 4}));
  check("concat_last", detail::weighted([&](const Tensor& x) { return concat_last({x, b34, x}); }, {3, 10}, ++wseed),
        randn({3, 3}));
  check("concat_rows", detail::weighted([&](const Tensor& x) { return concat_rows({b34, x}); }, {5, 4}, ++wseed), randn({2, 4}));
  check("gather_rows", detail::weighted([](const Tensor& x) { return gather_rows(x, {2, 0, 2, 1}); }, {4, 3}, ++wseed),
        randn({3, 3}));
  check("scatter_add_rows",
        detail::weighted([](const Tensor& x) { return scatter_add_rows(x, {1, 0, 1, 2}, 3); }, {3, 2}, ++wseed), randn({4, 2}));
  check("sum", [](const Tensor& x) { return sum(mul(x, x)); }, randn({2, 3}));
  check("mean", [](const Tensor& x) { return mean(exp(x)); }, randn({2, 3}));
  check("sum_last", detail::weighted([](const Tensor& x) { return sum_last(x); }, {2, 3}, ++wseed), randn({2, 3, 4}));

  const Mask mask{{3, 4}, {1, 0, 1, 1, 1, 1, 0, 1, 0, 0, 1, 0}};
  check("softmax(last)", detail::weighted([](const Tensor& x) { return softmax(x, -1); }, {3, 4}, ++wseed), randn({3, 4}));
  check("softmax(axis 0)", detail::weighted([](const Tensor& x) { return softmax(x, 0); }, {3, 4}, ++wseed), randn({3, 4}));
  check("softmax(masked)", detail::weighted([&](const Tensor& x) { return softmax(x, -1, &mask); }, {3, 4}, ++wseed),
        randn({3, 4}));
  check("log_softmax", detail::weighted([](const Tensor& x) { return log_softmax(x); }, {3, 4}, ++wseed), randn({3, 4}));
  check("segment_softmax",
        detail::weighted([](const Tensor& x) { return segment_softmax(x, {0, 1, 0, 2, 1, 0}, 3); }, {6, 2}, ++wseed),
        randn({6, 2}));
  check("pick", [](const Tensor& x) { return sum(pick(log_softmax(x), {1, 3, 0})); }, randn({3, 4}));
  {
    const Tensor gain = randn({4}), bias = randn({4}), x0 = randn({3, 4});
    check("layer_norm(x)", detail::weighted([&](const Tensor& x) { return layer_norm(x, gain, bias); }, {3, 4}, ++wseed),
          randn({3, 4}));
    check("layer_norm(gain)", detail::weighted([&](const Tensor& g) { return layer_norm(x0, g, bias); }, {3, 4}, ++wseed),
          randn({4}));
    check("layer_norm(bias)", detail::weighted([&](const Tensor& b) { return layer_norm(x0, gain, b); }, {3, 4}, ++wseed),
          randn({4}));
  }
  check("dropout", detail::weighted([](const Tensor& x) {
          Rng r(5);
          return dropout(x, 0.3, r, true);
        }, {4, 3}, ++wseed),
        randn({4, 3}));
  check("softmax_cross_entropy",
        [](const Tensor& x) { return compute_loss(x, {2, 0, 4, 1}, 99).mean; }, randn({4, 5}));

  // Composite blocks.
  {
    ParamStore store;
    auto attn = MultiHeadAttention::create(store, "attn", 4, 2, seed);
    const Tensor memory = randn({5, 4});
    const Mask causal = Mask::causal(3);
    check("attention(query)", detail::weighted([&](const Tensor& q) { return attn(q, memory); }, {3, 4}, ++wseed),
          randn({3, 4}));
    const Tensor query = randn({3, 4});
    check("attention(memory)", detail::weighted([&](const Tensor& m) { return attn(query, m); }, {3, 4}, ++wseed),
          randn({5, 4}));
    check("attention(causal self)", detail::weighted([&](const Tensor& q) { return attn(q, q, &causal); }, {3, 4}, ++wseed),
          randn({3, 4}));
  }
  {
    ParamStore store;
    auto gat = GatLayer::create(store, "gat", 4, 2, 2, true, 3, 3, seed);
    GraphAdjacency adj;
    adj.node_count = 4;
    adj.relation_count = 3;
    for (auto [to, from, rel] : std::vector<std::tuple<int, int, int>>{
             {0, 0, 2}, {1, 1, 2}, {2, 2, 2}, {3, 3, 2}, {0, 1, 0}, {0, 2, 1}, {2, 3, 0}, {3, 1, 1}}) {
      adj.add(static_cast<std::size_t>(to), static_cast<std::size_t>(from), static_cast<std::size_t>(rel));
    }
    check("gat_layer", detail::weighted([&](const Tensor& v) { return gat_layer(v, adj, gat); }, {4, 4}, ++wseed),
          randn({4, 4}));
  }
  return out;
}

// Loss of the full micro model on one four-utterance conversation with both
// graphs, differentiated with respect to every parameter.
inline GradCheckResult model_grad_check(std::uint64_t seed = 3, double eps = 1e-4, double tol = 1e-3,
                                        FusionStrategy fusion = FusionStrategy::kParallel, std::size_t stride = 1) {
  Rng rng(seed);
  const Vocabulary vocab = micro::vocabulary();
  const CorpusRecord rec = micro::record(rng, 4, 3);
  const Example ex = make_example(rec, vocab);
  Model model(micro::config(fusion), vocab, seed);
  const ForwardContext ctx = model.context(false, nullptr);
  auto loss = [&] { return compute_loss(model.forward(ex, ctx), shifted_targets(ex.target), Vocabulary::kPad).mean; };
  const double err = grad_check_params(loss, model.params().tensors(), eps, stride);
  return {std::string("micro model (") + std::string(fusion_name(fusion)) + ")", err, tol};
}

}  // namespace structsum

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "structsum/error.hpp"
#include "structsum/rng.hpp"
#include "structsum/text.hpp"

namespace structsum {

struct RougeScore {
  double f = 0.0;
  double p = 0.0;
  double r = 0.0;

  static RougeScore from(double p, double r) { return {p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0, p, r}; }
};

// Clipped n-gram overlap: each candidate n-gram counts at most as often as
// it appears in the reference.
template <class Token>
RougeScore rouge_n(const std::vector<Token>& candidate, const std::vector<Token>& reference, std::size_t n) {
  if (reference.empty()) throw ShapeError("rouge_n: empty reference");
  if (n == 0) throw ShapeError("rouge_n: n must be >= 1");
  auto grams = [n](const std::vector<Token>& seq) {
    std::map<std::vector<Token>, std::size_t> counts;
    for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[std::vector<Token>(seq.begin() + i, seq.begin() + i + n)];
    return counts;
  };
  const auto cand = grams(candidate);
  const auto ref = grams(reference);
  std::size_t overlap = 0, cand_total = 0, ref_total = 0;
  for (const auto& [g, c] : cand) {
    cand_total += c;
    if (auto it = ref.find(g); it != ref.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [g, c] : ref) ref_total += c;
  const double p = cand_total ? static_cast<double>(overlap) / static_cast<double>(cand_total) : 0.0;
  const double r = ref_total ? static_cast<double>(overlap) / static_cast<double>(ref_total) : 0.0;
  return RougeScore::from(p, r);
}

template <class Token>
std::size_t lcs_length(const std::vector<Token>& a, const std::vector<Token>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Sentence-level ROUGE-L over the whole summary as one sequence.
template <class Token>
RougeScore rouge_l(const std::vector<Token>& candidate, const std::vector<Token>& reference) {
  if (reference.empty()) throw ShapeError("rouge_l: empty reference");
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  const double p = candidate.empty() ? 0.0 : lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  return RougeScore::from(p, r);
}

struct RougeTriple {
  RougeScore r1, r2, rl;
};

// Scores two summary strings after corpus tokenization (lowercased).
inline RougeTriple rouge_all(const std::string& candidate, const std::string& reference) {
  const auto c = tokenize_text(candidate);
  const auto r = tokenize_text(reference);
  return {rouge_n(c, r, 1), rouge_n(c, r, 2), rouge_l(c, r)};
}

inline RougeTriple mean_rouge(const std::vector<RougeTriple>& scores) {
  RougeTriple m;
  if (scores.empty()) return m;
  auto acc = [](RougeScore& dst, const RougeScore& s) {
    dst.f += s.f;
    dst.p += s.p;
    dst.r += s.r;
  };
  for (const auto& s : scores) {
    acc(m.r1, s.r1);
    acc(m.r2, s.r2);
    acc(m.rl, s.rl);
  }
  const double n = static_cast<double>(scores.size());
  for (RougeScore* s : {&m.r1, &m.r2, &m.rl}) {
    s->f /= n;
    s->p /= n;
    s->r /= n;
  }
  return m;
}

inline Json rouge_json(const RougeScore& s) { return Json::array({s.f, s.p, s.r}); }

// Two-sided paired permutation test on the mean difference. Each iteration
// flips every pair's assignment with probability 1/2; the p-value is
// (hits + 1) / (iterations + 1) with hits counting |permuted| >= |observed|.
inline double permutation_test(const std::vector<double>& a, const std::vector<double>& b, std::size_t iterations,
                               std::uint64_t seed) {
  if (a.size() != b.size()) throw ShapeError("permutation_test: score lists differ in length");
  if (a.size() < 2) throw ShapeError("permutation_test: need at least two paired scores");
  if (iterations < 100) throw ShapeError("permutation_test: need at least 100 iterations");
  const std::size_t n = a.size();
  std::vector<double> diff(n);
  double observed = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = a[i] - b[i];
    observed += diff[i];
  }
  observed = std::abs(observed / static_cast<double>(n));
  // Tolerance absorbs summation-order rounding between identical magnitudes.
  const double tol = 1e-12 * std::max(1.0, observed);
  Rng rng(seed);
  std::size_t hits = 0;
  for (std::size_t it = 0; it < iterations; ++it) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (rng.next_u64() & 1U) ? -diff[i] : diff[i];
    if (std::abs(s / static_cast<double>(n)) >= observed - tol) ++hits;
  }
  return static_cast<double>(hits + 1) / static_cast<double>(iterations + 1);
}

}  // namespace structsum

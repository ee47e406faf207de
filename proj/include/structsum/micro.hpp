#pragma once

// Small randomized model instances: a 50-token vocabulary and a
// four-utterance conversation with both graphs. Used by the gradient suite,
// the equivalence checks and the tests.

#include <string>
#include <vector>

#include "structsum/config.hpp"
#include "structsum/model.hpp"
#include "structsum/rng.hpp"
#include "structsum/text.hpp"

namespace structsum::micro {

inline constexpr std::size_t kVocabSize = 50;

inline Vocabulary vocabulary() {
  Vocabulary v;
  for (std::size_t i = 0; v.size() < kVocabSize; ++i) v.add("w" + std::to_string(i));
  return v;
}

inline std::string random_phrase(Rng& rng, std::size_t min_len, std::size_t max_len) {
  const std::size_t words = kVocabSize - Vocabulary::kSpecialCount;
  const std::size_t len = min_len + rng.below(max_len - min_len + 1);
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += (i ? " w" : "w") + std::to_string(rng.below(words));
  return s;
}

// `turns` utterances alternating between two speakers, a few random
// discourse links and `triples` action triples drawn from the vocabulary.
inline CorpusRecord record(Rng& rng, std::size_t turns = 4, std::size_t triples = 3, const std::string& id = "micro") {
  CorpusRecord r;
  r.conversation.id = id;
  for (std::size_t i = 0; i < turns; ++i) {
    Utterance u;
    u.index = i;
    u.speaker = i % 2 == 0 ? "Ann" : "Bob";
    u.text = random_phrase(rng, 2, 5);
    r.conversation.utterances.push_back(std::move(u));
  }
  r.conversation.reference_summary = random_phrase(rng, 3, 5);
  AnnotationBundle a;
  for (std::size_t i = 1; i < turns; ++i) {
    a.discourse_edges.push_back(
        {rng.below(i), i, static_cast<DiscourseRelation>(rng.below(kAnnotatedRelationCount))});
  }
  if (turns > 2) a.discourse_edges.push_back({turns - 1, 0, DiscourseRelation::kQuestionAnswerPair});
  for (std::size_t t = 0; t < triples; ++t) {
    a.action_triples.push_back({random_phrase(rng, 1, 1), random_phrase(rng, 1, 2),
                                t % 2 == 0 ? random_phrase(rng, 1, 2) : std::string(), rng.below(turns), false});
  }
  r.annotations = std::move(a);
  return r;
}

// d = 16, 2 encoder + 2 decoder layers, 2 heads everywhere, no dropout.
inline Config config(FusionStrategy fusion = FusionStrategy::kParallel) {
  Config c = Config::micro();
  c.decoder.fusion_strategy = fusion;
  return c;
}

}  // namespace structsum::micro

#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace structsum {

// The 16 dialogue discourse relation types plus a reserved self-loop label
// used only inside built graphs.
enum class DiscourseRelation : std::size_t {
  kComment,
  kClarificationQuestion,
  kElaboration,
  kAcknowledgement,
  kContinuation,
  kExplanation,
  kConditional,
  kQuestionAnswerPair,
  kAlternation,
  kQElab,
  kResult,
  kBackground,
  kNarration,
  kCorrection,
  kParallel,
  kContrast,
  kSelfLoop,
};

inline constexpr std::size_t kAnnotatedRelationCount = 16;
inline constexpr std::size_t kDiscourseRelationCount = 17;

inline constexpr std::array<std::string_view, kDiscourseRelationCount> kRelationNames = {
    "Comment",      "ClarificationQuestion", "Elaboration", "Acknowledgement", "Continuation", "Explanation",
    "Conditional",  "QuestionAnswerPair",    "Alternation", "QElab",           "Result",       "Background",
    "Narration",    "Correction",            "Parallel",    "Contrast",        "SelfLoop",
};

inline constexpr std::string_view relation_name(DiscourseRelation r) {
  return kRelationNames[static_cast<std::size_t>(r)];
}

inline constexpr std::size_t relation_id(DiscourseRelation r) { return static_cast<std::size_t>(r); }

namespace detail {
inline std::string fold_relation(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '-' || c == '_' || c == ' ') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}
}  // namespace detail

// Case-insensitive; '-', '_' and spaces are ignored so "Q-Elab" and
// "question_answer_pair" also resolve. SelfLoop is not accepted.
inline std::optional<DiscourseRelation> parse_relation(std::string_view s) {
  const std::string key = detail::fold_relation(s);
  for (std::size_t i = 0; i < kAnnotatedRelationCount; ++i) {
    if (detail::fold_relation(kRelationNames[i]) == key) return static_cast<DiscourseRelation>(i);
  }
  return std::nullopt;
}

}  // namespace structsum

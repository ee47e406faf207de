#pragma once

// Rule-based who-doing-what extraction used when no OpenIE triples are
// available. Input turns should already be rewritten to third person.
//
//   who   = first run of capitalized words
//   doing = next run of verb-lexicon words after it
//   what  = remaining words up to the first clause punctuation (.,!?;:)
//
// Contraction clitics are split off and expanded ("'ll" -> "will").
// Triples are marked approximate.

#include <cctype>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "structsum/pov.hpp"
#include "structsum/text.hpp"

namespace structsum {

namespace svo {

inline const std::set<std::string, std::less<>>& auxiliaries() {
  static const std::set<std::string, std::less<>> words = {
      "will", "would", "can",  "could", "shall", "should", "may",   "might", "must", "do",   "does", "did",
      "is",   "are",   "was",  "were",  "am",    "be",     "been",  "being", "have", "has",  "had",  "not",
      "gonna", "wanna", "going", "won",  "cannot", "also",  "just",  "already", "still", "never", "always",
  };
  return words;
}

inline const std::set<std::string, std::less<>>& base_verbs() {
  static const std::set<std::string, std::less<>> words = {
      "ask",    "arrive", "bake",   "break",   "be",     "book",   "borrow", "bring",  "buy",    "call",   "cancel", "carry",
      "check",  "clean",  "close",  "come",   "cook",   "drink",  "drive",  "eat",    "email",  "feed",   "fetch",
      "find",   "finish", "fix",    "forget", "get",    "give",   "go",     "hate",   "hear",   "help",   "hold",
      "invite", "join",   "keep",   "know",   "leave",  "lend",   "like",   "look",   "lose",   "love",   "make",
      "meet",   "message", "miss",  "move",   "need",   "open",   "order",  "pay",    "pick",   "plan",   "play",
      "post",   "prepare", "print", "put",    "read",   "remember", "return", "run",  "say",    "see",    "sell",
      "send",   "share",  "show",   "sleep",  "start",  "stay",   "stop",   "study",  "take",   "talk",   "tell",
      "text",   "think",  "try",    "use",    "visit",  "wait",   "walk",   "want",   "wash",   "watch",  "win",
      "work",   "write",  "drop",   "grab",   "hand",   "lend",   "water",  "paint",  "repair", "collect", "deliver",
      "host",   "organize", "rent", "reserve", "review", "sign",  "submit", "teach",  "train",  "travel", "update",
  };
  return words;
}

inline const std::set<std::string, std::less<>>& irregular_forms() {
  static const std::set<std::string, std::less<>> words = {
      "brought", "bought", "got",    "gotten", "went",   "gone",   "came",  "sent",  "took",   "taken", "made",
      "met",     "paid",   "told",   "gave",   "given",  "saw",    "seen",  "wrote", "written", "ate",  "eaten",
      "drank",   "left",   "found",  "lost",   "kept",   "thought", "knew", "known", "said",   "heard", "held",
      "slept",   "ran",    "forgot", "forgotten", "done", "shown", "drove", "driven", "sold",  "taught", "won",
      "put",     "read",   "lent",   "fed",    "broke",  "broken",
  };
  return words;
}

inline bool is_verb(std::string_view word) {
  const std::string w = pov::lower(word);
  if (w.empty()) return false;
  if (auxiliaries().count(w) || base_verbs().count(w) || irregular_forms().count(w)) return true;
  auto has_base = [&](std::string_view stem) { return !stem.empty() && base_verbs().count(std::string(stem)) != 0; };
  auto ends = [&](std::string_view suf) { return w.size() > suf.size() && std::string_view(w).substr(w.size() - suf.size()) == suf; };
  const std::string_view v(w);
  if (ends("ies") && has_base(std::string(v.substr(0, w.size() - 3)) + "y")) return true;
  if (ends("ied") && has_base(std::string(v.substr(0, w.size() - 3)) + "y")) return true;
  if (ends("es") && has_base(v.substr(0, w.size() - 2))) return true;
  if (ends("s") && has_base(v.substr(0, w.size() - 1))) return true;
  if (ends("ed") && (has_base(v.substr(0, w.size() - 2)) || has_base(v.substr(0, w.size() - 1)))) return true;
  if (ends("ing")) {
    const auto stem = v.substr(0, w.size() - 3);
    if (has_base(stem) || has_base(std::string(stem) + "e")) return true;
    if (stem.size() >= 2 && stem[stem.size() - 1] == stem[stem.size() - 2] && has_base(stem.substr(0, stem.size() - 1)))
      return true;
  }
  if (ends("ed")) {
    const auto stem = v.substr(0, w.size() - 2);
    if (stem.size() >= 2 && stem[stem.size() - 1] == stem[stem.size() - 2] && has_base(stem.substr(0, stem.size() - 1)))
      return true;
  }
  return false;
}

inline std::string expand_clitic(std::string_view clitic) {
  std::string c = pov::lower(clitic);
  if (c.rfind("\xE2\x80\x99", 0) == 0) c = "'" + c.substr(3);
  if (c == "'ll") return "will";
  if (c == "'d") return "would";
  if (c == "'re") return "are";
  if (c == "'ve") return "have";
  if (c == "'m") return "am";
  if (c == "'s") return "is";
  if (c == "'t") return "not";
  return c;
}

struct Token {
  std::string text;
  bool capitalized = false;
  bool verb = false;
  bool clause_end = false;  // punctuation follows this token
};

inline std::vector<Token> clause_tokens(std::string_view utterance) {
  std::vector<Token> out;
  for (const auto& w : split_words(utterance)) {
    auto parts = pov::split_word(w);
    const bool ends_clause = parts.trail.find_first_of(".,!?;:") != std::string::npos;
    if (!parts.base.empty()) {
      Token t;
      t.text = parts.base;
      t.capitalized = std::isupper(static_cast<unsigned char>(parts.base[0])) != 0;
      t.verb = is_verb(parts.base);
      out.push_back(std::move(t));
    }
    if (!parts.clitic.empty()) {
      Token t;
      const std::string expanded = expand_clitic(parts.clitic);
      t.text = expanded;
      t.verb = is_verb(expanded);
      // "'s" after a name is usually possessive, not "is".
      if (parts.clitic == "'s" && !parts.base.empty()) {
        out.back().text += parts.clitic;
        t.text.clear();
      }
      if (!t.text.empty()) out.push_back(std::move(t));
    }
    if (ends_clause && !out.empty()) out.back().clause_end = true;
  }
  return out;
}

inline std::string join(const std::vector<Token>& toks, std::size_t b, std::size_t e) {
  std::string s;
  for (std::size_t i = b; i < e; ++i) s += (s.empty() ? "" : " ") + toks[i].text;
  return s;
}

}  // namespace svo

inline std::optional<ActionTriple> naive_svo_triple(std::string_view utterance, std::size_t turn) {
  const auto toks = svo::clause_tokens(utterance);
  std::size_t i = 0;
  while (i < toks.size() && !toks[i].capitalized) ++i;
  if (i == toks.size()) return std::nullopt;
  const std::size_t who_begin = i;
  while (i < toks.size() && toks[i].capitalized && !toks[i].verb) {
    if (toks[i++].clause_end) return std::nullopt;
  }
  const std::size_t who_end = i;
  if (who_end == who_begin) return std::nullopt;
  while (i < toks.size() && !toks[i].verb) {
    if (toks[i++].clause_end) return std::nullopt;
  }
  if (i == toks.size()) return std::nullopt;
  const std::size_t doing_begin = i;
  while (i < toks.size() && toks[i].verb) {
    const bool stop = toks[i++].clause_end;
    if (stop) break;
  }
  const std::size_t doing_end = i;
  std::size_t what_end = doing_end;
  if (doing_end == 0 || !toks[doing_end - 1].clause_end) {
    while (what_end < toks.size()) {
      if (toks[what_end++].clause_end) break;
    }
  }
  ActionTriple t;
  t.who = svo::join(toks, who_begin, who_end);
  t.doing = svo::join(toks, doing_begin, doing_end);
  t.what = svo::join(toks, doing_end, what_end);
  t.turn = turn;
  t.approximate = true;
  return t;
}

inline std::vector<ActionTriple> naive_svo_extract(const std::vector<std::string>& rewritten_utterances) {
  std::vector<ActionTriple> triples;
  for (std::size_t i = 0; i < rewritten_utterances.size(); ++i)
    if (auto t = naive_svo_triple(rewritten_utterances[i], i)) triples.push_back(std::move(*t));
  return triples;
}

}  // namespace structsum

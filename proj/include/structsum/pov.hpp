#pragma once

// Third-person point-of-view rewriting of conversation turns.
//
// Rules, applied per whitespace-separated word:
//   * a word covered by a single-word coreference mention that is a
//     third-person pronoun becomes the cluster's canonical string;
//   * first-person singular pronouns become the current speaker;
//   * second-person pronouns become the addressee, i.e. the speaker of the
//     closest earlier turn by someone else (the closest later one when no
//     earlier turn qualifies).
// Possessive forms gain "'s"; a clitic such as "'ll" stays attached
// ("I'll" -> "Amanda'll"). Surrounding punctuation and whitespace are kept.
// Plural first-person pronouns (we, us, our) are left alone.

#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "structsum/log.hpp"
#include "structsum/text.hpp"

namespace structsum {

namespace pov {

enum class Form { kPlain, kPossessive };

inline const std::map<std::string, Form, std::less<>>& first_person() {
  static const std::map<std::string, Form, std::less<>> table = {
      {"i", Form::kPlain}, {"me", Form::kPlain}, {"myself", Form::kPlain},
      {"my", Form::kPossessive}, {"mine", Form::kPossessive},
  };
  return table;
}

inline const std::map<std::string, Form, std::less<>>& second_person() {
  static const std::map<std::string, Form, std::less<>> table = {
      {"you", Form::kPlain}, {"yourself", Form::kPlain}, {"ya", Form::kPlain}, {"u", Form::kPlain},
      {"your", Form::kPossessive}, {"yours", Form::kPossessive}, {"ur", Form::kPossessive},
  };
  return table;
}

// "her" is treated as the object form.
inline const std::map<std::string, Form, std::less<>>& third_person() {
  static const std::map<std::string, Form, std::less<>> table = {
      {"he", Form::kPlain},          {"him", Form::kPlain},          {"himself", Form::kPlain},
      {"she", Form::kPlain},         {"her", Form::kPlain},          {"herself", Form::kPlain},
      {"it", Form::kPlain},          {"itself", Form::kPlain},       {"they", Form::kPlain},
      {"them", Form::kPlain},        {"themselves", Form::kPlain},   {"his", Form::kPossessive},
      {"hers", Form::kPossessive},   {"its", Form::kPossessive},     {"their", Form::kPossessive},
      {"theirs", Form::kPossessive},
  };
  return table;
}

inline bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80 || c == '\''; }

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// A word split as lead-punct | base | clitic | trail-punct.
struct WordParts {
  std::string lead, base, clitic, trail;
};

inline WordParts split_word(std::string_view w) {
  WordParts p;
  std::size_t b = 0, e = w.size();
  while (b < e && !std::isalnum(static_cast<unsigned char>(w[b])) && static_cast<unsigned char>(w[b]) < 0x80) ++b;
  while (e > b && !std::isalnum(static_cast<unsigned char>(w[e - 1])) && static_cast<unsigned char>(w[e - 1]) < 0x80) --e;
  p.lead = std::string(w.substr(0, b));
  p.trail = std::string(w.substr(e));
  std::string core(w.substr(b, e - b));
  // Typographic apostrophe (U+2019) is folded to ASCII for the split.
  std::size_t apos = core.find('\'');
  const std::size_t curly = core.find("\xE2\x80\x99");
  if (curly != std::string::npos && (apos == std::string::npos || curly < apos)) apos = curly;
  if (apos != std::string::npos && apos > 0) {
    p.base = core.substr(0, apos);
    p.clitic = core.substr(apos);
  } else {
    p.base = core;
  }
  return p;
}

inline std::string render(const std::string& name, Form form) { return form == Form::kPossessive ? name + "'s" : name; }

}  // namespace pov

// Addressee of turn i: speaker of the nearest earlier turn by a different
// speaker, else of the nearest later one; nullopt for a monologue.
inline std::optional<std::string> addressee(const Conversation& conv, std::size_t i) {
  const std::string& me = conv.utterances.at(i).speaker;
  for (std::size_t k = i; k-- > 0;)
    if (conv.utterances[k].speaker != me) return conv.utterances[k].speaker;
  for (std::size_t k = i + 1; k < conv.utterances.size(); ++k)
    if (conv.utterances[k].speaker != me) return conv.utterances[k].speaker;
  return std::nullopt;
}

// Canonical string of a cluster: the first non-empty `canon`, else the
// surface of the first mention that is not itself a pronoun.
inline std::optional<std::string> cluster_canonical(const Conversation& conv, const CorefCluster& cluster) {
  for (const auto& m : cluster)
    if (!m.canon.empty()) return m.canon;
  for (const auto& m : cluster) {
    const auto words = split_words(conv.utterances.at(m.turn).text);
    if (m.end > words.size() || m.start >= m.end) continue;
    std::string surface;
    for (std::size_t w = m.start; w < m.end; ++w) surface += (surface.empty() ? "" : " ") + words[w];
    const auto parts = pov::split_word(surface);
    const std::string key = pov::lower(parts.base);
    if (pov::first_person().count(key) || pov::second_person().count(key) || pov::third_person().count(key)) continue;
    return parts.base.empty() ? surface : parts.base;
  }
  return std::nullopt;
}

inline std::vector<std::string> transform_pov(const Conversation& conv, const std::vector<CorefCluster>& coref) {
  // (turn, word) -> canonical replacement for pronoun mentions.
  std::map<std::pair<std::size_t, std::size_t>, std::string> coref_subst;
  for (const auto& cluster : coref) {
    auto canon = cluster_canonical(conv, cluster);
    if (!canon) continue;
    for (const auto& m : cluster)
      if (m.end == m.start + 1) coref_subst.emplace(std::make_pair(m.turn, m.start), *canon);
  }

  std::vector<std::string> out;
  out.reserve(conv.utterances.size());
  bool warned = false;
  for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
    const auto& u = conv.utterances[i];
    const auto listener = addressee(conv, i);
    std::string result;
    std::size_t word = 0;
    std::size_t pos = 0;
    const std::string& text = u.text;
    while (pos < text.size()) {
      if (std::isspace(static_cast<unsigned char>(text[pos]))) {
        result.push_back(text[pos++]);
        continue;
      }
      std::size_t end = pos;
      while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
      const std::string_view w(text.data() + pos, end - pos);
      auto parts = pov::split_word(w);
      const std::string key = pov::lower(parts.base);
      std::optional<std::string> replacement;
      if (auto it = coref_subst.find({i, word}); it != coref_subst.end()) {
        if (auto t = pov::third_person().find(key); t != pov::third_person().end()) {
          replacement = pov::render(it->second, t->second);
        }
      }
      if (!replacement) {
        if (auto f = pov::first_person().find(key); f != pov::first_person().end()) {
          replacement = pov::render(u.speaker, f->second);
        } else if (auto s = pov::second_person().find(key); s != pov::second_person().end()) {
          if (listener) {
            replacement = pov::render(*listener, s->second);
          } else if (!warned) {
            logging::warn("conversation " + conv.id + ": no addressee for second-person pronoun in a single-speaker dialogue");
            warned = true;
          }
        }
      }
      if (replacement) {
        result += parts.lead + *replacement + parts.clitic + parts.trail;
      } else {
        result.append(w);
      }
      ++word;
      pos = end;
    }
    out.push_back(std::move(result));
  }
  return out;
}

}  // namespace structsum

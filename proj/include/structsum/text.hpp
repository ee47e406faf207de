#pragma once

// Conversation data model, annotation sidecar ingestion, tokenizer and
// vocabulary.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "structsum/error.hpp"
#include "structsum/relations.hpp"

namespace structsum {

using TokenId = std::size_t;

struct Utterance {
  std::size_t index = 0;
  std::string speaker;
  std::string text;
  std::vector<TokenId> tokens;  // filled by tokenize()

  bool operator==(const Utterance&) const = default;
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;
  std::optional<std::string> reference_summary;

  bool operator==(const Conversation&) const = default;
};

struct DiscourseEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  DiscourseRelation rel = DiscourseRelation::kComment;

  auto operator<=>(const DiscourseEdge&) const = default;
};

// Token span [start, end) over the whitespace-separated words of one turn.
struct Mention {
  std::size_t turn = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  std::string canon;

  bool operator==(const Mention&) const = default;
};

using CorefCluster = std::vector<Mention>;

struct ActionTriple {
  std::string who;
  std::string doing;
  std::string what;
  std::size_t turn = 0;
  bool approximate = false;  // produced by the rule-based fallback extractor

  bool operator==(const ActionTriple&) const = default;
};

struct AnnotationBundle {
  std::vector<DiscourseEdge> discourse_edges;
  std::vector<CorefCluster> coref_clusters;
  std::vector<ActionTriple> action_triples;

  bool operator==(const AnnotationBundle&) const = default;
};

struct CorpusRecord {
  Conversation conversation;
  std::optional<AnnotationBundle> annotations;
};

// ---------------------------------------------------------------- tokenizer

// Whitespace-separated words, used for coreference spans.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

// Lowercases, splits on whitespace and detaches every ASCII punctuation
// character as its own token. Bytes >= 0x80 are word characters.
inline std::vector<std::string> tokenize_text(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  flush();
  return out;
}

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kUtteranceStart = 2;
  static constexpr TokenId kSummaryStart = 3;
  static constexpr TokenId kEos = 4;
  static constexpr TokenId kSeparator = 5;
  static constexpr std::size_t kSpecialCount = 6;

  Vocabulary() : tokens_{"<pad>", "<unk>", "<s>", "<sum>", "</s>", "<sep>"} {
    for (TokenId i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], i);
  }

  // Appends a token; returns its id (existing id when already present).
  TokenId add(const std::string& token) {
    auto [it, inserted] = ids_.emplace(token, tokens_.size());
    if (inserted) tokens_.push_back(token);
    return it->second;
  }

  TokenId id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() || it->second < kSpecialCount ? kUnk : it->second;
  }

  const std::string& token(TokenId id) const { return tokens_.at(id); }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static bool is_special(TokenId id) { return id < kSpecialCount; }

  // Non-special tokens joined by single spaces.
  std::string detokenize(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId i : ids) {
      if (is_special(i) && i != kUnk) continue;
      if (!out.empty()) out.push_back(' ');
      out += token(i);
    }
    return out;
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> ids;
    for (const auto& t : tokenize_text(text)) ids.push_back(id(t));
    return ids;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary: " + path);
    for (std::size_t i = kSpecialCount; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read vocabulary: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) v.add(line);
    }
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

// Tokens seen at least min_freq times across utterances and reference
// summaries, in order of first appearance, after the six specials.
inline Vocabulary build_vocabulary(const std::vector<Conversation>& corpus, std::size_t min_freq) {
  if (corpus.empty()) throw DataError("build_vocabulary: empty corpus");
  if (min_freq < 1) throw ShapeError("build_vocabulary: min_freq must be >= 1");
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> counts;
  auto count_text = [&](std::string_view text) {
    for (auto& t : tokenize_text(text)) {
      if (counts[t]++ == 0) order.push_back(t);
    }
  };
  for (const auto& conv : corpus) {
    for (const auto& u : conv.utterances) count_text(u.text);
    if (conv.reference_summary) count_text(*conv.reference_summary);
  }
  Vocabulary vocab;
  for (const auto& t : order) {
    if (counts[t] >= min_freq) vocab.add(t);
  }
  return vocab;
}

inline Conversation tokenize(Conversation conv, const Vocabulary& vocab) {
  for (auto& u : conv.utterances) {
    u.tokens.clear();
    u.tokens.push_back(Vocabulary::kUtteranceStart);
    for (TokenId id : vocab.encode(u.text)) u.tokens.push_back(id);
  }
  return conv;
}

// [<sum>] + content + [</s>]
inline std::vector<TokenId> summary_target(const std::string& summary, const Vocabulary& vocab) {
  std::vector<TokenId> ids{Vocabulary::kSummaryStart};
  for (TokenId id : vocab.encode(summary)) ids.push_back(id);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

inline std::vector<std::string> speakers(const Conversation& conv) {
  std::vector<std::string> out;
  for (const auto& u : conv.utterances) {
    if (std::find(out.begin(), out.end(), u.speaker) == out.end()) out.push_back(u.speaker);
  }
  return out;
}

// ------------------------------------------------------------- serialization

using Json = nlohmann::ordered_json;

inline Json to_json(const Conversation& conv) {
  Json turns = Json::array();
  for (const auto& u : conv.utterances) turns.push_back({{"speaker", u.speaker}, {"text", u.text}});
  Json j = {{"id", conv.id}, {"turns", std::move(turns)}};
  if (conv.reference_summary) j["summary"] = *conv.reference_summary;
  return j;
}

inline Json to_json(const std::string& id, const AnnotationBundle& a) {
  Json edges = Json::array();
  for (const auto& e : a.discourse_edges)
    edges.push_back({{"src", e.src}, {"dst", e.dst}, {"rel", std::string(relation_name(e.rel))}});
  Json coref = Json::array();
  for (const auto& cluster : a.coref_clusters) {
    Json c = Json::array();
    for (const auto& m : cluster) c.push_back({{"turn", m.turn}, {"start", m.start}, {"end", m.end}, {"canon", m.canon}});
    coref.push_back(std::move(c));
  }
  Json triples = Json::array();
  for (const auto& t : a.action_triples) {
    Json tj = {{"who", t.who}, {"doing", t.doing}, {"what", t.what}, {"turn", t.turn}};
    if (t.approximate) tj["approximate"] = true;
    triples.push_back(std::move(tj));
  }
  return {{"id", id}, {"discourse_edges", std::move(edges)}, {"coref", std::move(coref)}, {"triples", std::move(triples)}};
}

namespace detail {

inline DataError record_error(const std::string& path, std::size_t line, const std::string& msg) {
  return DataError(path + ":" + std::to_string(line) + ": " + msg);
}

template <class T>
T required(const Json& j, const char* field, const std::string& path, std::size_t line) {
  if (!j.is_object() || !j.contains(field)) throw record_error(path, line, std::string("missing field \"") + field + "\"");
  try {
    return j.at(field).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw record_error(path, line, std::string("field \"") + field + "\" has the wrong type");
  }
}

template <class F>
void for_each_record(const std::string& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw record_error(path, line, std::string("malformed record: ") + e.what());
    }
    f(j, line);
  }
}

}  // namespace detail

inline Conversation conversation_from_json(const Json& j, const std::string& path = "<json>", std::size_t line = 0) {
  Conversation conv;
  conv.id = detail::required<std::string>(j, "id", path, line);
  const Json turns = detail::required<Json>(j, "turns", path, line);
  if (!turns.is_array() || turns.empty()) throw detail::record_error(path, line, "\"turns\" must be a non-empty array");
  for (std::size_t i = 0; i < turns.size(); ++i) {
    Utterance u;
    u.index = i;
    u.speaker = detail::required<std::string>(turns[i], "speaker", path, line);
    u.text = detail::required<std::string>(turns[i], "text", path, line);
    if (u.speaker.empty()) throw detail::record_error(path, line, "empty speaker in turn " + std::to_string(i));
    conv.utterances.push_back(std::move(u));
  }
  if (j.contains("summary") && !j["summary"].is_null()) {
    conv.reference_summary = detail::required<std::string>(j, "summary", path, line);
  }
  return conv;
}

inline AnnotationBundle annotations_from_json(const Json& j, const std::string& path = "<json>", std::size_t line = 0) {
  AnnotationBundle a;
  if (j.contains("discourse_edges")) {
    for (const auto& e : j["discourse_edges"]) {
      DiscourseEdge edge;
      edge.src = detail::required<std::size_t>(e, "src", path, line);
      edge.dst = detail::required<std::size_t>(e, "dst", path, line);
      const auto rel = detail::required<std::string>(e, "rel", path, line);
      auto parsed = parse_relation(rel);
      if (!parsed) throw detail::record_error(path, line, "unknown discourse relation \"" + rel + "\"");
      edge.rel = *parsed;
      a.discourse_edges.push_back(edge);
    }
  }
  if (j.contains("coref")) {
    for (const auto& c : j["coref"]) {
      CorefCluster cluster;
      for (const auto& m : c) {
        Mention mention;
        mention.turn = detail::required<std::size_t>(m, "turn", path, line);
        mention.start = detail::required<std::size_t>(m, "start", path, line);
        mention.end = detail::required<std::size_t>(m, "end", path, line);
        if (m.contains("canon")) mention.canon = detail::required<std::string>(m, "canon", path, line);
        cluster.push_back(std::move(mention));
      }
      a.coref_clusters.push_back(std::move(cluster));
    }
  }
  if (j.contains("triples")) {
    for (const auto& t : j["triples"]) {
      ActionTriple triple;
      triple.who = detail::required<std::string>(t, "who", path, line);
      triple.doing = detail::required<std::string>(t, "doing", path, line);
      if (t.contains("what")) triple.what = detail::required<std::string>(t, "what", path, line);
      triple.turn = detail::required<std::size_t>(t, "turn", path, line);
      if (t.contains("approximate")) triple.approximate = t["approximate"].get<bool>();
      a.action_triples.push_back(std::move(triple));
    }
  }
  return a;
}

// Throws DataError when an index or span falls outside the conversation.
inline void validate_annotations(const Conversation& conv, const AnnotationBundle& a) {
  const std::size_t n = conv.utterances.size();
  auto fail = [&](const std::string& msg) { throw DataError("conversation " + conv.id + ": " + msg); };
  for (const auto& e : a.discourse_edges) {
    if (e.src >= n || e.dst >= n) {
      fail("discourse edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) + " out of range for " +
           std::to_string(n) + " utterances");
    }
    if (e.rel == DiscourseRelation::kSelfLoop) fail("SelfLoop is reserved and may not be annotated");
  }
  for (const auto& cluster : a.coref_clusters) {
    if (cluster.empty() || (cluster.size() == 1 && cluster[0].canon.empty())) {
      fail("coreference cluster needs >= 2 mentions or one mention with a canonical name");
    }
    for (const auto& m : cluster) {
      if (m.turn >= n) fail("coreference mention turn " + std::to_string(m.turn) + " out of range");
      const std::size_t words = split_words(conv.utterances[m.turn].text).size();
      if (m.start >= m.end || m.end > words) {
        fail("coreference span [" + std::to_string(m.start) + ", " + std::to_string(m.end) + ") invalid for turn " +
             std::to_string(m.turn));
      }
    }
  }
  for (const auto& t : a.action_triples) {
    if (t.turn >= n) fail("action triple turn " + std::to_string(t.turn) + " out of range");
  }
}

inline std::vector<CorpusRecord> load_corpus(const std::string& path,
                                             const std::optional<std::string>& annotations_path = std::nullopt) {
  std::vector<CorpusRecord> records;
  std::map<std::string, std::size_t> by_id;
  detail::for_each_record(path, [&](const Json& j, std::size_t line) {
    Conversation conv = conversation_from_json(j, path, line);
    if (!by_id.emplace(conv.id, records.size()).second) {
      throw detail::record_error(path, line, "duplicate conversation id \"" + conv.id + "\"");
    }
    records.push_back({std::move(conv), std::nullopt});
  });
  if (annotations_path) {
    detail::for_each_record(*annotations_path, [&](const Json& j, std::size_t line) {
      const auto id = detail::required<std::string>(j, "id", *annotations_path, line);
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        throw detail::record_error(*annotations_path, line, "annotation for unknown conversation id \"" + id + "\"");
      }
      AnnotationBundle a = annotations_from_json(j, *annotations_path, line);
      try {
        validate_annotations(records[it->second].conversation, a);
      } catch (const DataError& e) {
        throw detail::record_error(*annotations_path, line, e.what());
      }
      records[it->second].annotations = std::move(a);
    });
  }
  return records;
}

inline void write_corpus(const std::vector<CorpusRecord>& records, const std::string& conversations_path,
                         const std::optional<std::string>& annotations_path = std::nullopt) {
  std::ofstream conv_out(conversations_path);
  if (!conv_out) throw DataError("cannot write " + conversations_path);
  for (const auto& r : records) conv_out << to_json(r.conversation).dump() << '\n';
  if (annotations_path) {
    std::ofstream ann_out(*annotations_path);
    if (!ann_out) throw DataError("cannot write " + *annotations_path);
    for (const auto& r : records)
      if (r.annotations) ann_out << to_json(r.conversation.id, *r.annotations).dump() << '\n';
  }
}

}  // namespace structsum

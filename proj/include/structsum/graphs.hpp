#pragma once

// Discourse relation graphs and who-doing-what action graphs built from a
// conversation plus its annotation bundle, the message-passing adjacency the
// graph encoders consume, corpus statistics and the random-graph ablation.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

#include "structsum/error.hpp"
#include "structsum/relations.hpp"
#include "structsum/rng.hpp"
#include "structsum/text.hpp"

namespace structsum {

struct DiscourseGraph {
  std::size_t node_count = 0;
  std::vector<DiscourseEdge> edges;  // annotated edges first, then one SelfLoop per node

  std::size_t annotated_edge_count() const {
    return static_cast<std::size_t>(std::count_if(edges.begin(), edges.end(), [](const DiscourseEdge& e) {
      return e.rel != DiscourseRelation::kSelfLoop;
    }));
  }
  bool operator==(const DiscourseGraph&) const = default;
};

enum ActionRole : std::uint8_t { kWho = 1, kDoing = 2, kWhat = 4 };

struct ActionNode {
  std::string surface;
  std::uint8_t roles = 0;  // bitwise OR of ActionRole

  bool operator==(const ActionNode&) const = default;
};

struct ActionGraph {
  std::vector<ActionNode> nodes;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // undirected, i < j

  bool operator==(const ActionGraph&) const = default;
};

inline DiscourseGraph build_discourse_graph(const Conversation& conv, const std::vector<DiscourseEdge>& edges) {
  DiscourseGraph g;
  g.node_count = conv.utterances.size();
  std::set<DiscourseEdge> seen;
  for (const auto& e : edges) {
    if (e.src >= g.node_count || e.dst >= g.node_count) {
      throw DataError("build_discourse_graph: edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) +
                      " out of range for " + std::to_string(g.node_count) + " utterances");
    }
    if (e.rel == DiscourseRelation::kSelfLoop) throw DataError("build_discourse_graph: SelfLoop cannot be annotated");
    if (seen.insert(e).second) g.edges.push_back(e);
  }
  for (std::size_t i = 0; i < g.node_count; ++i) g.edges.push_back({i, i, DiscourseRelation::kSelfLoop});
  return g;
}

// Same as above from raw relation strings, for callers holding unparsed
// parser output.
struct RawDiscourseEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::string rel;
};

inline DiscourseGraph build_discourse_graph(const Conversation& conv, const std::vector<RawDiscourseEdge>& raw) {
  std::vector<DiscourseEdge> edges;
  for (const auto& r : raw) {
    auto rel = parse_relation(r.rel);
    if (!rel) throw DataError("build_discourse_graph: unknown relation \"" + r.rel + "\"");
    edges.push_back({r.src, r.dst, *rel});
  }
  return build_discourse_graph(conv, edges);
}

// Nodes are deduplicated by exact surface; each triple links who-doing and,
// when `what` is present, doing-what.
inline ActionGraph build_action_graph(const std::vector<ActionTriple>& triples) {
  ActionGraph g;
  std::map<std::string, std::size_t> index;
  auto node = [&](const std::string& surface, ActionRole role) {
    auto [it, inserted] = index.emplace(surface, g.nodes.size());
    if (inserted) g.nodes.push_back({surface, 0});
    g.nodes[it->second].roles |= role;
    return it->second;
  };
  std::set<std::pair<std::size_t, std::size_t>> seen;
  auto link = [&](std::size_t a, std::size_t b) {
    if (a == b) return;
    auto e = std::minmax(a, b);
    if (seen.insert(e).second) g.edges.emplace_back(e);
  };
  for (const auto& t : triples) {
    if (t.who.empty() || t.doing.empty()) {
      throw DataError("build_action_graph: triple with empty who or doing (turn " + std::to_string(t.turn) + ")");
    }
    const std::size_t who = node(t.who, kWho);
    const std::size_t doing = node(t.doing, kDoing);
    link(who, doing);
    if (!t.what.empty()) link(doing, node(t.what, kWhat));
  }
  return g;
}

// Replaces every annotated edge with a uniformly drawn (src, dst, relation)
// without duplicates; node count, annotated edge count and self-loops are
// preserved.
inline DiscourseGraph random_graph(const DiscourseGraph& graph, std::uint64_t seed) {
  const std::size_t k = graph.annotated_edge_count();
  if (k == 0) return graph;
  const std::size_t n = graph.node_count;
  Rng rng(seed);
  DiscourseGraph out;
  out.node_count = n;
  std::set<DiscourseEdge> seen;
  while (out.edges.size() < k) {
    DiscourseEdge e;
    e.src = rng.below(n);
    e.dst = rng.below(n);
    e.rel = static_cast<DiscourseRelation>(rng.below(kAnnotatedRelationCount));
    if (seen.insert(e).second) out.edges.push_back(e);
  }
  for (std::size_t i = 0; i < n; ++i) out.edges.push_back({i, i, DiscourseRelation::kSelfLoop});
  return out;
}

// ------------------------------------------------------------- adjacency

// Directed message list: node `receiver[e]` aggregates from `sender[e]`
// under relation id `relation[e]`.
struct GraphAdjacency {
  std::size_t node_count = 0;
  std::size_t relation_count = 0;
  std::vector<std::size_t> receiver;
  std::vector<std::size_t> sender;
  std::vector<std::size_t> relation;

  std::size_t edge_count() const { return receiver.size(); }
  void add(std::size_t to, std::size_t from, std::size_t rel) {
    receiver.push_back(to);
    sender.push_back(from);
    relation.push_back(rel);
  }
};

// Relation ids 0..15 annotated, 16 SelfLoop; with reverse edges on,
// 17 + r marks the reversed copy of relation r.
inline std::size_t discourse_relation_vocab(bool reverse_edges) {
  return reverse_edges ? kDiscourseRelationCount + kAnnotatedRelationCount : kDiscourseRelationCount;
}

// An annotated link i -> j (E[i][j] = r) puts j in the neighborhood of i.
inline GraphAdjacency discourse_adjacency(const DiscourseGraph& g, bool reverse_edges = false) {
  GraphAdjacency adj;
  adj.node_count = g.node_count;
  adj.relation_count = discourse_relation_vocab(reverse_edges);
  for (const auto& e : g.edges) {
    adj.add(e.src, e.dst, relation_id(e.rel));
    if (reverse_edges && e.rel != DiscourseRelation::kSelfLoop) {
      adj.add(e.dst, e.src, kDiscourseRelationCount + relation_id(e.rel));
    }
  }
  return adj;
}

inline constexpr std::size_t kActionAdjacent = 0;
inline constexpr std::size_t kActionSelfLoop = 1;
inline constexpr std::size_t kActionRelationCount = 2;

inline GraphAdjacency action_adjacency(const ActionGraph& g) {
  GraphAdjacency adj;
  adj.node_count = g.nodes.size();
  adj.relation_count = kActionRelationCount;
  for (const auto& [a, b] : g.edges) {
    adj.add(a, b, kActionAdjacent);
    adj.add(b, a, kActionAdjacent);
  }
  for (std::size_t i = 0; i < g.nodes.size(); ++i) adj.add(i, i, kActionSelfLoop);
  return adj;
}

// ------------------------------------------------------------- statistics

struct CorpusStats {
  std::size_t conversation_count = 0;
  double mean_participants = 0.0;
  double mean_turns = 0.0;
  double mean_discourse_edges = 0.0;
  double mean_action_triples = 0.0;
};

inline CorpusStats corpus_stats(const std::vector<CorpusRecord>& corpus) {
  if (corpus.empty()) throw DataError("corpus_stats: empty corpus");
  CorpusStats s;
  s.conversation_count = corpus.size();
  for (const auto& r : corpus) {
    s.mean_participants += static_cast<double>(speakers(r.conversation).size());
    s.mean_turns += static_cast<double>(r.conversation.utterances.size());
    if (r.annotations) {
      s.mean_discourse_edges +=
          static_cast<double>(build_discourse_graph(r.conversation, r.annotations->discourse_edges).annotated_edge_count());
      s.mean_action_triples += static_cast<double>(r.annotations->action_triples.size());
    }
  }
  const double n = static_cast<double>(corpus.size());
  s.mean_participants /= n;
  s.mean_turns /= n;
  s.mean_discourse_edges /= n;
  s.mean_action_triples /= n;
  return s;
}

// Count of each of the 16 relation types over the (deduplicated) graphs.
inline std::array<std::size_t, kAnnotatedRelationCount> relation_distribution(const std::vector<CorpusRecord>& corpus) {
  std::array<std::size_t, kAnnotatedRelationCount> counts{};
  for (const auto& r : corpus) {
    if (!r.annotations) continue;
    for (const auto& e : build_discourse_graph(r.conversation, r.annotations->discourse_edges).edges)
      if (e.rel != DiscourseRelation::kSelfLoop) ++counts[relation_id(e.rel)];
  }
  return counts;
}

// ------------------------------------------------------------- graph dumps

inline Json discourse_graph_json(const std::string& id, const Conversation& conv, const DiscourseGraph& g) {
  Json nodes = Json::array();
  for (std::size_t i = 0; i < g.node_count; ++i) nodes.push_back({{"utt", i}, {"speaker", conv.utterances[i].speaker}});
  Json edges = Json::array();
  for (const auto& e : g.edges) edges.push_back(Json::array({e.src, e.dst, std::string(relation_name(e.rel))}));
  return {{"id", id}, {"kind", "discourse"}, {"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

inline Json action_graph_json(const std::string& id, const ActionGraph& g, bool approximate) {
  Json nodes = Json::array();
  for (const auto& n : g.nodes) {
    Json roles = Json::array();
    if (n.roles & kWho) roles.push_back("WHO");
    if (n.roles & kDoing) roles.push_back("DOING");
    if (n.roles & kWhat) roles.push_back("WHAT");
    nodes.push_back({{"surface", n.surface}, {"roles", std::move(roles)}});
  }
  Json edges = Json::array();
  for (const auto& [a, b] : g.edges) edges.push_back(Json::array({a, b, "Adjacent"}));
  Json j = {{"id", id}, {"kind", "action"}, {"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
  if (approximate) j["approximate"] = true;
  return j;
}

}  // namespace structsum

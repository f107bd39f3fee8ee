#pragma once

#include <Eigen/Dense>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "convrec/env.hpp"
#include "convrec/world.hpp"

namespace convrec {

/// Node of the per-turn hypergraph. Friends share the user kind; the
/// conversation's own user is always node 0.
struct NodeRef {
  enum class Kind { user, item, attr };
  Kind kind = Kind::user;
  Id id = -1;

  auto operator<=>(const NodeRef&) const = default;
  std::string label() const;
};

enum class View { like, dislike, social };

struct Hyperedge {
  View view = View::like;
  /// Attribute id for like/dislike, friend user id for social.
  Id anchor = -1;
  std::set<Id> members;
  int gen_index = 0;
};

/// Per-turn multi-view hypergraph with its signed weighted incidence.
/// Columns are grouped like, dislike, social; within a view they follow
/// generation order. Nodes are laid out user, rejected attributes, accepted
/// attributes, filtered friends, then the seed-attribute item block.
class MultiViewHypergraph {
 public:
  using Entry = std::pair<int, double>;  // (row, weight), rows ascending

  const std::vector<NodeRef>& nodes() const { return nodes_; }
  const std::vector<Hyperedge>& hyperedges() const { return hyperedges_; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  int num_hyperedges() const { return static_cast<int>(hyperedges_.size()); }

  /// Hyperedge count per view, in (like, dislike, social) order.
  int view_count(View view) const;
  /// Half-open column range [first, last) of a view.
  std::pair<int, int> view_range(View view) const;

  int node_row(const NodeRef& node) const;
  bool has_node(const NodeRef& node) const;

  const std::vector<Entry>& column(int j) const;

  /// Expands the stored sparse columns into a dense matrix.
  Eigen::MatrixXd dense_incidence() const;

  /// JSON debug dump: nodes, hyperedges, and the incidence as triplets.
  std::string to_json() const;

 private:
  friend MultiViewHypergraph build_hypergraph(const EpisodeState&,
                                              const Catalog&,
                                              const SocialGraph&);
  std::vector<NodeRef> nodes_;
  std::map<NodeRef, int> node_row_;
  std::vector<Hyperedge> hyperedges_;
  std::vector<std::vector<Entry>> columns_;
  int like_count_ = 0, dislike_count_ = 0, social_count_ = 0;
};

/// Builds the snapshot for a state: one like (dislike) hyperedge per
/// accepted (rejected) attribute holding the seed-attribute items that carry
/// it, and one social hyperedge per filtered friend holding the friend's
/// accepted items that are still candidates. The user row carries +1 on like
/// and social columns, -1 on dislike columns; anchors carry 1; member items
/// carry 1/|members|.
MultiViewHypergraph build_hypergraph(const EpisodeState& state,
                                     const Catalog& catalog,
                                     const SocialGraph& social);

/// Independent dense construction used as the equality oracle: walks every
/// (node, hyperedge) pair and applies the weight cases directly. Refuses
/// graphs beyond 50 nodes.
Eigen::MatrixXd incidence_oracle(const MultiViewHypergraph& graph);

}  // namespace convrec

#include "convrec/hypergraph.hpp"

#include <algorithm>

#include "json.hpp"

namespace convrec {

std::string NodeRef::label() const {
  switch (kind) {
    case Kind::user:
      return "user:" + std::to_string(id);
    case Kind::item:
      return "item:" + std::to_string(id);
    case Kind::attr:
      return "attr:" + std::to_string(id);
  }
  return "?";
}

int MultiViewHypergraph::view_count(View view) const {
  switch (view) {
    case View::like:
      return like_count_;
    case View::dislike:
      return dislike_count_;
    case View::social:
      return social_count_;
  }
  return 0;
}

std::pair<int, int> MultiViewHypergraph::view_range(View view) const {
  switch (view) {
    case View::like:
      return {0, like_count_};
    case View::dislike:
      return {like_count_, like_count_ + dislike_count_};
    case View::social:
      return {like_count_ + dislike_count_,
              like_count_ + dislike_count_ + social_count_};
  }
  return {0, 0};
}

int MultiViewHypergraph::node_row(const NodeRef& node) const {
  auto it = node_row_.find(node);
  if (it == node_row_.end()) {
    throw ContractError("node " + node.label() + " is not in the graph");
  }
  return it->second;
}

bool MultiViewHypergraph::has_node(const NodeRef& node) const {
  return node_row_.count(node) != 0;
}

const std::vector<MultiViewHypergraph::Entry>& MultiViewHypergraph::column(
    int j) const {
  if (j < 0 || j >= num_hyperedges()) {
    throw ContractError("column " + std::to_string(j) + " out of range");
  }
  return columns_[static_cast<std::size_t>(j)];
}

Eigen::MatrixXd MultiViewHypergraph::dense_incidence() const {
  Eigen::MatrixXd a =
      Eigen::MatrixXd::Zero(num_nodes(), num_hyperedges());
  for (int j = 0; j < num_hyperedges(); ++j) {
    for (const auto& [row, w] : columns_[static_cast<std::size_t>(j)]) {
      a(row, j) = w;
    }
  }
  return a;
}

std::string MultiViewHypergraph::to_json() const {
  nlohmann::json out;
  out["nodes"] = nlohmann::json::array();
  for (const auto& n : nodes_) out["nodes"].push_back(n.label());
  out["hyperedges"] = nlohmann::json::array();
  for (const auto& h : hyperedges_) {
    const char* view = h.view == View::like      ? "like"
                       : h.view == View::dislike ? "dislike"
                                                 : "social";
    out["hyperedges"].push_back({{"view", view},
                                 {"anchor", h.anchor},
                                 {"members", h.members},
                                 {"gen_index", h.gen_index}});
  }
  out["incidence"] = nlohmann::json::array();
  for (int j = 0; j < num_hyperedges(); ++j) {
    for (const auto& [row, w] : columns_[static_cast<std::size_t>(j)]) {
      out["incidence"].push_back({row, j, w});
    }
  }
  return out.dump();
}

MultiViewHypergraph build_hypergraph(const EpisodeState& state,
                                     const Catalog& catalog,
                                     const SocialGraph& social) {
  MultiViewHypergraph g;

  auto add_node = [&](NodeRef::Kind kind, Id id) {
    const NodeRef node{kind, id};
    if (g.node_row_.emplace(node, static_cast<int>(g.nodes_.size())).second) {
      g.nodes_.push_back(node);
    }
  };
  add_node(NodeRef::Kind::user, state.user);
  for (Id p : state.p_rej_order) add_node(NodeRef::Kind::attr, p);
  for (Id p : state.p_acc_order) add_node(NodeRef::Kind::attr, p);
  // Friend block in initialization order, restricted to survivors; any
  // friend outside the recorded order (hand-built states) goes after.
  std::vector<Id> friend_block;
  for (Id f : state.f_order) {
    if (state.f_filtered.count(f)) friend_block.push_back(f);
  }
  for (Id f : state.f_filtered) {
    if (std::find(state.f_order.begin(), state.f_order.end(), f) ==
        state.f_order.end()) {
      friend_block.push_back(f);
    }
  }
  for (Id f : friend_block) add_node(NodeRef::Kind::user, f);
  for (Id v : state.v_p0) add_node(NodeRef::Kind::item, v);

  const int user_row = 0;
  auto push_edge = [&](View view, Id anchor, const NodeRef& anchor_node,
                       std::set<Id> members, int gen_index) {
    Hyperedge h;
    h.view = view;
    h.anchor = anchor;
    h.members = std::move(members);
    h.gen_index = gen_index;

    std::vector<MultiViewHypergraph::Entry> col;
    col.emplace_back(user_row, view == View::dislike ? -1.0 : 1.0);
    col.emplace_back(g.node_row(anchor_node), 1.0);
    if (!h.members.empty()) {
      const double w = 1.0 / static_cast<double>(h.members.size());
      for (Id v : h.members) {
        col.emplace_back(g.node_row({NodeRef::Kind::item, v}), w);
      }
    }
    std::sort(col.begin(), col.end());
    g.hyperedges_.push_back(std::move(h));
    g.columns_.push_back(std::move(col));
  };

  auto attr_members = [&](Id p) {
    std::set<Id> members;
    for (Id v : state.v_p0) {
      if (catalog.attrs_of(v).count(p)) members.insert(v);
    }
    return members;
  };

  int gen = 0;
  for (Id p : state.p_acc_order) {
    push_edge(View::like, p, {NodeRef::Kind::attr, p}, attr_members(p), gen++);
  }
  g.like_count_ = gen;

  gen = 0;
  for (Id p : state.p_rej_order) {
    push_edge(View::dislike, p, {NodeRef::Kind::attr, p}, attr_members(p),
              gen++);
  }
  g.dislike_count_ = gen;

  gen = 0;
  for (Id f : friend_block) {
    std::set<Id> members;
    for (Id v : social.accepted_of(f)) {
      if (state.v_cand.count(v)) members.insert(v);
    }
    push_edge(View::social, f, {NodeRef::Kind::user, f}, std::move(members),
              gen++);
  }
  g.social_count_ = gen;
  return g;
}

Eigen::MatrixXd incidence_oracle(const MultiViewHypergraph& graph) {
  if (graph.num_nodes() > 50) {
    throw ContractError("incidence oracle is capped at 50 nodes");
  }
  const auto& nodes = graph.nodes();
  const auto& edges = graph.hyperedges();
  Eigen::MatrixXd a =
      Eigen::MatrixXd::Zero(graph.num_nodes(), graph.num_hyperedges());
  for (int i = 0; i < graph.num_nodes(); ++i) {
    for (int j = 0; j < graph.num_hyperedges(); ++j) {
      const NodeRef& n = nodes[static_cast<std::size_t>(i)];
      const Hyperedge& h = edges[static_cast<std::size_t>(j)];
      const bool is_conversation_user = (i == 0);
      const bool is_anchor =
          (h.view == View::social)
              ? (n.kind == NodeRef::Kind::user && !is_conversation_user &&
                 n.id == h.anchor)
              : (n.kind == NodeRef::Kind::attr && n.id == h.anchor);
      const bool is_member =
          n.kind == NodeRef::Kind::item && h.members.count(n.id) != 0;
      if (is_conversation_user) {
        a(i, j) = h.view == View::dislike ? -1.0 : 1.0;
      } else if (is_anchor) {
        a(i, j) = 1.0;
      } else if (is_member) {
        a(i, j) = 1.0 / static_cast<double>(h.members.size());
      }
    }
  }
  return a;
}

}  // namespace convrec

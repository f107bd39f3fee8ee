#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "convrec/world.hpp"

namespace convrec {

/// Knowledge-graph edge over dense node rows. Relations: 0 = interact,
/// 1 = has_attribute, 2 = friend.
struct Triple {
  int head = 0;
  int relation = 0;
  int tail = 0;

  auto operator<=>(const Triple&) const = default;
};

inline constexpr int kRelInteract = 0;
inline constexpr int kRelHasAttribute = 1;
inline constexpr int kRelFriend = 2;
inline constexpr int kNumRelations = 3;

/// Node and relation vectors, one row each; all of dimension d.
struct EmbeddingTable {
  Eigen::MatrixXd node_vecs;
  Eigen::MatrixXd relation_vecs;

  int d() const { return static_cast<int>(node_vecs.cols()); }
  int num_nodes() const { return static_cast<int>(node_vecs.rows()); }
};

/// Builds the training triples: one interact edge per training interaction,
/// one has_attribute edge per (item, attribute) pair, one friend edge per
/// undirected social pair emitted once as lower-row -> higher-row.
std::vector<Triple> build_triples(
    const Catalog& catalog, const SocialGraph& social, const NodeIndex& index,
    const std::vector<std::pair<Id, Id>>& train_interactions);

struct TransEConfig {
  int d = 64;
  int epochs = 30;
  double margin = 1.0;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;

  bool operator==(const TransEConfig&) const = default;
};

/// Distance ||e_h + e_r - e_t|| used by the translational objective.
double transe_distance(const EmbeddingTable& table, const Triple& t);

/// Margin loss max(0, margin + dist(pos) - dist(neg)) for one pair.
double transe_pair_loss(const EmbeddingTable& table, const Triple& pos,
                        const Triple& neg, double margin);

/// Pair loss plus its gradient with respect to every involved vector.
struct TransEPairGrad {
  double loss = 0.0;
  std::map<int, Eigen::VectorXd> d_node;
  std::map<int, Eigen::VectorXd> d_relation;
};
TransEPairGrad transe_pair_grad(const EmbeddingTable& table, const Triple& pos,
                                const Triple& neg, double margin);

struct PretrainResult {
  EmbeddingTable table;
  /// Mean pair loss per epoch, measured before each update.
  std::vector<double> epoch_loss;
};

/// Margin-based SGD with one filtered corrupted triple per positive per step
/// (head or tail corrupted with equal probability) and per-step unit-norm
/// projection of the touched entity vectors. epochs = 0 returns the random
/// initialization untouched.
PretrainResult pretrain(const std::vector<Triple>& triples, int num_nodes,
                        const TransEConfig& config);

/// Writes/reads the embedding checkpoint (versioned text format with a
/// node-count/dimension/seed header; layout documented in the README).
void save_embeddings(const EmbeddingTable& table, std::uint64_t seed,
                     const std::string& path);
EmbeddingTable load_embeddings(const std::string& path,
                               std::uint64_t* seed_out = nullptr);

}  // namespace convrec

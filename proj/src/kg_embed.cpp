#include "convrec/kg_embed.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "convrec/rng.hpp"

namespace convrec {

namespace {

constexpr double kNormFloor = 1e-12;

Eigen::VectorXd residual(const EmbeddingTable& table, const Triple& t) {
  return table.node_vecs.row(t.head).transpose() +
         table.relation_vecs.row(t.relation).transpose() -
         table.node_vecs.row(t.tail).transpose();
}

void renormalize_entity(EmbeddingTable& table, int row) {
  const double n = table.node_vecs.row(row).norm();
  if (n > kNormFloor) table.node_vecs.row(row) /= n;
}

}  // namespace

std::vector<Triple> build_triples(
    const Catalog& catalog, const SocialGraph& social, const NodeIndex& index,
    const std::vector<std::pair<Id, Id>>& train_interactions) {
  std::set<Triple> out;
  for (const auto& [user, item] : train_interactions) {
    out.insert({index.user_row(user), kRelInteract, index.item_row(item)});
  }
  for (const auto& [item, attrs] : catalog.item_attrs) {
    for (Id a : attrs) {
      out.insert({index.item_row(item), kRelHasAttribute, index.attr_row(a)});
    }
  }
  for (const auto& [u, fs] : social.friends) {
    for (Id f : fs) {
      if (u < f) {
        out.insert({index.user_row(u), kRelFriend, index.user_row(f)});
      }
    }
  }
  return {out.begin(), out.end()};
}

double transe_distance(const EmbeddingTable& table, const Triple& t) {
  return residual(table, t).norm();
}

double transe_pair_loss(const EmbeddingTable& table, const Triple& pos,
                        const Triple& neg, double margin) {
  return std::max(0.0, margin + transe_distance(table, pos) -
                           transe_distance(table, neg));
}

TransEPairGrad transe_pair_grad(const EmbeddingTable& table, const Triple& pos,
                                const Triple& neg, double margin) {
  TransEPairGrad out;
  const Eigen::VectorXd r_pos = residual(table, pos);
  const Eigen::VectorXd r_neg = residual(table, neg);
  const double d_pos = r_pos.norm();
  const double d_neg = r_neg.norm();
  out.loss = std::max(0.0, margin + d_pos - d_neg);
  if (out.loss <= 0.0) return out;

  const int d = table.d();
  auto node_slot = [&](int row) -> Eigen::VectorXd& {
    auto [it, fresh] = out.d_node.try_emplace(row, Eigen::VectorXd::Zero(d));
    (void)fresh;
    return it->second;
  };
  auto rel_slot = [&](int rel) -> Eigen::VectorXd& {
    auto [it, fresh] =
        out.d_relation.try_emplace(rel, Eigen::VectorXd::Zero(d));
    (void)fresh;
    return it->second;
  };
  if (d_pos > kNormFloor) {
    const Eigen::VectorXd u = r_pos / d_pos;
    node_slot(pos.head) += u;
    node_slot(pos.tail) -= u;
    rel_slot(pos.relation) += u;
  }
  if (d_neg > kNormFloor) {
    const Eigen::VectorXd u = r_neg / d_neg;
    node_slot(neg.head) -= u;
    node_slot(neg.tail) += u;
    rel_slot(neg.relation) -= u;
  }
  return out;
}

PretrainResult pretrain(const std::vector<Triple>& triples, int num_nodes,
                        const TransEConfig& config) {
  if (config.d <= 0) throw ConfigError("embedding dimension must be positive");
  if (config.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (triples.empty()) throw ContractError("pretrain: no triples");
  for (const Triple& t : triples) {
    if (t.head < 0 || t.head >= num_nodes || t.tail < 0 ||
        t.tail >= num_nodes) {
      throw ContractError("triple references a node outside the index");
    }
    if (t.relation < 0 || t.relation >= kNumRelations) {
      throw ContractError("unknown relation id");
    }
  }

  Rng rng(config.seed);
  const double bound = 6.0 / std::sqrt(static_cast<double>(config.d));
  PretrainResult result;
  result.table.node_vecs = Eigen::MatrixXd(num_nodes, config.d);
  result.table.relation_vecs = Eigen::MatrixXd(kNumRelations, config.d);
  for (int i = 0; i < num_nodes; ++i) {
    for (int j = 0; j < config.d; ++j) {
      result.table.node_vecs(i, j) = rng.uniform(-bound, bound);
    }
  }
  for (int i = 0; i < kNumRelations; ++i) {
    for (int j = 0; j < config.d; ++j) {
      result.table.relation_vecs(i, j) = rng.uniform(-bound, bound);
    }
  }

  const std::set<Triple> known(triples.begin(), triples.end());
  std::vector<std::size_t> order(triples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  EmbeddingTable& table = result.table;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      const Triple& pos = triples[idx];
      // Corrupt head or tail with equal probability; resample while the
      // corruption collides with a known true triple.
      Triple neg = pos;
      const bool corrupt_head = rng.flip(0.5);
      for (int attempt = 0; attempt < 100; ++attempt) {
        const int candidate = static_cast<int>(
            rng.below(static_cast<std::uint64_t>(num_nodes)));
        if (corrupt_head) {
          neg.head = candidate;
        } else {
          neg.tail = candidate;
        }
        if (!known.count(neg)) break;
      }
      if (known.count(neg)) continue;

      const TransEPairGrad grad =
          transe_pair_grad(table, pos, neg, config.margin);
      loss_sum += grad.loss;
      if (grad.loss <= 0.0) continue;
      for (const auto& [row, g] : grad.d_node) {
        table.node_vecs.row(row) -= config.learning_rate * g.transpose();
      }
      for (const auto& [rel, g] : grad.d_relation) {
        table.relation_vecs.row(rel) -= config.learning_rate * g.transpose();
      }
      renormalize_entity(table, pos.head);
      renormalize_entity(table, pos.tail);
      renormalize_entity(table, corrupt_head ? neg.head : neg.tail);
    }
    result.epoch_loss.push_back(loss_sum /
                                static_cast<double>(triples.size()));
  }
  return result;
}

void save_embeddings(const EmbeddingTable& table, std::uint64_t seed,
                     const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot write " + path);
  std::fprintf(f, "convrec-embeddings v1\n");
  std::fprintf(f, "nodes %d dim %d relations %d seed %" PRIu64 "\n",
               table.num_nodes(), table.d(),
               static_cast<int>(table.relation_vecs.rows()), seed);
  auto dump = [&](const Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        std::fprintf(f, j == 0 ? "%.17g" : " %.17g", m(i, j));
      }
      std::fprintf(f, "\n");
    }
  };
  dump(table.node_vecs);
  dump(table.relation_vecs);
  std::fclose(f);
}

EmbeddingTable load_embeddings(const std::string& path,
                               std::uint64_t* seed_out) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string magic, version;
  in >> magic >> version;
  if (magic != "convrec-embeddings" || version != "v1") {
    throw ParseError(path + ": not a v1 embedding checkpoint");
  }
  std::string k_nodes, k_dim, k_rel, k_seed;
  int nodes = 0, dim = 0, rels = 0;
  std::uint64_t seed = 0;
  in >> k_nodes >> nodes >> k_dim >> dim >> k_rel >> rels >> k_seed >> seed;
  if (!in || k_nodes != "nodes" || k_dim != "dim" || k_rel != "relations" ||
      k_seed != "seed" || nodes < 0 || dim <= 0 || rels != kNumRelations) {
    throw ParseError(path + ": malformed checkpoint header");
  }
  EmbeddingTable table;
  table.node_vecs = Eigen::MatrixXd(nodes, dim);
  table.relation_vecs = Eigen::MatrixXd(rels, dim);
  auto slurp = [&](Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (!(in >> m(i, j))) {
          throw ParseError(path + ": truncated checkpoint");
        }
      }
    }
  };
  slurp(table.node_vecs);
  slurp(table.relation_vecs);
  if (seed_out) *seed_out = seed;
  return table;
}

}  // namespace convrec

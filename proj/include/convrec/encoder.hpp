#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "convrec/autodiff.hpp"
#include "convrec/hypergraph.hpp"
#include "convrec/rng.hpp"

namespace convrec {

/// Uniform Glorot initialization, one rng draw per entry in row-major order.
Eigen::MatrixXd glorot_uniform(int rows, int cols, Rng& rng);

struct EncoderConfig {
  int d = 64;
  int layers = 2;  // L, swept over {1,2,3,4}
  int heads = 2;
  double leaky_slope = 0.01;
  double tau = 0.1;
  /// Strip residual connections, layer norm, and the feed-forward block,
  /// leaving pure attention. Used by equivalence tests.
  bool bare_attention = false;
  int ffn_hidden = 64;
  int max_positions = 256;

  bool operator==(const EncoderConfig&) const = default;

  void validate() const;
  int head_dim() const { return d / heads; }
};

/// Raw hyperedge embeddings, split by view and concatenated.
struct HyperedgeEmbeddings {
  Eigen::MatrixXd like, dislike, social;
  Eigen::MatrixXd all;
};

struct ForwardOptions {
  /// Zero a view's refined rows before node aggregation, indexed by View.
  std::array<bool, 3> zero_view = {false, false, false};
};

/// Handles into the tape for one encoder forward pass.
struct EncoderForward {
  TensorRef h0;                   // |H| x d hyperedge matrix (pre-attention)
  std::vector<TensorRef> gammas;  // L node matrices, |N| x d
  TensorRef q;                    // 1 x d user readout
  /// Parameters registered on the tape by this pass; read gradients here.
  std::vector<std::pair<std::string, TensorRef>> param_refs;
};

struct ContrastiveParts {
  TensorRef term1, term2, total;
};
struct ContrastiveValue {
  double term1 = 0.0, term2 = 0.0, total = 0.0;
};

/// Hierarchical multi-view hypergraph encoder: hyperedge rows are refined by
/// per-view multi-head self-attention stacks in generation order, aggregated
/// back onto nodes through the incidence matrix, and read out at the user
/// row; the cross-view contrastive objective lives on the raw hyperedge
/// embeddings.
class Encoder {
 public:
  explicit Encoder(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }

  /// Creates every parameter tensor (attention, feed-forward, positional)
  /// under "enc/...". Projections get uniform Glorot init, biases and
  /// positional tables start at zero.
  void init_params(ParamStore& params, Rng& rng) const;

  /// Names of all encoder parameters, in creation order.
  std::vector<std::string> param_names() const;

  /// One-hop node pass: leaky-rectified double incidence product, no
  /// learned parameters.
  Eigen::MatrixXd base_node_pass(const MultiViewHypergraph& graph,
                                 const Eigen::MatrixXd& E) const;

  /// Raw hyperedge embeddings split by view, preserving generation order.
  HyperedgeEmbeddings hyperedge_embed(const MultiViewHypergraph& graph,
                                      const Eigen::MatrixXd& E) const;

  /// Full differentiable forward pass. e_nodes must align with graph nodes.
  EncoderForward forward(Tape& tape, const MultiViewHypergraph& graph,
                         TensorRef e_nodes, const ParamStore& params,
                         const ForwardOptions& options = {}) const;

  /// Forward pass over shared bindings, so several graphs on one tape bind
  /// each parameter once. Gradients live on bindings.order(); param_refs
  /// stays empty.
  EncoderForward forward(const MultiViewHypergraph& graph, TensorRef e_nodes,
                         TapeBindings& bindings,
                         const ForwardOptions& options = {}) const;

  /// Node matrix of one hierarchy level (value-level convenience).
  Eigen::MatrixXd hierarchical_pass(const MultiViewHypergraph& graph,
                                    const Eigen::MatrixXd& E,
                                    const ParamStore& params, int level) const;

  /// Layer-summed user readout q_t (value-level convenience).
  Eigen::RowVectorXd state_readout(const MultiViewHypergraph& graph,
                                   const Eigen::MatrixXd& E,
                                   const ParamStore& params) const;

  /// Cross-view contrastive loss on the tape. h_all holds the raw hyperedge
  /// rows; counts are the per-view row counts in view order.
  ContrastiveParts contrastive_loss(Tape& tape, TensorRef h_all,
                                    const std::array<int, 3>& counts,
                                    double tau) const;

  /// Value-level contrastive loss over raw hyperedge embeddings.
  ContrastiveValue contrastive_loss(const HyperedgeEmbeddings& h,
                                    double tau) const;

 private:
  EncoderConfig config_;
};

}  // namespace convrec

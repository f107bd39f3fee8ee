#include "convrec/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "convrec/error.hpp"

namespace convrec {

Eigen::MatrixXd glorot_uniform(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

namespace {

const char* view_tag(int view) {
  switch (view) {
    case 0:
      return "like";
    case 1:
      return "dislike";
    default:
      return "social";
  }
}

Eigen::MatrixXd leaky_value(Eigen::MatrixXd m, double slope) {
  return m.unaryExpr([slope](double x) { return x >= 0.0 ? x : slope * x; });
}

/// One multi-head self-attention layer over a view's hyperedge rows.
TensorRef attention_layer(Tape& tape, TensorRef x, TapeBindings& param,
                          const std::string& prefix,
                          const EncoderConfig& config) {
  const int dh = config.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<TensorRef> head_outs;
  head_outs.reserve(static_cast<std::size_t>(config.heads));
  for (int h = 0; h < config.heads; ++h) {
    const std::string hp = prefix + "/h" + std::to_string(h);
    TensorRef q = tape.mm(x, param.get(hp + "/wq"));
    TensorRef k = tape.mm(x, param.get(hp + "/wk"));
    TensorRef v = tape.mm(x, param.get(hp + "/wv"));
    TensorRef scores = tape.scale(tape.mm_nt(q, k), inv_sqrt);
    head_outs.push_back(tape.mm(tape.softmax_rows(scores), v));
  }
  TensorRef merged = config.heads == 1 ? head_outs[0] : tape.hcat(head_outs);
  TensorRef attn = tape.mm(merged, param.get(prefix + "/wo"));
  if (config.bare_attention) return attn;
  TensorRef a = tape.layer_norm_rows(tape.add(x, attn));
  TensorRef hidden = tape.relu(
      tape.add_rowvec(tape.mm(a, param.get(prefix + "/ffn_w1")), param.get(prefix + "/ffn_b1")));
  TensorRef ffn =
      tape.add_rowvec(tape.mm(hidden, param.get(prefix + "/ffn_w2")), param.get(prefix + "/ffn_b2"));
  return tape.layer_norm_rows(tape.add(a, ffn));
}

}  // namespace

void EncoderConfig::validate() const {
  if (d <= 0) throw ConfigError("encoder: d must be positive");
  if (heads <= 0 || d % heads != 0)
    throw ConfigError("encoder: d must be divisible by a positive head count");
  if (layers < 1 || layers > 4)
    throw ConfigError("encoder: layers must be between 1 and 4");
  if (tau <= 0.0) throw ConfigError("encoder: tau must be positive");
  if (ffn_hidden <= 0) throw ConfigError("encoder: ffn_hidden must be positive");
  if (max_positions <= 0)
    throw ConfigError("encoder: max_positions must be positive");
}

Encoder::Encoder(EncoderConfig config) : config_(config) { config_.validate(); }

void Encoder::init_params(ParamStore& params, Rng& rng) const {
  const int d = config_.d;
  const int dh = config_.head_dim();
  for (int view = 0; view < 3; ++view) {
    const std::string base = std::string("enc/") + view_tag(view);
    params.create(base + "/pos", config_.max_positions, d).setZero();
    for (int layer = 1; layer <= config_.layers; ++layer) {
      const std::string lp = base + "/l" + std::to_string(layer);
      for (int h = 0; h < config_.heads; ++h) {
        const std::string hp = lp + "/h" + std::to_string(h);
        params.create(hp + "/wq", d, dh) = glorot_uniform(d, dh, rng);
        params.create(hp + "/wk", d, dh) = glorot_uniform(d, dh, rng);
        params.create(hp + "/wv", d, dh) = glorot_uniform(d, dh, rng);
      }
      params.create(lp + "/wo", d, d) = glorot_uniform(d, d, rng);
      if (!config_.bare_attention) {
        params.create(lp + "/ffn_w1", d, config_.ffn_hidden) =
            glorot_uniform(d, config_.ffn_hidden, rng);
        params.create(lp + "/ffn_b1", 1, config_.ffn_hidden).setZero();
        params.create(lp + "/ffn_w2", config_.ffn_hidden, d) =
            glorot_uniform(config_.ffn_hidden, d, rng);
        params.create(lp + "/ffn_b2", 1, d).setZero();
      }
    }
  }
}

std::vector<std::string> Encoder::param_names() const {
  std::vector<std::string> names;
  for (int view = 0; view < 3; ++view) {
    const std::string base = std::string("enc/") + view_tag(view);
    names.push_back(base + "/pos");
    for (int layer = 1; layer <= config_.layers; ++layer) {
      const std::string lp = base + "/l" + std::to_string(layer);
      for (int h = 0; h < config_.heads; ++h) {
        const std::string hp = lp + "/h" + std::to_string(h);
        names.push_back(hp + "/wq");
        names.push_back(hp + "/wk");
        names.push_back(hp + "/wv");
      }
      names.push_back(lp + "/wo");
      if (!config_.bare_attention) {
        names.push_back(lp + "/ffn_w1");
        names.push_back(lp + "/ffn_b1");
        names.push_back(lp + "/ffn_w2");
        names.push_back(lp + "/ffn_b2");
      }
    }
  }
  return names;
}

Eigen::MatrixXd Encoder::base_node_pass(const MultiViewHypergraph& graph,
                                        const Eigen::MatrixXd& E) const {
  if (E.rows() != graph.num_nodes())
    throw ContractError("base_node_pass: embedding rows must match node count");
  if (graph.num_hyperedges() == 0)
    return Eigen::MatrixXd::Zero(E.rows(), E.cols());
  const Eigen::MatrixXd A = graph.dense_incidence();
  return leaky_value(A * (A.transpose() * E), config_.leaky_slope);
}

HyperedgeEmbeddings Encoder::hyperedge_embed(const MultiViewHypergraph& graph,
                                             const Eigen::MatrixXd& E) const {
  if (E.rows() != graph.num_nodes())
    throw ContractError("hyperedge_embed: embedding rows must match node count");
  const Eigen::MatrixXd A = graph.dense_incidence();
  HyperedgeEmbeddings out;
  out.all = A.transpose() * E;
  const auto view_block = [&](View view) {
    const auto [lo, hi] = graph.view_range(view);
    return Eigen::MatrixXd(out.all.middleRows(lo, hi - lo));
  };
  out.like = view_block(View::like);
  out.dislike = view_block(View::dislike);
  out.social = view_block(View::social);
  return out;
}

EncoderForward Encoder::forward(Tape& tape, const MultiViewHypergraph& graph,
                                TensorRef e_nodes, const ParamStore& params,
                                const ForwardOptions& options) const {
  TapeBindings bindings(tape, params);
  EncoderForward out = forward(graph, e_nodes, bindings, options);
  out.param_refs = bindings.order();
  return out;
}

EncoderForward Encoder::forward(const MultiViewHypergraph& graph,
                                TensorRef e_nodes, TapeBindings& param,
                                const ForwardOptions& options) const {
  Tape& tape = param.tape();
  const int n = graph.num_nodes();
  const int m = graph.num_hyperedges();
  const int d = config_.d;
  const Eigen::MatrixXd& e_value = tape.value(e_nodes);
  if (e_value.rows() != n || e_value.cols() != d)
    throw ContractError("encoder forward: embedding tensor must be nodes x d");
  if (n == 0 || graph.nodes()[0].kind != NodeRef::Kind::user)
    throw ContractError("encoder forward: node 0 must be the user");

  EncoderForward out;
  if (m == 0) {
    out.h0 = tape.constant(Eigen::MatrixXd::Zero(0, d));
    TensorRef zero_nodes = tape.constant(Eigen::MatrixXd::Zero(n, d));
    out.gammas.assign(static_cast<std::size_t>(config_.layers), zero_nodes);
    out.q = tape.constant(Eigen::MatrixXd::Zero(1, d));
    return out;
  }

  TensorRef a = tape.constant(graph.dense_incidence());
  out.h0 = tape.mm_tn(a, e_nodes);

  // Per-view attention stacks; stacks[v][l] is the view's rows after l layers.
  std::array<std::vector<TensorRef>, 3> stacks;
  for (int view = 0; view < 3; ++view) {
    const auto [lo, hi] = graph.view_range(static_cast<View>(view));
    const int count = hi - lo;
    if (count == 0) continue;
    std::vector<int> pos_rows;
    pos_rows.reserve(static_cast<std::size_t>(count));
    for (int j = lo; j < hi; ++j) {
      const int g = graph.hyperedges()[static_cast<std::size_t>(j)].gen_index;
      if (g < 0) throw ContractError("encoder forward: negative gen_index");
      pos_rows.push_back(std::min(g, config_.max_positions - 1));
    }
    const std::string base = std::string("enc/") + view_tag(view);
    TensorRef block = tape.slice_rows(out.h0, lo, count);
    TensorRef pos = tape.gather_rows(param.get(base + "/pos"), pos_rows);
    TensorRef x = tape.add(block, pos);
    stacks[view].push_back(x);
    for (int layer = 1; layer <= config_.layers; ++layer) {
      x = attention_layer(tape, x, param,
                          base + "/l" + std::to_string(layer), config_);
      stacks[view].push_back(x);
    }
  }

  out.gammas.reserve(static_cast<std::size_t>(config_.layers));
  for (int layer = 1; layer <= config_.layers; ++layer) {
    std::vector<TensorRef> parts;
    for (int view = 0; view < 3; ++view) {
      if (stacks[view].empty()) continue;
      TensorRef x = stacks[view][static_cast<std::size_t>(layer)];
      if (options.zero_view[static_cast<std::size_t>(view)])
        x = tape.scale(x, 0.0);
      parts.push_back(x);
    }
    TensorRef xl = parts.size() == 1 ? parts[0] : tape.vcat(parts);
    TensorRef gamma = tape.leaky_relu(tape.mm(a, xl), config_.leaky_slope);
    out.gammas.push_back(gamma);
    TensorRef user_row = tape.slice_rows(gamma, 0, 1);
    out.q = layer == 1 ? user_row : tape.add(out.q, user_row);
  }
  return out;
}

Eigen::MatrixXd Encoder::hierarchical_pass(const MultiViewHypergraph& graph,
                                           const Eigen::MatrixXd& E,
                                           const ParamStore& params,
                                           int level) const {
  if (level < 1 || level > config_.layers)
    throw ContractError("hierarchical_pass: level out of range");
  Tape tape;
  TensorRef e = tape.constant(E);
  EncoderForward fwd = forward(tape, graph, e, params);
  return tape.value(fwd.gammas[static_cast<std::size_t>(level - 1)]);
}

Eigen::RowVectorXd Encoder::state_readout(const MultiViewHypergraph& graph,
                                          const Eigen::MatrixXd& E,
                                          const ParamStore& params) const {
  Tape tape;
  TensorRef e = tape.constant(E);
  EncoderForward fwd = forward(tape, graph, e, params);
  return tape.value(fwd.q).row(0);
}

ContrastiveParts Encoder::contrastive_loss(Tape& tape, TensorRef h_all,
                                           const std::array<int, 3>& counts,
                                           double tau) const {
  if (tau <= 0.0) throw ContractError("contrastive_loss: tau must be positive");
  const int m = counts[0] + counts[1] + counts[2];
  if (tape.value(h_all).rows() != m)
    throw ContractError("contrastive_loss: row count mismatch");
  ContrastiveParts out;
  if (m == 0) {
    out.term1 = tape.constant(Eigen::MatrixXd::Zero(1, 1));
    out.term2 = out.term1;
    out.total = out.term1;
    return out;
  }

  const auto view_of = [&](int row) {
    if (row < counts[0]) return 0;
    if (row < counts[0] + counts[1]) return 1;
    return 2;
  };

  TensorRef hn = tape.l2_normalize_rows(h_all);
  TensorRef sims = tape.exp_elem(tape.scale(tape.mm_nt(hn, hn), 1.0 / tau));

  // Within-view alignment against everything, for anchors that have
  // out-of-view rows to contrast with.
  Eigen::MatrixXd same_view = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd w1 = Eigen::MatrixXd::Zero(m, 1);
  for (int i = 0; i < m; ++i) {
    const int vi = view_of(i);
    for (int j = 0; j < m; ++j)
      if (view_of(j) == vi) same_view(i, j) = 1.0;
    if (m - counts[static_cast<std::size_t>(vi)] > 0) w1(i, 0) = 1.0;
  }
  TensorRef pos1 = tape.rowsum(tape.cmul(sims, tape.constant(same_view)));
  TensorRef den1 = tape.rowsum(sims);
  TensorRef gaps1 = tape.sub(tape.log_elem(den1), tape.log_elem(pos1));
  out.term1 = tape.sum_all(tape.cmul(tape.constant(w1), gaps1));

  // Like and social rows attract each other and repel dislike rows. Anchors
  // missing either side are weighted out; their log arguments are shifted to
  // constants so the masked rows contribute nothing to value or gradient.
  Eigen::MatrixXd cross_pos = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd cross_all = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd w2 = Eigen::MatrixXd::Zero(m, 1);
  for (int i = 0; i < m; ++i) {
    const int vi = view_of(i);
    if (vi == 1) continue;
    const int partner = vi == 0 ? 2 : 0;
    for (int j = 0; j < m; ++j) {
      if (view_of(j) == partner) {
        cross_pos(i, j) = 1.0;
        cross_all(i, j) = 1.0;
      } else if (view_of(j) == 1) {
        cross_all(i, j) = 1.0;
      }
    }
    if (counts[static_cast<std::size_t>(partner)] > 0 && counts[1] > 0)
      w2(i, 0) = 1.0;
  }
  Eigen::MatrixXd off_pos = Eigen::MatrixXd::Ones(m, 1) - w2;
  Eigen::MatrixXd off_all = 2.0 * off_pos;
  TensorRef pos2 =
      tape.add(tape.rowsum(tape.cmul(sims, tape.constant(cross_pos))),
               tape.constant(off_pos));
  TensorRef den2 =
      tape.add(tape.rowsum(tape.cmul(sims, tape.constant(cross_all))),
               tape.constant(off_all));
  TensorRef gaps2 = tape.sub(tape.log_elem(den2), tape.log_elem(pos2));
  out.term2 = tape.sum_all(tape.cmul(tape.constant(w2), gaps2));

  out.total = tape.add(out.term1, out.term2);
  return out;
}

ContrastiveValue Encoder::contrastive_loss(const HyperedgeEmbeddings& h,
                                           double tau) const {
  Tape tape;
  TensorRef all = tape.constant(h.all);
  const std::array<int, 3> counts = {static_cast<int>(h.like.rows()),
                                     static_cast<int>(h.dislike.rows()),
                                     static_cast<int>(h.social.rows())};
  ContrastiveParts parts = contrastive_loss(tape, all, counts, tau);
  ContrastiveValue value;
  value.term1 = tape.value(parts.term1)(0, 0);
  value.term2 = tape.value(parts.term2)(0, 0);
  value.total = tape.value(parts.total)(0, 0);
  return value;
}

}  // namespace convrec

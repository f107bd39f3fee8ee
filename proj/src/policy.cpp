#include "convrec/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "convrec/checkpoint.hpp"
#include "convrec/error.hpp"
#include "json.hpp"

namespace convrec {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Descending score, ascending id on ties; truncated to keep.
std::vector<std::pair<Id, double>> top_scored(
    std::vector<std::pair<Id, double>> scored, int keep) {
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) {
              if (a.second != b.second) return a.second > b.second;
              return a.first < b.first;
            });
  if (static_cast<int>(scored.size()) > keep)
    scored.resize(static_cast<std::size_t>(keep));
  return scored;
}

std::vector<ActionUnit> flat_units(const ScoredActionSpace& space) {
  std::vector<ActionUnit> units;
  units.reserve(static_cast<std::size_t>(space.size()));
  for (const auto& [id, w] : space.items) units.push_back({true, id});
  for (const auto& [id, w] : space.attrs) units.push_back({false, id});
  return units;
}

int argmax_first(const std::vector<double>& q) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(q.size()); ++i)
    if (q[static_cast<std::size_t>(i)] > q[static_cast<std::size_t>(best)])
      best = i;
  return best;
}

/// Indices 0..n-1 ordered by q descending, original order on ties.
std::vector<int> order_by_q(const std::vector<double>& q, int lo, int n) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), lo);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(b)];
  });
  return idx;
}

nlohmann::json state_to_json(const EpisodeState& s) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : s.events) {
    events.push_back({{"turn", e.turn},
                      {"kind", static_cast<int>(e.kind)},
                      {"payload", e.payload}});
  }
  return {{"user", s.user},
          {"targets", s.targets},
          {"p0", s.p0},
          {"p_acc", s.p_acc},
          {"p_rej", s.p_rej},
          {"v_rej", s.v_rej},
          {"v_p0", s.v_p0},
          {"v_cand", s.v_cand},
          {"p_cand", s.p_cand},
          {"f_filtered", s.f_filtered},
          {"turn", s.turn},
          {"done", s.done},
          {"success", s.success},
          {"events", events},
          {"p_acc_order", s.p_acc_order},
          {"p_rej_order", s.p_rej_order},
          {"f_order", s.f_order}};
}

EpisodeState state_from_json(const nlohmann::json& j) {
  EpisodeState s;
  s.user = j.at("user").get<Id>();
  s.targets = j.at("targets").get<std::vector<Id>>();
  s.p0 = j.at("p0").get<Id>();
  s.p_acc = j.at("p_acc").get<std::set<Id>>();
  s.p_rej = j.at("p_rej").get<std::set<Id>>();
  s.v_rej = j.at("v_rej").get<std::set<Id>>();
  s.v_p0 = j.at("v_p0").get<std::set<Id>>();
  s.v_cand = j.at("v_cand").get<std::set<Id>>();
  s.p_cand = j.at("p_cand").get<std::set<Id>>();
  s.f_filtered = j.at("f_filtered").get<std::set<Id>>();
  s.turn = j.at("turn").get<int>();
  s.done = j.at("done").get<bool>();
  s.success = j.at("success").get<bool>();
  for (const auto& e : j.at("events")) {
    EpisodeEvent ev;
    ev.turn = e.at("turn").get<int>();
    ev.kind = static_cast<EventKind>(e.at("kind").get<int>());
    ev.payload = e.at("payload").get<std::vector<Id>>();
    s.events.push_back(std::move(ev));
  }
  s.p_acc_order = j.at("p_acc_order").get<std::vector<Id>>();
  s.p_rej_order = j.at("p_rej_order").get<std::vector<Id>>();
  s.f_order = j.at("f_order").get<std::vector<Id>>();
  return s;
}

nlohmann::json space_to_json(const ScoredActionSpace& sp) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& [id, w] : sp.items) items.push_back({id, w});
  nlohmann::json attrs = nlohmann::json::array();
  for (const auto& [id, w] : sp.attrs) attrs.push_back({id, w});
  return {{"items", items}, {"attrs", attrs}};
}

ScoredActionSpace space_from_json(const nlohmann::json& j) {
  ScoredActionSpace sp;
  for (const auto& e : j.at("items"))
    sp.items.emplace_back(e.at(0).get<Id>(), e.at(1).get<double>());
  for (const auto& e : j.at("attrs"))
    sp.attrs.emplace_back(e.at(0).get<Id>(), e.at(1).get<double>());
  return sp;
}

}  // namespace

ActionUnit ScoredActionSpace::unit(int index) const {
  if (index < 0 || index >= size())
    throw ContractError("action space: flat index out of range");
  if (index < static_cast<int>(items.size()))
    return {true, items[static_cast<std::size_t>(index)].first};
  return {false,
          attrs[static_cast<std::size_t>(index) - items.size()].first};
}

std::string replay_to_json(const ReplayEntry& entry) {
  nlohmann::json j = {
      {"state", state_to_json(entry.state)},
      {"space", space_to_json(entry.space)},
      {"action", {{"is_item", entry.action.is_item}, {"id", entry.action.id}}},
      {"reward", entry.reward},
      {"next_state", state_to_json(entry.next_state)},
      {"next_space", space_to_json(entry.next_space)},
      {"terminal", entry.terminal}};
  return j.dump();
}

ReplayEntry replay_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("replay entry: ") + e.what());
  }
  try {
    ReplayEntry entry;
    entry.state = state_from_json(j.at("state"));
    entry.space = space_from_json(j.at("space"));
    entry.action.is_item = j.at("action").at("is_item").get<bool>();
    entry.action.id = j.at("action").at("id").get<Id>();
    entry.reward = j.at("reward").get<double>();
    entry.next_state = state_from_json(j.at("next_state"));
    entry.next_space = space_from_json(j.at("next_space"));
    entry.terminal = j.at("terminal").get<bool>();
    return entry;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("replay entry: ") + e.what());
  }
}

std::string state_json(const EpisodeState& state) {
  return state_to_json(state).dump();
}

EpisodeState state_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("episode state: ") + e.what());
  }
  try {
    return state_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("episode state: ") + e.what());
  }
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ContractError("replay buffer capacity must be positive");
}

void ReplayBuffer::push(ReplayEntry entry) {
  if (entries_.size() < capacity_) {
    entries_.push_back(std::move(entry));
  } else {
    entries_[next_] = std::move(entry);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<const ReplayEntry*> ReplayBuffer::sample(int batch,
                                                     Rng& rng) const {
  if (batch <= 0) throw ContractError("batch size must be positive");
  if (entries_.empty()) throw ContractError("cannot sample an empty buffer");
  std::vector<const ReplayEntry*> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i)
    out.push_back(&entries_[static_cast<std::size_t>(rng.below(entries_.size()))]);
  return out;
}

void PolicyConfig::validate() const {
  if (k_v <= 0 || k_p <= 0) throw ConfigError("policy: k_v and k_p must be positive");
  if (hidden <= 0) throw ConfigError("policy: hidden width must be positive");
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("policy: gamma must lie in [0,1]");
  if (lr <= 0.0) throw ConfigError("policy: learning rate must be positive");
  if (batch_size <= 0) throw ConfigError("policy: batch size must be positive");
  if (buffer_capacity <= 0) throw ConfigError("policy: buffer capacity must be positive");
  if (target_sync <= 0) throw ConfigError("policy: target sync interval must be positive");
  if (eps_start < 0.0 || eps_start > 1.0 || eps_end < 0.0 || eps_end > 1.0)
    throw ConfigError("policy: epsilon bounds must lie in [0,1]");
  if (eps_decay_steps < 0) throw ConfigError("policy: epsilon decay steps must be non-negative");
  if (ssl_per_dqn < 0) throw ConfigError("policy: contrastive ratio must be non-negative");
  if (grad_clip < 0.0) throw ConfigError("policy: gradient clip must be non-negative");
}

namespace {
PolicyConfig validated(PolicyConfig c) {
  c.validate();
  return c;
}
}  // namespace

PolicyAgent::PolicyAgent(const Env& env, EncoderConfig encoder_config,
                         PolicyConfig config, const EmbeddingTable& pretrained,
                         std::uint64_t seed)
    : env_(&env),
      encoder_(encoder_config),
      config_(validated(config)),
      index_(env.catalog(), env.social()),
      dqn_opt_(Adam::Config{config_.lr, 0.9, 0.999, 1e-8, config_.grad_clip}),
      ssl_opt_(Adam::Config{config_.lr, 0.9, 0.999, 1e-8, config_.grad_clip}),
      buffer_(static_cast<std::size_t>(config_.buffer_capacity)) {
  if (pretrained.num_nodes() != index_.size())
    throw ContractError("policy: embedding rows must cover the node index");
  if (pretrained.d() != encoder_.config().d)
    throw ContractError("policy: embedding width must match the encoder");

  Rng rng(seed);
  online_.create("embed/nodes", index_.size(), encoder_.config().d) =
      pretrained.node_vecs;
  encoder_.init_params(online_, rng);
  const int d = encoder_.config().d;
  const int h = config_.hidden;
  online_.create("dqn/v/w1", d, h) = glorot_uniform(d, h, rng);
  online_.create("dqn/v/b1", 1, h).setZero();
  online_.create("dqn/v/w2", h, 1) = glorot_uniform(h, 1, rng);
  online_.create("dqn/v/b2", 1, 1).setZero();
  online_.create("dqn/a/w1", 2 * d, h) = glorot_uniform(2 * d, h, rng);
  online_.create("dqn/a/b1", 1, h).setZero();
  online_.create("dqn/a/w2", h, 1) = glorot_uniform(h, 1, rng);
  online_.create("dqn/a/b2", 1, 1).setZero();
  sync_target();
}

MultiViewHypergraph PolicyAgent::graph_for(const EpisodeState& state) const {
  if (!config_.use_social_view) {
    EpisodeState stripped = state;
    stripped.f_filtered.clear();
    return build_hypergraph(stripped, env_->catalog(), env_->social());
  }
  return build_hypergraph(state, env_->catalog(), env_->social());
}

std::vector<int> PolicyAgent::global_rows(
    const MultiViewHypergraph& graph) const {
  std::vector<int> rows;
  rows.reserve(static_cast<std::size_t>(graph.num_nodes()));
  for (const NodeRef& n : graph.nodes()) {
    switch (n.kind) {
      case NodeRef::Kind::user:
        rows.push_back(index_.user_row(n.id));
        break;
      case NodeRef::Kind::item:
        rows.push_back(index_.item_row(n.id));
        break;
      case NodeRef::Kind::attr:
        rows.push_back(index_.attr_row(n.id));
        break;
    }
  }
  return rows;
}

ScoredActionSpace score_candidates(const EpisodeState& state,
                                   const SocialGraph& social,
                                   const NodeIndex& index,
                                   const Eigen::MatrixXd& embeddings,
                                   int k_v, int k_p, bool with_social) {
  const Eigen::MatrixXd& e = embeddings;
  Eigen::VectorXd base = e.row(index.user_row(state.user));
  for (Id p : state.p_acc) base += e.row(index.attr_row(p));
  for (Id p : state.p_rej) base -= e.row(index.attr_row(p));
  if (with_social) {
    for (Id f : state.f_filtered) {
      for (Id v : social.accepted_of(f)) {
        if (state.v_cand.count(v)) base += e.row(index.item_row(v));
      }
    }
  }

  ScoredActionSpace space;
  std::vector<std::pair<Id, double>> items;
  for (Id v : state.v_cand)
    items.emplace_back(v, sigmoid(e.row(index.item_row(v)).dot(base)));
  space.items = top_scored(std::move(items), k_v);

  std::vector<std::pair<Id, double>> attrs;
  for (Id p : state.p_cand)
    attrs.emplace_back(p, sigmoid(e.row(index.attr_row(p)).dot(base)));
  space.attrs = top_scored(std::move(attrs), k_p);
  return space;
}

std::string train_log_csv(const std::vector<TrainEpisodeLog>& episodes) {
  std::string out = "episode,turns,success,return,L_DQN,L_SSL\n";
  char line[256];
  for (const TrainEpisodeLog& e : episodes) {
    std::snprintf(line, sizeof(line), "%d,%d,%d,%.17g,%.17g,%.17g\n",
                  e.episode, e.turns, e.success ? 1 : 0, e.ret, e.dqn_loss,
                  e.ssl_loss);
    out += line;
  }
  return out;
}

ScoredActionSpace PolicyAgent::score_actions(const EpisodeState& state) const {
  return score_candidates(state, env_->social(), index_,
                          online_.at("embed/nodes"), config_.k_v, config_.k_p,
                          config_.use_social_view);
}

TensorRef PolicyAgent::q_column(TapeBindings& bindings,
                                const EpisodeState& state,
                                const std::vector<ActionUnit>& units) const {
  if (units.empty()) throw ContractError("q_column: empty action list");
  Tape& tape = bindings.tape();
  const MultiViewHypergraph graph = graph_for(state);
  const TensorRef table = bindings.get("embed/nodes");
  const TensorRef e_nodes = tape.gather_rows(table, global_rows(graph));
  const EncoderForward fwd = encoder_.forward(graph, e_nodes, bindings);

  TensorRef refined = fwd.gammas[0];
  for (std::size_t l = 1; l < fwd.gammas.size(); ++l)
    refined = tape.add(refined, fwd.gammas[l]);

  std::vector<TensorRef> act_rows;
  act_rows.reserve(units.size());
  for (const ActionUnit& u : units) {
    const NodeRef node{u.is_item ? NodeRef::Kind::item : NodeRef::Kind::attr,
                       u.id};
    if (graph.has_node(node)) {
      act_rows.push_back(tape.slice_rows(refined, graph.node_row(node), 1));
    } else {
      const int row =
          u.is_item ? index_.item_row(u.id) : index_.attr_row(u.id);
      act_rows.push_back(tape.gather_rows(table, {row}));
    }
  }
  const TensorRef e_act =
      act_rows.size() == 1 ? act_rows[0] : tape.vcat(act_rows);
  const TensorRef q_rep = tape.gather_rows(
      fwd.q, std::vector<int>(units.size(), 0));
  const TensorRef joint = tape.hcat({q_rep, e_act});

  const auto mlp = [&](TensorRef x, const std::string& prefix) {
    const TensorRef hidden = tape.relu(tape.add_rowvec(
        tape.mm(x, bindings.get(prefix + "/w1")), bindings.get(prefix + "/b1")));
    return tape.add_rowvec(tape.mm(hidden, bindings.get(prefix + "/w2")),
                           bindings.get(prefix + "/b2"));
  };
  const TensorRef advantage = mlp(joint, "dqn/a");
  const TensorRef value = mlp(fwd.q, "dqn/v");
  const TensorRef centered =
      tape.sub_bcast(advantage, tape.mean_all(advantage));
  return tape.sub_bcast(centered, tape.scale(value, -1.0));
}

std::vector<double> PolicyAgent::q_values_with(
    const ParamStore& store, const EpisodeState& state,
    const ScoredActionSpace& space) const {
  if (space.empty()) throw ContractError("q_values: empty action space");
  Tape tape;
  TapeBindings bindings(tape, store);
  const TensorRef q = q_column(bindings, state, flat_units(space));
  const Eigen::MatrixXd& col = tape.value(q);
  std::vector<double> out(static_cast<std::size_t>(col.rows()));
  for (Eigen::Index i = 0; i < col.rows(); ++i)
    out[static_cast<std::size_t>(i)] = col(i, 0);
  return out;
}

std::vector<double> PolicyAgent::q_values(
    const EpisodeState& state, const ScoredActionSpace& space) const {
  return q_values_with(online_, state, space);
}

PolicyAgent::Selected PolicyAgent::select_action(
    const EpisodeState&, const ScoredActionSpace& space,
    const std::vector<double>& q, double eps, Rng& rng) const {
  if (space.empty()) throw ContractError("select_action: empty action space");
  if (static_cast<int>(q.size()) != space.size())
    throw ContractError("select_action: q list misaligned with space");

  int chosen;
  if (rng.unit() < eps) {
    chosen = static_cast<int>(rng.below(static_cast<std::uint64_t>(space.size())));
  } else {
    chosen = argmax_first(q);
  }

  Selected sel;
  sel.index = chosen;
  sel.unit = space.unit(chosen);
  const int num_items = static_cast<int>(space.items.size());
  if (sel.unit.is_item) {
    const auto order = order_by_q(q, 0, num_items);
    std::vector<Id> recs;
    const int k = std::min<int>(env_->config().top_k, num_items);
    for (int i = 0; i < k; ++i)
      recs.push_back(
          space.items[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]
              .first);
    sel.action = AgentAction::recommend(std::move(recs));
  } else {
    const Id type = env_->catalog().type_of(sel.unit.id);
    std::vector<int> same_type;
    for (int i = 0; i < static_cast<int>(space.attrs.size()); ++i) {
      const Id attr = space.attrs[static_cast<std::size_t>(i)].first;
      if (env_->catalog().type_of(attr) == type)
        same_type.push_back(num_items + i);
    }
    std::stable_sort(same_type.begin(), same_type.end(), [&](int a, int b) {
      return q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(b)];
    });
    std::vector<Id> asks;
    const int k = std::min<int>(env_->config().ask_k,
                                static_cast<int>(same_type.size()));
    for (int i = 0; i < k; ++i) {
      const int flat = same_type[static_cast<std::size_t>(i)];
      asks.push_back(
          space.attrs[static_cast<std::size_t>(flat - num_items)].first);
    }
    sel.action = AgentAction::ask(std::move(asks));
  }
  return sel;
}

std::vector<double> PolicyAgent::dqn_target(
    const std::vector<const ReplayEntry*>& batch) const {
  if (batch.empty()) throw ContractError("dqn_target: empty batch");
  std::vector<double> targets;
  targets.reserve(batch.size());
  for (const ReplayEntry* e : batch) {
    if (e->terminal) {
      targets.push_back(e->reward);
      continue;
    }
    if (e->next_space.empty())
      throw ContractError("dqn_target: non-terminal entry with empty next space");
    const auto online_q = q_values_with(online_, e->next_state, e->next_space);
    const int best = argmax_first(online_q);
    const auto target_q = q_values_with(target_, e->next_state, e->next_space);
    targets.push_back(e->reward +
                      config_.gamma * target_q[static_cast<std::size_t>(best)]);
  }
  return targets;
}

std::pair<double, std::map<std::string, Eigen::MatrixXd>>
PolicyAgent::dqn_gradients(const std::vector<const ReplayEntry*>& batch,
                           const std::vector<double>& targets) const {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  if (batch.size() != targets.size())
    throw ContractError("train_step: targets misaligned with batch");

  Tape tape;
  TapeBindings bindings(tape, online_);
  std::vector<TensorRef> predictions;
  predictions.reserve(batch.size());
  for (const ReplayEntry* e : batch) {
    const auto units = flat_units(e->space);
    const auto it = std::find(units.begin(), units.end(), e->action);
    if (it == units.end())
      throw ContractError("train_step: stored action missing from its space");
    const int idx = static_cast<int>(it - units.begin());
    const TensorRef q = q_column(bindings, e->state, units);
    predictions.push_back(tape.slice_rows(q, idx, 1));
  }
  const TensorRef pred =
      predictions.size() == 1 ? predictions[0] : tape.vcat(predictions);
  Eigen::MatrixXd y(static_cast<Eigen::Index>(targets.size()), 1);
  for (std::size_t i = 0; i < targets.size(); ++i)
    y(static_cast<Eigen::Index>(i), 0) = targets[i];
  const TensorRef loss =
      tape.mean_all(tape.square(tape.sub(pred, tape.constant(y))));
  const double loss_value = tape.value(loss)(0, 0);

  tape.backward(loss);
  std::map<std::string, Eigen::MatrixXd> grads;
  for (const auto& [name, ref] : bindings.order()) grads[name] = tape.grad(ref);
  return {loss_value, std::move(grads)};
}

double PolicyAgent::train_step(const std::vector<const ReplayEntry*>& batch,
                               const std::vector<double>& targets) {
  auto [loss, grads] = dqn_gradients(batch, targets);
  dqn_opt_.step(online_, grads);
  ++dqn_steps_;
  if (dqn_steps_ % config_.target_sync == 0) sync_target();
  return loss;
}

double PolicyAgent::ssl_step(const std::vector<const ReplayEntry*>& batch) {
  if (batch.empty()) throw ContractError("ssl_step: empty batch");
  Tape tape;
  TapeBindings bindings(tape, online_);
  const TensorRef table = bindings.get("embed/nodes");
  std::vector<TensorRef> losses;
  for (const ReplayEntry* e : batch) {
    const MultiViewHypergraph graph = graph_for(e->state);
    if (graph.num_hyperedges() == 0) continue;
    const TensorRef e_nodes = tape.gather_rows(table, global_rows(graph));
    const TensorRef h0 =
        tape.mm_tn(tape.constant(graph.dense_incidence()), e_nodes);
    const std::array<int, 3> counts = {graph.view_count(View::like),
                                       graph.view_count(View::dislike),
                                       graph.view_count(View::social)};
    losses.push_back(
        encoder_.contrastive_loss(tape, h0, counts, encoder_.config().tau)
            .total);
  }
  if (losses.empty()) return 0.0;
  TensorRef total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i)
    total = tape.add(total, losses[i]);
  const TensorRef loss =
      tape.scale(total, 1.0 / static_cast<double>(losses.size()));
  const double loss_value = tape.value(loss)(0, 0);

  tape.backward(loss);
  std::map<std::string, Eigen::MatrixXd> grads;
  for (const auto& [name, ref] : bindings.order()) grads[name] = tape.grad(ref);
  ssl_opt_.step(online_, grads);
  ++ssl_steps_;
  return loss_value;
}

void PolicyAgent::sync_target() { target_.all() = online_.all(); }

double PolicyAgent::epsilon(int env_step) const {
  if (config_.eps_decay_steps <= 0) return config_.eps_end;
  const double frac = std::min(
      1.0, static_cast<double>(env_step) /
               static_cast<double>(config_.eps_decay_steps));
  return config_.eps_start + (config_.eps_end - config_.eps_start) * frac;
}

TrainResult PolicyAgent::train_loop(
    const std::map<Id, std::vector<Id>>& pools, int episodes, Rng& rng,
    const std::function<void(const TrainEpisodeLog&)>& per_episode) {
  if (episodes < 0) throw ContractError("train_loop: negative episode count");
  std::vector<Id> users(env_->social().users.begin(),
                        env_->social().users.end());
  if (users.empty()) throw ContractError("train_loop: no users in the world");

  TrainResult result;
  for (int ep = 1; ep <= episodes; ++ep) {
    const Id user = users[static_cast<std::size_t>(rng.below(users.size()))];
    const auto pool_it = pools.find(user);
    EpisodeState state =
        (pool_it != pools.end() && !pool_it->second.empty())
            ? env_->sample_episode(user, rng, pool_it->second)
            : env_->sample_episode(user, rng);

    TrainEpisodeLog log;
    log.episode = ep;
    double dqn_sum = 0.0, ssl_sum = 0.0;
    int dqn_n = 0, ssl_n = 0;
    while (!state.done) {
      const ScoredActionSpace space = score_actions(state);
      const std::vector<double> q = q_values(state, space);
      const Selected sel =
          select_action(state, space, q, epsilon(env_steps_), rng);
      const StepOutcome outcome = env_->simulate_user(state, sel.action);
      EpisodeState next = env_->apply_transition(state, sel.action, outcome);
      double reward = outcome.reward;
      if (next.done && !outcome.done) reward += env_->config().r_quit;
      log.ret += reward;
      ++log.turns;

      ReplayEntry entry;
      entry.state = state;
      entry.space = space;
      entry.action = sel.unit;
      entry.reward = reward;
      entry.next_state = next;
      if (!next.done) entry.next_space = score_actions(next);
      entry.terminal = next.done;
      buffer_.push(std::move(entry));
      ++env_steps_;
      ++result.env_steps;

      if (static_cast<int>(buffer_.size()) >= config_.batch_size) {
        const auto batch = buffer_.sample(config_.batch_size, rng);
        const auto targets = dqn_target(batch);
        dqn_sum += train_step(batch, targets);
        ++dqn_n;
        ++result.dqn_steps;
        for (int k = 0; k < config_.ssl_per_dqn; ++k) {
          ssl_sum += ssl_step(batch);
          ++ssl_n;
          ++result.ssl_steps;
        }
      }
      state = std::move(next);
    }
    log.success = state.success;
    log.dqn_loss = dqn_n > 0 ? dqn_sum / dqn_n : 0.0;
    log.ssl_loss = ssl_n > 0 ? ssl_sum / ssl_n : 0.0;
    if (per_episode) per_episode(log);
    result.episodes.push_back(log);
  }
  return result;
}

void PolicyAgent::save(
    const std::string& path,
    const std::map<std::string, std::string>& extra_meta) const {
  ParamBundle bundle;
  bundle.tensors = online_.all();
  for (const auto& [name, tensor] : target_.all())
    bundle.tensors["target/" + name] = tensor;
  const auto dump_opt = [&](const Adam& opt, const std::string& prefix) {
    for (const auto& [name, slot] : opt.slots()) {
      bundle.tensors[prefix + "/m/" + name] = slot.first;
      bundle.tensors[prefix + "/v/" + name] = slot.second;
    }
  };
  dump_opt(dqn_opt_, "opt_dqn");
  dump_opt(ssl_opt_, "opt_ssl");
  bundle.meta = extra_meta;
  bundle.meta["kind"] = "policy";
  bundle.meta["dqn_steps"] = std::to_string(dqn_steps_);
  bundle.meta["ssl_steps"] = std::to_string(ssl_steps_);
  bundle.meta["env_steps"] = std::to_string(env_steps_);
  bundle.meta["adam_dqn_t"] = std::to_string(dqn_opt_.steps_taken());
  bundle.meta["adam_ssl_t"] = std::to_string(ssl_opt_.steps_taken());
  save_bundle(path, bundle);
}

std::map<std::string, std::string> PolicyAgent::restore(
    const std::string& path) {
  const ParamBundle bundle = load_bundle(path);
  std::map<std::string, Eigen::MatrixXd> plain, target;
  std::map<std::string, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> dqn_slots,
      ssl_slots;
  for (const auto& [name, tensor] : bundle.tensors) {
    if (name.rfind("target/", 0) == 0) {
      target[name.substr(7)] = tensor;
    } else if (name.rfind("opt_dqn/m/", 0) == 0) {
      dqn_slots[name.substr(10)].first = tensor;
    } else if (name.rfind("opt_dqn/v/", 0) == 0) {
      dqn_slots[name.substr(10)].second = tensor;
    } else if (name.rfind("opt_ssl/m/", 0) == 0) {
      ssl_slots[name.substr(10)].first = tensor;
    } else if (name.rfind("opt_ssl/v/", 0) == 0) {
      ssl_slots[name.substr(10)].second = tensor;
    } else {
      plain[name] = tensor;
    }
  }
  for (const auto& [name, tensor] : online_.all()) {
    const auto it = plain.find(name);
    if (it == plain.end())
      throw ValidationError("checkpoint is missing tensor: " + name);
    if (it->second.rows() != tensor.rows() || it->second.cols() != tensor.cols())
      throw ValidationError("checkpoint tensor has wrong shape: " + name);
  }
  online_.all() = std::move(plain);
  target_.all() = std::move(target);
  dqn_opt_.slots() = std::move(dqn_slots);
  ssl_opt_.slots() = std::move(ssl_slots);
  const auto meta_int = [&](const std::string& key) {
    const auto it = bundle.meta.find(key);
    if (it == bundle.meta.end())
      throw ValidationError("checkpoint is missing meta key: " + key);
    return std::stoi(it->second);
  };
  dqn_steps_ = meta_int("dqn_steps");
  ssl_steps_ = meta_int("ssl_steps");
  env_steps_ = meta_int("env_steps");
  dqn_opt_.set_steps(meta_int("adam_dqn_t"));
  ssl_opt_.set_steps(meta_int("adam_ssl_t"));
  return bundle.meta;
}

}  // namespace convrec

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "convrec/encoder.hpp"
#include "convrec/env.hpp"
#include "convrec/kg_embed.hpp"
#include "convrec/world.hpp"

namespace convrec {

/// One selectable action: a candidate item or a candidate attribute.
struct ActionUnit {
  bool is_item = true;
  Id id = -1;

  auto operator<=>(const ActionUnit&) const = default;
};

/// Pruned action space: top-scored candidate items and attributes, each list
/// descending by score with ascending-id tie-break.
struct ScoredActionSpace {
  std::vector<std::pair<Id, double>> items;
  std::vector<std::pair<Id, double>> attrs;

  bool empty() const { return items.empty() && attrs.empty(); }
  int size() const { return static_cast<int>(items.size() + attrs.size()); }
  /// Unit at a flat index, items first.
  ActionUnit unit(int index) const;

  bool operator==(const ScoredActionSpace&) const = default;
};

/// One stored transition. The collection-time action space accompanies the
/// state so the dueling normalization replays over the same action set.
struct ReplayEntry {
  EpisodeState state;
  ScoredActionSpace space;
  ActionUnit action;
  double reward = 0.0;
  EpisodeState next_state;
  ScoredActionSpace next_space;
  bool terminal = false;
};

/// Lossless text round-trip for replay entries.
std::string replay_to_json(const ReplayEntry& entry);
ReplayEntry replay_from_json(const std::string& text);

/// Lossless text round-trip for a single episode state.
std::string state_json(const EpisodeState& state);
EpisodeState state_from_json_text(const std::string& text);

/// Fixed-capacity ring buffer with uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(ReplayEntry entry);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  const ReplayEntry& at(std::size_t i) const { return entries_.at(i); }

  /// Uniform sample with replacement.
  std::vector<const ReplayEntry*> sample(int batch, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<ReplayEntry> entries_;
};

struct PolicyConfig {
  int k_v = 10;  // scored items kept
  int k_p = 10;  // scored attributes kept
  int hidden = 64;
  double gamma = 0.999;
  double lr = 1e-4;
  int batch_size = 128;
  int buffer_capacity = 50000;
  int target_sync = 20;  // online-to-target copy interval, in DQN steps
  double eps_start = 1.0;
  double eps_end = 0.1;
  int eps_decay_steps = 2000;
  /// Contrastive steps per DQN step; 0 disables the contrastive objective.
  int ssl_per_dqn = 1;
  /// Global-norm gradient clip; 0 disables.
  double grad_clip = 0.0;
  /// When false, friend information is dropped everywhere: the social view
  /// is left out of the graph and the friend term out of action scoring.
  bool use_social_view = true;

  bool operator==(const PolicyConfig&) const = default;

  void validate() const;
};

struct TrainEpisodeLog {
  int episode = 0;
  int turns = 0;
  bool success = false;
  double ret = 0.0;      // undiscounted reward sum
  double dqn_loss = 0.0; // mean over the episode's DQN steps, 0 if none
  double ssl_loss = 0.0; // mean over the episode's contrastive steps
};

struct TrainResult {
  std::vector<TrainEpisodeLog> episodes;
  int env_steps = 0;
  int dqn_steps = 0;
  int ssl_steps = 0;
};

/// Multi-view preference scores over the candidate sets: each candidate is
/// scored against the user plus accepted attributes, minus rejected ones,
/// plus the filtered friends' still-candidate accepted items; the top k_v
/// items and k_p attributes are kept. Shared by the agent and the greedy
/// baseline.
ScoredActionSpace score_candidates(const EpisodeState& state,
                                   const SocialGraph& social,
                                   const NodeIndex& index,
                                   const Eigen::MatrixXd& embeddings,
                                   int k_v, int k_p, bool with_social);

/// Episode rows as CSV: episode, turns, success, return, L_DQN, L_SSL.
std::string train_log_csv(const std::vector<TrainEpisodeLog>& episodes);

/// Dueling double-DQN agent over the hypergraph encoder: multi-view action
/// scoring prunes the space, value and advantage heads score it, and
/// training alternates temporal-difference and contrastive updates.
class PolicyAgent {
 public:
  PolicyAgent(const Env& env, EncoderConfig encoder_config,
              PolicyConfig config, const EmbeddingTable& pretrained,
              std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  const Encoder& encoder() const { return encoder_; }
  const NodeIndex& index() const { return index_; }
  ParamStore& params() { return online_; }
  const ParamStore& params() const { return online_; }
  const ParamStore& target() const { return target_; }
  ReplayBuffer& buffer() { return buffer_; }
  int dqn_steps() const { return dqn_steps_; }
  int env_steps() const { return env_steps_; }

  /// Multi-view scores over the candidate sets, top-k_v/k_p kept. Both
  /// lists empty signals a dead state.
  ScoredActionSpace score_actions(const EpisodeState& state) const;

  /// Q-values aligned with the space's flat units, online parameters.
  std::vector<double> q_values(const EpisodeState& state,
                               const ScoredActionSpace& space) const;
  /// Same, but against an explicit parameter set (the target copy).
  std::vector<double> q_values_with(const ParamStore& store,
                                    const EpisodeState& state,
                                    const ScoredActionSpace& space) const;

  struct Selected {
    ActionUnit unit;
    AgentAction action;
    int index = -1;  // flat index into the space
  };
  /// Epsilon-greedy pick over the flat space, expanded to a full ask or
  /// recommend action.
  Selected select_action(const EpisodeState& state,
                         const ScoredActionSpace& space,
                         const std::vector<double>& q, double eps,
                         Rng& rng) const;

  /// Double-DQN targets: online argmax over the stored next space,
  /// evaluated by the target copy.
  std::vector<double> dqn_target(
      const std::vector<const ReplayEntry*>& batch) const;

  /// Temporal-difference loss and its gradients over every trainable
  /// tensor (heads, encoder, embeddings), without updating anything.
  std::pair<double, std::map<std::string, Eigen::MatrixXd>> dqn_gradients(
      const std::vector<const ReplayEntry*>& batch,
      const std::vector<double>& targets) const;

  /// One temporal-difference step over the batch; returns the loss.
  double train_step(const std::vector<const ReplayEntry*>& batch,
                    const std::vector<double>& targets);

  /// One contrastive step over the batch states' hypergraphs; returns the
  /// batch-mean loss.
  double ssl_step(const std::vector<const ReplayEntry*>& batch);

  void sync_target();
  double epsilon(int env_step) const;

  /// Episode-level exploration-and-training driver. Episode targets come
  /// from each user's pool (falling back to the whole catalog when absent);
  /// per_episode, when set, observes each completed episode's log row.
  TrainResult train_loop(
      const std::map<Id, std::vector<Id>>& pools, int episodes, Rng& rng,
      const std::function<void(const TrainEpisodeLog&)>& per_episode = {});

  /// Writes embeddings, encoder and head parameters, the target copy, both
  /// optimizer states, and counters; extra_meta rides along.
  void save(const std::string& path,
            const std::map<std::string, std::string>& extra_meta = {}) const;
  /// Restores everything save() wrote; returns the stored metadata.
  std::map<std::string, std::string> restore(const std::string& path);

  /// The state's hypergraph, honoring the social-view switch.
  MultiViewHypergraph graph_for(const EpisodeState& state) const;

 private:
  TensorRef q_column(TapeBindings& bindings, const EpisodeState& state,
                     const std::vector<ActionUnit>& units) const;
  std::vector<int> global_rows(const MultiViewHypergraph& graph) const;

  const Env* env_;
  Encoder encoder_;
  PolicyConfig config_;
  NodeIndex index_;
  ParamStore online_;
  ParamStore target_;
  Adam dqn_opt_;
  Adam ssl_opt_;
  ReplayBuffer buffer_;
  int dqn_steps_ = 0;
  int ssl_steps_ = 0;
  int env_steps_ = 0;
};

}  // namespace convrec

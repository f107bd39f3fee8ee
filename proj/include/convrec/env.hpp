#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "convrec/rng.hpp"
#include "convrec/world.hpp"

namespace convrec {

/// Conversation loop parameters and reward constants.
struct EnvConfig {
  int max_turns = 15;  // T
  int top_k = 10;      // recommendation list size K
  int ask_k = 2;       // attributes per ask K_a
  int num_targets = 2;
  double r_rec_suc = 1.0;
  double r_rec_fail = -0.1;
  double r_ask_suc = 0.01;
  double r_ask_fail = -0.1;
  double r_quit = -0.3;

  bool operator==(const EnvConfig&) const = default;

  void validate() const;
};

enum class EventKind { accept_attr, reject_attr, reject_items };

struct EpisodeEvent {
  int turn = 0;
  EventKind kind = EventKind::accept_attr;
  std::vector<Id> payload;

  bool operator==(const EpisodeEvent&) const = default;
};

/// One conversation's mutable record. The *_order vectors repeat the set
/// contents in arrival order (p0 first) so downstream consumers can lay
/// hyperedges out by generation time.
struct EpisodeState {
  Id user = -1;
  std::vector<Id> targets;
  Id p0 = -1;
  std::set<Id> p_acc, p_rej, v_rej;
  std::set<Id> v_p0;
  std::set<Id> v_cand, p_cand;
  std::set<Id> f_filtered;
  int turn = 0;
  bool done = false;
  bool success = false;
  std::vector<EpisodeEvent> events;
  std::vector<Id> p_acc_order;
  std::vector<Id> p_rej_order;
  /// Friends retained at initialization, ascending; the set only shrinks.
  std::vector<Id> f_order;

  bool operator==(const EpisodeState&) const = default;
};

struct AgentAction {
  enum class Kind { ask, recommend };
  Kind kind = Kind::ask;
  std::vector<Id> attrs;  // ask payload, all of one type
  std::vector<Id> items;  // recommend payload

  static AgentAction ask(std::vector<Id> attrs);
  static AgentAction recommend(std::vector<Id> items);
};

struct StepOutcome {
  double reward = 0.0;
  std::vector<Id> accepted_attrs;
  std::vector<Id> rejected_attrs;
  std::optional<Id> accepted_item;
  bool done = false;
  bool success = false;
};

/// The conversational MDP over a fixed world: episode sampling, the
/// simulated user, candidate bookkeeping, transitions, and rewards.
class Env {
 public:
  Env(const Catalog& catalog, const SocialGraph& social, EnvConfig config);

  const Catalog& catalog() const { return *catalog_; }
  const SocialGraph& social() const { return *social_; }
  const EnvConfig& config() const { return config_; }

  /// Items carrying an attribute (inverse of the catalog mapping).
  const std::set<Id>& items_with_attr(Id attr) const;

  /// Starts an episode for a user: picks target items with overlapping
  /// attributes from the pool (default: the user's accepted items, falling
  /// back to the whole catalog), draws the seed attribute from the shared
  /// attributes, and initializes candidates and filtered friends.
  EpisodeState sample_episode(Id user, Rng& rng) const;
  EpisodeState sample_episode(Id user, Rng& rng,
                              const std::vector<Id>& pool) const;

  /// Recomputes the candidate item and attribute sets from their defining
  /// filters and stores them back into the state.
  std::pair<std::set<Id>, std::set<Id>> update_candidates(
      EpisodeState& state) const;

  /// Friends whose accepted items intersect the candidates, with the
  /// surviving items per friend. Also stored back into the state.
  std::map<Id, std::set<Id>> filter_friends(EpisodeState& state) const;

  /// Throws ContractError unless the action is well-formed for this state:
  /// ask lists are non-empty, within size, single-type, drawn from the
  /// candidate attributes; recommend lists are non-empty, within size,
  /// duplicate-free, drawn from the candidate items.
  void validate_action(const EpisodeState& state,
                       const AgentAction& action) const;

  /// Simulated user feedback. Ask splits the list into attributes the
  /// targets carry and the rest; recommend succeeds when the list hits a
  /// target. Reaching the turn cap without success ends the episode with
  /// the quit penalty folded into this step's reward.
  StepOutcome simulate_user(const EpisodeState& state,
                            const AgentAction& action) const;

  /// Applies feedback: extends the accepted/rejected records, prunes the
  /// candidates incrementally, re-filters friends, advances the turn, and
  /// appends events (accepts before rejects). An empty candidate set marks
  /// the episode done and unsuccessful.
  EpisodeState apply_transition(const EpisodeState& state,
                                const AgentAction& action,
                                const StepOutcome& outcome) const;

 private:
  const Catalog* catalog_;
  const SocialGraph* social_;
  EnvConfig config_;
  std::map<Id, std::set<Id>> items_by_attr_;
  std::vector<Id> all_items_;
  static const std::set<Id> kEmpty;
};

}  // namespace convrec

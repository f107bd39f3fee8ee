#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "convrec/env.hpp"
#include "convrec/policy.hpp"

namespace convrec {

/// One evaluated conversation.
struct EpisodeResult {
  bool success = false;
  /// 1-based turn of the successful recommendation; T+1 when the episode
  /// failed.
  int success_turn = 0;
  /// 1-based rank of the accepted item in the winning list; 0 on failure.
  int rank = 0;
  double total_reward = 0.0;
};

/// A decision rule driving one conversation turn.
using PolicyFn = std::function<AgentAction(const EpisodeState&, Rng&)>;

/// Observes each applied turn of a rollout.
using TurnObserver =
    std::function<void(const EpisodeState& before, const AgentAction& action,
                       const StepOutcome& outcome, const EpisodeState& after)>;

/// Rule baseline: always recommends the top-K candidates by multi-view
/// preference score; never asks.
PolicyFn abs_greedy_policy(const Env& env, const NodeIndex& index,
                           const Eigen::MatrixXd& embeddings);

/// Rule baseline: asks the attributes whose candidate coverage has maximal
/// binary entropy while the candidate set is larger than the list size,
/// then recommends the top-scored items.
PolicyFn max_entropy_policy(const Env& env, const NodeIndex& index,
                            const Eigen::MatrixXd& embeddings);

/// Uniformly mixes asking random same-type attributes and recommending
/// random candidates.
PolicyFn random_policy(const Env& env);

/// Greedy (no-exploration) wrapper around a trained agent.
PolicyFn agent_policy(const PolicyAgent& agent);

/// Drives one episode to completion and scores it.
EpisodeResult run_episode(const Env& env, const PolicyFn& policy,
                          EpisodeState state, Rng& rng,
                          const TurnObserver& observer = {});

/// Shared-schedule evaluation: episode i draws its user and targets from a
/// seed derived from (seed, i), so different policies face identical
/// initial conditions.
std::vector<EpisodeResult> evaluate_policy(const Env& env,
                                           const PolicyFn& policy,
                                           int episodes, std::uint64_t seed,
                                           const TurnObserver& observer = {});

/// Turn-and-rank discount of one success.
double hdcg_term(int turn, int rank);

/// Fraction of episodes succeeding by the given turn.
double metric_sr(const std::vector<EpisodeResult>& results, int turn);
/// Mean turns: the success turn, or the horizon for failures.
double metric_at(const std::vector<EpisodeResult>& results);
/// Mean discounted gain; failures contribute zero.
double metric_hdcg(const std::vector<EpisodeResult>& results, int horizon,
                   int list_size);

struct ComparisonRow {
  std::string policy;
  double sr5 = 0.0;
  double sr10 = 0.0;
  double sr15 = 0.0;
  double at = 0.0;
  double hdcg = 0.0;
  int episodes = 0;
  std::uint64_t seed = 0;

  bool operator==(const ComparisonRow&) const = default;
};

/// Evaluates every policy on the identical episode schedule.
std::vector<ComparisonRow> run_comparison(
    const Env& env,
    const std::vector<std::pair<std::string, PolicyFn>>& policies,
    int episodes, std::uint64_t seed);

/// Rows as CSV under the header policy,SR@5,SR@10,SR@15,AT,hDCG,episodes,seed.
std::string metrics_csv(const std::vector<ComparisonRow>& rows);

}  // namespace convrec

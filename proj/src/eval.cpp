#include "convrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "convrec/error.hpp"

namespace convrec {

namespace {

/// Splitmix-style spread of (seed, lane) into an independent stream seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t lane) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (lane + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<Id> top_items(const Env& env, const NodeIndex& index,
                          const Eigen::MatrixXd& embeddings,
                          const EpisodeState& state) {
  const ScoredActionSpace space =
      score_candidates(state, env.social(), index, embeddings,
                       env.config().top_k, 1, true);
  std::vector<Id> items;
  items.reserve(space.items.size());
  for (const auto& [id, w] : space.items) items.push_back(id);
  return items;
}

double binary_entropy(double rho) {
  if (rho <= 0.0 || rho >= 1.0) return 0.0;
  return -rho * std::log2(rho) - (1.0 - rho) * std::log2(1.0 - rho);
}

}  // namespace

PolicyFn abs_greedy_policy(const Env& env, const NodeIndex& index,
                           const Eigen::MatrixXd& embeddings) {
  return [&env, &index, embeddings](const EpisodeState& state, Rng&) {
    if (state.v_cand.empty())
      throw ContractError("greedy baseline: no candidate items");
    return AgentAction::recommend(top_items(env, index, embeddings, state));
  };
}

PolicyFn max_entropy_policy(const Env& env, const NodeIndex& index,
                            const Eigen::MatrixXd& embeddings) {
  return [&env, &index, embeddings](const EpisodeState& state, Rng&) {
    if (state.v_cand.empty())
      throw ContractError("entropy baseline: no candidate items");
    const bool narrow =
        static_cast<int>(state.v_cand.size()) <= env.config().top_k;
    if (narrow || state.p_cand.empty())
      return AgentAction::recommend(top_items(env, index, embeddings, state));

    std::vector<std::pair<Id, double>> scored;
    for (Id p : state.p_cand) {
      int covered = 0;
      for (Id v : state.v_cand)
        if (env.catalog().attrs_of(v).count(p)) ++covered;
      const double rho = static_cast<double>(covered) /
                         static_cast<double>(state.v_cand.size());
      scored.emplace_back(p, binary_entropy(rho));
    }
    std::sort(scored.begin(), scored.end(),
              [](const auto& a, const auto& b) {
                return a.second != b.second ? a.second > b.second
                                            : a.first < b.first;
              });
    const Id type = env.catalog().type_of(scored.front().first);
    std::vector<Id> asks;
    for (const auto& [p, h] : scored) {
      if (env.catalog().type_of(p) != type) continue;
      asks.push_back(p);
      if (static_cast<int>(asks.size()) == env.config().ask_k) break;
    }
    return AgentAction::ask(std::move(asks));
  };
}

PolicyFn random_policy(const Env& env) {
  return [&env](const EpisodeState& state, Rng& rng) {
    if (state.v_cand.empty())
      throw ContractError("random baseline: no candidate items");
    if (!state.p_cand.empty() && rng.flip(0.5)) {
      std::map<Id, std::vector<Id>> by_type;
      for (Id p : state.p_cand)
        by_type[env.catalog().type_of(p)].push_back(p);
      std::vector<Id> types;
      for (const auto& [t, pool] : by_type) types.push_back(t);
      const auto& pool = by_type[rng.pick(types)];
      const auto k = std::min<std::size_t>(
          static_cast<std::size_t>(env.config().ask_k), pool.size());
      return AgentAction::ask(rng.sample(pool, k));
    }
    std::vector<Id> pool(state.v_cand.begin(), state.v_cand.end());
    const auto k = std::min<std::size_t>(
        static_cast<std::size_t>(env.config().top_k), pool.size());
    return AgentAction::recommend(rng.sample(pool, k));
  };
}

PolicyFn agent_policy(const PolicyAgent& agent) {
  return [&agent](const EpisodeState& state, Rng& rng) {
    const ScoredActionSpace space = agent.score_actions(state);
    const std::vector<double> q = agent.q_values(state, space);
    return agent.select_action(state, space, q, 0.0, rng).action;
  };
}

EpisodeResult run_episode(const Env& env, const PolicyFn& policy,
                          EpisodeState state, Rng& rng,
                          const TurnObserver& observer) {
  EpisodeResult result;
  result.success_turn = env.config().max_turns + 1;
  while (!state.done) {
    const AgentAction action = policy(state, rng);
    const StepOutcome outcome = env.simulate_user(state, action);
    EpisodeState next = env.apply_transition(state, action, outcome);
    double reward = outcome.reward;
    if (next.done && !outcome.done) reward += env.config().r_quit;
    result.total_reward += reward;
    if (outcome.success && outcome.accepted_item) {
      result.success = true;
      result.success_turn = next.turn;
      for (std::size_t i = 0; i < action.items.size(); ++i) {
        if (action.items[i] == *outcome.accepted_item) {
          result.rank = static_cast<int>(i) + 1;
          break;
        }
      }
    }
    if (observer) observer(state, action, outcome, next);
    state = std::move(next);
  }
  return result;
}

std::vector<EpisodeResult> evaluate_policy(const Env& env,
                                           const PolicyFn& policy,
                                           int episodes, std::uint64_t seed,
                                           const TurnObserver& observer) {
  if (episodes <= 0)
    throw ContractError("evaluation needs at least one episode");
  const std::vector<Id> users(env.social().users.begin(),
                              env.social().users.end());
  if (users.empty()) throw ContractError("evaluation: no users in the world");
  std::vector<EpisodeResult> results;
  results.reserve(static_cast<std::size_t>(episodes));
  for (int ep = 0; ep < episodes; ++ep) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(ep)));
    const Id user = users[static_cast<std::size_t>(rng.below(users.size()))];
    EpisodeState state = env.sample_episode(user, rng);
    results.push_back(run_episode(env, policy, std::move(state), rng, observer));
  }
  return results;
}

double hdcg_term(int turn, int rank) {
  if (turn < 1 || rank < 1)
    throw ContractError("discounted gain needs 1-based turn and rank");
  const double td = 1.0 / std::log2(static_cast<double>(turn) + 1.0);
  const double kd = 1.0 / std::log2(static_cast<double>(rank) + 1.0);
  return td + td * kd;
}

double metric_sr(const std::vector<EpisodeResult>& results, int turn) {
  if (results.empty()) throw ContractError("metrics need at least one episode");
  int hits = 0;
  for (const EpisodeResult& r : results)
    if (r.success && r.success_turn <= turn) ++hits;
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double metric_at(const std::vector<EpisodeResult>& results) {
  if (results.empty()) throw ContractError("metrics need at least one episode");
  double acc = 0.0;
  for (const EpisodeResult& r : results)
    acc += r.success ? r.success_turn : r.success_turn - 1;
  return acc / static_cast<double>(results.size());
}

double metric_hdcg(const std::vector<EpisodeResult>& results, int horizon,
                   int list_size) {
  if (results.empty()) throw ContractError("metrics need at least one episode");
  double acc = 0.0;
  for (const EpisodeResult& r : results) {
    if (!r.success) continue;
    if (r.success_turn > horizon || r.rank > list_size)
      throw ContractError("success outside the scoring window");
    acc += hdcg_term(r.success_turn, r.rank);
  }
  return acc / static_cast<double>(results.size());
}

std::vector<ComparisonRow> run_comparison(
    const Env& env,
    const std::vector<std::pair<std::string, PolicyFn>>& policies,
    int episodes, std::uint64_t seed) {
  std::vector<ComparisonRow> rows;
  rows.reserve(policies.size());
  for (const auto& [name, policy] : policies) {
    const std::vector<EpisodeResult> results =
        evaluate_policy(env, policy, episodes, seed);
    ComparisonRow row;
    row.policy = name;
    row.sr5 = metric_sr(results, 5);
    row.sr10 = metric_sr(results, 10);
    row.sr15 = metric_sr(results, 15);
    row.at = metric_at(results);
    row.hdcg =
        metric_hdcg(results, env.config().max_turns, env.config().top_k);
    row.episodes = episodes;
    row.seed = seed;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string metrics_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "policy,SR@5,SR@10,SR@15,AT,hDCG,episodes,seed\n";
  char line[256];
  for (const ComparisonRow& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%d,%llu\n",
                  r.policy.c_str(), r.sr5, r.sr10, r.sr15, r.at, r.hdcg,
                  r.episodes, static_cast<unsigned long long>(r.seed));
    out += line;
  }
  return out;
}

}  // namespace convrec

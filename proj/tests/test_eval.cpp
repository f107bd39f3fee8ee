#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "convrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "convrec/error.hpp"
#include "doctest.h"

using namespace convrec;

namespace {

EmbeddingTable random_table(int rows, int d, std::uint64_t seed) {
  EmbeddingTable t;
  t.node_vecs.resize(rows, d);
  Rng rng(seed);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < d; ++j) t.node_vecs(i, j) = rng.unit() - 0.5;
  return t;
}

WorldSpec small_spec(std::int64_t items, std::uint64_t seed) {
  WorldSpec spec;
  spec.num_users = 8;
  spec.num_items = items;
  spec.num_attributes = 16;
  spec.num_types = 4;
  spec.social_density = 0.4;
  spec.interactions_per_user = 8;
  spec.seed = seed;
  return spec;
}

EpisodeResult ok(int turn, int rank) {
  EpisodeResult r;
  r.success = true;
  r.success_turn = turn;
  r.rank = rank;
  return r;
}

EpisodeResult fail_at(int horizon) {
  EpisodeResult r;
  r.success = false;
  r.success_turn = horizon + 1;
  return r;
}

/// Four candidates with attribute coverage 2/4, 3/4, and 4/4.
struct EntropyFixture {
  Catalog catalog;
  SocialGraph social;

  EntropyFixture() {
    catalog.items = {1, 2, 3, 4};
    catalog.attributes = {5, 6, 7, 8, 9};
    catalog.attribute_types = {0};
    catalog.item_attrs[1] = {5, 6, 7, 8};
    catalog.item_attrs[2] = {5, 6, 7, 8};
    catalog.item_attrs[3] = {5, 7, 8};
    catalog.item_attrs[4] = {5, 8};
    for (Id a : catalog.attributes) catalog.attr_type[a] = 0;
    social.users = {0};
    social.accepted_items[0] = {1, 2};
  }

  EpisodeState state() const {
    EpisodeState s;
    s.user = 0;
    s.targets = {1, 2};
    s.p0 = 5;
    s.p_acc = {5};
    s.p_acc_order = {5};
    s.v_p0 = {1, 2, 3, 4};
    s.v_cand = {1, 2, 3, 4};
    s.p_cand = {6, 7, 8};
    return s;
  }
};

}  // namespace

TEST_CASE("the discounted gain matches its closed form") {
  CHECK(hdcg_term(1, 1) == doctest::Approx(2.0).epsilon(1e-15));
  const double log2_3 = std::log(3.0) / std::log(2.0);
  CHECK(hdcg_term(3, 2) == doctest::Approx(0.5 + 0.5 / log2_3).epsilon(1e-12));
  CHECK(hdcg_term(3, 2) == doctest::Approx(0.8155).epsilon(1e-4));
  for (int t = 1; t < 15; ++t)
    for (int k = 1; k < 10; ++k) {
      CHECK(hdcg_term(t + 1, k) < hdcg_term(t, k));
      CHECK(hdcg_term(t, k + 1) < hdcg_term(t, k));
    }
  CHECK_THROWS_AS(hdcg_term(0, 1), ContractError);
  CHECK_THROWS_AS(hdcg_term(1, 0), ContractError);
}

TEST_CASE("success rates count cumulative wins") {
  std::vector<EpisodeResult> results;
  for (int t : {2, 3, 5, 5}) results.push_back(ok(t, 1));
  for (int i = 0; i < 6; ++i) results.push_back(fail_at(15));
  CHECK(metric_sr(results, 5) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(metric_sr(results, 1) == 0.0);
  CHECK(metric_sr(results, 2) == doctest::Approx(0.1).epsilon(1e-15));
  for (int t = 1; t < 15; ++t)
    CHECK(metric_sr(results, t) <= metric_sr(results, t + 1));

  std::vector<EpisodeResult> all_fail(10, fail_at(15));
  for (int t = 1; t <= 15; ++t) CHECK(metric_sr(all_fail, t) == 0.0);

  std::vector<EpisodeResult> shuffled = results;
  std::rotate(shuffled.begin(), shuffled.begin() + 3, shuffled.end());
  CHECK(metric_sr(shuffled, 5) == metric_sr(results, 5));
  CHECK(metric_at(shuffled) == metric_at(results));
  CHECK(metric_hdcg(shuffled, 15, 10) == metric_hdcg(results, 15, 10));
  CHECK_THROWS_AS(metric_sr({}, 5), ContractError);
}

TEST_CASE("average turns blend success turns with the horizon") {
  CHECK(metric_at({ok(3, 1)}) == doctest::Approx(3.0));
  CHECK(metric_at({ok(5, 1), fail_at(15)}) == doctest::Approx(10.0));
  CHECK(metric_at({fail_at(15), fail_at(15)}) == doctest::Approx(15.0));
}

TEST_CASE("discounted gains average successes and zero failures") {
  CHECK(metric_hdcg({ok(1, 1), fail_at(15)}, 15, 10) ==
        doctest::Approx(1.0).epsilon(1e-15));
  CHECK(metric_hdcg({fail_at(15)}, 15, 10) == 0.0);
  CHECK(metric_hdcg({ok(3, 2)}, 15, 10) ==
        doctest::Approx(hdcg_term(3, 2)).epsilon(1e-15));
  CHECK_THROWS_AS(metric_hdcg({ok(16, 1)}, 15, 10), ContractError);
}

TEST_CASE("the greedy baseline always recommends its top scores") {
  const auto [catalog, social] = generate_world(small_spec(20, 3));
  Env env(catalog, social, EnvConfig{});
  const NodeIndex idx(catalog, social);
  const EmbeddingTable table = random_table(idx.size(), 8, 5);
  const PolicyFn greedy = abs_greedy_policy(env, idx, table.node_vecs);

  Rng rng(9);
  EpisodeState s = env.sample_episode(*social.users.begin(), rng);
  const AgentAction a = greedy(s, rng);
  CHECK(a.kind == AgentAction::Kind::recommend);
  const ScoredActionSpace space =
      score_candidates(s, social, idx, table.node_vecs, env.config().top_k,
                       1, true);
  REQUIRE(a.items.size() == space.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i)
    CHECK(a.items[i] == space.items[i].first);

  int turns = 0;
  const TurnObserver observer = [&](const EpisodeState& before,
                                    const AgentAction& action,
                                    const StepOutcome&, const EpisodeState&) {
    CHECK(action.kind == AgentAction::Kind::recommend);
    for (Id v : action.items) {
      CHECK(before.v_cand.count(v) == 1);
      CHECK(before.v_rej.count(v) == 0);
    }
    ++turns;
  };
  run_episode(env, greedy, s, rng, observer);
  CHECK(turns >= 1);
}

TEST_CASE("a three-candidate state yields a three-item recommendation") {
  EntropyFixture fx;
  Env env(fx.catalog, fx.social, EnvConfig{});
  const NodeIndex idx(fx.catalog, fx.social);
  const EmbeddingTable table = random_table(idx.size(), 4, 7);
  EpisodeState s = fx.state();
  s.v_cand = {1, 2, 3};
  Rng rng(1);
  const AgentAction a = abs_greedy_policy(env, idx, table.node_vecs)(s, rng);
  CHECK(a.kind == AgentAction::Kind::recommend);
  CHECK(a.items.size() == 3);
}

TEST_CASE("the entropy baseline asks the most balanced attributes") {
  EntropyFixture fx;
  EnvConfig ec;
  ec.top_k = 2;
  Env env(fx.catalog, fx.social, ec);
  const NodeIndex idx(fx.catalog, fx.social);
  const EmbeddingTable table = random_table(idx.size(), 4, 11);
  const PolicyFn entropy = max_entropy_policy(env, idx, table.node_vecs);
  Rng rng(1);

  // Coverage 2/4 has entropy 1.0, 3/4 about 0.81, 4/4 exactly 0.
  const AgentAction a = entropy(fx.state(), rng);
  REQUIRE(a.kind == AgentAction::Kind::ask);
  CHECK(a.attrs == std::vector<Id>{6, 7});

  // A zero-coverage attribute ties the full-coverage one at entropy zero;
  // neither may outrank the balanced attribute.
  EpisodeState skewed = fx.state();
  skewed.p_cand = {6, 8, 9};
  const AgentAction b = entropy(skewed, rng);
  REQUIRE(b.kind == AgentAction::Kind::ask);
  CHECK(b.attrs.front() == 6);
  CHECK(b.attrs == std::vector<Id>{6, 8});
}

TEST_CASE("the entropy baseline recommends once the field is narrow") {
  const auto [catalog, social] = generate_world(small_spec(20, 13));
  Env env(catalog, social, EnvConfig{});
  const NodeIndex idx(catalog, social);
  const EmbeddingTable table = random_table(idx.size(), 8, 17);
  const PolicyFn entropy = max_entropy_policy(env, idx, table.node_vecs);
  Rng rng(3);
  EpisodeState s = env.sample_episode(*social.users.begin(), rng);
  REQUIRE(!s.v_cand.empty());

  std::set<Id> keep;
  for (Id v : s.v_cand) {
    keep.insert(v);
    if (keep.size() == 8) break;
  }
  s.v_cand = keep;
  const AgentAction a = entropy(s, rng);
  CHECK(a.kind == AgentAction::Kind::recommend);

  EpisodeState no_attrs = s;
  no_attrs.v_cand = {};
  for (Id v : keep) no_attrs.v_cand.insert(v);
  for (Id extra : catalog.items)
    if (static_cast<int>(no_attrs.v_cand.size()) <= env.config().top_k)
      no_attrs.v_cand.insert(extra);
  no_attrs.p_cand.clear();
  const AgentAction b = entropy(no_attrs, rng);
  CHECK(b.kind == AgentAction::Kind::recommend);
}

TEST_CASE("a two-item world with covering lists succeeds on turn one") {
  Catalog catalog;
  catalog.items = {1, 2};
  catalog.attributes = {11};
  catalog.attribute_types = {0};
  catalog.item_attrs[1] = {11};
  catalog.item_attrs[2] = {11};
  catalog.attr_type[11] = 0;
  SocialGraph social;
  social.users = {0};
  social.accepted_items[0] = {1, 2};
  Env env(catalog, social, EnvConfig{});

  const std::vector<EpisodeResult> results =
      evaluate_policy(env, random_policy(env), 20, 21);
  REQUIRE(results.size() == 20);
  for (const EpisodeResult& r : results) {
    CHECK(r.success);
    CHECK(r.success_turn == 1);
    CHECK(r.rank >= 1);
    CHECK(r.rank <= 2);
    CHECK(r.total_reward == doctest::Approx(env.config().r_rec_suc));
  }
  CHECK(metric_sr(results, 1) == 1.0);
  CHECK(metric_at(results) == doctest::Approx(1.0));
}

TEST_CASE("rollout scoring stays inside its declared bounds") {
  const auto [catalog, social] = generate_world(small_spec(20, 19));
  Env env(catalog, social, EnvConfig{});
  const NodeIndex idx(catalog, social);
  const EmbeddingTable table = random_table(idx.size(), 8, 23);
  const std::vector<std::pair<std::string, PolicyFn>> named = {
      {"abs_greedy", abs_greedy_policy(env, idx, table.node_vecs)},
      {"max_entropy", max_entropy_policy(env, idx, table.node_vecs)},
      {"random", random_policy(env)},
  };
  for (const auto& [name, policy] : named) {
    const auto results = evaluate_policy(env, policy, 40, 29);
    for (const EpisodeResult& r : results) {
      if (r.success) {
        CHECK(r.success_turn >= 1);
        CHECK(r.success_turn <= env.config().max_turns);
        CHECK(r.rank >= 1);
        CHECK(r.rank <= env.config().top_k);
      } else {
        CHECK(r.success_turn == env.config().max_turns + 1);
        CHECK(r.rank == 0);
      }
    }
  }
}

TEST_CASE("identical policies produce identical comparison rows") {
  const auto [catalog, social] = generate_world(small_spec(20, 31));
  Env env(catalog, social, EnvConfig{});
  const PolicyFn rp = random_policy(env);
  const auto rows = run_comparison(
      env, {{"random_a", rp}, {"random_b", rp}}, 30, 37);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].sr5 == rows[1].sr5);
  CHECK(rows[0].sr10 == rows[1].sr10);
  CHECK(rows[0].sr15 == rows[1].sr15);
  CHECK(rows[0].at == rows[1].at);
  CHECK(rows[0].hdcg == rows[1].hdcg);

  const auto again = run_comparison(env, {{"random_a", rp}}, 30, 37);
  CHECK(again[0] == rows[0]);
}

TEST_CASE("always recommending beats random play on average turns") {
  const auto [catalog, social] = generate_world(small_spec(50, 41));
  Env env(catalog, social, EnvConfig{});
  const NodeIndex idx(catalog, social);
  const EmbeddingTable table = random_table(idx.size(), 8, 43);
  const auto rows = run_comparison(
      env,
      {{"abs_greedy", abs_greedy_policy(env, idx, table.node_vecs)},
       {"random", random_policy(env)}},
      200, 47);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].at <= rows[1].at);
}

TEST_CASE("metric rows print under the pinned header") {
  ComparisonRow row;
  row.policy = "random";
  row.sr5 = 0.25;
  row.sr10 = 0.5;
  row.sr15 = 0.75;
  row.at = 9.125;
  row.hdcg = 0.4375;
  row.episodes = 16;
  row.seed = 99;
  const std::string text = metrics_csv({row});
  CHECK(text ==
        "policy,SR@5,SR@10,SR@15,AT,hDCG,episodes,seed\n"
        "random,0.250000,0.500000,0.750000,9.125000,0.437500,16,99\n");
}

TEST_CASE("training log rows print one episode per line") {
  TrainEpisodeLog a;
  a.episode = 1;
  a.turns = 4;
  a.success = true;
  a.ret = 0.5;
  a.dqn_loss = 0.25;
  a.ssl_loss = 2.0;
  TrainEpisodeLog b;
  b.episode = 2;
  b.turns = 15;
  const std::string text = train_log_csv({a, b});
  CHECK(text ==
        "episode,turns,success,return,L_DQN,L_SSL\n"
        "1,4,1,0.5,0.25,2\n"
        "2,15,0,0,0,0\n");
}

TEST_CASE("a trained agent evaluates deterministically") {
  const auto [catalog, social] = generate_world(small_spec(12, 53));
  Env env(catalog, social, EnvConfig{});
  const NodeIndex idx(catalog, social);
  EncoderConfig ec;
  ec.d = 8;
  ec.layers = 1;
  ec.heads = 2;
  ec.ffn_hidden = 8;
  ec.max_positions = 32;
  PolicyConfig pc;
  pc.hidden = 8;
  pc.batch_size = 4;
  pc.buffer_capacity = 64;
  const EmbeddingTable table = random_table(idx.size(), 8, 59);
  PolicyAgent agent(env, ec, pc, table, 61);

  const auto r1 = evaluate_policy(env, agent_policy(agent), 3, 67);
  const auto r2 = evaluate_policy(env, agent_policy(agent), 3, 67);
  REQUIRE(r1.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r1[i].success == r2[i].success);
    CHECK(r1[i].success_turn == r2[i].success_turn);
    CHECK(r1[i].rank == r2[i].rank);
    CHECK(r1[i].total_reward == r2[i].total_reward);
  }
}

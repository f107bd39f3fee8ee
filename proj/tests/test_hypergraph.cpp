#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <set>

#include "convrec/hypergraph.hpp"
#include "doctest.h"
#include "env_helpers.hpp"
#include "json.hpp"

using namespace convrec;

namespace {

/// Two items sharing attribute 5, a third distinct one, and one friend.
struct Fixture {
  Catalog catalog;
  SocialGraph social;

  Fixture() {
    catalog.items = {1, 2, 3};
    catalog.attributes = {5, 6, 7, 9};
    catalog.attribute_types = {0};
    catalog.item_attrs[1] = {5, 6};
    catalog.item_attrs[2] = {5, 7};
    catalog.item_attrs[3] = {5, 9};
    for (Id a : catalog.attributes) catalog.attr_type[a] = 0;
    social.users = {0, 4};
    social.friends[0] = {4};
    social.friends[4] = {0};
    social.accepted_items[0] = {1, 2};
    social.accepted_items[4] = {3};
  }

  EpisodeState start(Rng& rng) const {
    Env env(catalog, social, EnvConfig{});
    return env.sample_episode(0, rng);
  }
};

}  // namespace

TEST_CASE("a lone accepted attribute yields one column with split weights") {
  Catalog catalog;
  catalog.items = {1, 2};
  catalog.attributes = {5};
  catalog.attribute_types = {0};
  catalog.item_attrs[1] = {5};
  catalog.item_attrs[2] = {5};
  catalog.attr_type[5] = 0;
  SocialGraph social;
  social.users = {0};
  social.accepted_items[0] = {1, 2};

  Env env(catalog, social, EnvConfig{});
  Rng rng(1);
  auto state = env.sample_episode(0, rng);
  REQUIRE(state.p0 == 5);

  auto g = build_hypergraph(state, catalog, social);
  REQUIRE(g.num_hyperedges() == 1);
  REQUIRE(g.num_nodes() == 4);  // user, attribute, two items
  auto a = g.dense_incidence();
  CHECK(a(g.node_row({NodeRef::Kind::user, 0}), 0) == 1.0);
  CHECK(a(g.node_row({NodeRef::Kind::attr, 5}), 0) == 1.0);
  CHECK(a(g.node_row({NodeRef::Kind::item, 1}), 0) == 0.5);
  CHECK(a(g.node_row({NodeRef::Kind::item, 2}), 0) == 0.5);
}

TEST_CASE("the initial graph has one like column and nothing else") {
  Fixture fx;
  fx.social.friends.clear();  // no friends at all
  Env env(fx.catalog, fx.social, EnvConfig{});
  Rng rng(1);
  auto state = env.sample_episode(0, rng);

  auto g = build_hypergraph(state, fx.catalog, fx.social);
  CHECK(g.view_count(View::like) == 1);
  CHECK(g.view_count(View::dislike) == 0);
  CHECK(g.view_count(View::social) == 0);
  CHECK(g.hyperedges()[0].anchor == state.p0);
}

TEST_CASE("a rejected attribute with one carrier gets weight one") {
  Fixture fx;
  Env env(fx.catalog, fx.social, EnvConfig{});
  Rng rng(1);
  auto state = fx.start(rng);
  REQUIRE(state.p0 == 5);

  auto action = AgentAction::ask({9});
  auto out = env.simulate_user(state, action);
  REQUIRE(out.rejected_attrs == std::vector<Id>{9});
  state = env.apply_transition(state, action, out);

  auto g = build_hypergraph(state, fx.catalog, fx.social);
  auto [dis_lo, dis_hi] = g.view_range(View::dislike);
  REQUIRE(dis_hi - dis_lo == 1);
  auto a = g.dense_incidence();
  CHECK(a(g.node_row({NodeRef::Kind::user, 0}), dis_lo) == -1.0);
  CHECK(a(g.node_row({NodeRef::Kind::attr, 9}), dis_lo) == 1.0);
  CHECK(a(g.node_row({NodeRef::Kind::item, 3}), dis_lo) == 1.0);
}

TEST_CASE("node layout follows user, rejects, accepts, friends, items") {
  Fixture fx;
  Env env(fx.catalog, fx.social, EnvConfig{});
  Rng rng(1);
  auto state = fx.start(rng);
  auto ask = AgentAction::ask({6, 9});
  state = env.apply_transition(state, ask, env.simulate_user(state, ask));
  REQUIRE(state.p_acc == std::set<Id>{5, 6});
  REQUIRE(state.p_rej == std::set<Id>{9});
  REQUIRE(state.f_filtered.empty());  // friend 4 lost item 3 to the reject

  auto g = build_hypergraph(state, fx.catalog, fx.social);
  const auto& nodes = g.nodes();
  // user + rejected {9} + accepted [5,6] + no friends + all of V_p0 {1,2,3};
  // item 3 stays a node even though it left the candidate set.
  REQUIRE(nodes.size() == 7);
  CHECK(nodes[0] == NodeRef{NodeRef::Kind::user, 0});
  CHECK(nodes[1] == NodeRef{NodeRef::Kind::attr, 9});
  CHECK(nodes[2] == NodeRef{NodeRef::Kind::attr, 5});
  CHECK(nodes[3] == NodeRef{NodeRef::Kind::attr, 6});
  CHECK(nodes[4] == NodeRef{NodeRef::Kind::item, 1});
  CHECK(nodes[5] == NodeRef{NodeRef::Kind::item, 2});
  CHECK(nodes[6] == NodeRef{NodeRef::Kind::item, 3});
}

TEST_CASE("social columns track the friends' surviving items") {
  Fixture fx;
  Env env(fx.catalog, fx.social, EnvConfig{});
  Rng rng(1);
  auto state = fx.start(rng);
  REQUIRE(state.f_filtered == std::set<Id>{4});

  auto g = build_hypergraph(state, fx.catalog, fx.social);
  auto [soc_lo, soc_hi] = g.view_range(View::social);
  REQUIRE(soc_hi - soc_lo == 1);
  const auto& edge = g.hyperedges()[static_cast<std::size_t>(soc_lo)];
  CHECK(edge.anchor == 4);
  CHECK(edge.members == std::set<Id>{3});
  auto a = g.dense_incidence();
  CHECK(a(0, soc_lo) == 1.0);
  CHECK(a(g.node_row({NodeRef::Kind::user, 4}), soc_lo) == 1.0);
  CHECK(a(g.node_row({NodeRef::Kind::item, 3}), soc_lo) == 1.0);

  // Rejecting the friend's only shared item drops the social column.
  auto rec = AgentAction::recommend({3});
  state = env.apply_transition(state, rec, env.simulate_user(state, rec));
  auto g2 = build_hypergraph(state, fx.catalog, fx.social);
  CHECK(g2.view_count(View::social) == 0);
  CHECK(g2.has_node({NodeRef::Kind::item, 3}));  // still a plain node
}

TEST_CASE("an accepted attribute with no carriers keeps a two-entry column") {
  Fixture fx;
  fx.catalog.attributes.insert(11);
  fx.catalog.attr_type[11] = 0;
  EpisodeState state;
  state.user = 0;
  state.targets = {1, 2};
  state.p0 = 5;
  state.p_acc = {5, 11};
  state.p_acc_order = {5, 11};
  Env env(fx.catalog, fx.social, EnvConfig{});
  state.v_p0 = env.items_with_attr(5);
  env.update_candidates(state);

  auto g = build_hypergraph(state, fx.catalog, fx.social);
  REQUIRE(g.view_count(View::like) == 2);
  CHECK(g.column(1).size() == 2);
  CHECK(g.hyperedges()[1].members.empty());
  auto a = g.dense_incidence();
  CHECK(a.col(1).sum() == 2.0);  // user +1 and anchor +1 only
}

TEST_CASE("the empty graph materializes as a zero-by-zero matrix") {
  MultiViewHypergraph g;
  CHECK(g.num_nodes() == 0);
  CHECK(g.num_hyperedges() == 0);
  auto a = incidence_oracle(g);
  CHECK(a.rows() == 0);
  CHECK(a.cols() == 0);
  CHECK(g.dense_incidence().size() == 0);
}

TEST_CASE("the dense oracle refuses oversized graphs") {
  WorldSpec spec;
  spec.num_users = 5;
  spec.num_items = 80;
  spec.num_attributes = 10;
  spec.num_types = 2;
  auto [catalog, social] = generate_world(spec);
  Env env(catalog, social, EnvConfig{});
  Rng rng(1);
  auto state = env.sample_episode(*social.users.begin(), rng);
  REQUIRE(state.v_p0.size() > 50);
  auto g = build_hypergraph(state, catalog, social);
  CHECK_THROWS_AS(incidence_oracle(g), ContractError);
}

TEST_CASE("sparse and dense constructions agree across random rollouts") {
  int graphs_checked = 0;
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
    WorldSpec spec;
    spec.num_users = 8;
    spec.num_items = 20;
    spec.num_attributes = 8;
    spec.num_types = 2;
    spec.interactions_per_user = 5;
    spec.seed = seed;
    auto [catalog, social] = generate_world(spec);
    Env env(catalog, social, EnvConfig{});
    Rng rng(700 + seed);

    for (int episode = 0; episode < 15; ++episode) {
      const Id user = *std::next(
          social.users.begin(),
          static_cast<long>(rng.below(social.users.size())));
      auto state = env.sample_episode(user, rng);
      while (true) {
        auto g = build_hypergraph(state, catalog, social);
        ++graphs_checked;

        // Entrywise equality of the production build and the oracle.
        auto dense = g.dense_incidence();
        auto oracle = incidence_oracle(g);
        CHECK(dense == oracle);

        // View partition and counts.
        CHECK(g.num_hyperedges() ==
              static_cast<int>(state.p_acc.size() + state.p_rej.size() +
                               state.f_filtered.size()));
        CHECK(g.view_count(View::like) ==
              static_cast<int>(state.p_acc.size()));
        CHECK(g.view_count(View::dislike) ==
              static_cast<int>(state.p_rej.size()));
        CHECK(g.view_count(View::social) ==
              static_cast<int>(state.f_filtered.size()));

        // Structural column checks and the sign rule.
        for (int j = 0; j < g.num_hyperedges(); ++j) {
          const auto& h = g.hyperedges()[static_cast<std::size_t>(j)];
          CHECK(g.column(j).size() == 2 + h.members.size());
          CHECK(dense(0, j) ==
                (h.view == View::dislike ? -1.0 : 1.0));
          for (Id v : h.members) CHECK(state.v_p0.count(v) == 1);
          for (int i = 1; i < g.num_nodes(); ++i) CHECK(dense(i, j) >= 0.0);
          if (!h.members.empty()) {
            double member_sum = 0.0;
            for (Id v : h.members) {
              member_sum += dense(g.node_row({NodeRef::Kind::item, v}), j);
            }
            CHECK(member_sum == doctest::Approx(1.0).epsilon(1e-12));
          }
        }

        // Generation order within each view.
        for (View view : {View::like, View::dislike, View::social}) {
          auto [lo, hi] = g.view_range(view);
          for (int j = lo + 1; j < hi; ++j) {
            CHECK(g.hyperedges()[static_cast<std::size_t>(j)].gen_index >
                  g.hyperedges()[static_cast<std::size_t>(j - 1)].gen_index);
          }
        }

        if (state.done) break;
        auto action = testutil::random_valid_action(env, state, rng);
        state = env.apply_transition(state, action,
                                     env.simulate_user(state, action));
      }
    }
  }
  CHECK(graphs_checked > 150);
}

TEST_CASE("the json dump carries nodes, hyperedges, and triplets") {
  Fixture fx;
  Env env(fx.catalog, fx.social, EnvConfig{});
  Rng rng(1);
  auto state = fx.start(rng);
  auto g = build_hypergraph(state, fx.catalog, fx.social);

  auto parsed = nlohmann::json::parse(g.to_json());
  CHECK(parsed["nodes"].size() == static_cast<std::size_t>(g.num_nodes()));
  CHECK(parsed["hyperedges"].size() ==
        static_cast<std::size_t>(g.num_hyperedges()));
  CHECK(parsed["nodes"][0] == "user:0");
  int nonzeros = 0;
  for (int j = 0; j < g.num_hyperedges(); ++j) {
    nonzeros += static_cast<int>(g.column(j).size());
  }
  CHECK(parsed["incidence"].size() == static_cast<std::size_t>(nonzeros));
}

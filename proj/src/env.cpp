#include "convrec/env.hpp"

#include <algorithm>

namespace convrec {

namespace {

bool intersects(const std::set<Id>& a, const std::set<Id>& b) {
  if (a.size() > b.size()) return intersects(b, a);
  return std::any_of(a.begin(), a.end(),
                     [&](Id x) { return b.count(x) != 0; });
}

}  // namespace

const std::set<Id> Env::kEmpty;

void EnvConfig::validate() const {
  if (max_turns < 1) throw ConfigError("max_turns must be >= 1");
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  if (ask_k < 1) throw ConfigError("ask_k must be >= 1");
  if (num_targets < 2) throw ConfigError("num_targets must be >= 2");
}

AgentAction AgentAction::ask(std::vector<Id> attrs) {
  AgentAction a;
  a.kind = Kind::ask;
  a.attrs = std::move(attrs);
  return a;
}

AgentAction AgentAction::recommend(std::vector<Id> items) {
  AgentAction a;
  a.kind = Kind::recommend;
  a.items = std::move(items);
  return a;
}

Env::Env(const Catalog& catalog, const SocialGraph& social, EnvConfig config)
    : catalog_(&catalog), social_(&social), config_(config) {
  config_.validate();
  catalog.validate();
  social.validate(catalog);
  for (const auto& [item, attrs] : catalog.item_attrs) {
    for (Id a : attrs) items_by_attr_[a].insert(item);
  }
  all_items_.assign(catalog.items.begin(), catalog.items.end());
}

const std::set<Id>& Env::items_with_attr(Id attr) const {
  auto it = items_by_attr_.find(attr);
  return it == items_by_attr_.end() ? kEmpty : it->second;
}

EpisodeState Env::sample_episode(Id user, Rng& rng) const {
  const auto& accepted = social_->accepted_of(user);
  return sample_episode(user, rng, {accepted.begin(), accepted.end()});
}

EpisodeState Env::sample_episode(Id user, Rng& rng,
                                 const std::vector<Id>& pool) const {
  if (!social_->users.count(user)) {
    throw ContractError("unknown user " + std::to_string(user));
  }
  for (Id v : pool) {
    if (!catalog_->items.count(v)) {
      throw ContractError("pool item " + std::to_string(v) +
                          " is not in the catalog");
    }
  }

  // Overlapping pair from the pool first; random catalog probes next; full
  // catalog scan as the last resort.
  std::vector<std::pair<Id, Id>> pairs;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for (std::size_t j = i + 1; j < pool.size(); ++j) {
      const Id a = std::min(pool[i], pool[j]);
      const Id b = std::max(pool[i], pool[j]);
      if (a != b && intersects(catalog_->attrs_of(a), catalog_->attrs_of(b))) {
        pairs.emplace_back(a, b);
      }
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  std::pair<Id, Id> chosen{-1, -1};
  if (!pairs.empty()) {
    chosen = rng.pick(pairs);
  } else if (all_items_.size() >= 2) {
    for (int attempt = 0; attempt < 200 && chosen.first < 0; ++attempt) {
      const Id a = rng.pick(all_items_);
      const Id b = rng.pick(all_items_);
      if (a != b &&
          intersects(catalog_->attrs_of(a), catalog_->attrs_of(b))) {
        chosen = {std::min(a, b), std::max(a, b)};
      }
    }
    if (chosen.first < 0) {
      for (std::size_t i = 0; i < all_items_.size(); ++i) {
        for (std::size_t j = i + 1; j < all_items_.size(); ++j) {
          if (intersects(catalog_->attrs_of(all_items_[i]),
                         catalog_->attrs_of(all_items_[j]))) {
            pairs.emplace_back(all_items_[i], all_items_[j]);
          }
        }
      }
      if (!pairs.empty()) chosen = rng.pick(pairs);
    }
  }
  if (chosen.first < 0) {
    throw SamplingError("no item pair with overlapping attributes");
  }

  std::vector<Id> joint;
  for (Id p : catalog_->attrs_of(chosen.first)) {
    if (catalog_->attrs_of(chosen.second).count(p)) joint.push_back(p);
  }

  EpisodeState state;
  state.user = user;
  state.targets = {chosen.first, chosen.second};
  state.p0 = rng.pick(joint);
  state.p_acc = {state.p0};
  state.p_acc_order = {state.p0};
  state.v_p0 = items_with_attr(state.p0);

  // Extra targets beyond the pair must also carry the seed attribute.
  if (config_.num_targets > 2) {
    std::vector<Id> extras;
    for (Id v : state.v_p0) {
      if (v != chosen.first && v != chosen.second) extras.push_back(v);
    }
    const auto need = static_cast<std::size_t>(config_.num_targets - 2);
    if (extras.size() < need) {
      throw SamplingError("not enough items share the seed attribute for " +
                          std::to_string(config_.num_targets) + " targets");
    }
    for (Id v : rng.sample(extras, need)) state.targets.push_back(v);
    std::sort(state.targets.begin(), state.targets.end());
  }

  update_candidates(state);
  filter_friends(state);
  state.f_order.assign(state.f_filtered.begin(), state.f_filtered.end());
  return state;
}

std::pair<std::set<Id>, std::set<Id>> Env::update_candidates(
    EpisodeState& state) const {
  std::set<Id> v_cand;
  for (Id v : state.v_p0) {
    if (state.v_rej.count(v)) continue;
    const auto& attrs = catalog_->attrs_of(v);
    if (!intersects(attrs, state.p_acc)) continue;
    if (intersects(attrs, state.p_rej)) continue;
    v_cand.insert(v);
  }
  std::set<Id> p_cand;
  for (Id v : v_cand) {
    for (Id p : catalog_->attrs_of(v)) {
      if (!state.p_acc.count(p) && !state.p_rej.count(p)) p_cand.insert(p);
    }
  }
  state.v_cand = v_cand;
  state.p_cand = p_cand;
  return {std::move(v_cand), std::move(p_cand)};
}

std::map<Id, std::set<Id>> Env::filter_friends(EpisodeState& state) const {
  std::map<Id, std::set<Id>> retained;
  for (Id f : social_->friends_of(state.user)) {
    std::set<Id> shared;
    for (Id v : social_->accepted_of(f)) {
      if (state.v_cand.count(v)) shared.insert(v);
    }
    if (!shared.empty()) retained.emplace(f, std::move(shared));
  }
  state.f_filtered.clear();
  for (const auto& [f, items] : retained) state.f_filtered.insert(f);
  return retained;
}

void Env::validate_action(const EpisodeState& state,
                          const AgentAction& action) const {
  if (state.done) throw ContractError("action on a finished episode");
  if (state.turn >= config_.max_turns) {
    throw ContractError("turn limit exhausted");
  }
  if (action.kind == AgentAction::Kind::ask) {
    if (!action.items.empty()) {
      throw ContractError("ask action carries items");
    }
    if (action.attrs.empty()) throw ContractError("empty ask list");
    if (action.attrs.size() > static_cast<std::size_t>(config_.ask_k)) {
      throw ContractError("ask list exceeds " + std::to_string(config_.ask_k));
    }
    const Id type = catalog_->type_of(action.attrs.front());
    std::set<Id> seen;
    for (Id p : action.attrs) {
      if (!state.p_cand.count(p)) {
        throw ContractError("asked attribute " + std::to_string(p) +
                            " is not a candidate");
      }
      if (catalog_->type_of(p) != type) {
        throw ContractError("asked attributes mix types");
      }
      if (!seen.insert(p).second) {
        throw ContractError("duplicate asked attribute");
      }
    }
  } else {
    if (!action.attrs.empty()) {
      throw ContractError("recommend action carries attributes");
    }
    if (action.items.empty()) throw ContractError("empty recommend list");
    if (action.items.size() > static_cast<std::size_t>(config_.top_k)) {
      throw ContractError("recommend list exceeds " +
                          std::to_string(config_.top_k));
    }
    std::set<Id> seen;
    for (Id v : action.items) {
      if (!state.v_cand.count(v)) {
        throw ContractError("recommended item " + std::to_string(v) +
                            " is not a candidate");
      }
      if (!seen.insert(v).second) {
        throw ContractError("duplicate recommended item");
      }
    }
  }
}

StepOutcome Env::simulate_user(const EpisodeState& state,
                               const AgentAction& action) const {
  validate_action(state, action);
  std::set<Id> target_attrs;
  for (Id v : state.targets) {
    const auto& attrs = catalog_->attrs_of(v);
    target_attrs.insert(attrs.begin(), attrs.end());
  }

  StepOutcome out;
  if (action.kind == AgentAction::Kind::ask) {
    for (Id p : action.attrs) {
      if (target_attrs.count(p)) {
        out.accepted_attrs.push_back(p);
      } else {
        out.rejected_attrs.push_back(p);
      }
    }
    out.reward =
        static_cast<double>(out.accepted_attrs.size()) * config_.r_ask_suc +
        static_cast<double>(out.rejected_attrs.size()) * config_.r_ask_fail;
  } else {
    for (Id v : action.items) {
      if (std::find(state.targets.begin(), state.targets.end(), v) !=
          state.targets.end()) {
        out.accepted_item = v;
        break;
      }
    }
    out.success = out.accepted_item.has_value();
    out.reward = out.success ? config_.r_rec_suc : config_.r_rec_fail;
    out.done = out.success;
  }
  if (!out.success && state.turn + 1 == config_.max_turns) {
    out.done = true;
    out.reward += config_.r_quit;
  }
  return out;
}

EpisodeState Env::apply_transition(const EpisodeState& state,
                                   const AgentAction& action,
                                   const StepOutcome& outcome) const {
  if (state.done) throw ContractError("transition on a finished episode");
  EpisodeState next = state;

  for (Id p : outcome.accepted_attrs) {
    if (next.p_acc.insert(p).second) next.p_acc_order.push_back(p);
  }
  for (Id p : outcome.rejected_attrs) {
    if (next.p_rej.insert(p).second) next.p_rej_order.push_back(p);
  }
  const bool failed_rec =
      action.kind == AgentAction::Kind::recommend && !outcome.success;
  if (failed_rec) next.v_rej.insert(action.items.begin(), action.items.end());

  if (!outcome.accepted_attrs.empty()) {
    next.events.push_back(
        {state.turn, EventKind::accept_attr, outcome.accepted_attrs});
  }
  if (!outcome.rejected_attrs.empty()) {
    next.events.push_back(
        {state.turn, EventKind::reject_attr, outcome.rejected_attrs});
  }
  if (failed_rec) {
    next.events.push_back({state.turn, EventKind::reject_items, action.items});
  }

  // Incremental pruning: every candidate already carries the seed attribute,
  // so the accepted-overlap filter cannot newly fail; only fresh rejections
  // remove items.
  std::set<Id> survivors;
  for (Id v : next.v_cand) {
    if (failed_rec && next.v_rej.count(v)) continue;
    bool hit = false;
    for (Id p : outcome.rejected_attrs) {
      if (catalog_->attrs_of(v).count(p)) {
        hit = true;
        break;
      }
    }
    if (!hit) survivors.insert(v);
  }
  next.v_cand = std::move(survivors);
  std::set<Id> p_cand;
  for (Id v : next.v_cand) {
    for (Id p : catalog_->attrs_of(v)) {
      if (!next.p_acc.count(p) && !next.p_rej.count(p)) p_cand.insert(p);
    }
  }
  next.p_cand = std::move(p_cand);
  filter_friends(next);

  next.turn = state.turn + 1;
  next.done = outcome.done;
  next.success = outcome.success;
  if (outcome.accepted_item) next.done = true;
  if (next.v_cand.empty() && !next.success) {
    next.done = true;
    next.success = false;
  }
  return next;
}

}  // namespace convrec

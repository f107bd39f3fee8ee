#include "convrec/world.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "convrec/rng.hpp"

namespace convrec {

namespace {

Id parse_id(const std::string& file, std::size_t line_no,
            const std::string& token) {
  Id value = 0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || value < 0) {
    throw ParseError(file, line_no, "expected a non-negative integer, got '" +
                                        token + "'");
  }
  return value;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

/// Reads non-empty lines (trailing '\r' stripped) with 1-based numbering.
std::vector<std::pair<std::size_t, std::string>> read_lines(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::pair<std::size_t, std::string>> lines;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    lines.emplace_back(no, line);
  }
  return lines;
}

std::pair<Id, Id> parse_id_pair(const std::string& path, std::size_t no,
                                const std::string& line) {
  const auto cols = split(line, '\t');
  if (cols.size() != 2) {
    throw ParseError(path, no, "expected two tab-separated fields");
  }
  return {parse_id(path, no, cols[0]), parse_id(path, no, cols[1])};
}

}  // namespace

const std::set<Id> SocialGraph::kEmpty;

const std::set<Id>& Catalog::attrs_of(Id item) const {
  auto it = item_attrs.find(item);
  if (it == item_attrs.end()) {
    throw ContractError("unknown item " + std::to_string(item));
  }
  return it->second;
}

Id Catalog::type_of(Id attr) const {
  auto it = attr_type.find(attr);
  if (it == attr_type.end()) {
    throw ContractError("unknown attribute " + std::to_string(attr));
  }
  return it->second;
}

void Catalog::validate() const {
  for (const auto& [item, attrs] : item_attrs) {
    if (!items.count(item)) {
      throw ValidationError("item_attrs references unknown item " +
                            std::to_string(item));
    }
    if (attrs.empty()) {
      throw ValidationError("item " + std::to_string(item) +
                            " has an empty attribute set");
    }
    for (Id a : attrs) {
      if (!attributes.count(a)) {
        throw ValidationError("item " + std::to_string(item) +
                              " references unknown attribute " +
                              std::to_string(a));
      }
    }
  }
  for (Id item : items) {
    if (!item_attrs.count(item)) {
      throw ValidationError("item " + std::to_string(item) +
                            " has no attribute set");
    }
  }
  for (Id a : attributes) {
    auto it = attr_type.find(a);
    if (it == attr_type.end()) {
      throw ValidationError("attribute " + std::to_string(a) + " has no type");
    }
    if (!attribute_types.count(it->second)) {
      throw ValidationError("attribute " + std::to_string(a) +
                            " references unknown type " +
                            std::to_string(it->second));
    }
  }
}

const std::set<Id>& SocialGraph::friends_of(Id user) const {
  auto it = friends.find(user);
  return it == friends.end() ? kEmpty : it->second;
}

const std::set<Id>& SocialGraph::accepted_of(Id user) const {
  auto it = accepted_items.find(user);
  return it == accepted_items.end() ? kEmpty : it->second;
}

void SocialGraph::validate(const Catalog& catalog) const {
  for (const auto& [u, fs] : friends) {
    if (!users.count(u)) {
      throw ValidationError("friends references unknown user " +
                            std::to_string(u));
    }
    for (Id f : fs) {
      if (f == u) {
        throw ValidationError("user " + std::to_string(u) +
                              " is their own friend");
      }
      if (!users.count(f)) {
        throw ValidationError("friend edge references unknown user " +
                              std::to_string(f));
      }
      auto back = friends.find(f);
      if (back == friends.end() || !back->second.count(u)) {
        throw ValidationError("friendship between " + std::to_string(u) +
                              " and " + std::to_string(f) +
                              " is not symmetric");
      }
    }
  }
  for (const auto& [u, items] : accepted_items) {
    if (!users.count(u)) {
      throw ValidationError("accepted_items references unknown user " +
                            std::to_string(u));
    }
    for (Id v : items) {
      if (!catalog.items.count(v)) {
        throw ValidationError("user " + std::to_string(u) +
                              " accepted unknown item " + std::to_string(v));
      }
    }
  }
}

void WorldSpec::validate() const {
  if (num_users < 1 || num_items < 1 || num_attributes < 1 || num_types < 1) {
    throw ConfigError("world spec counts must be >= 1");
  }
  if (social_density < 0.0 || social_density > 1.0) {
    throw ConfigError("social_density must lie in [0,1]");
  }
  if (interactions_per_user < 1) {
    throw ConfigError("interactions_per_user must be >= 1");
  }
  if (min_attrs_per_item < 0 || max_attrs_per_item < min_attrs_per_item) {
    throw ConfigError("attribute-per-item bounds are inconsistent");
  }
  if (home_type_bias < 0.0 || home_type_bias > 1.0 ||
      social_correlation < 0.0 || social_correlation > 1.0) {
    throw ConfigError("bias parameters must lie in [0,1]");
  }
}

std::pair<Catalog, SocialGraph> load_world(
    const std::string& items_path, const std::string& attr_types_path,
    const std::string& interactions_path, const std::string& social_path) {
  Catalog catalog;
  for (const auto& [no, line] : read_lines(items_path)) {
    const auto cols = split(line, '\t');
    if (cols.size() != 2) {
      throw ParseError(items_path, no, "expected two tab-separated fields");
    }
    const Id item = parse_id(items_path, no, cols[0]);
    if (catalog.items.count(item)) {
      throw ParseError(items_path, no,
                       "duplicate item " + std::to_string(item));
    }
    std::set<Id> attrs;
    for (const auto& token : split(cols[1], ',')) {
      if (token.empty()) {
        throw ParseError(items_path, no, "empty attribute token");
      }
      attrs.insert(parse_id(items_path, no, token));
    }
    if (attrs.empty()) {
      throw ParseError(items_path, no, "item has no attributes");
    }
    catalog.items.insert(item);
    catalog.attributes.insert(attrs.begin(), attrs.end());
    catalog.item_attrs.emplace(item, std::move(attrs));
  }

  if (!attr_types_path.empty() &&
      std::filesystem::exists(attr_types_path)) {
    for (const auto& [no, line] : read_lines(attr_types_path)) {
      const auto [attr, type] = parse_id_pair(attr_types_path, no, line);
      auto [it, fresh] = catalog.attr_type.emplace(attr, type);
      if (!fresh && it->second != type) {
        throw ParseError(attr_types_path, no,
                         "conflicting type for attribute " +
                             std::to_string(attr));
      }
      catalog.attributes.insert(attr);
      catalog.attribute_types.insert(type);
    }
    for (Id a : catalog.attributes) {
      if (!catalog.attr_type.count(a)) {
        throw ValidationError("attribute " + std::to_string(a) +
                              " missing from the attribute-type table");
      }
    }
  } else {
    for (Id a : catalog.attributes) catalog.attr_type[a] = 0;
    if (!catalog.attributes.empty()) catalog.attribute_types.insert(0);
  }

  SocialGraph social;
  for (const auto& [no, line] : read_lines(interactions_path)) {
    const auto [user, item] = parse_id_pair(interactions_path, no, line);
    if (!catalog.items.count(item)) {
      throw ValidationError("interaction references unknown item " +
                            std::to_string(item));
    }
    social.users.insert(user);
    social.accepted_items[user].insert(item);
  }
  for (const auto& [no, line] : read_lines(social_path)) {
    const auto [a, b] = parse_id_pair(social_path, no, line);
    if (a == b) {
      throw ValidationError("self friendship for user " + std::to_string(a));
    }
    social.users.insert(a);
    social.users.insert(b);
    social.friends[a].insert(b);
    social.friends[b].insert(a);
  }

  catalog.validate();
  social.validate(catalog);
  return {std::move(catalog), std::move(social)};
}

std::pair<Catalog, SocialGraph> load_world(
    const std::string& items_path, const std::string& interactions_path,
    const std::string& social_path) {
  const auto annex =
      std::filesystem::path(items_path).parent_path() / "attr_types.tsv";
  return load_world(items_path, annex.string(), interactions_path,
                    social_path);
}

std::pair<Catalog, SocialGraph> generate_world(const WorldSpec& spec) {
  spec.validate();
  if (spec.num_items < 2) {
    throw GenerationError(
        "need at least two items to guarantee an overlapping item pair");
  }
  Rng rng(spec.seed);
  Catalog catalog;
  for (Id t = 0; t < spec.num_types; ++t) catalog.attribute_types.insert(t);
  // Attribute 0 is the broad attribute carried by every item; the remaining
  // attributes cycle through the types.
  std::vector<std::vector<Id>> attrs_by_type(
      static_cast<std::size_t>(spec.num_types));
  std::vector<Id> narrow;
  for (Id a = 0; a < spec.num_attributes; ++a) {
    catalog.attributes.insert(a);
    const Id type = a % spec.num_types;
    catalog.attr_type[a] = type;
    if (a > 0) {
      attrs_by_type[static_cast<std::size_t>(type)].push_back(a);
      narrow.push_back(a);
    }
  }
  for (Id v = 0; v < spec.num_items; ++v) {
    std::set<Id> attrs = {0};
    if (!narrow.empty()) {
      const Id home = rng.range(0, spec.num_types - 1);
      const auto& home_attrs = attrs_by_type[static_cast<std::size_t>(home)];
      const std::int64_t want =
          rng.range(spec.min_attrs_per_item, spec.max_attrs_per_item);
      for (std::int64_t k = 0; k < want; ++k) {
        const auto& pool =
            (!home_attrs.empty() && rng.flip(spec.home_type_bias))
                ? home_attrs
                : narrow;
        attrs.insert(rng.pick(pool));
      }
    }
    catalog.items.insert(v);
    catalog.item_attrs.emplace(v, std::move(attrs));
  }

  SocialGraph social;
  for (Id u = 0; u < spec.num_users; ++u) social.users.insert(u);
  for (Id u = 0; u < spec.num_users; ++u) {
    for (Id w = u + 1; w < spec.num_users; ++w) {
      if (rng.flip(spec.social_density)) {
        social.friends[u].insert(w);
        social.friends[w].insert(u);
      }
    }
  }

  // Interactions are drawn in rounds so friend histories accumulate before
  // later social-copy draws; that plants the correlation the social view
  // is meant to exploit.
  std::vector<Id> all_items(catalog.items.begin(), catalog.items.end());
  for (std::int64_t round = 0; round < spec.interactions_per_user; ++round) {
    for (Id u = 0; u < spec.num_users; ++u) {
      Id item = -1;
      if (rng.flip(spec.social_correlation)) {
        std::vector<Id> donors;
        for (Id f : social.friends_of(u)) {
          if (!social.accepted_of(f).empty()) donors.push_back(f);
        }
        if (!donors.empty()) {
          const Id donor = rng.pick(donors);
          const auto& pool = social.accepted_of(donor);
          std::vector<Id> pool_v(pool.begin(), pool.end());
          item = rng.pick(pool_v);
        }
      }
      if (item < 0) item = rng.pick(all_items);
      social.accepted_items[u].insert(item);
    }
  }

  catalog.validate();
  social.validate(catalog);
  return {std::move(catalog), std::move(social)};
}

void save_world(const Catalog& catalog, const SocialGraph& social,
                const std::string& items_path,
                const std::string& attr_types_path,
                const std::string& interactions_path,
                const std::string& social_path) {
  auto open = [](const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    return out;
  };
  {
    auto out = open(items_path);
    for (const auto& [item, attrs] : catalog.item_attrs) {
      out << item << '\t';
      bool first = true;
      for (Id a : attrs) {
        if (!first) out << ',';
        out << a;
        first = false;
      }
      out << '\n';
    }
  }
  {
    auto out = open(attr_types_path);
    for (const auto& [attr, type] : catalog.attr_type) {
      out << attr << '\t' << type << '\n';
    }
  }
  {
    auto out = open(interactions_path);
    for (const auto& [user, items] : social.accepted_items) {
      for (Id v : items) out << user << '\t' << v << '\n';
    }
  }
  {
    auto out = open(social_path);
    for (const auto& [u, fs] : social.friends) {
      for (Id f : fs) {
        if (u < f) out << u << '\t' << f << '\n';
      }
    }
  }
}

InteractionSplit split_interactions(const SocialGraph& social,
                                    double eval_fraction,
                                    std::uint64_t seed) {
  if (eval_fraction < 0.0 || eval_fraction > 1.0) {
    throw ConfigError("eval_fraction must lie in [0,1]");
  }
  Rng rng(seed);
  InteractionSplit out;
  for (const auto& [user, items] : social.accepted_items) {
    std::vector<Id> order(items.begin(), items.end());
    rng.shuffle(order);
    // Floor keeps at least one training item per user.
    const auto n_eval = static_cast<std::size_t>(
        static_cast<double>(order.size()) * eval_fraction);
    for (std::size_t i = 0; i < order.size(); ++i) {
      auto& bucket = (i < n_eval) ? out.eval : out.train;
      bucket.emplace_back(user, order[i]);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.eval.begin(), out.eval.end());
  return out;
}

NodeIndex::NodeIndex(const Catalog& catalog, const SocialGraph& social) {
  int row = 0;
  for (Id u : social.users) {
    user_row_.emplace(u, row++);
    labels_.push_back("user:" + std::to_string(u));
  }
  for (Id v : catalog.items) {
    item_row_.emplace(v, row++);
    labels_.push_back("item:" + std::to_string(v));
  }
  for (Id a : catalog.attributes) {
    attr_row_.emplace(a, row++);
    labels_.push_back("attr:" + std::to_string(a));
  }
  total_ = row;
}

int NodeIndex::user_row(Id user) const {
  auto it = user_row_.find(user);
  if (it == user_row_.end()) {
    throw ContractError("unknown user " + std::to_string(user));
  }
  return it->second;
}

int NodeIndex::item_row(Id item) const {
  auto it = item_row_.find(item);
  if (it == item_row_.end()) {
    throw ContractError("unknown item " + std::to_string(item));
  }
  return it->second;
}

int NodeIndex::attr_row(Id attr) const {
  auto it = attr_row_.find(attr);
  if (it == attr_row_.end()) {
    throw ContractError("unknown attribute " + std::to_string(attr));
  }
  return it->second;
}

std::string NodeIndex::row_label(int row) const {
  if (row < 0 || row >= total_) {
    throw ContractError("row " + std::to_string(row) + " out of range");
  }
  return labels_[static_cast<std::size_t>(row)];
}

}  // namespace convrec

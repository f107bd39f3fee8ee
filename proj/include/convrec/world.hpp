#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "convrec/error.hpp"

namespace convrec {

using Id = std::int64_t;

/// Immutable world structure: items, attributes, attribute types, and the
/// item-to-attribute mapping.
struct Catalog {
  std::set<Id> items;
  std::set<Id> attributes;
  std::set<Id> attribute_types;
  std::map<Id, std::set<Id>> item_attrs;
  std::map<Id, Id> attr_type;

  bool operator==(const Catalog&) const = default;

  /// Attribute set of an item; unknown item throws ContractError.
  const std::set<Id>& attrs_of(Id item) const;

  /// Type of an attribute; unknown attribute throws ContractError.
  Id type_of(Id attr) const;

  /// Checks referential integrity and non-emptiness of attribute sets.
  void validate() const;
};

/// Users, symmetric friendship, and each user's historical accepted items.
struct SocialGraph {
  std::set<Id> users;
  std::map<Id, std::set<Id>> friends;
  std::map<Id, std::set<Id>> accepted_items;

  bool operator==(const SocialGraph&) const = default;

  const std::set<Id>& friends_of(Id user) const;
  const std::set<Id>& accepted_of(Id user) const;

  /// Checks symmetry, absence of self-loops, and that accepted items and all
  /// referenced users exist.
  void validate(const Catalog& catalog) const;

 private:
  static const std::set<Id> kEmpty;
};

/// Parameters for synthetic world generation. The same spec and seed always
/// produce the same world.
struct WorldSpec {
  std::int64_t num_users = 50;
  std::int64_t num_items = 200;
  std::int64_t num_attributes = 40;
  std::int64_t num_types = 5;
  double social_density = 0.08;
  std::int64_t interactions_per_user = 12;
  /// Narrow attributes per item, drawn uniformly from [min, max]. A broad
  /// attribute shared by every item is added on top, so each item carries at
  /// least one attribute and any two items overlap.
  std::int64_t min_attrs_per_item = 2;
  std::int64_t max_attrs_per_item = 5;
  /// Probability that a narrow attribute is drawn from the item's home type
  /// rather than from all narrow attributes.
  double home_type_bias = 0.8;
  /// Probability that an interaction copies an item from a friend's history
  /// instead of sampling the catalog uniformly.
  double social_correlation = 0.7;
  std::uint64_t seed = 1;

  bool operator==(const WorldSpec&) const = default;

  void validate() const;
};

/// Loads a world from four files (items, attribute types, interactions,
/// social edges); formats are documented in the README.
std::pair<Catalog, SocialGraph> load_world(const std::string& items_path,
                                           const std::string& attr_types_path,
                                           const std::string& interactions_path,
                                           const std::string& social_path);

/// Three-file variant: the attribute-type table is looked up as
/// `attr_types.tsv` next to the items file; if absent, every attribute gets
/// type 0.
std::pair<Catalog, SocialGraph> load_world(const std::string& items_path,
                                           const std::string& interactions_path,
                                           const std::string& social_path);

/// Generates a synthetic world. Throws GenerationError when the spec cannot
/// admit two items with a shared attribute.
std::pair<Catalog, SocialGraph> generate_world(const WorldSpec& spec);

/// Writes the four world files in the formats load_world reads.
void save_world(const Catalog& catalog, const SocialGraph& social,
                const std::string& items_path,
                const std::string& attr_types_path,
                const std::string& interactions_path,
                const std::string& social_path);

/// Deterministic per-user split of interaction pairs. Each user's accepted
/// items are partitioned so roughly eval_fraction of them land in the eval
/// set; a user with a single item keeps it in the training set.
struct InteractionSplit {
  std::vector<std::pair<Id, Id>> train;
  std::vector<std::pair<Id, Id>> eval;
};
InteractionSplit split_interactions(const SocialGraph& social,
                                    double eval_fraction, std::uint64_t seed);

/// Dense row numbering of the unified node set: users, then items, then
/// attributes, each block in ascending id order.
class NodeIndex {
 public:
  NodeIndex(const Catalog& catalog, const SocialGraph& social);

  int user_row(Id user) const;
  int item_row(Id item) const;
  int attr_row(Id attr) const;
  int size() const { return total_; }

  int num_users() const { return static_cast<int>(user_row_.size()); }
  int num_items() const { return static_cast<int>(item_row_.size()); }
  int num_attrs() const { return static_cast<int>(attr_row_.size()); }

  /// Human-readable label ("user:3", "item:17", "attr:5") for a row.
  std::string row_label(int row) const;

 private:
  std::map<Id, int> user_row_;
  std::map<Id, int> item_row_;
  std::map<Id, int> attr_row_;
  std::vector<std::string> labels_;
  int total_ = 0;
};

}  // namespace convrec

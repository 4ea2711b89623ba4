#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pcvault/error.hpp"

namespace pcvault::abe {

inline constexpr unsigned kDefaultBitWidth = 32;

// Named attributes held by a user: bare tags ("researcher") and numeric
// attributes ("exp=20261231"). Names are lowercase [a-z0-9_].
class AttributeSet {
 public:
  AttributeSet() = default;
  // "researcher;univx;exp=20261231" (';' or ',' separated, whitespace ignored).
  static AttributeSet parse(std::string_view text);

  void add_tag(std::string name);
  void add_numeric(std::string name, std::uint64_t value);

  bool has_tag(std::string_view name) const;
  std::optional<std::uint64_t> numeric(std::string_view name) const;
  bool contains(std::string_view name) const { return entries_.find(std::string(name)) != entries_.end(); }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  const std::map<std::string, std::optional<std::uint64_t>>& entries() const { return entries_; }
  std::string to_string() const;

  bool operator==(const AttributeSet&) const = default;

 private:
  void insert(std::string name, std::optional<std::uint64_t> value);

  std::map<std::string, std::optional<std::uint64_t>> entries_;
};

bool is_valid_attribute_name(std::string_view name);

enum class Comparator : std::uint8_t { Less, LessEqual, Equal, GreaterEqual, Greater };

std::string_view to_string(Comparator c);

// Policy node. Parsed policies only contain Tag/Numeric/And/Or; compiled
// share trees replace Numeric leaves by bit-tag subtrees and may contain the
// constants True/False.
struct PolicyNode {
  enum class Kind : std::uint8_t { Tag, Numeric, And, Or, True, False };

  Kind kind = Kind::Tag;
  std::string name;
  Comparator comparator = Comparator::Equal;
  std::uint64_t value = 0;
  std::vector<PolicyNode> children;

  static PolicyNode tag(std::string name) { return {Kind::Tag, std::move(name), {}, 0, {}}; }
  static PolicyNode numeric(std::string name, Comparator c, std::uint64_t v) {
    return {Kind::Numeric, std::move(name), c, v, {}};
  }
  static PolicyNode constant(bool v) { return {v ? Kind::True : Kind::False, {}, {}, 0, {}}; }
  // Gate constructors flatten nested gates of the same kind.
  static PolicyNode all_of(std::vector<PolicyNode> children);
  static PolicyNode any_of(std::vector<PolicyNode> children);

  bool operator==(const PolicyNode&) const = default;
};

// Access structure attached to a ciphertext.
class PolicyTree {
 public:
  explicit PolicyTree(PolicyNode root);

  const PolicyNode& root() const { return root_; }
  std::string to_string() const;
  bool operator==(const PolicyTree&) const = default;

 private:
  PolicyNode root_;
};

// expr := term (OR term)* ; term := factor (AND factor)* ;
// factor := tag | name cmp int | '(' expr ')'. Keywords are case-insensitive.
PolicyTree parse_policy(std::string_view text);

bool eval_policy(const PolicyTree& policy, const AttributeSet& attrs);

// Bit-tag spelling for bit `bit` (0 = least significant) of numeric attribute `name`.
std::string bit_tag(std::string_view name, unsigned bit, bool set);

// Boolean tree over bit-tags that holds for the bit-tags of v iff `v cmp value`.
PolicyNode compile_numeric(std::string_view name, Comparator cmp, std::uint64_t value,
                           unsigned bit_width = kDefaultBitWidth);

// Replaces every Numeric leaf with its compiled bit-tag tree.
PolicyNode compile_policy(const PolicyTree& policy, unsigned bit_width = kDefaultBitWidth);

// The tags a key holder for `attrs` owns: bare tags plus one bit-tag per bit
// of each numeric attribute.
std::set<std::string> expand_attributes(const AttributeSet& attrs, unsigned bit_width = kDefaultBitWidth);

// Evaluates a compiled (tag/constant only) tree against a tag set.
bool eval_compiled(const PolicyNode& node, const std::set<std::string>& tags);

// Distinct bare tags mentioned in a policy, in first-seen order.
std::vector<std::string> policy_tags(const PolicyTree& policy);

}  // namespace pcvault::abe

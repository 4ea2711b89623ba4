#include "pcvault/policy.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

namespace pcvault::abe {

bool is_valid_attribute_name(std::string_view name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::optional<std::uint64_t> parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

bool keyword_is(std::string_view word, std::string_view kw) {
  if (word.size() != kw.size()) return false;
  for (std::size_t i = 0; i < kw.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(word[i])) != kw[i]) return false;
  }
  return true;
}

}  // namespace

AttributeSet AttributeSet::parse(std::string_view text) {
  AttributeSet out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find_first_of(";,", pos);
    if (end == std::string_view::npos) end = text.size();
    const auto item = trim(text.substr(pos, end - pos));
    if (!item.empty()) {
      const auto eq = item.find('=');
      if (eq == std::string_view::npos) {
        out.add_tag(std::string(item));
      } else {
        const auto value = parse_u64(trim(item.substr(eq + 1)));
        if (!value) throw Error(Errc::InvalidAttribute, "bad numeric value in '" + std::string(item) + "'");
        out.add_numeric(std::string(trim(item.substr(0, eq))), *value);
      }
    }
    pos = end + 1;
  }
  return out;
}

void AttributeSet::insert(std::string name, std::optional<std::uint64_t> value) {
  if (!is_valid_attribute_name(name)) throw Error(Errc::InvalidAttribute, "invalid attribute name '" + name + "'");
  if (!entries_.emplace(name, value).second) throw Error(Errc::InvalidAttribute, "duplicate attribute '" + name + "'");
}

void AttributeSet::add_tag(std::string name) { insert(std::move(name), std::nullopt); }
void AttributeSet::add_numeric(std::string name, std::uint64_t value) { insert(std::move(name), value); }

bool AttributeSet::has_tag(std::string_view name) const {
  auto it = entries_.find(std::string(name));
  return it != entries_.end() && !it->second;
}

std::optional<std::uint64_t> AttributeSet::numeric(std::string_view name) const {
  auto it = entries_.find(std::string(name));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string AttributeSet::to_string() const {
  std::string out;
  for (const auto& [name, value] : entries_) {
    if (!out.empty()) out += ';';
    out += name;
    if (value) out += "=" + std::to_string(*value);
  }
  return out;
}

std::string_view to_string(Comparator c) {
  switch (c) {
    case Comparator::Less: return "<";
    case Comparator::LessEqual: return "<=";
    case Comparator::Equal: return "=";
    case Comparator::GreaterEqual: return ">=";
    case Comparator::Greater: return ">";
  }
  return "?";
}

namespace {

PolicyNode make_gate(PolicyNode::Kind kind, std::vector<PolicyNode> children) {
  std::vector<PolicyNode> flat;
  for (auto& c : children) {
    if (c.kind == kind) {
      for (auto& g : c.children) flat.push_back(std::move(g));
    } else {
      flat.push_back(std::move(c));
    }
  }
  if (flat.size() == 1) return std::move(flat.front());
  PolicyNode n;
  n.kind = kind;
  n.children = std::move(flat);
  return n;
}

void validate_tree(const PolicyNode& n) {
  switch (n.kind) {
    case PolicyNode::Kind::Tag:
    case PolicyNode::Kind::Numeric:
      if (!is_valid_attribute_name(n.name)) throw Error(Errc::InvalidAttribute, "invalid attribute name '" + n.name + "'");
      return;
    case PolicyNode::Kind::And:
    case PolicyNode::Kind::Or:
      if (n.children.size() < 2) throw Error(Errc::InvalidArgument, "gates need at least two children");
      for (const auto& c : n.children) validate_tree(c);
      return;
    case PolicyNode::Kind::True:
    case PolicyNode::Kind::False:
      throw Error(Errc::InvalidArgument, "constants are not allowed in access policies");
  }
}

void render(const PolicyNode& n, std::string& out) {
  switch (n.kind) {
    case PolicyNode::Kind::Tag:
      out += n.name;
      return;
    case PolicyNode::Kind::Numeric:
      out += n.name;
      out += ' ';
      out += to_string(n.comparator);
      out += ' ';
      out += std::to_string(n.value);
      return;
    case PolicyNode::Kind::True:
      out += "true";
      return;
    case PolicyNode::Kind::False:
      out += "false";
      return;
    case PolicyNode::Kind::And:
    case PolicyNode::Kind::Or: {
      const bool is_and = n.kind == PolicyNode::Kind::And;
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        if (i) out += is_and ? " and " : " or ";
        const bool paren = is_and && n.children[i].kind == PolicyNode::Kind::Or;
        if (paren) out += '(';
        render(n.children[i], out);
        if (paren) out += ')';
      }
      return;
    }
  }
}

class PolicyParser {
 public:
  explicit PolicyParser(std::string_view text) : text_(text) {}

  PolicyNode parse() {
    skip_ws();
    if (pos_ == text_.size()) fail("empty policy");
    auto n = expr();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return n;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(Errc::SyntaxError, what + " at offset " + std::to_string(pos_), static_cast<std::int64_t>(pos_));
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  static bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

  std::string_view peek_word() const {
    std::size_t j = pos_;
    while (j < text_.size() && word_char(text_[j])) ++j;
    return text_.substr(pos_, j - pos_);
  }

  bool accept_keyword(std::string_view kw) {
    skip_ws();
    const auto w = peek_word();
    if (keyword_is(w, kw)) {
      pos_ += w.size();
      return true;
    }
    return false;
  }

  PolicyNode expr() {
    std::vector<PolicyNode> terms;
    terms.push_back(term());
    while (accept_keyword("or")) terms.push_back(term());
    return PolicyNode::any_of(std::move(terms));
  }

  PolicyNode term() {
    std::vector<PolicyNode> factors;
    factors.push_back(factor());
    while (accept_keyword("and")) factors.push_back(factor());
    return PolicyNode::all_of(std::move(factors));
  }

  PolicyNode factor() {
    skip_ws();
    if (pos_ == text_.size()) fail("expected attribute or '('");
    if (text_[pos_] == '(') {
      ++pos_;
      auto n = expr();
      skip_ws();
      if (pos_ == text_.size() || text_[pos_] != ')') fail("expected ')'");
      ++pos_;
      return n;
    }
    const auto word = peek_word();
    if (word.empty()) fail(std::string("unexpected '") + text_[pos_] + "'");
    if (keyword_is(word, "and") || keyword_is(word, "or")) fail("keyword '" + std::string(word) + "' used as attribute");
    if (!is_valid_attribute_name(word)) fail("attribute names must be lowercase [a-z0-9_]");
    std::string name(word);
    pos_ += word.size();
    skip_ws();
    const auto cmp = comparator();
    if (!cmp) return PolicyNode::tag(std::move(name));
    skip_ws();
    std::size_t j = pos_;
    while (j < text_.size() && std::isdigit(static_cast<unsigned char>(text_[j]))) ++j;
    const auto value = parse_u64(text_.substr(pos_, j - pos_));
    if (!value) fail("expected non-negative integer");
    pos_ = j;
    return PolicyNode::numeric(std::move(name), *cmp, *value);
  }

  std::optional<Comparator> comparator() {
    if (pos_ >= text_.size()) return std::nullopt;
    const char c = text_[pos_];
    const char next = pos_ + 1 < text_.size() ? text_[pos_ + 1] : '\0';
    if (c == '<') {
      pos_ += next == '=' ? 2 : 1;
      return next == '=' ? Comparator::LessEqual : Comparator::Less;
    }
    if (c == '>') {
      pos_ += next == '=' ? 2 : 1;
      return next == '=' ? Comparator::GreaterEqual : Comparator::Greater;
    }
    if (c == '=') {
      ++pos_;
      return Comparator::Equal;
    }
    return std::nullopt;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

bool compare(std::uint64_t lhs, Comparator c, std::uint64_t rhs) {
  switch (c) {
    case Comparator::Less: return lhs < rhs;
    case Comparator::LessEqual: return lhs <= rhs;
    case Comparator::Equal: return lhs == rhs;
    case Comparator::GreaterEqual: return lhs >= rhs;
    case Comparator::Greater: return lhs > rhs;
  }
  return false;
}

bool eval_node(const PolicyNode& n, const AttributeSet& attrs) {
  switch (n.kind) {
    case PolicyNode::Kind::Tag: return attrs.has_tag(n.name);
    case PolicyNode::Kind::Numeric: {
      const auto v = attrs.numeric(n.name);
      return v && compare(*v, n.comparator, n.value);
    }
    case PolicyNode::Kind::And:
      return std::all_of(n.children.begin(), n.children.end(), [&](const PolicyNode& c) { return eval_node(c, attrs); });
    case PolicyNode::Kind::Or:
      return std::any_of(n.children.begin(), n.children.end(), [&](const PolicyNode& c) { return eval_node(c, attrs); });
    case PolicyNode::Kind::True: return true;
    case PolicyNode::Kind::False: return false;
  }
  return false;
}

// Gate helpers that fold constants.
PolicyNode and2(PolicyNode a, PolicyNode b) {
  using K = PolicyNode::Kind;
  if (a.kind == K::False || b.kind == K::False) return PolicyNode::constant(false);
  if (a.kind == K::True) return b;
  if (b.kind == K::True) return a;
  return PolicyNode::all_of({std::move(a), std::move(b)});
}

PolicyNode or2(PolicyNode a, PolicyNode b) {
  using K = PolicyNode::Kind;
  if (a.kind == K::True || b.kind == K::True) return PolicyNode::constant(true);
  if (a.kind == K::False) return b;
  if (b.kind == K::False) return a;
  return PolicyNode::any_of({std::move(a), std::move(b)});
}

bool bit_of(std::uint64_t v, unsigned i) { return (v >> i) & 1U; }

// v' >= v, looking at bits [top..0].
PolicyNode build_ge(std::string_view name, std::uint64_t v, int top) {
  PolicyNode acc = PolicyNode::constant(true);
  for (int i = 0; i <= top; ++i) {
    const auto bit = static_cast<unsigned>(i);
    if (bit_of(v, bit)) {
      acc = and2(PolicyNode::tag(bit_tag(name, bit, true)), std::move(acc));
    } else {
      acc = or2(PolicyNode::tag(bit_tag(name, bit, true)), std::move(acc));
    }
  }
  return acc;
}

// v' < v, looking at bits [top..0].
PolicyNode build_lt(std::string_view name, std::uint64_t v, int top) {
  PolicyNode acc = PolicyNode::constant(false);
  for (int i = 0; i <= top; ++i) {
    const auto bit = static_cast<unsigned>(i);
    if (bit_of(v, bit)) {
      acc = or2(PolicyNode::tag(bit_tag(name, bit, false)), std::move(acc));
    } else {
      acc = and2(PolicyNode::tag(bit_tag(name, bit, false)), std::move(acc));
    }
  }
  return acc;
}

PolicyNode compile_node(const PolicyNode& n, unsigned width) {
  switch (n.kind) {
    case PolicyNode::Kind::Numeric: return compile_numeric(n.name, n.comparator, n.value, width);
    case PolicyNode::Kind::And:
    case PolicyNode::Kind::Or: {
      PolicyNode acc = PolicyNode::constant(n.kind == PolicyNode::Kind::And);
      for (const auto& c : n.children) {
        auto compiled = compile_node(c, width);
        acc = n.kind == PolicyNode::Kind::And ? and2(std::move(acc), std::move(compiled))
                                              : or2(std::move(acc), std::move(compiled));
      }
      return acc;
    }
    default: return n;
  }
}

void collect_tags(const PolicyNode& n, std::vector<std::string>& out) {
  if (n.kind == PolicyNode::Kind::Tag) {
    if (std::find(out.begin(), out.end(), n.name) == out.end()) out.push_back(n.name);
  }
  for (const auto& c : n.children) collect_tags(c, out);
}

}  // namespace

PolicyNode PolicyNode::all_of(std::vector<PolicyNode> children) { return make_gate(Kind::And, std::move(children)); }
PolicyNode PolicyNode::any_of(std::vector<PolicyNode> children) { return make_gate(Kind::Or, std::move(children)); }

PolicyTree::PolicyTree(PolicyNode root) : root_(std::move(root)) { validate_tree(root_); }

std::string PolicyTree::to_string() const {
  std::string out;
  render(root_, out);
  return out;
}

PolicyTree parse_policy(std::string_view text) { return PolicyTree(PolicyParser(text).parse()); }

bool eval_policy(const PolicyTree& policy, const AttributeSet& attrs) { return eval_node(policy.root(), attrs); }

std::string bit_tag(std::string_view name, unsigned bit, bool set) {
  return std::string(name) + "$" + std::to_string(bit) + "$" + (set ? "1" : "0");
}

PolicyNode compile_numeric(std::string_view name, Comparator cmp, std::uint64_t value, unsigned bit_width) {
  if (bit_width < 1 || bit_width > 64) throw Error(Errc::ValueOutOfRange, "bit width must be in [1, 64]");
  const std::uint64_t max = bit_width == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << bit_width) - 1;
  if (value > max) {
    throw Error(Errc::ValueOutOfRange,
                std::to_string(value) + " does not fit in " + std::to_string(bit_width) + " bits");
  }
  const int top = static_cast<int>(bit_width) - 1;
  switch (cmp) {
    case Comparator::GreaterEqual: return build_ge(name, value, top);
    case Comparator::Greater:
      return value == max ? PolicyNode::constant(false) : build_ge(name, value + 1, top);
    case Comparator::Less: return build_lt(name, value, top);
    case Comparator::LessEqual:
      return value == max ? PolicyNode::constant(true) : build_lt(name, value + 1, top);
    case Comparator::Equal: {
      std::vector<PolicyNode> bits;
      for (int i = top; i >= 0; --i) {
        const auto bit = static_cast<unsigned>(i);
        bits.push_back(PolicyNode::tag(bit_tag(name, bit, bit_of(value, bit))));
      }
      return PolicyNode::all_of(std::move(bits));
    }
  }
  return PolicyNode::constant(false);
}

PolicyNode compile_policy(const PolicyTree& policy, unsigned bit_width) { return compile_node(policy.root(), bit_width); }

std::set<std::string> expand_attributes(const AttributeSet& attrs, unsigned bit_width) {
  std::set<std::string> tags;
  for (const auto& [name, value] : attrs.entries()) {
    if (!value) {
      tags.insert(name);
      continue;
    }
    if (bit_width < 64 && (*value >> bit_width) != 0) {
      throw Error(Errc::InvalidAttribute,
                  name + "=" + std::to_string(*value) + " does not fit in " + std::to_string(bit_width) + " bits");
    }
    for (unsigned b = 0; b < bit_width; ++b) tags.insert(bit_tag(name, b, bit_of(*value, b)));
  }
  return tags;
}

bool eval_compiled(const PolicyNode& node, const std::set<std::string>& tags) {
  switch (node.kind) {
    case PolicyNode::Kind::Tag: return tags.count(node.name) != 0;
    case PolicyNode::Kind::And:
      return std::all_of(node.children.begin(), node.children.end(),
                         [&](const PolicyNode& c) { return eval_compiled(c, tags); });
    case PolicyNode::Kind::Or:
      return std::any_of(node.children.begin(), node.children.end(),
                         [&](const PolicyNode& c) { return eval_compiled(c, tags); });
    case PolicyNode::Kind::True: return true;
    case PolicyNode::Kind::False: return false;
    case PolicyNode::Kind::Numeric:
      throw Error(Errc::InvalidArgument, "numeric leaf in a compiled tree");
  }
  return false;
}

std::vector<std::string> policy_tags(const PolicyTree& policy) {
  std::vector<std::string> out;
  collect_tags(policy.root(), out);
  return out;
}

}  // namespace pcvault::abe

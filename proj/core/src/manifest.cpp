#include "pcvault/manifest.hpp"

#include <cctype>
#include <charconv>
#include <map>
#include <vector>

#include "pcvault/error.hpp"
#include "pcvault/pattern.hpp"

namespace pcvault::manifest {

namespace {

[[noreturn]] void violation(const std::string& what) { throw Error(Errc::SchemaViolation, what); }

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape(std::string_view s) {
  static const std::pair<std::string_view, char> kEntities[] = {
      {"&amp;", '&'}, {"&lt;", '<'}, {"&gt;", '>'}, {"&quot;", '"'}, {"&apos;", '\''}};
  std::string out;
  for (std::size_t i = 0; i < s.size();) {
    if (s[i] == '<') violation("raw '<' in attribute value");
    if (s[i] != '&') {
      out += s[i++];
      continue;
    }
    bool matched = false;
    for (const auto& [name, ch] : kEntities) {
      if (s.substr(i, name.size()) == name) {
        out += ch;
        i += name.size();
        matched = true;
        break;
      }
    }
    if (!matched) violation("unsupported entity in attribute value");
  }
  return out;
}

template <typename T>
T positive(const std::string& text, const char* name) {
  T v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || r.ec != std::errc{} || r.ptr != text.data() + text.size() || v == 0) {
    violation(std::string(name) + " must be a positive integer");
  }
  return v;
}

// Cursor over the restricted XML subset.
class Reader {
 public:
  explicit Reader(std::string_view s) : s_(s) {}

  void skip_misc() {
    while (true) {
      while (pos_ < s_.size() && is_space(s_[pos_])) ++pos_;
      if (starts("<?xml")) {
        const auto end = s_.find("?>", pos_);
        if (end == std::string_view::npos) violation("unterminated XML declaration");
        pos_ = end + 2;
      } else if (starts("<!--")) {
        const auto end = s_.find("-->", pos_ + 4);
        if (end == std::string_view::npos) violation("unterminated comment");
        pos_ = end + 3;
      } else {
        return;
      }
    }
  }

  bool starts(std::string_view t) const { return s_.substr(pos_, t.size()) == t; }
  bool done() const { return pos_ >= s_.size(); }

  void expect(std::string_view t) {
    if (!starts(t)) violation("expected '" + std::string(t) + "'");
    pos_ += t.size();
  }

  std::string name() {
    const auto start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' ||
                                s_[pos_] == '-' || s_[pos_] == ':')) {
      ++pos_;
    }
    if (start == pos_) violation("expected a name");
    return std::string(s_.substr(start, pos_ - start));
  }

  // Parses attributes up to '>' or '/>'; returns true for a self-closing tag.
  bool attributes(std::map<std::string, std::string>& out) {
    while (true) {
      const auto before = pos_;
      while (pos_ < s_.size() && is_space(s_[pos_])) ++pos_;
      if (starts("/>")) {
        pos_ += 2;
        return true;
      }
      if (starts(">")) {
        pos_ += 1;
        return false;
      }
      if (before == pos_) violation("attributes must be separated by whitespace");
      const std::string key = name();
      while (pos_ < s_.size() && is_space(s_[pos_])) ++pos_;
      expect("=");
      while (pos_ < s_.size() && is_space(s_[pos_])) ++pos_;
      if (done() || (s_[pos_] != '"' && s_[pos_] != '\'')) violation("attribute value must be quoted");
      const char q = s_[pos_++];
      const auto end = s_.find(q, pos_);
      if (end == std::string_view::npos) violation("unterminated attribute value");
      std::string value = unescape(s_.substr(pos_, end - pos_));
      pos_ = end + 1;
      if (!out.emplace(key, std::move(value)).second) violation("duplicate attribute " + key);
    }
  }

 private:
  static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

  std::string_view s_;
  std::size_t pos_ = 0;
};

std::size_t digits(std::uint64_t v) {
  std::size_t n = 1;
  while (v >= 10) {
    v /= 10;
    ++n;
  }
  return n;
}

}  // namespace

void validate(const Manifest& m) {
  if (m.frame_rate == 0) violation("frameRate must be positive");
  if (m.frame_count == 0) violation("frameCount must be positive");
  if (m.media_template.find(kIndexToken) == std::string::npos) {
    throw Error(Errc::BadTemplate, "media template lacks " + std::string(kIndexToken));
  }
  if (m.encryption_level.empty()) violation("encryptionLevel is empty");
  if (m.encryption_level != kLevelNone && m.encryption_level != kLevelFull) {
    try {
      Pattern::parse(m.encryption_level);
    } catch (const Error& e) {
      violation("encryptionLevel is not NONE, FULL or a pattern: " + std::string(e.what()));
    }
  }
  if (!m.encrypted() && (m.policy || m.license_url)) violation("a NONE manifest carries no policy or license URL");
}

std::string generate_mpd(const Manifest& m) {
  validate(m);
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<MPD";
  out += " frameRate=\"" + std::to_string(m.frame_rate) + "\"";
  out += " frameCount=\"" + std::to_string(m.frame_count) + "\"";
  out += " encryptionLevel=\"" + escape(m.encryption_level) + "\"";
  if (m.policy) out += " policy=\"" + escape(*m.policy) + "\"";
  if (m.license_url) out += " licenseUrl=\"" + escape(*m.license_url) + "\"";
  out += ">\n  <SegmentTemplate media=\"" + escape(m.media_template) + "\"/>\n</MPD>\n";
  return out;
}

Manifest parse_mpd(std::string_view text) {
  Reader r(text);
  r.skip_misc();
  r.expect("<");
  if (r.name() != "MPD") violation("root element must be MPD");
  std::map<std::string, std::string> root;
  if (r.attributes(root)) violation("MPD has no SegmentTemplate");

  std::optional<std::map<std::string, std::string>> tmpl;
  while (true) {
    r.skip_misc();
    if (r.starts("</")) {
      r.expect("</");
      if (r.name() != "MPD") violation("mismatched closing tag");
      r.expect(">");
      break;
    }
    r.expect("<");
    const std::string el = r.name();
    if (el != "SegmentTemplate") violation("unknown element " + el);
    if (tmpl) violation("duplicate SegmentTemplate");
    tmpl.emplace();
    if (!r.attributes(*tmpl)) violation("SegmentTemplate must be self-closing");
  }
  r.skip_misc();
  if (!r.done()) violation("content after </MPD>");
  if (!tmpl) violation("MPD has no SegmentTemplate");

  for (const auto& [k, v] : root) {
    if (k != "frameRate" && k != "frameCount" && k != "encryptionLevel" && k != "policy" && k != "licenseUrl") {
      violation("unknown MPD attribute " + k);
    }
  }
  for (const auto& [k, v] : *tmpl) {
    if (k != "media") violation("unknown SegmentTemplate attribute " + k);
  }
  for (const char* required : {"frameRate", "frameCount", "encryptionLevel"}) {
    if (!root.count(required)) violation(std::string("missing attribute ") + required);
  }
  if (!tmpl->count("media")) violation("SegmentTemplate lacks media");

  Manifest m;
  m.frame_rate = positive<std::uint32_t>(root["frameRate"], "frameRate");
  m.frame_count = positive<std::uint64_t>(root["frameCount"], "frameCount");
  m.encryption_level = root["encryptionLevel"];
  if (root.count("policy")) m.policy = root["policy"];
  if (root.count("licenseUrl")) m.license_url = root["licenseUrl"];
  m.media_template = (*tmpl)["media"];
  validate(m);
  return m;
}

std::string frame_url(const Manifest& m, std::uint64_t index) {
  if (index >= m.frame_count) {
    throw Error(Errc::IndexOutOfRange, "frame " + std::to_string(index) + " of " + std::to_string(m.frame_count));
  }
  std::string num = std::to_string(index);
  const std::size_t width = digits(m.frame_count - 1);
  if (num.size() < width) num.insert(0, width - num.size(), '0');
  std::string out = m.media_template;
  std::size_t at = out.find(kIndexToken);
  if (at == std::string::npos) throw Error(Errc::BadTemplate, "media template lacks $Index$");
  for (; at != std::string::npos; at = out.find(kIndexToken, at + num.size())) out.replace(at, kIndexToken.size(), num);
  return out;
}

}  // namespace pcvault::manifest

#include "pcvault/pattern.hpp"

#include <limits>

namespace pcvault {

Pattern Pattern::parse(std::string_view text) {
  if (text.empty()) throw Error(Errc::EmptyPattern, "pattern is empty");
  Pattern p;
  std::size_t i = 0;
  while (i < text.size()) {
    std::uint64_t stride = 1;
    const std::size_t digits_at = i;
    if (text[i] >= '0' && text[i] <= '9') {
      stride = 0;
      while (i < text.size() && text[i] >= '0' && text[i] <= '9') {
        stride = stride * 10 + static_cast<std::uint64_t>(text[i] - '0');
        if (stride > std::numeric_limits<std::uint32_t>::max()) {
          throw Error(Errc::UnknownSymbol, "stride too large at offset " + std::to_string(digits_at));
        }
        ++i;
      }
      if (stride == 0) throw Error(Errc::ZeroStride, "stride 0 at offset " + std::to_string(digits_at));
    }
    if (i == text.size()) {
      throw Error(Errc::UnknownSymbol, "stride at offset " + std::to_string(digits_at) + " is not followed by an axis");
    }
    int axis = -1;
    switch (text[i]) {
      case 'X': axis = 0; break;
      case 'Y': axis = 1; break;
      case 'Z': axis = 2; break;
      default:
        throw Error(Errc::UnknownSymbol, "unexpected '" + std::string(1, text[i]) + "' at offset " + std::to_string(i));
    }
    if (p.strides_[axis]) throw Error(Errc::DuplicateAxis, "axis " + std::string(1, text[i]) + " given twice");
    p.strides_[axis] = static_cast<std::uint32_t>(stride);
    ++i;
  }
  return p;
}

std::string Pattern::canonical_text() const {
  static constexpr char kNames[3] = {'X', 'Y', 'Z'};
  std::string out;
  for (int a = 0; a < 3; ++a) {
    if (!strides_[a]) continue;
    if (*strides_[a] != 1) out += std::to_string(*strides_[a]);
    out += kNames[a];
  }
  return out;
}

std::size_t Pattern::targeted_count(std::size_t n_vertices) const {
  std::size_t total = 0;
  for (const auto& s : strides_) {
    if (s) total += (n_vertices + *s - 1) / *s;
  }
  return total;
}

Granularity parse_pattern(std::string_view text) {
  if (text == "FULL") return FullFrame{};
  return Pattern::parse(text);
}

std::string canonical_text(const Granularity& g) {
  if (std::holds_alternative<FullFrame>(g)) return "FULL";
  return std::get<Pattern>(g).canonical_text();
}

}  // namespace pcvault

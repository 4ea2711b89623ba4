#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "pcvault/ply.hpp"

namespace pcvault {

// Which coordinates of which vertices are targeted for encryption. An axis
// with stride k targets vertex indices 0, k, 2k, ...; an axis without a
// stride is left in the clear.
//
// Text form: a sequence of items `[integer] axis`, where the integer applies
// only to the axis right after it ("2XY" = every second X and every Y).
class Pattern {
 public:
  static Pattern parse(std::string_view text);

  std::optional<std::uint32_t> stride(Axis a) const { return strides_[static_cast<int>(a)]; }
  std::string canonical_text() const;

  bool is_targeted(std::size_t vertex_index, Axis a) const {
    const auto& s = strides_[static_cast<int>(a)];
    return s && vertex_index % *s == 0;
  }
  std::size_t targeted_count(std::size_t n_vertices) const;

  bool operator==(const Pattern&) const = default;

 private:
  std::array<std::optional<std::uint32_t>, 3> strides_{};
};

// Whole-file encryption baseline; bypasses coordinate extraction.
struct FullFrame {
  bool operator==(const FullFrame&) const = default;
};

using Granularity = std::variant<Pattern, FullFrame>;

// Accepts any Pattern text plus the distinguished "FULL".
Granularity parse_pattern(std::string_view text);
std::string canonical_text(const Granularity& g);

inline bool is_targeted(const Pattern& p, std::size_t vertex_index, Axis a) { return p.is_targeted(vertex_index, a); }
inline std::size_t targeted_count(const Pattern& p, std::size_t n_vertices) { return p.targeted_count(n_vertices); }

}  // namespace pcvault

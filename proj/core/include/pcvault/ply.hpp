#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcvault/bytes.hpp"

namespace pcvault {

enum class Axis : std::uint8_t { X = 0, Y = 1, Z = 2 };
inline constexpr std::array<Axis, 3> kAxes{Axis::X, Axis::Y, Axis::Z};

}  // namespace pcvault

namespace pcvault::ply {

enum class ValueKind : std::uint8_t { Float64, UInt8 };

struct Property {
  std::string name;
  ValueKind kind;
  std::string type_token;  // as spelled in the header ("double", "float64", "uchar", ...)

  std::size_t width() const { return kind == ValueKind::Float64 ? 8 : 1; }
  bool operator==(const Property&) const = default;
};

// Ordered vertex properties. x/y/z are mandatory doubles; nx/ny/nz and
// red/green/blue are optional but always complete triples.
class VertexSchema {
 public:
  explicit VertexSchema(std::vector<Property> properties);

  static VertexSchema canonical(bool normals, bool colors);

  const std::vector<Property>& properties() const { return properties_; }
  std::size_t record_width() const { return width_; }
  std::size_t coordinate_offset(Axis a) const { return coord_[static_cast<int>(a)]; }
  bool has_normals() const { return normal_[0] != kAbsent; }
  bool has_colors() const { return color_[0] != kAbsent; }
  std::size_t normal_offset(int i) const { return normal_[i]; }
  std::size_t color_offset(int i) const { return color_[i]; }

  bool operator==(const VertexSchema& o) const { return properties_ == o.properties_; }

 private:
  static constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);

  std::vector<Property> properties_;
  std::size_t width_ = 0;
  std::array<std::size_t, 3> coord_{kAbsent, kAbsent, kAbsent};
  std::array<std::size_t, 3> normal_{kAbsent, kAbsent, kAbsent};
  std::array<std::size_t, 3> color_{kAbsent, kAbsent, kAbsent};
};

struct Vertex {
  std::array<double, 3> position{};
  std::array<double, 3> normal{};
  std::array<std::uint8_t, 3> color{};

  bool operator==(const Vertex&) const = default;
};

// Header facts needed to walk a binary body without materialising it.
struct Header {
  VertexSchema schema;
  std::size_t vertex_count = 0;
  std::size_t size = 0;                   // bytes up to and including "end_header\n"
  std::vector<std::string> lines;         // verbatim, without the trailing '\n'
};

// Parses and validates the ASCII header of a binary_little_endian PLY.
Header read_header(ByteView bytes);

// Immutable frame: schema, packed little-endian body, and the header lines
// it was read with (so a rewrite is byte-exact).
class PointCloud {
 public:
  static PointCloud from_vertices(VertexSchema schema, std::span<const Vertex> vertices,
                                  std::vector<std::string> comments = {});
  // `header_lines` must describe `schema` and body.size() / record_width vertices.
  static PointCloud from_body(VertexSchema schema, Bytes body, std::vector<std::string> header_lines);

  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  const VertexSchema& schema() const { return schema_; }
  const std::vector<std::string>& header_lines() const { return header_lines_; }
  ByteView body() const { return body_; }
  ByteView record(std::size_t i) const;

  double position(std::size_t i, Axis a) const;
  Vertex vertex(std::size_t i) const;
  std::vector<Vertex> vertices() const;

  bool operator==(const PointCloud& o) const {
    return schema_ == o.schema_ && header_lines_ == o.header_lines_ && body_ == o.body_;
  }

 private:
  PointCloud(VertexSchema schema, Bytes body, std::vector<std::string> header_lines);

  VertexSchema schema_;
  Bytes body_;
  std::vector<std::string> header_lines_;
  std::size_t count_ = 0;
};

struct ParsedPly {
  PointCloud cloud;
  Bytes tail;  // bytes after the declared body, e.g. an encryption marker
};

ParsedPly parse_ply(ByteView bytes);
Bytes write_ply(const PointCloud& cloud, ByteView tail = {});

// Canonical header lines for a schema and vertex count.
std::vector<std::string> make_header_lines(const VertexSchema& schema, std::size_t vertex_count,
                                           std::span<const std::string> comments = {});

}  // namespace pcvault::ply

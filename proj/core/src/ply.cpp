#include "pcvault/ply.hpp"

#include <algorithm>
#include <charconv>
#include <limits>

namespace pcvault::ply {
namespace {

constexpr std::array<std::string_view, 3> kCoordNames{"x", "y", "z"};
constexpr std::array<std::string_view, 3> kNormalNames{"nx", "ny", "nz"};
constexpr std::array<std::string_view, 3> kColorNames{"red", "green", "blue"};

int index_in(const std::array<std::string_view, 3>& names, std::string_view n) {
  for (int i = 0; i < 3; ++i) {
    if (names[i] == n) return i;
  }
  return -1;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::optional<ValueKind> kind_for(std::string_view token) {
  if (token == "double" || token == "float64") return ValueKind::Float64;
  if (token == "uchar" || token == "uint8") return ValueKind::UInt8;
  return std::nullopt;
}

}  // namespace

VertexSchema::VertexSchema(std::vector<Property> properties) : properties_(std::move(properties)) {
  for (const auto& p : properties_) {
    const std::size_t off = width_;
    width_ += p.width();
    std::array<std::size_t, 3>* slot = nullptr;
    int idx = -1;
    ValueKind want = ValueKind::Float64;
    if ((idx = index_in(kCoordNames, p.name)) >= 0) {
      slot = &coord_;
    } else if ((idx = index_in(kNormalNames, p.name)) >= 0) {
      slot = &normal_;
    } else if ((idx = index_in(kColorNames, p.name)) >= 0) {
      slot = &color_;
      want = ValueKind::UInt8;
    } else {
      throw Error(Errc::UnsupportedProperty, "unknown vertex property '" + p.name + "'");
    }
    if (p.kind != want) {
      throw Error(Errc::UnsupportedProperty, "property '" + p.name + "' has type " + p.type_token);
    }
    if ((*slot)[idx] != kAbsent) throw Error(Errc::MalformedHeader, "duplicate property '" + p.name + "'");
    (*slot)[idx] = off;
  }
  for (auto off : coord_) {
    if (off == kAbsent) throw Error(Errc::MalformedHeader, "x, y and z properties are required");
  }
  auto complete = [](const std::array<std::size_t, 3>& s) {
    const auto present = std::count_if(s.begin(), s.end(), [](std::size_t o) { return o != kAbsent; });
    return present == 0 || present == 3;
  };
  if (!complete(normal_)) throw Error(Errc::MalformedHeader, "normals must be a complete nx/ny/nz triple");
  if (!complete(color_)) throw Error(Errc::MalformedHeader, "colors must be a complete red/green/blue triple");
}

VertexSchema VertexSchema::canonical(bool normals, bool colors) {
  std::vector<Property> props;
  for (auto n : kCoordNames) props.push_back({std::string(n), ValueKind::Float64, "double"});
  if (normals) {
    for (auto n : kNormalNames) props.push_back({std::string(n), ValueKind::Float64, "double"});
  }
  if (colors) {
    for (auto n : kColorNames) props.push_back({std::string(n), ValueKind::UInt8, "uchar"});
  }
  return VertexSchema(std::move(props));
}

Header read_header(ByteView bytes) {
  const std::string_view text = as_chars(bytes);
  std::vector<std::string> lines;
  std::size_t pos = 0;
  bool ended = false;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) break;
    lines.emplace_back(text.substr(pos, nl - pos));
    pos = nl + 1;
    const auto toks = split_ws(lines.back());
    if (toks.size() == 1 && toks[0] == "end_header") {
      ended = true;
      break;
    }
    if (lines.size() == 1 && lines[0] != "ply") break;
  }
  if (lines.empty() || lines[0] != "ply") throw Error(Errc::MalformedHeader, "missing 'ply' magic line");
  if (!ended) throw Error(Errc::MalformedHeader, "header is not terminated by end_header");

  bool have_format = false;
  bool have_element = false;
  std::size_t count = 0;
  std::vector<Property> props;
  for (std::size_t i = 1; i + 1 < lines.size(); ++i) {
    const auto toks = split_ws(lines[i]);
    if (toks.empty()) throw Error(Errc::MalformedHeader, "blank header line");
    const auto kw = toks[0];
    if (kw == "comment" || kw == "obj_info") continue;
    if (kw == "format") {
      if (have_format) throw Error(Errc::MalformedHeader, "duplicate format line");
      if (toks.size() != 3 || toks[2] != "1.0") throw Error(Errc::MalformedHeader, "bad format line");
      if (toks[1] != "binary_little_endian") {
        throw Error(Errc::MalformedHeader, "only binary_little_endian 1.0 is supported, got " + std::string(toks[1]));
      }
      have_format = true;
    } else if (kw == "element") {
      if (!have_format) throw Error(Errc::MalformedHeader, "element before format line");
      if (have_element) throw Error(Errc::MalformedHeader, "exactly one vertex element is supported");
      if (toks.size() != 3 || toks[1] != "vertex") throw Error(Errc::MalformedHeader, "expected 'element vertex N'");
      const auto* first = toks[2].data();
      const auto* last = first + toks[2].size();
      auto [ptr, ec] = std::from_chars(first, last, count);
      if (ec != std::errc() || ptr != last) throw Error(Errc::MalformedHeader, "bad vertex count");
      have_element = true;
    } else if (kw == "property") {
      if (!have_element) throw Error(Errc::MalformedHeader, "property before element line");
      if (toks.size() >= 2 && toks[1] == "list") throw Error(Errc::UnsupportedProperty, "list properties are not supported");
      if (toks.size() != 3) throw Error(Errc::MalformedHeader, "bad property line");
      const auto kind = kind_for(toks[1]);
      if (!kind) throw Error(Errc::UnsupportedProperty, "unsupported value type " + std::string(toks[1]));
      props.push_back({std::string(toks[2]), *kind, std::string(toks[1])});
    } else {
      throw Error(Errc::MalformedHeader, "unexpected header keyword '" + std::string(kw) + "'");
    }
  }
  if (!have_format) throw Error(Errc::MalformedHeader, "missing format line");
  if (!have_element) throw Error(Errc::MalformedHeader, "missing 'element vertex' line");
  return Header{VertexSchema(std::move(props)), count, pos, std::move(lines)};
}

PointCloud::PointCloud(VertexSchema schema, Bytes body, std::vector<std::string> header_lines)
    : schema_(std::move(schema)), body_(std::move(body)), header_lines_(std::move(header_lines)) {
  count_ = body_.size() / schema_.record_width();
}

PointCloud PointCloud::from_vertices(VertexSchema schema, std::span<const Vertex> vertices,
                                     std::vector<std::string> comments) {
  const std::size_t w = schema.record_width();
  Bytes body(w * vertices.size());
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    std::uint8_t* rec = body.data() + i * w;
    const auto& v = vertices[i];
    for (int a = 0; a < 3; ++a) store_le(rec + schema.coordinate_offset(static_cast<Axis>(a)), v.position[a]);
    if (schema.has_normals()) {
      for (int a = 0; a < 3; ++a) store_le(rec + schema.normal_offset(a), v.normal[a]);
    }
    if (schema.has_colors()) {
      for (int a = 0; a < 3; ++a) rec[schema.color_offset(a)] = v.color[a];
    }
  }
  auto lines = make_header_lines(schema, vertices.size(), comments);
  return PointCloud(std::move(schema), std::move(body), std::move(lines));
}

PointCloud PointCloud::from_body(VertexSchema schema, Bytes body, std::vector<std::string> header_lines) {
  if (body.size() % schema.record_width() != 0) {
    throw Error(Errc::TruncatedBody, "body is not a whole number of records");
  }
  return PointCloud(std::move(schema), std::move(body), std::move(header_lines));
}

ByteView PointCloud::record(std::size_t i) const {
  const std::size_t w = schema_.record_width();
  return ByteView(body_).subspan(i * w, w);
}

double PointCloud::position(std::size_t i, Axis a) const {
  return load_le<double>(body_.data() + i * schema_.record_width() + schema_.coordinate_offset(a));
}

Vertex PointCloud::vertex(std::size_t i) const {
  Vertex v;
  const std::uint8_t* rec = body_.data() + i * schema_.record_width();
  for (int a = 0; a < 3; ++a) v.position[a] = load_le<double>(rec + schema_.coordinate_offset(static_cast<Axis>(a)));
  if (schema_.has_normals()) {
    for (int a = 0; a < 3; ++a) v.normal[a] = load_le<double>(rec + schema_.normal_offset(a));
  }
  if (schema_.has_colors()) {
    for (int a = 0; a < 3; ++a) v.color[a] = rec[schema_.color_offset(a)];
  }
  return v;
}

std::vector<Vertex> PointCloud::vertices() const {
  std::vector<Vertex> out;
  out.reserve(count_);
  for (std::size_t i = 0; i < count_; ++i) out.push_back(vertex(i));
  return out;
}

std::vector<std::string> make_header_lines(const VertexSchema& schema, std::size_t vertex_count,
                                           std::span<const std::string> comments) {
  std::vector<std::string> lines{"ply", "format binary_little_endian 1.0"};
  for (const auto& c : comments) lines.push_back("comment " + c);
  lines.push_back("element vertex " + std::to_string(vertex_count));
  for (const auto& p : schema.properties()) lines.push_back("property " + p.type_token + " " + p.name);
  lines.push_back("end_header");
  return lines;
}

ParsedPly parse_ply(ByteView bytes) {
  Header h = read_header(bytes);
  const std::size_t w = h.schema.record_width();
  const std::size_t avail = bytes.size() - h.size;
  if (h.vertex_count > avail / w) {
    throw Error(Errc::TruncatedBody, "body holds " + std::to_string(avail) + " bytes, header declares " +
                                         std::to_string(h.vertex_count) + " records of " + std::to_string(w));
  }
  const std::size_t body_len = h.vertex_count * w;
  Bytes body(bytes.begin() + h.size, bytes.begin() + h.size + body_len);
  Bytes tail(bytes.begin() + h.size + body_len, bytes.end());
  return ParsedPly{PointCloud::from_body(std::move(h.schema), std::move(body), std::move(h.lines)),
                   std::move(tail)};
}

Bytes write_ply(const PointCloud& cloud, ByteView tail) {
  Bytes out;
  std::size_t header_len = 0;
  for (const auto& l : cloud.header_lines()) header_len += l.size() + 1;
  out.reserve(header_len + cloud.body().size() + tail.size());
  for (const auto& l : cloud.header_lines()) {
    out.insert(out.end(), l.begin(), l.end());
    out.push_back('\n');
  }
  out.insert(out.end(), cloud.body().begin(), cloud.body().end());
  out.insert(out.end(), tail.begin(), tail.end());
  return out;
}

}  // namespace pcvault::ply

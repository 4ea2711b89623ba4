#include "pcvault/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "pcvault/error.hpp"

namespace pcvault::scene {

namespace {

using ply::Vertex;
using Color = std::array<std::uint8_t, 3>;

struct Raster {
  std::size_t cols = 10;  // along y, a multiple of 10
  std::size_t rows = 3;   // along z
  std::size_t runs = 1;   // along x
  double sy = 0, sz = 0, sx = 0;
  // Window opening: nodes with |col - wc| <= half and |row - wr| <= half.
  std::size_t wc = 0, wr = 0, half = 0;
  bool window = false;

  std::size_t wall_points() const {
    const std::size_t hole = window ? (2 * half + 1) * (2 * half + 1) : 0;
    return 2 * cols * rows - hole + runs * cols + 2 * runs * rows;
  }
};

Raster layout(const RoomSpec& spec, double s) {
  Raster r;
  r.cols = 10 * std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(spec.depth / s / 10.0)));
  r.sy = spec.depth / static_cast<double>(r.cols);
  r.rows = std::max<std::size_t>(3, static_cast<std::size_t>(std::lround(spec.height / r.sy)));
  r.sz = spec.height / static_cast<double>(r.rows);
  r.runs = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(spec.width / r.sy)));
  r.sx = spec.width / static_cast<double>(r.runs);

  // The window centre sits on a column whose index is 2 mod 10, so the
  // raster node behind it on the opposite wall is even but not a multiple
  // of five; rows are whole multiples of ten long, so this holds per row.
  std::size_t half = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(spec.window_half / r.sy)));
  const auto c0 = static_cast<std::size_t>(std::lround(0.35 * static_cast<double>(r.cols)));
  std::size_t wc = c0 - c0 % 10 + 2;
  const auto r0 = static_cast<std::size_t>(std::lround(0.62 * static_cast<double>(r.rows)));
  for (; half >= 1; --half) {
    std::size_t c = wc;
    while (c < half + 1) c += 10;
    const std::size_t row = std::clamp(r0, half + 1, r.rows > half + 2 ? r.rows - half - 2 : 0);
    if (c + half + 1 < r.cols && row >= half + 1 && row + half + 1 < r.rows) {
      r.window = true;
      r.half = half;
      r.wc = c;
      r.wr = row;
      break;
    }
  }
  return r;
}

Color jitter(const Color& base, std::mt19937_64& rng) {
  Color c{};
  for (int k = 0; k < 3; ++k) {
    const int v = static_cast<int>(base[k]) + static_cast<int>(rng() % 17) - 8;
    c[k] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
  }
  return c;
}

struct Object {
  bool sphere = false;
  std::array<double, 3> centre{};  // box: centre of the footprint at z=0
  std::array<double, 3> size{};    // box: full extents; sphere: radius in size[0]
  Color color{};
};

void sample_object(const Object& o, std::mt19937_64& rng, std::vector<Vertex>& out) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vertex v;
  v.color = jitter(o.color, rng);
  if (o.sphere) {
    const double r = o.size[0];
    const double z = 2.0 * u(rng) - 1.0;
    const double phi = 2.0 * std::numbers::pi * u(rng);
    const double rho = std::sqrt(1.0 - z * z);
    v.normal = {rho * std::cos(phi), rho * std::sin(phi), z};
    v.position = {o.centre[0] + r * v.normal[0], o.centre[1] + r * v.normal[1], r + r * v.normal[2]};
    out.push_back(v);
    return;
  }
  const double a = o.size[0], b = o.size[1], h = o.size[2];
  const double faces[5] = {a * b, a * h, a * h, b * h, b * h};
  double pick = u(rng) * (faces[0] + faces[1] + faces[2] + faces[3] + faces[4]);
  int face = 0;
  while (face < 4 && pick > faces[face]) pick -= faces[face++];
  const double s = u(rng) - 0.5, t = u(rng);
  const double x0 = o.centre[0], y0 = o.centre[1];
  switch (face) {
    case 0: v.position = {x0 + s * a, y0 + (t - 0.5) * b, h}; v.normal = {0, 0, 1}; break;
    case 1: v.position = {x0 + s * a, y0 - b / 2, t * h}; v.normal = {0, -1, 0}; break;
    case 2: v.position = {x0 + s * a, y0 + b / 2, t * h}; v.normal = {0, 1, 0}; break;
    case 3: v.position = {x0 - a / 2, y0 + s * b, t * h}; v.normal = {-1, 0, 0}; break;
    default: v.position = {x0 + a / 2, y0 + s * b, t * h}; v.normal = {1, 0, 0}; break;
  }
  out.push_back(v);
}

}  // namespace

ply::PointCloud generate_room(std::size_t points, std::uint64_t seed, std::size_t frame, const RoomSpec& spec) {
  if (points == 0) throw Error(Errc::InvalidArgument, "scene needs at least one point");
  const double area = spec.width * spec.depth + 2 * spec.height * (spec.width + spec.depth);
  double s = std::sqrt(area / (0.85 * static_cast<double>(points)));
  Raster r = layout(spec, s);
  // Below the minimal raster the walls are simply truncated.
  while (r.wall_points() > points && s < 10 * area) r = layout(spec, s *= 1.02);

  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 1);
  std::vector<Vertex> vs;
  vs.reserve(points);
  auto emit = [&](double x, double y, double z, std::array<double, 3> n, const Color& base) {
    if (vs.size() == points) return;
    Vertex v;
    v.position = {x, y, z};
    v.normal = n;
    v.color = jitter(base, rng);
    vs.push_back(v);
  };
  auto cy = [&](std::size_t j) { return (static_cast<double>(j) + 0.5) * r.sy; };
  auto cz = [&](std::size_t k) { return (static_cast<double>(k) + 0.5) * r.sz; };
  auto cx = [&](std::size_t i) { return (static_cast<double>(i) + 0.5) * r.sx; };

  // Scanner order: far wall first, then the window wall, floor, side walls.
  for (std::size_t k = 0; k < r.rows; ++k)
    for (std::size_t j = 0; j < r.cols; ++j) emit(spec.width, cy(j), cz(k), {-1, 0, 0}, {200, 190, 170});
  for (std::size_t k = 0; k < r.rows; ++k) {
    for (std::size_t j = 0; j < r.cols; ++j) {
      const bool hole = r.window && (j > r.wc ? j - r.wc : r.wc - j) <= r.half &&
                        (k > r.wr ? k - r.wr : r.wr - k) <= r.half;
      if (!hole) emit(0.0, cy(j), cz(k), {1, 0, 0}, {180, 180, 200});
    }
  }
  for (std::size_t i = 0; i < r.runs; ++i)
    for (std::size_t j = 0; j < r.cols; ++j) emit(cx(i), cy(j), 0.0, {0, 0, 1}, {120, 90, 60});
  for (std::size_t k = 0; k < r.rows; ++k)
    for (std::size_t i = 0; i < r.runs; ++i) emit(cx(i), 0.0, cz(k), {0, 1, 0}, {170, 200, 170});
  for (std::size_t k = 0; k < r.rows; ++k)
    for (std::size_t i = 0; i < r.runs; ++i) emit(cx(i), spec.depth, cz(k), {0, -1, 0}, {170, 170, 200});

  // Furniture: kept well inside the room and below the window sill.
  std::mt19937_64 layout_rng(seed ^ 0xA5A5A5A5ULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x_lo = 0.3 * spec.width, x_hi = spec.width - 0.6;
  std::vector<Object> objects(4);
  for (std::size_t n = 0; n < objects.size(); ++n) {
    Object& o = objects[n];
    o.sphere = n % 2 == 1;
    const double phase = 2 * std::numbers::pi * u(layout_rng);
    const double base_x = x_lo + 0.3 + (x_hi - x_lo - 0.6) * u(layout_rng);
    o.centre = {std::clamp(base_x + 0.3 * std::sin(phase + 2 * std::numbers::pi * static_cast<double>(frame) / 48.0),
                           x_lo + 0.3, x_hi - 0.3),
                0.8 + (spec.depth - 1.6) * u(layout_rng), 0.0};
    if (o.sphere) {
      o.size = {0.2 + 0.15 * u(layout_rng), 0, 0};
    } else {
      o.size = {0.3 + 0.3 * u(layout_rng), 0.3 + 0.3 * u(layout_rng), 0.4 + 0.6 * u(layout_rng)};
    }
    o.color = {static_cast<std::uint8_t>(layout_rng()), static_cast<std::uint8_t>(layout_rng()),
               static_cast<std::uint8_t>(layout_rng())};
  }
  // Each object is scanned as one contiguous run, sized by surface area.
  std::vector<double> areas;
  double total_area = 0;
  for (const auto& o : objects) {
    const double a = o.sphere ? 4 * std::numbers::pi * o.size[0] * o.size[0]
                              : o.size[0] * o.size[1] + 2 * o.size[2] * (o.size[0] + o.size[1]);
    areas.push_back(a);
    total_area += a;
  }
  const std::size_t budget = points - vs.size();
  std::size_t given = 0;
  for (std::size_t n = 0; n < objects.size(); ++n) {
    const std::size_t share = n + 1 == objects.size()
                                  ? budget - given
                                  : static_cast<std::size_t>(static_cast<double>(budget) * areas[n] / total_area);
    for (std::size_t k = 0; k < share; ++k) sample_object(objects[n], rng, vs);
    given += share;
  }

  std::vector<std::string> comments{"comment pcvault synthetic room seed " + std::to_string(seed) + " frame " +
                                    std::to_string(frame)};
  return ply::PointCloud::from_vertices(ply::VertexSchema::canonical(true, true), vs, comments);
}

}  // namespace pcvault::scene

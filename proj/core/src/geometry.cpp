#include "pcvault/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pcvault/abe.hpp"
#include "pcvault/codec.hpp"
#include "pcvault/csv.hpp"
#include "pcvault/error.hpp"

namespace pcvault::geometry {

namespace {

double squared(const Point& a, const Point& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Cells per axis never exceed this, so index arithmetic stays in range.
constexpr std::size_t kMaxDim = 1u << 20;

}  // namespace

bool Box::contains(const Point& p) const {
  for (int a = 0; a < 3; ++a) {
    if (p[a] < lo[a] || p[a] > hi[a]) return false;
  }
  return true;
}

double distance(const Point& a, const Point& b) { return std::sqrt(squared(a, b)); }

PointSet::PointSet(std::vector<Point> points) : points_(std::move(points)) {
  if (points_.empty()) return;
  bounds_.lo = bounds_.hi = points_.front();
  for (const auto& p : points_) {
    for (int a = 0; a < 3; ++a) {
      if (!std::isfinite(p[a])) throw Error(Errc::InvalidArgument, "point set contains a non-finite coordinate");
      bounds_.lo[a] = std::min(bounds_.lo[a], p[a]);
      bounds_.hi[a] = std::max(bounds_.hi[a], p[a]);
    }
  }
}

PointSet PointSet::from_cloud(const ply::PointCloud& cloud) {
  std::vector<Point> pts(cloud.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (Axis a : kAxes) pts[i][static_cast<int>(a)] = cloud.position(i, a);
  }
  return PointSet(std::move(pts));
}

SpatialIndex::SpatialIndex(const PointSet& set) {
  if (set.empty()) throw Error(Errc::EmptySet, "cannot index an empty point set");
  std::vector<Point> unique = set.points();
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

  const Box& box = set.bounds();
  lo_ = box.lo;
  hi_ = box.hi;
  const double m = static_cast<double>(unique.size());
  double volume = 1.0;
  int flat_dims = 0;
  for (int a = 0; a < 3; ++a) {
    const double e = box.hi[a] - box.lo[a];
    if (e > 0) {
      volume *= e;
      ++flat_dims;
    }
  }
  edge_ = flat_dims == 0 ? 1.0 : std::pow(volume / m, 1.0 / flat_dims);
  if (!(edge_ > 0) || !std::isfinite(edge_)) edge_ = std::numeric_limits<double>::min();

  // Grow the edge until the grid is at most a few cells per point.
  while (true) {
    double cells = 1.0;
    for (int a = 0; a < 3; ++a) {
      cells *= std::floor((box.hi[a] - box.lo[a]) / edge_) + 1.0;
    }
    if (cells <= 4.0 * m + 8.0) break;
    edge_ *= 1.25;
  }
  for (int a = 0; a < 3; ++a) {
    dims_[a] = std::min(kMaxDim, static_cast<std::size_t>(std::floor((box.hi[a] - box.lo[a]) / edge_)) + 1);
  }

  auto coord = [&](const Point& p) {
    std::array<std::size_t, 3> c{};
    for (int a = 0; a < 3; ++a) {
      const double f = std::floor((p[a] - lo_[a]) / edge_);
      c[a] = std::min(dims_[a] - 1, static_cast<std::size_t>(std::max(0.0, f)));
    }
    return c;
  };

  const std::size_t ncells = dims_[0] * dims_[1] * dims_[2];
  std::vector<std::uint32_t> cell_of_point(unique.size());
  cell_start_.assign(ncells + 1, 0);
  for (std::size_t i = 0; i < unique.size(); ++i) {
    cell_of_point[i] = static_cast<std::uint32_t>(cell_of(coord(unique[i])));
    ++cell_start_[cell_of_point[i] + 1];
  }
  for (std::size_t c = 0; c < ncells; ++c) cell_start_[c + 1] += cell_start_[c];
  points_.resize(unique.size());
  std::vector<std::uint32_t> fill(cell_start_.begin(), cell_start_.end() - 1);
  for (std::size_t i = 0; i < unique.size(); ++i) points_[fill[cell_of_point[i]]++] = unique[i];
}

void SpatialIndex::scan_cell(std::size_t cell, const Point& q, double& best, std::size_t& best_i) const {
  for (std::uint32_t i = cell_start_[cell]; i < cell_start_[cell + 1]; ++i) {
    const double d = squared(points_[i], q);
    if (d < best) {
      best = d;
      best_i = i;
    }
  }
}

SpatialIndex::Hit SpatialIndex::nearest(const Point& q) const {
  std::array<std::ptrdiff_t, 3> c{};
  std::array<std::ptrdiff_t, 3> dim{};
  std::ptrdiff_t max_r = 0;
  for (int a = 0; a < 3; ++a) {
    dim[a] = static_cast<std::ptrdiff_t>(dims_[a]);
    const double f = std::floor((q[a] - lo_[a]) / edge_);
    const double clamped = std::clamp(f, 0.0, static_cast<double>(dim[a] - 1));
    c[a] = static_cast<std::ptrdiff_t>(std::isnan(clamped) ? 0.0 : clamped);
    max_r = std::max({max_r, c[a], dim[a] - 1 - c[a]});
  }

  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  for (std::ptrdiff_t r = 0; r <= max_r; ++r) {
    std::array<std::ptrdiff_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max<std::ptrdiff_t>(0, c[a] - r);
      hi[a] = std::min<std::ptrdiff_t>(dim[a] - 1, c[a] + r);
    }
    // Cells at Chebyshev distance exactly r from c.
    for (std::ptrdiff_t z = lo[2]; z <= hi[2]; ++z) {
      const bool z_face = std::abs(z - c[2]) == r;
      for (std::ptrdiff_t y = lo[1]; y <= hi[1]; ++y) {
        const bool yz_face = z_face || std::abs(y - c[1]) == r;
        const std::size_t row = (static_cast<std::size_t>(z) * dims_[1] + static_cast<std::size_t>(y)) * dims_[0];
        if (yz_face) {
          for (std::ptrdiff_t x = lo[0]; x <= hi[0]; ++x) scan_cell(row + static_cast<std::size_t>(x), q, best, best_i);
        } else {
          if (c[0] - r >= 0) scan_cell(row + static_cast<std::size_t>(c[0] - r), q, best, best_i);
          if (r > 0 && c[0] + r < dim[0]) scan_cell(row + static_cast<std::size_t>(c[0] + r), q, best, best_i);
        }
      }
    }
    // Squared distance from q to the nearest unsearched slab of the grid box.
    double bound = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      for (int side = 0; side < 2; ++side) {
        Point slab_lo = lo_, slab_hi = hi_;
        if (side == 0) {
          if (c[a] - r <= 0) continue;
          slab_hi[a] = lo_[a] + static_cast<double>(c[a] - r) * edge_;
        } else {
          if (c[a] + r >= dim[a] - 1) continue;
          slab_lo[a] = lo_[a] + static_cast<double>(c[a] + r + 1) * edge_;
        }
        double d2 = 0;
        for (int b = 0; b < 3; ++b) {
          const double out = std::max({slab_lo[b] - q[b], q[b] - slab_hi[b], 0.0});
          d2 += out * out;
        }
        bound = std::min(bound, d2);
      }
    }
    if (best <= bound) break;
  }
  return Hit{points_[best_i], std::sqrt(best)};
}

SpatialIndex::Hit nearest_neighbor(const SpatialIndex& index, const Point& p) { return index.nearest(p); }

Directional directional(const PointSet& from, const SpatialIndex& to) {
  Directional d;
  for (const auto& p : from.points()) {
    const double dist = to.nearest(p).distance;
    d.sum += dist;
    d.max = std::max(d.max, dist);
    ++d.count;
  }
  return d;
}

Distances compare(const PointSet& a, const PointSet& b) {
  if (a.empty() || b.empty()) throw Error(Errc::EmptySet, "metric operands must be non-empty");
  const SpatialIndex ia(a);
  const SpatialIndex ib(b);
  const Directional ab = directional(a, ib);
  const Directional ba = directional(b, ia);
  return Distances{0.5 * (ab.mean() + ba.mean()), std::max(ab.max, ba.max)};
}

double chamfer(const PointSet& a, const PointSet& b) { return compare(a, b).chamfer; }
double hausdorff(const PointSet& a, const PointSet& b) { return compare(a, b).hausdorff; }

std::vector<ObfuscationRow> obfuscation_report(const ply::PointCloud& original, std::span<const Pattern> patterns,
                                               RandomSource& rng) {
  const PointSet orig = PointSet::from_cloud(original);
  if (orig.empty()) throw Error(Errc::EmptySet, "obfuscation report needs a non-empty cloud");
  const auto keys = abe::setup(rng);
  const auto policy = abe::parse_policy("subscriber");
  const Bytes plain = ply::write_ply(original);
  const SpatialIndex orig_index(orig);

  std::vector<ObfuscationRow> rows;
  for (const auto& p : patterns) {
    const Bytes enc = codec::encrypt_frame(plain, p, keys.public_params, policy, rng);
    const PointSet view = PointSet::from_cloud(ply::parse_ply(codec::zero_fill(enc)).cloud);
    const SpatialIndex view_index(view);
    const Directional ov = directional(orig, view_index);
    const Directional vo = directional(view, orig_index);
    rows.push_back({p.canonical_text(), 0.5 * (ov.mean() + vo.mean()), std::max(ov.max, vo.max)});
  }
  return rows;
}

namespace {
const std::vector<std::string> kReportHeader{"pattern", "chamfer", "hausdorff"};
}

std::string report_csv(std::span<const ObfuscationRow> rows) {
  csv::Table t{kReportHeader, {}};
  for (const auto& r : rows) t.rows.push_back({r.pattern, csv::format_double(r.chamfer), csv::format_double(r.hausdorff)});
  return csv::write(t);
}

std::vector<ObfuscationRow> parse_report_csv(std::string_view text) {
  const auto t = csv::parse(text, &kReportHeader);
  std::vector<ObfuscationRow> rows;
  for (const auto& r : t.rows) rows.push_back({r[0], csv::parse_double(r[1]), csv::parse_double(r[2])});
  return rows;
}

}  // namespace pcvault::geometry

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pcvault/pattern.hpp"
#include "pcvault/ply.hpp"
#include "pcvault/random.hpp"

namespace pcvault::geometry {

using Point = std::array<double, 3>;

struct Box {
  Point lo{};
  Point hi{};
  bool contains(const Point& p) const;
};

double distance(const Point& a, const Point& b);

// Finite 3D points plus their bounding box.
class PointSet {
 public:
  PointSet() = default;
  // Throws InvalidArgument on non-finite coordinates.
  explicit PointSet(std::vector<Point> points);
  static PointSet from_cloud(const ply::PointCloud& cloud);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const std::vector<Point>& points() const { return points_; }
  const Box& bounds() const { return bounds_; }

 private:
  std::vector<Point> points_;
  Box bounds_;
};

// Uniform grid over the bounding box of the distinct points. The cell edge
// is (extent product / count)^(1/d) over the d non-flat axes.
class SpatialIndex {
 public:
  struct Hit {
    Point point{};
    double distance = 0.0;
  };

  // Throws EmptySet.
  explicit SpatialIndex(const PointSet& points);

  Hit nearest(const Point& q) const;

  std::size_t distinct_points() const { return points_.size(); }
  std::size_t cell_count() const { return cell_start_.size() - 1; }
  double cell_edge() const { return edge_; }

 private:
  std::size_t cell_of(const std::array<std::size_t, 3>& c) const {
    return (c[2] * dims_[1] + c[1]) * dims_[0] + c[0];
  }
  void scan_cell(std::size_t cell, const Point& q, double& best, std::size_t& best_i) const;

  std::vector<Point> points_;  // sorted by cell
  std::vector<std::uint32_t> cell_start_;
  Point lo_{};
  Point hi_{};
  std::array<std::size_t, 3> dims_{1, 1, 1};
  double edge_ = 1.0;
};

SpatialIndex::Hit nearest_neighbor(const SpatialIndex& index, const Point& p);

// Per-direction nearest-neighbour distance statistics, a -> b.
struct Directional {
  double sum = 0.0;
  double max = 0.0;
  std::size_t count = 0;
  double mean() const { return count == 0 ? 0.0 : sum / static_cast<double>(count); }
};
Directional directional(const PointSet& from, const SpatialIndex& to);

struct Distances {
  double chamfer = 0.0;
  double hausdorff = 0.0;
};

// Both metrics sharing one pair of indices. Throws EmptySet.
Distances compare(const PointSet& a, const PointSet& b);
double chamfer(const PointSet& a, const PointSet& b);
double hausdorff(const PointSet& a, const PointSet& b);

struct ObfuscationRow {
  std::string pattern;
  double chamfer = 0.0;
  double hausdorff = 0.0;
  bool operator==(const ObfuscationRow&) const = default;
};

// Metrics between `original` and the zero-filled view of each encrypted
// variant. Keys are throwaway; the attacker view does not depend on them.
std::vector<ObfuscationRow> obfuscation_report(const ply::PointCloud& original, std::span<const Pattern> patterns,
                                               RandomSource& rng = system_random());

// "pattern,chamfer,hausdorff" with 17 significant digits.
std::string report_csv(std::span<const ObfuscationRow> rows);
std::vector<ObfuscationRow> parse_report_csv(std::string_view text);

}  // namespace pcvault::geometry

#pragma once

#include <cstdint>

#include "pcvault/ply.hpp"

namespace pcvault::scene {

// Room-sized synthetic capture: four walls and a floor sampled on a regular
// scanner raster, a window opening in the x=0 wall, and a few boxes and
// spheres standing on the floor that drift from frame to frame.
struct RoomSpec {
  double width = 4.0;   // x
  double depth = 5.0;   // y
  double height = 2.5;  // z
  double window_half = 0.4;
};

// Exactly `points` vertices with normals and colors. Deterministic in
// (points, seed, frame).
ply::PointCloud generate_room(std::size_t points, std::uint64_t seed, std::size_t frame = 0,
                              const RoomSpec& spec = {});

}  // namespace pcvault::scene

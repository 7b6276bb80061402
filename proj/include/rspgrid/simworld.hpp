#pragma once

// Synthetic bird's-eye-view world: axis-aligned rectangular objects with
// constant velocities, static rectangular obstacles, and a ray-casting
// sensor at the grid center. Rendering produces a noisy detection raster
// together with exact ground truth.
//
// World coordinates are meters with the origin at the outer corner of cell
// (0, 0); cell (i, j) spans [i*res, (i+1)*res) x [j*res, (j+1)*res).

#include <cstdint>
#include <vector>

#include "rspgrid/geometry.hpp"
#include "rspgrid/rng.hpp"

namespace rspgrid::sim {

enum class CellClass : std::uint8_t { free = 0, unknown = 1, occupied = 2, moving = 3 };

inline constexpr double kMovingSpeed = 2.0;  // m/s, strict lower bound for "moving"

struct Box {
  double cx = 0, cy = 0;  // center
  double wx = 1, wy = 1;  // extent along x and y

  double x0() const { return cx - 0.5 * wx; }
  double x1() const { return cx + 0.5 * wx; }
  double y0() const { return cy - 0.5 * wy; }
  double y1() const { return cy + 0.5 * wy; }
  bool overlaps(const Box& o, double margin = 0.0) const;
};

struct MovingObject {
  Box box;
  double vx = 0, vy = 0;

  double speed() const;
};

struct SimConfig {
  std::size_t objects = 4;
  double v_max = 12.0;
  double static_fraction = 0.2;  // share of objects with zero velocity
  std::size_t static_obstacles = 2;
  double min_size = 2.0;
  double max_size = 5.0;
  double obstacle_min_size = 1.0;
  double obstacle_max_size = 3.0;
  double ego_clearance = 2.5;  // meters kept free around the sensor at placement
  double p_drop = 0.2;
  double p_fp = 0.005;
  std::size_t rays = 720;
  std::size_t input_channels = 1;  // 1: detections; 2: detections + observability
  std::size_t seq_len = 12;

  void validate() const;
};

struct WorldState {
  std::vector<MovingObject> objects;
  std::vector<Box> static_obstacles;
  std::uint64_t rng_seed = 0;
  std::size_t time_step = 0;
};

struct GridFrame {
  std::size_t x = 0, y = 0, s = 0;
  std::vector<float> input;          // [X, Y, S]
  std::vector<CellClass> gt_class;   // [X, Y]
  std::vector<float> gt_velocity;    // [X, Y, 2], m/s
  std::vector<float> observability;  // [X, Y], in [0, 1]

  std::size_t cells() const { return x * y; }
};

// Sensor position in world coordinates (center of cell (X/2, Y/2)).
double ego_x(const GridGeometry& geom);
double ego_y(const GridGeometry& geom);

// Seeded placement without overlap. Throws std::runtime_error when an item
// cannot be placed after a bounded number of attempts.
WorldState new_world(const SimConfig& cfg, const GridGeometry& geom, std::uint64_t seed);

// Constant-velocity motion; boxes reflect off the world boundary.
WorldState step_world(const WorldState& w, const GridGeometry& geom, double dt);

// Per-cell occupancy (class, owning object index or -1, coverage) without
// sensor effects. Cells are occupied when at least half covered.
struct Raster {
  std::vector<CellClass> cls;         // free / occupied / moving
  std::vector<float> velocity;        // [X, Y, 2]
};
Raster rasterize(const WorldState& w, const GridGeometry& geom);

// Ray hit counts per cell from `rays` rays cast from the ego cell; each ray
// stops after the first occupied cell it enters.
std::vector<std::uint32_t> cast_rays(const std::vector<CellClass>& occupancy, const GridGeometry& geom,
                                     std::size_t rays);

GridFrame render_frame(const WorldState& w, const SimConfig& cfg, const GridGeometry& geom, Rng& rng);

std::vector<GridFrame> generate_sequence(const SimConfig& cfg, const GridGeometry& geom, std::uint64_t seed);

// Single object crossing the grid beside the sensor; used for trail studies.
WorldState scripted_crossing(const GridGeometry& geom, double speed, std::uint64_t seed);
std::vector<GridFrame> render_sequence(WorldState w, const SimConfig& cfg, const GridGeometry& geom,
                                       std::size_t frames, std::uint64_t noise_seed);

}  // namespace rspgrid::sim

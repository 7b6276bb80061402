#include "rspgrid/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace rspgrid::sim {

namespace {

constexpr int kPlacementAttempts = 1000;
constexpr double kPlacementMargin = 0.5;

double overlap_1d(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

Box ego_zone(const GridGeometry& geom, double clearance) {
  return {ego_x(geom), ego_y(geom), 2 * clearance, 2 * clearance};
}

// Draws size and position together until the box fits.
bool place(Box& box, double min_size, double max_size, const std::vector<Box>& taken, const Box& ego, double world_x,
           double world_y, Rng& rng) {
  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    box.wx = std::min(rng.uniform(min_size, max_size), world_x);
    box.wy = std::min(rng.uniform(min_size, max_size), world_y);
    box.cx = rng.uniform(0.5 * box.wx, world_x - 0.5 * box.wx);
    box.cy = rng.uniform(0.5 * box.wy, world_y - 0.5 * box.wy);
    if (box.overlaps(ego)) continue;
    bool clear = true;
    for (const auto& t : taken) {
      if (box.overlaps(t, kPlacementMargin)) {
        clear = false;
        break;
      }
    }
    if (clear) return true;
  }
  return false;
}

void reflect(double& c, double& v, double half, double extent) {
  const double lo = half, hi = extent - half;
  if (c < lo) {
    c = 2 * lo - c;
    v = -v;
  } else if (c > hi) {
    c = 2 * hi - c;
    v = -v;
  }
}

}  // namespace

bool Box::overlaps(const Box& o, double margin) const {
  return x0() < o.x1() + margin && o.x0() < x1() + margin && y0() < o.y1() + margin && o.y0() < y1() + margin;
}

double MovingObject::speed() const { return std::hypot(vx, vy); }

void SimConfig::validate() const {
  if (v_max < 0) throw std::invalid_argument("sim config: v_max must be non-negative");
  if (!(min_size > 0) || max_size < min_size) throw std::invalid_argument("sim config: bad object size range");
  if (!(obstacle_min_size > 0) || obstacle_max_size < obstacle_min_size) {
    throw std::invalid_argument("sim config: bad obstacle size range");
  }
  if (p_drop < 0 || p_drop > 1 || p_fp < 0 || p_fp > 1) throw std::invalid_argument("sim config: probabilities must lie in [0, 1]");
  if (static_fraction < 0 || static_fraction > 1) throw std::invalid_argument("sim config: static_fraction must lie in [0, 1]");
  if (rays == 0) throw std::invalid_argument("sim config: at least one ray required");
  if (input_channels < 1 || input_channels > 2) throw std::invalid_argument("sim config: input channels must be 1 or 2");
  if (seq_len == 0) throw std::invalid_argument("sim config: sequence length must be at least 1");
}

double ego_x(const GridGeometry& geom) { return (static_cast<double>(geom.x / 2) + 0.5) * geom.resolution_m; }
double ego_y(const GridGeometry& geom) { return (static_cast<double>(geom.y / 2) + 0.5) * geom.resolution_m; }

WorldState new_world(const SimConfig& cfg, const GridGeometry& geom, std::uint64_t seed) {
  cfg.validate();
  geom.validate();
  Rng rng(seed);
  const double wx = static_cast<double>(geom.x) * geom.resolution_m;
  const double wy = static_cast<double>(geom.y) * geom.resolution_m;
  const Box ego = ego_zone(geom, cfg.ego_clearance);

  WorldState w;
  w.rng_seed = seed;
  std::vector<Box> taken;
  for (std::size_t i = 0; i < cfg.static_obstacles; ++i) {
    Box b;
    if (!place(b, cfg.obstacle_min_size, cfg.obstacle_max_size, taken, ego, wx, wy, rng)) {
      throw std::runtime_error("new_world: could not place static obstacle " + std::to_string(i) + " (seed " +
                               std::to_string(seed) + ")");
    }
    taken.push_back(b);
    w.static_obstacles.push_back(b);
  }
  for (std::size_t i = 0; i < cfg.objects; ++i) {
    MovingObject o;
    if (!place(o.box, cfg.min_size, cfg.max_size, taken, ego, wx, wy, rng)) {
      throw std::runtime_error("new_world: could not place object " + std::to_string(i) + " (seed " +
                               std::to_string(seed) + ")");
    }
    const bool is_static = rng.bernoulli(cfg.static_fraction);
    const double speed = is_static ? 0.0 : rng.uniform(0.0, cfg.v_max);
    const double heading = rng.uniform(0.0, 2.0 * M_PI);
    o.vx = speed * std::cos(heading);
    o.vy = speed * std::sin(heading);
    taken.push_back(o.box);
    w.objects.push_back(o);
  }
  return w;
}

WorldState step_world(const WorldState& w, const GridGeometry& geom, double dt) {
  if (!(dt > 0)) throw std::invalid_argument("step_world: dt must be positive");
  const double wx = static_cast<double>(geom.x) * geom.resolution_m;
  const double wy = static_cast<double>(geom.y) * geom.resolution_m;
  WorldState next = w;
  for (auto& o : next.objects) {
    o.box.cx += o.vx * dt;
    o.box.cy += o.vy * dt;
    reflect(o.box.cx, o.vx, 0.5 * o.box.wx, wx);
    reflect(o.box.cy, o.vy, 0.5 * o.box.wy, wy);
  }
  ++next.time_step;
  return next;
}

Raster rasterize(const WorldState& w, const GridGeometry& geom) {
  const std::size_t n = geom.cells();
  const double res = geom.resolution_m;
  const double cell_area = res * res;
  std::vector<double> coverage(n, 0.0);
  std::vector<double> best(n, 0.0);
  // Owner: object index, or -2 for a static obstacle, -1 for none.
  std::vector<long> owner(n, -1);

  auto paint = [&](const Box& b, long id) {
    const long i0 = std::max(0L, static_cast<long>(std::floor(b.x0() / res)));
    const long i1 = std::min(static_cast<long>(geom.x) - 1, static_cast<long>(std::floor(b.x1() / res)));
    const long j0 = std::max(0L, static_cast<long>(std::floor(b.y0() / res)));
    const long j1 = std::min(static_cast<long>(geom.y) - 1, static_cast<long>(std::floor(b.y1() / res)));
    for (long i = i0; i <= i1; ++i) {
      const double ox = overlap_1d(b.x0(), b.x1(), i * res, (i + 1) * res);
      if (ox <= 0) continue;
      for (long j = j0; j <= j1; ++j) {
        const double oy = overlap_1d(b.y0(), b.y1(), j * res, (j + 1) * res);
        if (oy <= 0) continue;
        const double frac = ox * oy / cell_area;
        const std::size_t c = static_cast<std::size_t>(i) * geom.y + static_cast<std::size_t>(j);
        coverage[c] += frac;
        if (frac > best[c]) {
          best[c] = frac;
          owner[c] = id;
        }
      }
    }
  };
  for (const auto& b : w.static_obstacles) paint(b, -2);
  for (std::size_t k = 0; k < w.objects.size(); ++k) paint(w.objects[k].box, static_cast<long>(k));

  Raster r;
  r.cls.assign(n, CellClass::free);
  r.velocity.assign(2 * n, 0.0f);
  for (std::size_t c = 0; c < n; ++c) {
    if (coverage[c] < 0.5) continue;
    r.cls[c] = CellClass::occupied;
    if (owner[c] >= 0) {
      const auto& o = w.objects[static_cast<std::size_t>(owner[c])];
      r.velocity[2 * c] = static_cast<float>(o.vx);
      r.velocity[2 * c + 1] = static_cast<float>(o.vy);
      if (o.speed() > kMovingSpeed) r.cls[c] = CellClass::moving;
    }
  }
  return r;
}

std::vector<std::uint32_t> cast_rays(const std::vector<CellClass>& occupancy, const GridGeometry& geom,
                                     std::size_t rays) {
  std::vector<std::uint32_t> hits(geom.cells(), 0);
  const double ox = static_cast<double>(geom.x / 2) + 0.5;
  const double oy = static_cast<double>(geom.y / 2) + 0.5;
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < rays; ++k) {
    const double theta = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(rays);
    const double dx = std::cos(theta), dy = std::sin(theta);
    long ix = static_cast<long>(geom.x / 2), iy = static_cast<long>(geom.y / 2);
    const long step_x = dx > 0 ? 1 : -1, step_y = dy > 0 ? 1 : -1;
    const double t_dx = dx != 0 ? std::abs(1.0 / dx) : inf;
    const double t_dy = dy != 0 ? std::abs(1.0 / dy) : inf;
    double t_x = dx != 0 ? ((dx > 0 ? ix + 1 : ix) - ox) / dx : inf;
    double t_y = dy != 0 ? ((dy > 0 ? iy + 1 : iy) - oy) / dy : inf;
    while (ix >= 0 && iy >= 0 && ix < static_cast<long>(geom.x) && iy < static_cast<long>(geom.y)) {
      const std::size_t c = static_cast<std::size_t>(ix) * geom.y + static_cast<std::size_t>(iy);
      ++hits[c];
      if (occupancy[c] != CellClass::free) break;
      if (t_x < t_y) {
        ix += step_x;
        t_x += t_dx;
      } else {
        iy += step_y;
        t_y += t_dy;
      }
    }
  }
  return hits;
}

GridFrame render_frame(const WorldState& w, const SimConfig& cfg, const GridGeometry& geom, Rng& rng) {
  const Raster raster = rasterize(w, geom);
  const auto hits = cast_rays(raster.cls, geom, cfg.rays);

  GridFrame f;
  f.x = geom.x;
  f.y = geom.y;
  f.s = cfg.input_channels;
  const std::size_t n = geom.cells();
  f.input.assign(n * f.s, 0.0f);
  f.gt_class.resize(n);
  f.gt_velocity = raster.velocity;
  f.observability.assign(n, 0.0f);

  const double ex = static_cast<double>(geom.x / 2) + 0.5;
  const double ey = static_cast<double>(geom.y / 2) + 0.5;
  const double per_radian = static_cast<double>(cfg.rays) / (2.0 * M_PI);
  for (std::size_t i = 0; i < geom.x; ++i) {
    for (std::size_t j = 0; j < geom.y; ++j) {
      const std::size_t c = i * geom.y + j;
      if (hits[c] == 0) continue;
      const double r = std::max(0.5, std::hypot(static_cast<double>(i) + 0.5 - ex, static_cast<double>(j) + 0.5 - ey));
      const double expected = std::max(1.0, per_radian / r);
      f.observability[c] = static_cast<float>(std::min(1.0, hits[c] / expected));
    }
  }

  for (std::size_t c = 0; c < n; ++c) {
    const bool observed = f.observability[c] > 0.0f;
    f.gt_class[c] = observed ? raster.cls[c] : CellClass::unknown;
    if (!observed) continue;
    const bool occupied = raster.cls[c] != CellClass::free;
    const bool detected = occupied ? !rng.bernoulli(cfg.p_drop) : rng.bernoulli(cfg.p_fp);
    f.input[c * f.s] = detected ? 1.0f : 0.0f;
    if (f.s > 1) f.input[c * f.s + 1] = f.observability[c];
  }
  return f;
}

std::vector<GridFrame> render_sequence(WorldState w, const SimConfig& cfg, const GridGeometry& geom,
                                       std::size_t frames, std::uint64_t noise_seed) {
  Rng noise(noise_seed);
  std::vector<GridFrame> out;
  out.reserve(frames);
  const double dt = 1.0 / geom.frame_rate_hz;
  for (std::size_t t = 0; t < frames; ++t) {
    if (t > 0) w = step_world(w, geom, dt);
    out.push_back(render_frame(w, cfg, geom, noise));
  }
  return out;
}

std::vector<GridFrame> generate_sequence(const SimConfig& cfg, const GridGeometry& geom, std::uint64_t seed) {
  return render_sequence(new_world(cfg, geom, seed), cfg, geom, cfg.seq_len, mix_seed(seed, 0x5e75e7));
}

WorldState scripted_crossing(const GridGeometry& geom, double speed, std::uint64_t seed) {
  const double wy = static_cast<double>(geom.y) * geom.resolution_m;
  WorldState w;
  w.rng_seed = seed;
  MovingObject o;
  o.box.wx = 4.0;
  o.box.wy = 2.0;
  o.box.cx = 0.5 * o.box.wx + 0.5;
  o.box.cy = std::min(ego_y(geom) + 4.0, wy - 0.5 * o.box.wy);
  o.vx = speed;
  o.vy = 0.0;
  w.objects.push_back(o);
  return w;
}

}  // namespace rspgrid::sim

#pragma once

// Grayscale raster output (binary PGM) and the trail measurement on the
// scripted crossing scenario.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rspgrid/config.hpp"
#include "rspgrid/dataset.hpp"
#include "rspgrid/trainer.hpp"

namespace rspgrid::viz {

namespace fs = std::filesystem;
using ag::Tensor;

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, row 0 at the top
};

// Cell (i, j) maps to column i and row (Y - 1 - j), so +y points up.
Image grid_image(const std::vector<double>& cells, std::size_t x, std::size_t y, double scale);

void write_pgm(const fs::path& path, const Image& img);
Image read_pgm(const fs::path& path);

// Per-cell L2 norm over the last axis of an [X, Y, C] tensor.
template <typename T>
std::vector<double> cell_norms(const Tensor<T>& t) {
  const std::size_t c = t.shape().back();
  const auto v = t.data();
  std::vector<double> out(v.size() / c);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += static_cast<double>(v[i * c + k]) * static_cast<double>(v[i * c + k]);
    out[i] = std::sqrt(s);
  }
  return out;
}

Image class_image(const std::vector<int>& cls, std::size_t x, std::size_t y);
// Velocity arrows drawn on a canvas `upscale` times the grid size.
Image arrow_image(const std::vector<float>& velocity, std::size_t x, std::size_t y, std::size_t upscale,
                  double v_scale);

// Runs the model stored at `checkpoint` over `sequence` and writes, per
// frame t: hidden_TTT.pgm, class_TTT.pgm, speed_TTT.pgm, arrows_TTT.pgm.
// Returns the written paths.
std::vector<fs::path> render(const cfg::ExperimentConfig& c, const fs::path& checkpoint, const data::Sequence& seq,
                             const fs::path& out_dir);

struct TrailMeasurement {
  double trail_mean_norm = 0;   // mean hidden norm over the vacated region
  double object_mean_norm = 0;  // mean hidden norm over the current footprint
  std::size_t trail_cells = 0;
};

// Cells covered by objects in any earlier frame, minus the current
// footprint grown by one cell in each direction. `footprints` holds the
// noise-free raster classes per frame.
std::vector<bool> trail_mask(const std::vector<std::vector<sim::CellClass>>& footprints, std::size_t x, std::size_t y);

template <typename T>
TrailMeasurement measure_trail(zoo::Model<T>& model, const sim::SimConfig& sc, double speed, std::size_t frames,
                               std::uint64_t seed) {
  const auto& geom = model.config().geom;
  const auto world = sim::scripted_crossing(geom, speed, seed);
  const auto seq = sim::render_sequence(world, sc, geom, frames, seed);
  std::vector<std::vector<sim::CellClass>> footprints;
  auto w = world;
  for (std::size_t t = 0; t < frames; ++t) {
    if (t > 0) w = sim::step_world(w, geom, 1.0 / geom.frame_rate_hz);
    footprints.push_back(sim::rasterize(w, geom).cls);
  }
  ag::NoGradGuard no_grad;
  zoo::ModelState<T> state;
  zoo::NetworkOutput<T> last;
  for (const auto& f : seq) last = model.step(state, train::input_tensor<T>(f));
  const auto norms = cell_norms(last.features);
  const auto mask = trail_mask(footprints, geom.x, geom.y);
  TrailMeasurement m;
  double obj = 0;
  std::size_t obj_n = 0;
  for (std::size_t c = 0; c < mask.size(); ++c) {
    if (mask[c]) {
      m.trail_mean_norm += norms[c];
      ++m.trail_cells;
    }
    if (footprints.back()[c] != sim::CellClass::free) {
      obj += norms[c];
      ++obj_n;
    }
  }
  if (m.trail_cells) m.trail_mean_norm /= static_cast<double>(m.trail_cells);
  if (obj_n) m.object_mean_norm = obj / static_cast<double>(obj_n);
  return m;
}

}  // namespace rspgrid::viz

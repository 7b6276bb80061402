#include "rspgrid/viz.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rspgrid::viz {

namespace {

std::size_t pixel(std::size_t i, std::size_t j, std::size_t x, std::size_t y) { return (y - 1 - j) * x + i; }

std::uint8_t grey(double v, double scale) {
  if (!(scale > 0)) return 0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(v / scale, 0.0, 1.0) * 255.0));
}

std::string frame_name(const char* kind, std::size_t t) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s_%03zu.pgm", kind, t);
  return buf;
}

bool occupied(sim::CellClass c) { return c == sim::CellClass::occupied || c == sim::CellClass::moving; }

template <typename T>
std::vector<fs::path> render_with(const cfg::ExperimentConfig& c, const fs::path& checkpoint,
                                  const data::Sequence& seq, const fs::path& out_dir) {
  zoo::Model<T> model(c.model, train::model_seed(c.seed));
  model.params().load(checkpoint);
  ag::NoGradGuard no_grad;
  std::vector<Tensor<T>> inputs;
  for (const auto& f : seq) {
    if (f.x != c.geom.x || f.y != c.geom.y || f.s != c.model.s) {
      throw std::runtime_error("viz: sequence does not match the checkpoint's grid");
    }
    inputs.push_back(train::input_tensor<T>(f));
  }
  const auto outs = model.forward_sequence(inputs, false);

  std::vector<std::vector<double>> norms;
  double max_norm = 0;
  for (const auto& o : outs) {
    norms.push_back(cell_norms(o.features));
    for (double v : norms.back()) max_norm = std::max(max_norm, v);
  }
  const double v_scale = std::max(1.0, c.sim.v_max);
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  auto emit = [&](const char* kind, std::size_t t, const Image& img) {
    const auto p = out_dir / frame_name(kind, t);
    write_pgm(p, img);
    written.push_back(p);
  };
  for (std::size_t t = 0; t < outs.size(); ++t) {
    const auto& o = outs[t];
    emit("hidden", t, grid_image(norms[t], c.geom.x, c.geom.y, max_norm));
    const auto logits = o.class_logits.data();
    emit("class", t,
         class_image(metrics::argmax_classes(std::vector<T>(logits.begin(), logits.end()), zoo::kClassCount),
                     c.geom.x, c.geom.y));
    const auto v = o.v_refined.data();
    const std::vector<float> vel(v.begin(), v.end());
    emit("speed", t, grid_image(cell_norms(o.v_refined), c.geom.x, c.geom.y, v_scale));
    emit("arrows", t, arrow_image(vel, c.geom.x, c.geom.y, 4, v_scale));
  }
  return written;
}

}  // namespace

Image grid_image(const std::vector<double>& cells, std::size_t x, std::size_t y, double scale) {
  if (cells.size() != x * y) throw std::invalid_argument("grid_image: expected " + std::to_string(x * y) + " cells");
  Image img{x, y, std::vector<std::uint8_t>(x * y, 0)};
  for (std::size_t i = 0; i < x; ++i) {
    for (std::size_t j = 0; j < y; ++j) img.pixels[pixel(i, j, x, y)] = grey(cells[i * y + j], scale);
  }
  return img;
}

void write_pgm(const fs::path& path, const Image& img) {
  if (img.pixels.size() != img.width * img.height) throw std::invalid_argument("write_pgm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

Image read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string magic;
  int maxval = 0;
  Image img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255) throw std::runtime_error("not an 8-bit binary PGM: " + path.string());
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw std::runtime_error("truncated PGM: " + path.string());
  return img;
}

Image class_image(const std::vector<int>& cls, std::size_t x, std::size_t y) {
  static constexpr std::uint8_t shade[4] = {255, 160, 80, 0};
  if (cls.size() != x * y) throw std::invalid_argument("class_image: size mismatch");
  Image img{x, y, std::vector<std::uint8_t>(x * y, 0)};
  for (std::size_t i = 0; i < x; ++i) {
    for (std::size_t j = 0; j < y; ++j) img.pixels[pixel(i, j, x, y)] = shade[cls[i * y + j] & 3];
  }
  return img;
}

Image arrow_image(const std::vector<float>& velocity, std::size_t x, std::size_t y, std::size_t upscale,
                  double v_scale) {
  if (velocity.size() != 2 * x * y) throw std::invalid_argument("arrow_image: size mismatch");
  const std::size_t w = x * upscale, h = y * upscale;
  Image img{w, h, std::vector<std::uint8_t>(w * h, 0)};
  const double half = 0.5 * static_cast<double>(upscale);
  for (std::size_t i = 0; i < x; ++i) {
    for (std::size_t j = 0; j < y; ++j) {
      const double vx = velocity[2 * (i * y + j)], vy = velocity[2 * (i * y + j) + 1];
      const double mag = std::hypot(vx, vy);
      if (mag < 0.5) continue;
      const double len = std::min(1.0, mag / v_scale) * static_cast<double>(upscale);
      const double cx = static_cast<double>(i * upscale) + half, cy = static_cast<double>(j * upscale) + half;
      const int steps = static_cast<int>(std::ceil(len * 2)) + 1;
      for (int s = 0; s <= steps; ++s) {
        const double f = static_cast<double>(s) / steps;
        const long px = std::lround(cx + f * len * vx / mag - 0.5);
        const long py = std::lround(cy + f * len * vy / mag - 0.5);
        if (px < 0 || py < 0 || px >= static_cast<long>(w) || py >= static_cast<long>(h)) continue;
        img.pixels[pixel(static_cast<std::size_t>(px), static_cast<std::size_t>(py), w, h)] =
            s == steps ? 255 : 180;
      }
    }
  }
  return img;
}

std::vector<fs::path> render(const cfg::ExperimentConfig& c, const fs::path& checkpoint, const data::Sequence& seq,
                             const fs::path& out_dir) {
  if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint.string());
  if (c.train.precision == cfg::Precision::dual) return render_with<double>(c, checkpoint, seq, out_dir);
  return render_with<float>(c, checkpoint, seq, out_dir);
}

std::vector<bool> trail_mask(const std::vector<std::vector<sim::CellClass>>& footprints, std::size_t x, std::size_t y) {
  if (footprints.empty()) throw std::invalid_argument("trail_mask: no frames");
  std::vector<bool> mask(x * y, false);
  for (std::size_t t = 0; t + 1 < footprints.size(); ++t) {
    if (footprints[t].size() != mask.size()) throw std::invalid_argument("trail_mask: footprint size mismatch");
    for (std::size_t c = 0; c < mask.size(); ++c) {
      if (occupied(footprints[t][c])) mask[c] = true;
    }
  }
  const auto& last = footprints.back();
  if (last.size() != mask.size()) throw std::invalid_argument("trail_mask: footprint size mismatch");
  for (std::size_t i = 0; i < x; ++i) {
    for (std::size_t j = 0; j < y; ++j) {
      if (!occupied(last[i * y + j])) continue;
      for (long di = -1; di <= 1; ++di) {
        for (long dj = -1; dj <= 1; ++dj) {
          const long a = static_cast<long>(i) + di, b = static_cast<long>(j) + dj;
          if (a < 0 || b < 0 || a >= static_cast<long>(x) || b >= static_cast<long>(y)) continue;
          mask[static_cast<std::size_t>(a) * y + static_cast<std::size_t>(b)] = false;
        }
      }
    }
  }
  return mask;
}

}  // namespace rspgrid::viz

#include "rspgrid/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rspgrid::data {

namespace fs = std::filesystem;

namespace {

std::string frame_prefix(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu/", t);
  return buf;
}

std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

}  // namespace

std::vector<io::Record> sequence_records(const Sequence& seq) {
  std::vector<io::Record> out;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto& f = seq[t];
    const auto p = frame_prefix(t);
    std::vector<float> cls(f.gt_class.size());
    for (std::size_t c = 0; c < cls.size(); ++c) cls[c] = static_cast<float>(f.gt_class[c]);
    out.push_back({p + "input", {u32(f.x), u32(f.y), u32(f.s)}, f.input});
    out.push_back({p + "gt_class", {u32(f.x), u32(f.y)}, std::move(cls)});
    out.push_back({p + "gt_velocity", {u32(f.x), u32(f.y), 2}, f.gt_velocity});
    out.push_back({p + "observability", {u32(f.x), u32(f.y)}, f.observability});
  }
  return out;
}

Sequence sequence_from_records(const std::vector<io::Record>& records) {
  Sequence seq;
  for (std::size_t t = 0;; ++t) {
    const auto p = frame_prefix(t);
    bool present = false;
    for (const auto& r : records) {
      if (r.name == p + "input") {
        present = true;
        break;
      }
    }
    if (!present) break;
    const auto& in = io::find_record(records, p + "input");
    const auto& cls = io::find_record(records, p + "gt_class");
    const auto& vel = io::find_record(records, p + "gt_velocity");
    const auto& obs = io::find_record(records, p + "observability");
    if (in.dims.size() != 3 || cls.dims.size() != 2 || vel.dims.size() != 3 || obs.dims.size() != 2 ||
        cls.dims[0] != in.dims[0] || cls.dims[1] != in.dims[1] || vel.dims[0] != in.dims[0] ||
        vel.dims[1] != in.dims[1] || vel.dims[2] != 2 || obs.dims != cls.dims) {
      throw io::FormatError("sequence: inconsistent record shapes in " + p);
    }
    sim::GridFrame f;
    f.x = in.dims[0];
    f.y = in.dims[1];
    f.s = in.dims[2];
    f.input = in.values;
    f.gt_velocity = vel.values;
    f.observability = obs.values;
    f.gt_class.resize(cls.values.size());
    for (std::size_t c = 0; c < cls.values.size(); ++c) {
      const float v = cls.values[c];
      if (!(v == 0.0f || v == 1.0f || v == 2.0f || v == 3.0f)) {
        throw io::FormatError("sequence: invalid class label in " + p + "gt_class");
      }
      f.gt_class[c] = static_cast<sim::CellClass>(static_cast<int>(v));
    }
    seq.push_back(std::move(f));
  }
  if (seq.empty()) throw io::FormatError("sequence: no frames found");
  return seq;
}

void write_sequence(const fs::path& path, const Sequence& seq) { io::write_container(path, sequence_records(seq)); }

Sequence read_sequence(const fs::path& path) { return sequence_from_records(io::read_container(path)); }

void write_manifest(const fs::path& dir, const Manifest& m) {
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  char grid[128];
  std::snprintf(grid, sizeof grid, "grid %zu %zu %.17g %.17g", m.geom.x, m.geom.y, m.geom.resolution_m,
                m.geom.frame_rate_hz);
  out << "rspgrid-dataset 1\n";
  out << "config_hash " << m.config_hash << "\n";
  out << grid << "\n";
  out << "channels " << m.channels << "\n";
  for (const auto& e : m.entries) out << "seq " << e.index << " " << e.seed << " " << e.file << "\n";
}

Manifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw std::runtime_error("no manifest.txt in " + dir.string());
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    bool ok = true;
    if (tag == "rspgrid-dataset") {
      int version = 0;
      ok = static_cast<bool>(ss >> version) && version == 1;
      header = true;
    } else if (tag == "config_hash") {
      ok = static_cast<bool>(ss >> m.config_hash);
    } else if (tag == "grid") {
      ok = static_cast<bool>(ss >> m.geom.x >> m.geom.y >> m.geom.resolution_m >> m.geom.frame_rate_hz);
    } else if (tag == "channels") {
      ok = static_cast<bool>(ss >> m.channels);
    } else if (tag == "seq") {
      ManifestEntry e;
      ok = static_cast<bool>(ss >> e.index >> e.seed >> e.file);
      m.entries.push_back(e);
    } else {
      ok = false;
    }
    if (!ok) throw std::runtime_error("manifest line " + std::to_string(lineno) + ": cannot parse '" + line + "'");
  }
  if (!header) throw std::runtime_error("manifest: missing header in " + dir.string());
  return m;
}

std::uint64_t sequence_seed(std::uint64_t base_seed, std::size_t index) {
  return mix_seed(base_seed, index) & 0xffffffffULL;
}

Manifest generate_dataset(const cfg::ExperimentConfig& c, const fs::path& dir, std::size_t count) {
  fs::create_directories(dir);
  Manifest m;
  m.config_hash = cfg::data_hash(c);
  m.geom = c.geom;
  m.channels = c.sim.input_channels;
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "seq_%04zu.gtck", i);
    const auto seed = sequence_seed(c.seed, i);
    write_sequence(dir / name, sim::generate_sequence(c.sim, c.geom, seed));
    m.entries.push_back({i, seed, name});
  }
  write_manifest(dir, m);
  return m;
}

Dataset load_dataset(const fs::path& dir, const cfg::ExperimentConfig& c) {
  Dataset d;
  d.manifest = read_manifest(dir);
  if (d.manifest.geom != c.geom) throw std::runtime_error("dataset geometry does not match the configuration");
  if (d.manifest.channels != c.model.s) {
    throw std::runtime_error("dataset has " + std::to_string(d.manifest.channels) + " input channels, model expects " +
                             std::to_string(c.model.s));
  }
  for (const auto& e : d.manifest.entries) {
    auto seq = read_sequence(dir / e.file);
    for (const auto& f : seq) {
      if (f.x != c.geom.x || f.y != c.geom.y || f.s != c.model.s) {
        throw std::runtime_error("sequence " + e.file + " does not match the configured grid");
      }
    }
    if (seq.size() < c.train.seq_len) {
      throw std::runtime_error("sequence " + e.file + " is shorter than train.seq_len");
    }
    (is_eval_index(e.index) ? d.eval : d.train).push_back(std::move(seq));
  }
  return d;
}

}  // namespace rspgrid::data

#pragma once

// On-disk datasets: DIR/manifest.txt plus one GTCK container per sequence
// with records frame_NNN/{input,gt_class,gt_velocity,observability}.
//
// manifest.txt:
//   rspgrid-dataset 1
//   config_hash <16 hex digits>
//   grid <X> <Y> <resolution_m> <frame_rate_hz>
//   channels <S>
//   seq <index> <seed> <file>      (one line per sequence)

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rspgrid/config.hpp"
#include "rspgrid/container.hpp"
#include "rspgrid/simworld.hpp"

namespace rspgrid::data {

using Sequence = std::vector<sim::GridFrame>;

struct ManifestEntry {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::string file;
};

struct Manifest {
  std::string config_hash;
  GridGeometry geom;
  std::size_t channels = 1;
  std::vector<ManifestEntry> entries;
};

std::vector<io::Record> sequence_records(const Sequence& seq);
Sequence sequence_from_records(const std::vector<io::Record>& records);

void write_sequence(const std::filesystem::path& path, const Sequence& seq);
Sequence read_sequence(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& dir, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& dir);

// Seed of the i-th generated sequence.
std::uint64_t sequence_seed(std::uint64_t base_seed, std::size_t index);

// Generates `count` sequences into `dir` (created if needed).
Manifest generate_dataset(const cfg::ExperimentConfig& c, const std::filesystem::path& dir, std::size_t count);

// Held-out split by sequence index: every fifth sequence is evaluation data.
inline bool is_eval_index(std::size_t index) { return index % 5 == 4; }

struct Dataset {
  Manifest manifest;
  std::vector<Sequence> train;
  std::vector<Sequence> eval;
};

// Loads and checks the manifest against the experiment geometry and input
// channel count. Throws std::runtime_error on mismatch.
Dataset load_dataset(const std::filesystem::path& dir, const cfg::ExperimentConfig& c);

}  // namespace rspgrid::data

#pragma once

// Experiment configuration: flat "key = value" text with '#' comments.
// Every key has a default; unknown keys are rejected so typos fail loudly.

#include <cstdint>
#include <map>
#include <string>

#include "rspgrid/geometry.hpp"
#include "rspgrid/model.hpp"
#include "rspgrid/simworld.hpp"

namespace rspgrid::cfg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Precision { single, dual };

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 10;
  std::size_t seq_len = 12;
  Precision precision = Precision::single;
  double loss_ce = 1.0;
  double loss_vel = 1.0;
  double vel_aux = 0.5;
  double vel_main = 1.0;
  double vel_weight_cap = 100.0;
  bool heteroscedastic = false;
  std::string metrics_split = "eval";  // eval | train
};

struct ExperimentConfig {
  GridGeometry geom;
  zoo::ModelConfig model;
  sim::SimConfig sim;
  TrainConfig train;
  std::uint64_t seed = 1;

  void validate() const;
};

// Raw key/value pairs in file order is irrelevant; keys are unique.
std::map<std::string, std::string> parse_pairs(const std::string& text);

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& c);

// FNV-1a over the canonical grid.* and sim.* lines; identifies datasets.
std::string data_hash(const ExperimentConfig& c);

}  // namespace rspgrid::cfg

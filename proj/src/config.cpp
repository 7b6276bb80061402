#include "rspgrid/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace rspgrid::cfg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("config: key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  if (out.empty()) throw ConfigError("config: key '" + key + "' expects a comma-separated list");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Key {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define RSP_NUM(NAME, FIELD)                                                             \
  {NAME,                                                                                 \
   {[](ExperimentConfig& c, const std::string& v) { c.FIELD = to_double(NAME, v); },    \
    [](const ExperimentConfig& c) { return fmt(c.FIELD); }}}
#define RSP_SIZE(NAME, FIELD)                                                            \
  {NAME,                                                                                 \
   {[](ExperimentConfig& c, const std::string& v) { c.FIELD = to_size(NAME, v); },      \
    [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }}}

const std::map<std::string, Key>& keys() {
  static const std::map<std::string, Key> table = {
      RSP_SIZE("grid.x", geom.x),
      RSP_SIZE("grid.y", geom.y),
      RSP_NUM("grid.resolution_m", geom.resolution_m),
      RSP_NUM("grid.frame_rate_hz", geom.frame_rate_hz),
      {"model.arch",
       {[](ExperimentConfig& c, const std::string& v) {
          try {
            c.model.arch = zoo::parse_architecture(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config: model.arch: ") + e.what());
          }
        },
        [](const ExperimentConfig& c) { return zoo::to_string(c.model.arch); }}},
      RSP_SIZE("model.s", model.s),
      RSP_SIZE("model.f", model.f),
      RSP_SIZE("model.m", model.m),
      RSP_SIZE("model.d_h", model.d_h),
      RSP_SIZE("model.head", model.head_channels),
      RSP_SIZE("model.aspp_blocks", model.aspp_blocks),
      {"model.aspp_rates",
       {[](ExperimentConfig& c, const std::string& v) { c.model.aspp_rates = to_list("model.aspp_rates", v); },
        [](const ExperimentConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.model.aspp_rates.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(c.model.aspp_rates[i]);
          }
          return s;
        }}},
      RSP_NUM("train.lr", train.lr),
      RSP_NUM("train.beta1", train.beta1),
      RSP_NUM("train.beta2", train.beta2),
      RSP_NUM("train.eps", train.eps),
      RSP_SIZE("train.epochs", train.epochs),
      RSP_SIZE("train.seq_len", train.seq_len),
      {"train.precision",
       {[](ExperimentConfig& c, const std::string& v) {
          if (v == "float") {
            c.train.precision = Precision::single;
          } else if (v == "double") {
            c.train.precision = Precision::dual;
          } else {
            throw ConfigError("config: train.precision expects float or double, got '" + v + "'");
          }
        },
        [](const ExperimentConfig& c) {
          return std::string(c.train.precision == Precision::single ? "float" : "double");
        }}},
      RSP_NUM("train.loss_ce", train.loss_ce),
      RSP_NUM("train.loss_vel", train.loss_vel),
      RSP_NUM("train.vel_aux", train.vel_aux),
      RSP_NUM("train.vel_main", train.vel_main),
      RSP_NUM("train.vel_weight_cap", train.vel_weight_cap),
      {"train.metrics_split",
       {[](ExperimentConfig& c, const std::string& v) {
          if (v != "eval" && v != "train") throw ConfigError("config: train.metrics_split expects eval or train");
          c.train.metrics_split = v;
        },
        [](const ExperimentConfig& c) { return c.train.metrics_split; }}},
      {"loss.heteroscedastic",
       {[](ExperimentConfig& c, const std::string& v) { c.train.heteroscedastic = to_bool("loss.heteroscedastic", v); },
        [](const ExperimentConfig& c) { return std::string(c.train.heteroscedastic ? "true" : "false"); }}},
      RSP_SIZE("sim.objects", sim.objects),
      RSP_NUM("sim.v_max", sim.v_max),
      RSP_NUM("sim.static_fraction", sim.static_fraction),
      RSP_SIZE("sim.static_obstacles", sim.static_obstacles),
      RSP_NUM("sim.min_size", sim.min_size),
      RSP_NUM("sim.max_size", sim.max_size),
      RSP_NUM("sim.obstacle_min_size", sim.obstacle_min_size),
      RSP_NUM("sim.obstacle_max_size", sim.obstacle_max_size),
      RSP_NUM("sim.ego_clearance", sim.ego_clearance),
      RSP_NUM("sim.p_drop", sim.p_drop),
      RSP_NUM("sim.p_fp", sim.p_fp),
      RSP_SIZE("sim.rays", sim.rays),
      RSP_SIZE("sim.frames", sim.seq_len),
      {"seed",
       {[](ExperimentConfig& c, const std::string& v) { c.seed = to_size("seed", v); },
        [](const ExperimentConfig& c) { return std::to_string(c.seed); }}},
  };
  return table;
}

#undef RSP_NUM
#undef RSP_SIZE

}  // namespace

void ExperimentConfig::validate() const {
  try {
    geom.validate();
    sim.validate();
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (model.geom != geom) throw ConfigError("config: model geometry differs from grid geometry");
  if (model.s != sim.input_channels) throw ConfigError("config: model.s must match the simulated input channels");
  if (!(train.lr > 0)) throw ConfigError("config: train.lr must be positive");
  if (train.beta1 < 0 || train.beta1 >= 1 || train.beta2 < 0 || train.beta2 >= 1) {
    throw ConfigError("config: Adam betas must lie in [0, 1)");
  }
  if (!(train.eps > 0)) throw ConfigError("config: train.eps must be positive");
  if (train.seq_len == 0) throw ConfigError("config: train.seq_len must be at least 1");
  if (train.seq_len > sim.seq_len) throw ConfigError("config: train.seq_len exceeds sim.frames");
  if (train.vel_weight_cap < 1) throw ConfigError("config: train.vel_weight_cap must be at least 1");
}

std::map<std::string, std::string> parse_pairs(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");
    }
    if (!out.emplace(key, value).second) throw ConfigError("config: duplicate key '" + key + "'");
  }
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  const auto& table = keys();
  for (const auto& [k, v] : parse_pairs(text)) {
    const auto it = table.find(k);
    if (it == table.end()) throw ConfigError("config: unknown key '" + k + "'");
    it->second.set(c, v);
  }
  c.model.geom = c.geom;
  c.sim.input_channels = c.model.s;
  c.model.gaussian_offsets = c.train.heteroscedastic;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const ExperimentConfig& c) {
  std::string out;
  for (const auto& [k, key] : keys()) out += k + " = " + key.get(c) + "\n";
  return out;
}

std::string data_hash(const ExperimentConfig& c) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [k, key] : keys()) {
    if (k.rfind("grid.", 0) != 0 && k.rfind("sim.", 0) != 0 && k != "model.s") continue;
    const auto line = k + "=" + key.get(c) + "\n";
    for (unsigned char ch : line) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace rspgrid::cfg

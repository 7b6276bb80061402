// rspgrid command line: dataset generation, training, evaluation,
// visualization and gradient checks.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "rspgrid/config.hpp"
#include "rspgrid/dataset.hpp"
#include "rspgrid/gradcheck_suite.hpp"
#include "rspgrid/trainer.hpp"
#include "rspgrid/viz.hpp"

namespace fs = std::filesystem;
using namespace rspgrid;

namespace {

int cmd_generate(const std::string& config, const std::string& out, std::size_t seeds) {
  const auto c = cfg::load_config(config);
  const auto m = data::generate_dataset(c, out, seeds);
  std::size_t eval = 0;
  for (const auto& e : m.entries) eval += data::is_eval_index(e.index) ? 1 : 0;
  std::cout << "wrote " << m.entries.size() << " sequences (" << m.entries.size() - eval << " train, " << eval
            << " eval) to " << out << "  config_hash " << m.config_hash << "\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& data_dir, const std::string& out, bool deterministic) {
  const auto c = cfg::load_config(config);
  const auto d = data::load_dataset(data_dir, c);
  if (d.manifest.config_hash != cfg::data_hash(c)) {
    std::cerr << "warning: dataset was generated with different grid/sim settings\n";
  }
  train::TrainOptions opt;
  opt.deterministic = deterministic;
  opt.log = &std::cerr;
  const auto r = train::train(c, d, out, opt);
  std::cout << "final (epoch " << r.epochs.size() << ")\n" << metrics::format_report(r.epochs.back()) << "\n";
  std::cout << "checkpoint " << r.checkpoint.string() << "\nmetrics " << r.metrics_csv.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& config, const std::string& checkpoint, const std::string& data_dir,
             const std::string& split) {
  const auto c = config.empty() ? train::config_for_checkpoint(checkpoint) : cfg::load_config(config);
  const auto r = train::evaluate(c, checkpoint, fs::path(data_dir), train::parse_split(split));
  std::cout << metrics::csv_header() << "\n" << metrics::csv_row(0, r, false) << "\n";
  std::cout << metrics::format_report(r) << "\n";
  return 0;
}

int cmd_viz(const std::string& checkpoint, const std::string& sequence, const std::string& out,
            const std::string& config) {
  const auto c = config.empty() ? train::config_for_checkpoint(checkpoint) : cfg::load_config(config);
  const auto files = viz::render(c, checkpoint, data::read_sequence(sequence), out);
  std::cout << "wrote " << files.size() << " images to " << out << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& module) {
  bool all_ok = true;
  for (const auto& r : gradcheck::run(module)) {
    char line[256];
    std::snprintf(line, sizeof line, "%-4s %-16s %-34s max_rel_err %.3e  tol %.0e  coords %zu  %.2fs",
                  r.ok() ? "ok" : "FAIL", r.module.c_str(), r.name.c_str(), r.report.max_rel_error, r.tolerance,
                  r.report.coordinates_checked, r.seconds);
    std::cout << line;
    if (r.report.failure) std::cout << "  (" << *r.report.failure << ")";
    std::cout << "\n";
    all_ok = all_ok && r.ok();
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent state projection occupancy grids"};
  app.require_subcommand(1);

  std::string config, out, data_dir, checkpoint, sequence, module, split = "eval";
  std::size_t seeds = 250;
  bool deterministic = false;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  gen->add_option("--config", config, "Experiment config")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seeds", seeds, "Number of sequences")->check(CLI::PositiveNumber);

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "Experiment config")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", out, "Output directory")->required();
  tr->add_flag("--deterministic", deterministic, "Sequential execution; timing column written as 0");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--config", config, "Experiment config (default: config.txt beside the checkpoint)")
      ->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--split", split, "train, eval or all")->check(CLI::IsMember({"train", "eval", "all"}));

  auto* vz = app.add_subcommand("viz", "Render hidden-state norms, classes and velocities");
  vz->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  vz->add_option("--sequence", sequence, "Sequence file (.gtck)")->required()->check(CLI::ExistingFile);
  vz->add_option("--out", out, "Output directory")->required();
  vz->add_option("--config", config, "Experiment config (default: config.txt beside the checkpoint)")
      ->check(CLI::ExistingFile);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--module", module, "Restrict to one module");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_generate(config, out, seeds);
    if (*tr) return cmd_train(config, data_dir, out, deterministic);
    if (*ev) return cmd_eval(config, checkpoint, data_dir, split);
    if (*vz) return cmd_viz(checkpoint, sequence, out, config);
    if (*gc) return cmd_gradcheck(module);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

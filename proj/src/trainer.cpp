#include "rspgrid/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "rspgrid/adam.hpp"

namespace rspgrid::train {

namespace {

std::string epoch_checkpoint_name(std::size_t epoch) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoint_epoch_%02zu.gtck", epoch);
  return buf;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

template <typename T>
TrainResult run(const cfg::ExperimentConfig& c, const data::Dataset& d, const fs::path& out_dir,
                const TrainOptions& opt) {
  if (d.train.empty()) throw std::runtime_error("train: dataset has no training sequences");
  const auto& metric_seqs = c.train.metrics_split == "train" ? d.train : d.eval;
  if (metric_seqs.empty()) throw std::runtime_error("train: metrics split '" + c.train.metrics_split + "' is empty");
  fs::create_directories(out_dir);
  {
    std::ofstream cfg_out(out_dir / "config.txt");
    cfg_out << cfg::to_text(c);
  }

  zoo::Model<T> model(c.model, model_seed(c.seed));
  optim::Adam<T> adam(model.params(), {c.train.lr, c.train.beta1, c.train.beta2, c.train.eps});

  std::vector<const sim::GridFrame*> frames;
  for (const auto& s : d.train) {
    for (std::size_t t = 0; t < c.train.seq_len; ++t) frames.push_back(&s[t]);
  }
  const auto class_w = loss::class_weights(frames);

  TrainResult result;
  result.metrics_csv = out_dir / "metrics.csv";
  std::ofstream csv(result.metrics_csv, std::ios::binary);
  csv << metrics::csv_header() << "\n";

  for (std::size_t epoch = 1; epoch <= c.train.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0;
    for (std::size_t idx : shuffled(d.train.size(), mix_seed(c.seed, epoch))) {
      const data::Sequence seq(d.train[idx].begin(), d.train[idx].begin() + static_cast<long>(c.train.seq_len));
      std::vector<Tensor<T>> inputs;
      for (const auto& f : seq) inputs.push_back(input_tensor<T>(f));
      model.params().zero_grad();
      const auto outs = model.forward_sequence(inputs, false);
      const auto total = sequence_loss(outs, seq, c.train, class_w, c.geom);
      ag::backward(total);
      loss_sum += static_cast<double>(total.item());
      if (!adam.step() && opt.log) *opt.log << "epoch " << epoch << ": non-finite gradient, step skipped\n";
    }
    model.params().zero_grad();
    auto report = evaluate_model(model, metric_seqs);
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    csv << metrics::csv_row(epoch, report, !opt.deterministic) << "\n";
    csv.flush();
    model.params().save(out_dir / epoch_checkpoint_name(epoch));
    if (opt.log) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f", loss_sum / static_cast<double>(d.train.size()));
      *opt.log << "epoch " << epoch << "/" << c.train.epochs << "  loss " << buf << "  "
               << metrics::format_report(report) << "\n";
    }
    result.epochs.push_back(report);
  }
  result.checkpoint = out_dir / "checkpoint.gtck";
  model.params().save(result.checkpoint);
  result.skipped_steps = adam.skipped();
  return result;
}

template <typename T>
metrics::MetricsReport run_eval(const cfg::ExperimentConfig& c, const fs::path& checkpoint,
                                const std::vector<data::Sequence>& seqs) {
  if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint.string());
  zoo::Model<T> model(c.model, model_seed(c.seed));
  model.params().load(checkpoint);
  return evaluate_model(model, seqs);
}

}  // namespace

std::uint64_t model_seed(std::uint64_t seed) { return mix_seed(seed, 0x6d6f64656cULL); }

TrainResult train(const cfg::ExperimentConfig& c, const data::Dataset& data, const fs::path& out_dir,
                  const TrainOptions& opt) {
  c.validate();
  if (c.train.precision == cfg::Precision::dual) return run<double>(c, data, out_dir, opt);
  return run<float>(c, data, out_dir, opt);
}

TrainResult train(const cfg::ExperimentConfig& c, const fs::path& data_dir, const fs::path& out_dir,
                  const TrainOptions& opt) {
  return train(c, data::load_dataset(data_dir, c), out_dir, opt);
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "eval") return Split::eval;
  if (s == "all") return Split::all;
  throw std::invalid_argument("unknown split '" + s + "' (expected train, eval or all)");
}

metrics::MetricsReport evaluate(const cfg::ExperimentConfig& c, const fs::path& checkpoint, const data::Dataset& data,
                                Split split) {
  c.validate();
  std::vector<data::Sequence> seqs;
  if (split != Split::eval) seqs.insert(seqs.end(), data.train.begin(), data.train.end());
  if (split != Split::train) seqs.insert(seqs.end(), data.eval.begin(), data.eval.end());
  if (seqs.empty()) throw std::runtime_error("evaluate: selected split is empty");
  if (c.train.precision == cfg::Precision::dual) return run_eval<double>(c, checkpoint, seqs);
  return run_eval<float>(c, checkpoint, seqs);
}

metrics::MetricsReport evaluate(const cfg::ExperimentConfig& c, const fs::path& checkpoint, const fs::path& data_dir,
                                Split split) {
  return evaluate(c, checkpoint, data::load_dataset(data_dir, c), split);
}

cfg::ExperimentConfig config_for_checkpoint(const fs::path& checkpoint) {
  const auto path = checkpoint.parent_path() / "config.txt";
  if (!fs::exists(path)) throw std::runtime_error("no config.txt beside checkpoint " + checkpoint.string());
  return cfg::load_config(path.string());
}

}  // namespace rspgrid::train

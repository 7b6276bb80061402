#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "rspgrid/config.hpp"
#include "rspgrid/dataset.hpp"
#include "rspgrid/losses.hpp"
#include "rspgrid/metrics.hpp"
#include "rspgrid/model.hpp"

namespace rspgrid::train {

namespace fs = std::filesystem;
using ag::Tensor;

template <typename T>
Tensor<T> input_tensor(const sim::GridFrame& f) {
  return Tensor<T>::from({f.x, f.y, f.s}, std::vector<T>(f.input.begin(), f.input.end()));
}

template <typename T>
Tensor<T> velocity_tensor(const sim::GridFrame& f) {
  return Tensor<T>::from({f.x, f.y, 2}, std::vector<T>(f.gt_velocity.begin(), f.gt_velocity.end()));
}

inline std::vector<int> class_labels(const sim::GridFrame& f) {
  std::vector<int> out(f.gt_class.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = static_cast<int>(f.gt_class[c]);
  return out;
}

// Total training loss of one unrolled sequence (mean over frames).
template <typename T>
Tensor<T> sequence_loss(const std::vector<zoo::NetworkOutput<T>>& outs, const data::Sequence& frames,
                        const cfg::TrainConfig& tc, const std::array<double, 4>& class_w, const GridGeometry& geom) {
  const std::vector<double> cw(class_w.begin(), class_w.end());
  Tensor<T> total;
  for (std::size_t t = 0; t < outs.size(); ++t) {
    const auto& f = frames[t];
    const auto& o = outs[t];
    const auto gt_v = velocity_tensor<T>(f);
    const auto vw = loss::velocity_weights(f, tc.vel_weight_cap);
    auto vel = ag::mul_scalar(loss::velocity_l2_loss(o.v_refined, gt_v, vw), static_cast<T>(tc.vel_main));
    if (tc.heteroscedastic) {
      const auto mu = proj::velocity_to_offset(o.v_initial, geom);
      const auto gt_off = ag::div_scalar(gt_v, static_cast<T>(geom.frame_rate_hz));
      vel = ag::add(vel, loss::heteroscedastic_loss(mu, o.log_var, gt_off, vw));
    } else {
      vel = ag::add(vel, ag::mul_scalar(loss::velocity_l2_loss(o.v_initial, gt_v, vw), static_cast<T>(tc.vel_aux)));
    }
    const auto ce = loss::weighted_ce_loss(o.class_logits, class_labels(f), loss::observed_weights(f), cw);
    const auto frame_loss =
        ag::add(ag::mul_scalar(ce, static_cast<T>(tc.loss_ce)), ag::mul_scalar(vel, static_cast<T>(tc.loss_vel)));
    total = total.defined() ? ag::add(total, frame_loss) : frame_loss;
  }
  return ag::div_scalar(total, static_cast<T>(outs.size()));
}

// Rolls the model over each sequence from a fresh state (state carried
// across all frames of a sequence) and accumulates metrics over observed
// cells.
template <typename T>
metrics::MetricsReport evaluate_model(zoo::Model<T>& model, const std::vector<data::Sequence>& seqs) {
  ag::NoGradGuard no_grad;
  const auto& geom = model.config().geom;
  metrics::ConfusionMatrix cm;
  metrics::VelocityError all(0.0);
  metrics::VelocityError fast(proj::max_capturable_speed(3, geom));
  for (const auto& seq : seqs) {
    model.reset_state();
    std::vector<Tensor<T>> inputs;
    for (const auto& f : seq) inputs.push_back(input_tensor<T>(f));
    const auto outs = model.forward_sequence(inputs, true);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const auto& f = seq[t];
      const auto logits = outs[t].class_logits.data();
      const auto pred = metrics::argmax_classes(std::vector<T>(logits.begin(), logits.end()), zoo::kClassCount);
      cm.add(pred, class_labels(f), f.observability);
      const auto v = outs[t].v_refined.data();
      const std::vector<float> vp(v.begin(), v.end());
      all.add(vp, f.gt_velocity, f.observability);
      fast.add(vp, f.gt_velocity, f.observability);
    }
  }
  model.reset_state();
  metrics::MetricsReport r;
  for (std::size_t k = 0; k < metrics::kClasses; ++k) r.iou.per_class[k] = cm.iou(k);
  r.iou.mean = cm.mean_iou();
  r.mae = all.mae();
  r.mae_fast = fast.mae();
  r.params = model.parameter_count();
  return r;
}

struct TrainOptions {
  bool deterministic = false;
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::vector<metrics::MetricsReport> epochs;
  fs::path checkpoint;
  fs::path metrics_csv;
  std::size_t skipped_steps = 0;
};

// Model initialization seed derived from the experiment seed.
std::uint64_t model_seed(std::uint64_t seed);

// Writes OUT/metrics.csv, OUT/checkpoint_epoch_NN.gtck, OUT/checkpoint.gtck
// and OUT/config.txt.
TrainResult train(const cfg::ExperimentConfig& c, const data::Dataset& data, const fs::path& out_dir,
                  const TrainOptions& opt = {});
TrainResult train(const cfg::ExperimentConfig& c, const fs::path& data_dir, const fs::path& out_dir,
                  const TrainOptions& opt = {});

enum class Split { train, eval, all };
Split parse_split(const std::string& s);

metrics::MetricsReport evaluate(const cfg::ExperimentConfig& c, const fs::path& checkpoint, const data::Dataset& data,
                                Split split);
metrics::MetricsReport evaluate(const cfg::ExperimentConfig& c, const fs::path& checkpoint, const fs::path& data_dir,
                                Split split);

// Looks for config.txt beside a checkpoint.
cfg::ExperimentConfig config_for_checkpoint(const fs::path& checkpoint);

}  // namespace rspgrid::train

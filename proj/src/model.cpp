#include "rspgrid/model.hpp"

#include <stdexcept>

namespace rspgrid::zoo {

Architecture parse_architecture(const std::string& name) {
  if (name == "single_frame") return Architecture::single_frame;
  if (name == "single_frame_large") return Architecture::single_frame_large;
  if (name == "gru") return Architecture::gru;
  if (name == "pyramid") return Architecture::pyramid;
  if (name == "rsp") return Architecture::rsp;
  throw std::invalid_argument("unknown architecture '" + name +
                              "' (expected single_frame, single_frame_large, gru, pyramid or rsp)");
}

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::single_frame: return "single_frame";
    case Architecture::single_frame_large: return "single_frame_large";
    case Architecture::gru: return "gru";
    case Architecture::pyramid: return "pyramid";
    case Architecture::rsp: return "rsp";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (classes != kClassCount) throw std::invalid_argument("model config: class count must be 4");
  if (s == 0 || f == 0 || m == 0 || d_h == 0 || head_channels == 0) {
    throw std::invalid_argument("model config: channel counts must be positive");
  }
  if (aspp_blocks == 0 || aspp_rates.empty()) throw std::invalid_argument("model config: empty ASPP head");
  geom.validate();
}

std::size_t parameter_count(const ModelConfig& cfg) {
  // Build with float storage; counts do not depend on the scalar type.
  return Model<float>(cfg, 0).parameter_count();
}

std::size_t aligned_prep_width(const ModelConfig& cfg) {
  ModelConfig gru = cfg;
  gru.arch = Architecture::gru;
  const std::size_t target = parameter_count(gru);
  ModelConfig single = cfg;
  single.arch = Architecture::single_frame;
  for (std::size_t width = cfg.f;; ++width) {
    single.f = width;
    if (parameter_count(single) >= target) return width;
  }
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  std::size_t prep_width = cfg_.f;
  if (cfg_.arch == Architecture::single_frame_large) prep_width = aligned_prep_width(cfg_);

  prep0_ = nn::ConvBlock<T>(params_, "prep.block0", cfg_.s, prep_width, rng);
  prep1_ = nn::ConvBlock<T>(params_, "prep.block1", prep_width, prep_width, rng);

  cell::CellConfig cc;
  cc.input_channels = cfg_.f;
  cc.hidden_channels = cfg_.m;
  cc.embed_channels = cfg_.d_h;
  cc.head_channels = cfg_.head_channels;
  cc.gaussian_offsets = cfg_.gaussian_offsets;
  cc.geom = cfg_.geom;

  std::size_t feature_channels = prep_width;
  switch (cfg_.arch) {
    case Architecture::single_frame:
    case Architecture::single_frame_large:
      frame_velocity_.emplace(params_, "frame.velocity", prep_width, cfg_.head_channels,
                              cfg_.gaussian_offsets ? 3 : 2, rng);
      break;
    case Architecture::gru:
      gru_.emplace(params_, "rnn", cc, rng);
      feature_channels = cfg_.m;
      break;
    case Architecture::rsp:
      rsp_.emplace(params_, "rnn", cc, rng);
      feature_channels = cfg_.m;
      break;
    case Architecture::pyramid: {
      const std::size_t level = std::max<std::size_t>(1, cfg_.m / 2);
      pyramid_.emplace(params_, "rnn.pyramid", cfg_.f, level, cfg_.m, cfg_.geom, rng);
      pyramid_velocity_.emplace(params_, "rnn.velocity", cfg_.m, cfg_.head_channels, cfg_.gaussian_offsets ? 3 : 2,
                                rng);
      feature_channels = cfg_.m;
      break;
    }
  }

  for (std::size_t b = 0; b < cfg_.aspp_blocks; ++b) {
    aspp_.emplace_back(params_, "seg.aspp" + std::to_string(b), b == 0 ? feature_channels : cfg_.head_channels,
                       cfg_.head_channels, cfg_.aspp_rates, rng);
  }
  classifier_ = nn::Conv2d<T>(params_, "seg.classifier", cfg_.head_channels, cfg_.classes, 1, 1, rng);
}

template <typename T>
ModelState<T> Model<T>::initial_state() const {
  ModelState<T> s;
  const auto& g = cfg_.geom;
  switch (cfg_.arch) {
    case Architecture::gru:
    case Architecture::rsp:
      s.hidden.push_back(Tensor<T>::zeros({g.x, g.y, cfg_.m}));
      break;
    case Architecture::pyramid:
      s.hidden = pyramid_->initial_state();
      break;
    default:
      break;
  }
  s.off = Tensor<T>::zeros({g.x, g.y, 2});
  return s;
}

template <typename T>
Tensor<T> Model<T>::segment(const Tensor<T>& features) const {
  Tensor<T> x = features;
  for (const auto& block : aspp_) x = block(x);
  return classifier_(x);
}

template <typename T>
NetworkOutput<T> Model<T>::step(ModelState<T>& state, const Tensor<T>& input) const {
  proj::require_grid("model input", input, cfg_.geom, cfg_.s);
  if (state.empty() && is_recurrent(cfg_.arch)) state = initial_state();
  const auto encoded = prep1_(prep0_(input));

  NetworkOutput<T> out;
  auto split = [&](const Tensor<T>& head) {
    if (cfg_.gaussian_offsets) {
      out.v_initial = ag::slice(head, 0, 2);
      out.log_var = ag::slice(head, 2, 3);
    } else {
      out.v_initial = head;
    }
    out.v_refined = out.v_initial;
  };

  switch (cfg_.arch) {
    case Architecture::single_frame:
    case Architecture::single_frame_large: {
      out.features = encoded;
      split((*frame_velocity_)(encoded));
      break;
    }
    case Architecture::gru:
    case Architecture::rsp: {
      const cell::RecurrentState<T> prev{state.hidden[0], state.off};
      const auto r = rsp_ ? rsp_->step(prev, encoded) : gru_->step(prev, encoded);
      out.features = r.features;
      out.v_initial = r.v_initial;
      out.v_refined = r.v_refined;
      out.attention = r.attention;
      out.log_var = r.log_var;
      state.hidden[0] = r.new_state.h;
      state.off = r.new_state.off;
      break;
    }
    case Architecture::pyramid: {
      out.features = pyramid_->step(state.hidden, encoded);
      split((*pyramid_velocity_)(out.features));
      state.off = proj::velocity_to_offset(out.v_initial, cfg_.geom);
      break;
    }
  }
  out.class_logits = segment(out.features);
  return out;
}

template <typename T>
std::vector<NetworkOutput<T>> Model<T>::forward_sequence(const std::vector<Tensor<T>>& inputs, bool stateful) {
  if (inputs.empty()) throw std::invalid_argument("forward_sequence: empty frame list");
  for (const auto& in : inputs) {
    if (in.shape() != inputs.front().shape()) ag::shape_mismatch("forward_sequence(frame geometry)", inputs.front().shape(), in.shape());
  }
  ModelState<T> state = stateful ? carried_ : ModelState<T>{};
  std::vector<NetworkOutput<T>> outs;
  outs.reserve(inputs.size());
  for (const auto& in : inputs) outs.push_back(step(state, in));
  if (stateful) carried_ = state.detach();
  return outs;
}

template class Model<float>;
template class Model<double>;

}  // namespace rspgrid::zoo

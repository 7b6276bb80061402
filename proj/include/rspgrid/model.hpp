#pragma once

// Experiment architectures around a shared preprocessing stage and ASPP
// segmentation head:
//
//   input [X,Y,S] -> Prep (two 3x3 conv blocks, S->F->F) -> RNN+ -> ASPP x4 -> 1x1 -> logits [X,Y,4]
//
// RNN+ is one of: nothing (single_frame, single_frame_large), a ConvGRU
// (gru), a three-level multi-scale ConvGRU (pyramid) or the projection cell
// (rsp). Models without memory regress velocities from the Prep output.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rspgrid/layers.hpp"
#include "rspgrid/rsp_cell.hpp"

namespace rspgrid::zoo {

using ag::Tensor;

enum class Architecture { single_frame, single_frame_large, gru, pyramid, rsp };

Architecture parse_architecture(const std::string& name);
std::string to_string(Architecture arch);
inline bool is_recurrent(Architecture a) {
  return a == Architecture::gru || a == Architecture::pyramid || a == Architecture::rsp;
}

inline constexpr std::size_t kClassCount = 4;

struct ModelConfig {
  Architecture arch = Architecture::rsp;
  std::size_t s = 1;
  std::size_t f = 8;
  std::size_t m = 16;
  std::size_t d_h = 8;
  std::size_t head_channels = 8;
  std::size_t classes = kClassCount;
  std::vector<std::size_t> aspp_rates{1, 2, 4, 8};
  std::size_t aspp_blocks = 4;
  bool gaussian_offsets = false;
  GridGeometry geom;

  void validate() const;
};

// Channel count of the capacity-aligned single-frame model: the smallest
// Prep width whose parameter count reaches that of the GRU model.
std::size_t aligned_prep_width(const ModelConfig& cfg);

template <typename T>
struct NetworkOutput {
  Tensor<T> class_logits;  // [X, Y, 4]
  Tensor<T> v_initial;     // [X, Y, 2]
  Tensor<T> v_refined;     // [X, Y, 2]
  Tensor<T> attention;     // [X, Y, 1] for rsp only
  Tensor<T> log_var;       // [X, Y, 1] with gaussian offsets only
  Tensor<T> features;      // memory / feature map fed to the head
};

template <typename T>
struct ModelState {
  std::vector<Tensor<T>> hidden;
  Tensor<T> off;

  bool empty() const { return hidden.empty(); }
  ModelState detach() const {
    ModelState s;
    for (const auto& h : hidden) s.hidden.push_back(h.detach());
    if (off.defined()) s.off = off.detach();
    return s;
  }
};

// Three-scale ConvGRU: the encoder halves resolution twice with 2x2 mean
// pooling, one ConvGRU per scale, and the decoder upsamples (nearest) and
// fuses all scales with a 1x1 conv block.
template <typename T>
class PyramidRnn {
 public:
  static constexpr std::size_t kLevels = 3;

  PyramidRnn() = default;
  PyramidRnn(nn::ParameterStore<T>& store, const std::string& name, std::size_t input_channels,
             std::size_t level_channels, std::size_t out_channels, const GridGeometry& geom, Rng& rng)
      : geom_(geom), level_channels_(level_channels) {
    if (geom.x % 4 || geom.y % 4) {
      throw std::invalid_argument("pyramid rnn: grid " + std::to_string(geom.x) + "x" + std::to_string(geom.y) +
                                  " is not divisible by 4");
    }
    for (std::size_t l = 0; l < kLevels; ++l) {
      grus_.emplace_back(store, name + ".level" + std::to_string(l), l == 0 ? input_channels : level_channels,
                         level_channels, rng);
    }
    fuse_ = nn::ConvBlock<T>(store, name + ".fuse", level_channels * kLevels, out_channels, rng, 1, 1);
  }

  std::vector<Tensor<T>> initial_state() const {
    std::vector<Tensor<T>> h;
    for (std::size_t l = 0; l < kLevels; ++l) {
      h.push_back(Tensor<T>::zeros({geom_.x >> l, geom_.y >> l, level_channels_}));
    }
    return h;
  }

  // Updates `hidden` in place and returns the fused full-resolution features.
  Tensor<T> step(std::vector<Tensor<T>>& hidden, const Tensor<T>& input) const {
    if (hidden.size() != kLevels) throw std::invalid_argument("pyramid rnn: expected 3-level state");
    Tensor<T> x = input;
    for (std::size_t l = 0; l < kLevels; ++l) {
      if (l > 0) x = ag::avg_pool2(hidden[l - 1]);
      hidden[l] = grus_[l](hidden[l], x);
    }
    std::vector<Tensor<T>> parts{hidden[0]};
    for (std::size_t l = 1; l < kLevels; ++l) parts.push_back(ag::upsample_nearest(hidden[l], std::size_t{1} << l));
    return fuse_(ag::concat(parts));
  }

 private:
  GridGeometry geom_;
  std::size_t level_channels_ = 0;
  std::vector<nn::ConvGru<T>> grus_;
  nn::ConvBlock<T> fuse_;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore<T>& params() { return params_; }
  const nn::ParameterStore<T>& params() const { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }

  ModelState<T> initial_state() const;

  // One frame. `state` is consumed and replaced by the next state.
  NetworkOutput<T> step(ModelState<T>& state, const Tensor<T>& input) const;

  // Threads state across `inputs`. With stateful=true the state is carried
  // over from (and stored back for) the previous call, detached from the
  // graph; otherwise every call starts cold.
  std::vector<NetworkOutput<T>> forward_sequence(const std::vector<Tensor<T>>& inputs, bool stateful);

  void reset_state() { carried_ = ModelState<T>{}; }

 private:
  Tensor<T> segment(const Tensor<T>& features) const;

  ModelConfig cfg_;
  nn::ParameterStore<T> params_;
  nn::ConvBlock<T> prep0_;
  nn::ConvBlock<T> prep1_;
  std::optional<cell::RspCell<T>> rsp_;
  std::optional<cell::PlainGruCell<T>> gru_;
  std::optional<PyramidRnn<T>> pyramid_;
  std::optional<nn::RegressionHead<T>> pyramid_velocity_;
  std::optional<nn::RegressionHead<T>> frame_velocity_;
  std::vector<nn::Aspp<T>> aspp_;
  nn::Conv2d<T> classifier_;
  ModelState<T> carried_;
};

// Parameter count for a configuration without keeping the model.
std::size_t parameter_count(const ModelConfig& cfg);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace rspgrid::zoo

#pragma once

// Parameterized layers on channels-last grids [X, Y, C].

#include <cmath>
#include <string>
#include <vector>

#include "rspgrid/ops.hpp"
#include "rspgrid/params.hpp"

namespace rspgrid::nn {

inline constexpr double kLeakySlope = 0.1;

enum class Activation { linear, leaky };

// He-uniform bound factor for leaky units.
inline const double kLeakyInitScale = std::sqrt(6.0 / (1.0 + kLeakySlope * kLeakySlope));

struct LayerSpec {
  enum class Kind { conv, conv_gru, aspp, head };
  Kind kind = Kind::conv;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::vector<std::size_t> dilations{1};
  // Hidden width of the two conv blocks of a regression head.
  std::size_t hidden_channels = 8;

  void validate() const {
    if (in_channels == 0 || out_channels == 0 || hidden_channels == 0) {
      throw std::invalid_argument("layer spec: channel counts must be positive");
    }
    if (kernel % 2 == 0) throw std::invalid_argument("layer spec: kernel size must be odd");
    if (dilations.empty()) throw std::invalid_argument("layer spec: at least one dilation rate required");
    for (auto d : dilations) {
      if (d == 0) throw std::invalid_argument("layer spec: dilation rates must be positive");
    }
  }
};

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act) {
  return act == Activation::leaky ? ag::leaky_relu(x, static_cast<T>(kLeakySlope)) : x;
}

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout, std::size_t kernel,
         std::size_t dilation, Rng& rng, double init_scale = 1.0)
      : cin_(cin), dilation_(dilation) {
    LayerSpec{LayerSpec::Kind::conv, cin, cout, kernel}.validate();
    weight_ = store.add_uniform(name + ".weight", {kernel, kernel, cin, cout}, kernel * kernel * cin, rng, init_scale);
    bias_ = store.add_zeros(name + ".bias", {cout});
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.rank() != 3 || x.dim(2) != cin_) {
      throw ag::ShapeError("conv: expected " + std::to_string(cin_) + " input channels, got " + ag::shape_str(x.shape()));
    }
    return ag::conv2d(x, weight_, bias_, dilation_);
  }

  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }

 private:
  std::size_t cin_ = 0;
  std::size_t dilation_ = 1;
  Tensor<T> weight_;
  Tensor<T> bias_;
};

// Convolution + bias + activation, spatial size preserved.
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(ParameterStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout, Rng& rng,
            std::size_t kernel = 3, std::size_t dilation = 1, Activation act = Activation::leaky)
      : conv_(store, name, cin, cout, kernel, dilation, rng, act == Activation::leaky ? kLeakyInitScale : 1.0),
        act_(act) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return activate(conv_(x), act_); }

  const Conv2d<T>& conv() const { return conv_; }

 private:
  Conv2d<T> conv_;
  Activation act_ = Activation::leaky;
};

// Convolutional GRU with 3x3 kernels:
//   z  = sigmoid(Conv_z[x, h])
//   r  = sigmoid(Conv_r[x, h])
//   h~ = tanh(Conv_h[x, r*h])
//   h' = (1 - z) * h + z * h~
template <typename T>
class ConvGru {
 public:
  ConvGru() = default;
  ConvGru(ParameterStore<T>& store, const std::string& name, std::size_t input_channels, std::size_t hidden_channels,
          Rng& rng, std::size_t kernel = 3)
      : input_(input_channels), hidden_(hidden_channels) {
    const std::size_t both = input_channels + hidden_channels;
    update_ = Conv2d<T>(store, name + ".update", both, hidden_channels, kernel, 1, rng);
    reset_ = Conv2d<T>(store, name + ".reset", both, hidden_channels, kernel, 1, rng);
    candidate_ = Conv2d<T>(store, name + ".candidate", both, hidden_channels, kernel, 1, rng);
  }

  Tensor<T> operator()(const Tensor<T>& h, const Tensor<T>& x) const {
    if (h.rank() != 3 || x.rank() != 3 || h.dim(0) != x.dim(0) || h.dim(1) != x.dim(1)) {
      ag::shape_mismatch("conv_gru", h.shape(), x.shape());
    }
    if (h.dim(2) != hidden_ || x.dim(2) != input_) ag::shape_mismatch("conv_gru", h.shape(), x.shape());
    const auto xh = ag::concat<T>({x, h});
    const auto z = ag::sigmoid(update_(xh));
    const auto r = ag::sigmoid(reset_(xh));
    const auto cand = ag::tanh(candidate_(ag::concat<T>({x, ag::mul(r, h)})));
    // (1 - z) * h + z * h~  ==  h + z * (h~ - h)
    return ag::add(h, ag::mul(z, ag::sub(cand, h)));
  }

  std::size_t hidden_channels() const { return hidden_; }
  const Conv2d<T>& update_conv() const { return update_; }
  const Conv2d<T>& reset_conv() const { return reset_; }
  const Conv2d<T>& candidate_conv() const { return candidate_; }

 private:
  std::size_t input_ = 0;
  std::size_t hidden_ = 0;
  Conv2d<T> update_;
  Conv2d<T> reset_;
  Conv2d<T> candidate_;
};

// Parallel dilated 3x3 conv blocks, concatenated and fused by a 1x1 conv block.
template <typename T>
class Aspp {
 public:
  Aspp() = default;
  Aspp(ParameterStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout,
       const std::vector<std::size_t>& rates, Rng& rng) {
    LayerSpec{LayerSpec::Kind::aspp, cin, cout, 3, rates}.validate();
    for (std::size_t i = 0; i < rates.size(); ++i) {
      branches_.emplace_back(store, name + ".rate" + std::to_string(rates[i]), cin, cout, rng, 3, rates[i]);
    }
    fuse_ = ConvBlock<T>(store, name + ".fuse", cout * rates.size(), cout, rng, 1, 1);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    std::vector<Tensor<T>> parts;
    parts.reserve(branches_.size());
    for (const auto& b : branches_) parts.push_back(b(x));
    return fuse_(parts.size() == 1 ? parts[0] : ag::concat(parts));
  }

 private:
  std::vector<ConvBlock<T>> branches_;
  ConvBlock<T> fuse_;
};

// Two 3x3 conv blocks and a linear 1x1 projection. Used for the velocity
// head and the query/key embedding heads.
template <typename T>
class RegressionHead {
 public:
  RegressionHead() = default;
  RegressionHead(ParameterStore<T>& store, const std::string& name, std::size_t cin, std::size_t hidden,
                 std::size_t cout, Rng& rng)
      : first_(store, name + ".block0", cin, hidden, rng),
        second_(store, name + ".block1", hidden, hidden, rng),
        out_(store, name + ".out", hidden, cout, 1, 1, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return out_(second_(first_(x))); }

 private:
  ConvBlock<T> first_;
  ConvBlock<T> second_;
  Conv2d<T> out_;
};

}  // namespace rspgrid::nn

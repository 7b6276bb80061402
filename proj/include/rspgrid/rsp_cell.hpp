#pragma once

// Recurrent State Projection cell.
//
// One step, given H_{t-1} = (h, off) and the encoded frame I_t:
//   1. q   = query head applied to h_{t-1}
//   2. [h', off', q'] = [h, off, q] splatted by off_{t-1}
//      (h summed on collision, off and q mass-averaged)
//   3. k   = key head applied to I_t,  Att = sigmoid(<q', k> / sqrt(d_h))
//   4. h_g = Att * h'
//   5. h_t = ConvGRU(h_g, I_t)
//   6. v_t = velocity head applied to h_t,  off_t = v_t / FR
//   7. off+ = Att * off' + (1 - Att) * off_t
//   8. H_t = (h_t, off+),  reported velocity = off+ * FR
//
// The query comes from memory and the key from the input.

#include <cmath>
#include <optional>
#include <string>

#include "rspgrid/layers.hpp"
#include "rspgrid/projection.hpp"

namespace rspgrid::cell {

using ag::Tensor;

template <typename T>
struct RecurrentState {
  Tensor<T> h;    // [X, Y, M]
  Tensor<T> off;  // [X, Y, 2], meters

  static RecurrentState zeros(const GridGeometry& geom, std::size_t hidden) {
    return {Tensor<T>::zeros({geom.x, geom.y, hidden}), Tensor<T>::zeros({geom.x, geom.y, 2})};
  }

  RecurrentState detach() const { return {h.detach(), off.detach()}; }
};

template <typename T>
struct EmbeddingPair {
  Tensor<T> q;  // from memory
  Tensor<T> k;  // from input
};

template <typename T>
struct StepOutput {
  RecurrentState<T> new_state;
  Tensor<T> features;    // GRU output, [X, Y, M]
  Tensor<T> v_initial;   // velocity head output, [X, Y, 2]
  Tensor<T> v_refined;   // reported velocity, [X, Y, 2]
  Tensor<T> attention;   // [X, Y, 1]; undefined for the plain GRU
  Tensor<T> log_var;     // [X, Y, 1] offset log-variance; only with the Gaussian extension
};

struct CellConfig {
  std::size_t input_channels = 8;   // F
  std::size_t hidden_channels = 16;  // M
  std::size_t embed_channels = 8;   // d_h
  std::size_t head_channels = 8;    // hidden width of regression heads
  // Velocity head additionally emits log sigma^2 of the offset.
  bool gaussian_offsets = false;
  GridGeometry geom;
};

// Per-cell sigmoid(<q', k> / sqrt(d_h)); no normalization across cells.
template <typename T>
Tensor<T> attention_gate(const Tensor<T>& q_projected, const Tensor<T>& k) {
  if (q_projected.shape() != k.shape()) ag::shape_mismatch("attention_gate", q_projected.shape(), k.shape());
  const T scale = T(1) / std::sqrt(static_cast<T>(k.shape().back()));
  return ag::sigmoid(ag::mul_scalar(ag::sum_last(ag::mul(q_projected, k)), scale));
}

// Att * off' + (1 - Att) * off_new, then limited to off_max.
template <typename T>
Tensor<T> refine_offsets(const Tensor<T>& att, const Tensor<T>& off_projected, const Tensor<T>& off_new,
                         const GridGeometry& geom) {
  if (off_projected.shape() != off_new.shape()) ag::shape_mismatch("refine_offsets", off_projected.shape(), off_new.shape());
  const auto a = ag::broadcast_to(att, off_new.shape());
  const auto keep = ag::add_scalar(ag::neg(a), T(1));
  const auto blended = ag::add(ag::mul(a, off_projected), ag::mul(keep, off_new));
  return proj::clamp_offsets(blended, geom);
}

template <typename T>
class RspCell {
 public:
  RspCell() = default;
  RspCell(nn::ParameterStore<T>& store, const std::string& name, const CellConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.geom.validate();
    gru_ = nn::ConvGru<T>(store, name + ".gru", cfg.input_channels, cfg.hidden_channels, rng);
    velocity_ = nn::RegressionHead<T>(store, name + ".velocity", cfg.hidden_channels, cfg.head_channels,
                                      cfg.gaussian_offsets ? 3 : 2, rng);
    query_ = nn::RegressionHead<T>(store, name + ".query", cfg.hidden_channels, cfg.head_channels, cfg.embed_channels, rng);
    key_ = nn::RegressionHead<T>(store, name + ".key", cfg.input_channels, cfg.head_channels, cfg.embed_channels, rng);
  }

  EmbeddingPair<T> compute_embeddings(const Tensor<T>& h_prev, const Tensor<T>& input) const {
    return {query_(h_prev), key_(input)};
  }

  StepOutput<T> step(const RecurrentState<T>& state, const Tensor<T>& input) const {
    const auto& g = cfg_.geom;
    proj::require_grid("rsp_step(h)", state.h, g, cfg_.hidden_channels);
    proj::require_grid("rsp_step(off)", state.off, g, 2);
    proj::require_grid("rsp_step(input)", input, g, cfg_.input_channels);
    const std::size_t m = cfg_.hidden_channels;
    const std::size_t dh = cfg_.embed_channels;

    const auto q = query_(state.h);
    const auto projected = proj::project_state(ag::concat<T>({state.h, state.off, q}), state.off, g);
    const auto h_proj = ag::slice(projected.payload, 0, m);
    const auto off_proj = proj::normalize_projection(ag::slice(projected.payload, m, m + 2), projected.mass,
                                                     proj::Collision::mean);
    const auto q_proj = proj::normalize_projection(ag::slice(projected.payload, m + 2, m + 2 + dh), projected.mass,
                                                   proj::Collision::mean);

    const auto k = key_(input);
    const auto att = attention_gate(q_proj, k);
    const auto gated = ag::scale_rows(h_proj, att);
    const auto features = gru_(gated, input);

    StepOutput<T> out;
    split_velocity(velocity_(features), out);
    const auto off_new = proj::velocity_to_offset(out.v_initial, g);
    const auto off_refined = refine_offsets(att, off_proj, off_new, g);
    out.new_state = {features, off_refined};
    out.features = features;
    out.v_refined = proj::offset_to_velocity(off_refined, g);
    out.attention = att;
    return out;
  }

  const CellConfig& config() const { return cfg_; }

 private:
  void split_velocity(const Tensor<T>& head, StepOutput<T>& out) const {
    if (cfg_.gaussian_offsets) {
      out.v_initial = ag::slice(head, 0, 2);
      out.log_var = ag::slice(head, 2, 3);
    } else {
      out.v_initial = head;
    }
  }

  CellConfig cfg_;
  nn::ConvGru<T> gru_;
  nn::RegressionHead<T> velocity_;
  nn::RegressionHead<T> query_;
  nn::RegressionHead<T> key_;
};

// Ablation: ConvGRU and velocity head only. No projection, no gate; the
// carried offset is the velocity head's offset.
template <typename T>
class PlainGruCell {
 public:
  PlainGruCell() = default;
  PlainGruCell(nn::ParameterStore<T>& store, const std::string& name, const CellConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.geom.validate();
    gru_ = nn::ConvGru<T>(store, name + ".gru", cfg.input_channels, cfg.hidden_channels, rng);
    velocity_ = nn::RegressionHead<T>(store, name + ".velocity", cfg.hidden_channels, cfg.head_channels,
                                      cfg.gaussian_offsets ? 3 : 2, rng);
  }

  StepOutput<T> step(const RecurrentState<T>& state, const Tensor<T>& input) const {
    proj::require_grid("gru_step(h)", state.h, cfg_.geom, cfg_.hidden_channels);
    proj::require_grid("gru_step(input)", input, cfg_.geom, cfg_.input_channels);
    const auto features = gru_(state.h, input);
    StepOutput<T> out;
    const auto head = velocity_(features);
    if (cfg_.gaussian_offsets) {
      out.v_initial = ag::slice(head, 0, 2);
      out.log_var = ag::slice(head, 2, 3);
    } else {
      out.v_initial = head;
    }
    out.v_refined = out.v_initial;
    out.features = features;
    out.new_state = {features, proj::velocity_to_offset(out.v_initial, cfg_.geom)};
    return out;
  }

  const CellConfig& config() const { return cfg_; }

 private:
  CellConfig cfg_;
  nn::ConvGru<T> gru_;
  nn::RegressionHead<T> velocity_;
};

}  // namespace rspgrid::cell

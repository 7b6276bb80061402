#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rspgrid/params.hpp"

namespace rspgrid::optim {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction over every tensor of a ParameterStore.
template <typename T>
class Adam {
 public:
  Adam(nn::ParameterStore<T>& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
    for (const auto& [name, t] : params_.all()) {
      m_[name].assign(t.numel(), 0.0);
      v_[name].assign(t.numel(), 0.0);
    }
  }

  // Returns false (and leaves parameters and moments untouched) when any
  // gradient is non-finite.
  bool step() {
    for (auto& [name, t] : params_.all()) {
      if (!t.has_grad()) continue;
      for (T g : t.grad()) {
        if (!std::isfinite(static_cast<double>(g))) {
          ++skipped_;
          return false;
        }
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, t] : params_.all()) {
      auto& m = m_.at(name);
      auto& v = v_.at(name);
      auto p = t.mutable_data();
      const bool has = t.has_grad();
      const auto g = has ? t.grad() : std::span<const T>();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = has ? static_cast<double>(g[i]) : 0.0;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p[i] = static_cast<T>(static_cast<double>(p[i]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
    return true;
  }

  std::size_t steps() const { return t_; }
  std::size_t skipped() const { return skipped_; }
  const std::vector<double>& first_moment(const std::string& name) const { return m_.at(name); }
  const std::vector<double>& second_moment(const std::string& name) const { return v_.at(name); }

 private:
  nn::ParameterStore<T>& params_;
  AdamConfig cfg_;
  std::map<std::string, std::vector<double>> m_, v_;
  std::size_t t_ = 0;
  std::size_t skipped_ = 0;
};

}  // namespace rspgrid::optim

#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rspgrid/autograd.hpp"
#include "rspgrid/container.hpp"
#include "rspgrid/rng.hpp"

namespace rspgrid::nn {

using ag::Shape;
using ag::Tensor;

// Named trainable tensors. Iteration is in name order, which fixes the
// checkpoint layout and the optimizer's traversal.
template <typename T>
class ParameterStore {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  // Uniform(-scale/sqrt(fan_in), scale/sqrt(fan_in)).
  Tensor<T> add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng, double scale = 1.0) {
    const double bound = scale / std::sqrt(static_cast<double>(fan_in));
    std::vector<T> v(ag::numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return insert(name, Tensor<T>::from(std::move(shape), std::move(v), true));
  }

  Tensor<T> add_zeros(const std::string& name, Shape shape) {
    return insert(name, Tensor<T>::zeros(std::move(shape), true));
  }

  const Tensor<T>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("parameter not found: " + name);
    return it->second;
  }
  Tensor<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("parameter not found: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const Map& all() const { return params_; }
  Map& all() { return params_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  void fill(T v) {
    for (auto& [_, t] : params_) {
      for (auto& x : t.mutable_data()) x = v;
    }
  }

  std::vector<io::Record> to_records() const {
    std::vector<io::Record> records;
    for (const auto& [name, t] : params_) {
      io::Record r;
      r.name = name;
      for (auto d : t.shape()) r.dims.push_back(static_cast<std::uint32_t>(d));
      r.values.assign(t.data().begin(), t.data().end());
      records.push_back(std::move(r));
    }
    return records;
  }

  // Every stored parameter must be present with an identical shape.
  void load_records(const std::vector<io::Record>& records) {
    std::map<std::string, const io::Record*> by_name;
    for (const auto& r : records) by_name[r.name] = &r;
    for (auto& [name, t] : params_) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw io::FormatError("checkpoint is missing parameter " + name);
      const io::Record& r = *it->second;
      Shape shape(r.dims.begin(), r.dims.end());
      if (shape != t.shape()) {
        throw io::FormatError("checkpoint parameter " + name + " has shape " + ag::shape_str(shape) +
                              ", model expects " + ag::shape_str(t.shape()));
      }
      auto dst = t.mutable_data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(r.values[i]);
    }
    if (by_name.size() != params_.size()) {
      for (const auto& [name, _] : by_name) {
        if (!params_.count(name)) throw io::FormatError("checkpoint has unexpected parameter " + name);
      }
    }
  }

  void save(const std::filesystem::path& path) const { io::write_container(path, to_records()); }
  void load(const std::filesystem::path& path) { load_records(io::read_container(path)); }

 private:
  Tensor<T> insert(const std::string& name, Tensor<T> t) {
    if (!params_.emplace(name, t).second) throw std::invalid_argument("duplicate parameter name: " + name);
    return t;
  }

  Map params_;
};

}  // namespace rspgrid::nn

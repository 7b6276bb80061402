#pragma once

// Segmentation IoU and velocity MAE restricted to observed cells.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rspgrid::metrics {

inline constexpr std::size_t kClasses = 4;
inline const std::array<const char*, kClasses> kClassNames{"free", "unknown", "occupied", "moving"};

// counts[gt][pred] over cells with observability > 0.
class ConfusionMatrix {
 public:
  void add(const std::vector<int>& pred, const std::vector<int>& gt, const std::vector<float>& observability);
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt][pred]; }

  // Absent when the class occurs in neither prediction nor ground truth.
  std::optional<double> iou(std::size_t cls) const;
  // Mean over the classes whose IoU is present; absent if none is.
  std::optional<double> mean_iou() const;

 private:
  std::array<std::array<std::uint64_t, kClasses>, kClasses> counts_{};
};

// Sum of |dvx| + |dvy| and cell count over observed cells whose
// ground-truth speed exceeds `min_speed` (strictly).
class VelocityError {
 public:
  explicit VelocityError(double min_speed = 0.0) : min_speed_(min_speed) {}
  void add(const std::vector<float>& pred, const std::vector<float>& gt, const std::vector<float>& observability);
  std::optional<double> mae() const;
  std::uint64_t cells() const { return cells_; }

 private:
  double min_speed_;
  double abs_sum_ = 0;
  std::uint64_t cells_ = 0;
};

struct IouReport {
  std::array<std::optional<double>, kClasses> per_class;
  std::optional<double> mean;
};

IouReport iou_metrics(const std::vector<int>& pred, const std::vector<int>& gt, const std::vector<float>& observability);

std::optional<double> velocity_mae(const std::vector<float>& pred, const std::vector<float>& gt,
                                   const std::vector<float>& observability, double min_speed = 0.0);

struct MetricsReport {
  IouReport iou;
  std::optional<double> mae;
  std::optional<double> mae_fast;
  std::size_t params = 0;
  double seconds = 0;
};

// Per-cell argmax over the last axis of [cells, classes] logits.
template <typename T>
std::vector<int> argmax_classes(const std::vector<T>& logits, std::size_t classes) {
  std::vector<int> out(logits.size() / classes);
  for (std::size_t c = 0; c < out.size(); ++c) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < classes; ++k) {
      if (logits[c * classes + k] > logits[c * classes + best]) best = k;
    }
    out[c] = static_cast<int>(best);
  }
  return out;
}

std::string csv_header();
std::string csv_row(std::size_t epoch, const MetricsReport& r, bool with_seconds);
std::string format_report(const MetricsReport& r);

}  // namespace rspgrid::metrics

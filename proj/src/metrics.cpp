#include "rspgrid/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace rspgrid::metrics {

namespace {

std::string value_or_na(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

void ConfusionMatrix::add(const std::vector<int>& pred, const std::vector<int>& gt,
                          const std::vector<float>& observability) {
  if (pred.size() != gt.size() || gt.size() != observability.size()) {
    throw std::invalid_argument("confusion matrix: size mismatch");
  }
  for (std::size_t c = 0; c < gt.size(); ++c) {
    if (!(observability[c] > 0)) continue;
    if (pred[c] < 0 || gt[c] < 0 || pred[c] >= static_cast<int>(kClasses) || gt[c] >= static_cast<int>(kClasses)) {
      throw std::invalid_argument("confusion matrix: label out of range");
    }
    ++counts_[static_cast<std::size_t>(gt[c])][static_cast<std::size_t>(pred[c])];
  }
}

std::optional<double> ConfusionMatrix::iou(std::size_t cls) const {
  std::uint64_t inter = counts_[cls][cls];
  std::uint64_t uni = 0;
  for (std::size_t k = 0; k < kClasses; ++k) uni += counts_[cls][k] + counts_[k][cls];
  uni -= inter;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<double> ConfusionMatrix::mean_iou() const {
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < kClasses; ++k) {
    if (auto v = iou(k)) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

void VelocityError::add(const std::vector<float>& pred, const std::vector<float>& gt,
                        const std::vector<float>& observability) {
  if (pred.size() != gt.size() || gt.size() != 2 * observability.size()) {
    throw std::invalid_argument("velocity error: size mismatch");
  }
  for (std::size_t c = 0; c < observability.size(); ++c) {
    if (!(observability[c] > 0)) continue;
    const double gx = gt[2 * c], gy = gt[2 * c + 1];
    const double speed = std::hypot(gx, gy);
    if (!(speed > 0) || !(speed > min_speed_)) continue;
    abs_sum_ += std::abs(static_cast<double>(pred[2 * c]) - gx) + std::abs(static_cast<double>(pred[2 * c + 1]) - gy);
    ++cells_;
  }
}

std::optional<double> VelocityError::mae() const {
  if (cells_ == 0) return std::nullopt;
  return abs_sum_ / (2.0 * static_cast<double>(cells_));
}

IouReport iou_metrics(const std::vector<int>& pred, const std::vector<int>& gt, const std::vector<float>& observability) {
  ConfusionMatrix cm;
  cm.add(pred, gt, observability);
  IouReport r;
  for (std::size_t k = 0; k < kClasses; ++k) r.per_class[k] = cm.iou(k);
  r.mean = cm.mean_iou();
  return r;
}

std::optional<double> velocity_mae(const std::vector<float>& pred, const std::vector<float>& gt,
                                   const std::vector<float>& observability, double min_speed) {
  VelocityError e(min_speed);
  e.add(pred, gt, observability);
  return e.mae();
}

std::string csv_header() { return "epoch,miou,iou_free,iou_unknown,iou_occupied,iou_moving,mae_vel,mae_vel_fast,params,seconds"; }

std::string csv_row(std::size_t epoch, const MetricsReport& r, bool with_seconds) {
  std::string row = std::to_string(epoch) + "," + value_or_na(r.iou.mean);
  for (const auto& v : r.iou.per_class) row += "," + value_or_na(v);
  row += "," + value_or_na(r.mae) + "," + value_or_na(r.mae_fast) + "," + std::to_string(r.params) + ",";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", with_seconds ? r.seconds : 0.0);
  return row + buf;
}

std::string format_report(const MetricsReport& r) {
  std::string s = "mIoU " + value_or_na(r.iou.mean);
  for (std::size_t k = 0; k < kClasses; ++k) s += std::string("  ") + kClassNames[k] + " " + value_or_na(r.iou.per_class[k]);
  s += "\nMAE " + value_or_na(r.mae) + "  MAE(fast) " + value_or_na(r.mae_fast) + "  params " + std::to_string(r.params);
  return s;
}

}  // namespace rspgrid::metrics

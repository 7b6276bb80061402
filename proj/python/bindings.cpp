// Python bindings: configs, simulation, projection, metrics, training.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rspgrid/config.hpp"
#include "rspgrid/dataset.hpp"
#include "rspgrid/gradcheck_suite.hpp"
#include "rspgrid/metrics.hpp"
#include "rspgrid/model.hpp"
#include "rspgrid/projection.hpp"
#include "rspgrid/trainer.hpp"

namespace py = pybind11;
using namespace rspgrid;
using ag::Tensor;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Array& a) {
  ag::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>::from(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor<double>& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

template <typename T>
py::array_t<T> shaped(const std::vector<T>& v, std::vector<py::ssize_t> shape) {
  py::array_t<T> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict frame_dict(const sim::GridFrame& f) {
  const auto x = static_cast<py::ssize_t>(f.x), y = static_cast<py::ssize_t>(f.y);
  std::vector<std::uint8_t> cls(f.gt_class.size());
  for (std::size_t i = 0; i < cls.size(); ++i) cls[i] = static_cast<std::uint8_t>(f.gt_class[i]);
  py::dict d;
  d["input"] = shaped(f.input, {x, y, static_cast<py::ssize_t>(f.s)});
  d["gt_class"] = shaped(cls, {x, y});
  d["gt_velocity"] = shaped(f.gt_velocity, {x, y, 2});
  d["observability"] = shaped(f.observability, {x, y});
  return d;
}

py::dict report_dict(const metrics::MetricsReport& r) {
  py::dict d;
  auto opt = [](const std::optional<double>& v) -> py::object { return v ? py::object(py::float_(*v)) : py::object(py::none()); };
  d["miou"] = opt(r.iou.mean);
  for (std::size_t k = 0; k < metrics::kClasses; ++k) d[(std::string("iou_") + metrics::kClassNames[k]).c_str()] = opt(r.iou.per_class[k]);
  d["mae_vel"] = opt(r.mae);
  d["mae_vel_fast"] = opt(r.mae_fast);
  d["params"] = r.params;
  return d;
}

GridGeometry geometry(std::size_t x, std::size_t y, double res, double fr) {
  GridGeometry g;
  g.x = x;
  g.y = y;
  g.resolution_m = res;
  g.frame_rate_hz = fr;
  g.validate();
  return g;
}

}  // namespace

PYBIND11_MODULE(_rspgrid, m) {
  m.doc() = "Recurrent state projection for occupancy and velocity grids";

  py::register_exception<cfg::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("parse_config", [](const std::string& text) { return cfg::to_text(cfg::parse_config(text)); },
        "Validate a key = value config and return its normalized text with defaults filled in.");
  m.def("config_pairs", [](const std::string& text) { return cfg::parse_pairs(cfg::to_text(cfg::parse_config(text))); });
  m.def("parameter_count", [](const std::string& text) { return zoo::parameter_count(cfg::parse_config(text).model); });
  m.def("parameter_names", [](const std::string& text) {
    zoo::Model<double> model(cfg::parse_config(text).model, 0);
    std::vector<std::pair<std::string, std::size_t>> out;
    for (const auto& [name, t] : model.params().all()) out.emplace_back(name, t.numel());
    return out;
  });

  m.def(
      "generate_sequence",
      [](const std::string& text, std::uint64_t seed) {
        const auto c = cfg::parse_config(text);
        py::list frames;
        for (const auto& f : sim::generate_sequence(c.sim, c.geom, seed)) frames.append(frame_dict(f));
        return frames;
      },
      py::arg("config"), py::arg("seed"));
  m.def("generate_dataset",
        [](const std::string& text, const std::filesystem::path& out, std::size_t count) {
          return data::generate_dataset(cfg::parse_config(text), out, count).entries.size();
        });

  m.def(
      "velocity_to_offset",
      [](const Array& v, double frame_rate_hz) {
        return to_array(proj::velocity_to_offset(to_tensor(v), geometry(v.shape(0), v.shape(1), 1.0, frame_rate_hz)));
      },
      py::arg("velocity"), py::arg("frame_rate_hz"));
  m.def(
      "project_state",
      [](const Array& payload, const Array& off, double resolution_m) {
        const auto g = geometry(payload.shape(0), payload.shape(1), resolution_m, 10.0);
        const auto r = proj::project_state(to_tensor(payload), to_tensor(off), g);
        return py::make_tuple(to_array(r.payload), to_array(r.mass));
      },
      py::arg("payload"), py::arg("offsets"), py::arg("resolution_m"),
      "Bilinear forward splat; returns (summed payload, mass).");
  m.def("max_capturable_speed", [](std::size_t k, double res, double fr) {
    return proj::max_capturable_speed(k, geometry(4, 4, res, fr));
  });

  m.def("iou_metrics", [](const std::vector<int>& pred, const std::vector<int>& gt, const std::vector<float>& obs) {
    const auto r = metrics::iou_metrics(pred, gt, obs);
    return py::make_tuple(std::vector<std::optional<double>>(r.per_class.begin(), r.per_class.end()), r.mean);
  });
  m.def("velocity_mae", &metrics::velocity_mae, py::arg("pred"), py::arg("gt"), py::arg("observability"),
        py::arg("min_speed") = 0.0);

  m.def(
      "gradcheck",
      [](const std::string& module) {
        std::vector<py::dict> out;
        for (const auto& r : gradcheck::run(module)) {
          py::dict d;
          d["module"] = r.module;
          d["name"] = r.name;
          d["max_rel_error"] = r.report.max_rel_error;
          d["tolerance"] = r.tolerance;
          d["ok"] = r.ok();
          out.push_back(d);
        }
        return out;
      },
      py::arg("module") = "");

  m.def(
      "train",
      [](const std::string& text, const std::filesystem::path& data_dir, const std::filesystem::path& out,
         bool deterministic) {
        train::TrainOptions opt;
        opt.deterministic = deterministic;
        const auto r = train::train(cfg::parse_config(text), data_dir, out, opt);
        py::list epochs;
        for (const auto& e : r.epochs) epochs.append(report_dict(e));
        return epochs;
      },
      py::arg("config"), py::arg("data"), py::arg("out"), py::arg("deterministic") = true);
  m.def(
      "evaluate",
      [](const std::string& text, const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
         const std::string& split) {
        return report_dict(train::evaluate(cfg::parse_config(text), checkpoint, data_dir, train::parse_split(split)));
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("data"), py::arg("split") = "eval");
}

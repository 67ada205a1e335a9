// Python bindings: configuration, pipeline stages, metrics and the pseudo-label filter math.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fpl/core/error.hpp"
#include "fpl/core/losses.hpp"
#include "fpl/core/metrics.hpp"
#include "fpl/pipeline/config.hpp"
#include "fpl/pipeline/stages.hpp"
#include "fpl/pseudolabel/filter.hpp"

namespace py = pybind11;
using namespace fpl;

namespace {

using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;

Dims3 dims_of(const py::buffer_info& b, int first) {
  if (b.ndim != first + 3) throw ShapeError("expected a " + std::to_string(first + 3) + "-D array");
  return {static_cast<int>(b.shape[first]), static_cast<int>(b.shape[first + 1]), static_cast<int>(b.shape[first + 2])};
}

LabelMap labels(const U8& a, int num_classes) {
  const auto b = a.request();
  const auto* p = static_cast<const std::uint8_t*>(b.ptr);
  LabelMap y(dims_of(b, 0), num_classes, {}, std::vector<std::uint8_t>(p, p + b.size));
  validate(y);
  return y;
}

ProbabilityMap probs(const F32& a) {
  const auto b = a.request();
  if (b.ndim != 4) throw ShapeError("expected a C x D x H x W array");
  const auto* p = static_cast<const float*>(b.ptr);
  return ProbabilityMap(dims_of(b, 1), static_cast<int>(b.shape[0]), std::vector<float>(p, p + b.size));
}

F32 to_array(const WeightMap& w) {
  const auto& d = w.dims();
  F32 out({d.depth, d.height, d.width});
  std::copy(w.values().begin(), w.values().end(), out.mutable_data());
  return out;
}

int classes_of(const U8& a, const U8& b) {
  int m = 1;
  for (const auto* arr : {&a, &b})
    for (py::ssize_t i = 0; i < arr->size(); ++i) m = std::max<int>(m, arr->data()[i]);
  return m + 1;
}

py::dict result_dict(const pipeline::StageResult& r) {
  py::dict d;
  d["stage"] = r.log.stage;
  d["variant"] = r.log.variant;
  d["skipped"] = r.skipped;
  d["stage_hash"] = r.log.stage_hash;
  d["dataset_hash"] = r.log.dataset_hash;
  d["artifacts"] = r.log.artifacts;
  d["wall_time_s"] = r.log.wall_time_s;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "FPL+ cross-modality segmentation pipeline";

  // translators are tried newest first, so the base class goes first
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<MissingStageError>(m, "MissingStageError", PyExc_RuntimeError);

  py::class_<pipeline::PipelineConfig>(m, "Config")
      .def(py::init<>())
      .def_static("from_toml", &pipeline::PipelineConfig::from_toml_string, py::arg("text"))
      .def_static("from_file", &pipeline::PipelineConfig::from_toml_file, py::arg("path"))
      .def("to_toml", &pipeline::PipelineConfig::to_toml)
      .def("stage_hash", &pipeline::PipelineConfig::stage_hash, py::arg("stage"))
      .def("config_hash", &pipeline::PipelineConfig::config_hash)
      .def("validate", &pipeline::PipelineConfig::validate)
      .def_readwrite("seed", &pipeline::PipelineConfig::seed)
      .def_property(
          "workdir", [](const pipeline::PipelineConfig& c) { return c.workdir.string(); },
          [](pipeline::PipelineConfig& c, const std::string& p) { c.workdir = p; });

  m.def("stage_names", &pipeline::stage_names);
  m.def(
      "run_stage",
      [](const std::string& stage, const pipeline::PipelineConfig& cfg, bool resume, bool force, const std::string& variant) {
        pipeline::RunOptions o{resume, force, pipeline::parse_variant(variant), nullptr};
        py::gil_scoped_release release;
        return pipeline::run_stage(stage, cfg, o);
      },
      py::arg("stage"), py::arg("config"), py::arg("resume") = false, py::arg("force") = false,
      py::arg("variant") = "fpl+");
  m.def(
      "run_all",
      [](const pipeline::PipelineConfig& cfg, bool resume, bool force, const std::string& variant) {
        pipeline::RunOptions o{resume, force, pipeline::parse_variant(variant), nullptr};
        std::vector<pipeline::StageResult> rs;
        {
          py::gil_scoped_release release;
          rs = pipeline::run_all(cfg, o);
        }
        py::list out;
        for (const auto& r : rs) out.append(result_dict(r));
        return out;
      },
      py::arg("config"), py::arg("resume") = false, py::arg("force") = false, py::arg("variant") = "fpl+");
  py::class_<pipeline::StageResult>(m, "StageResult")
      .def_property_readonly("stage", [](const pipeline::StageResult& r) { return r.log.stage; })
      .def_readonly("skipped", &pipeline::StageResult::skipped)
      .def_property_readonly("artifacts", [](const pipeline::StageResult& r) { return r.log.artifacts; })
      .def("as_dict", &result_dict);

  m.def(
      "dice",
      [](const U8& pred, const U8& gt, int cls) {
        const int C = std::max(cls + 1, classes_of(pred, gt));
        return dice_score(labels(pred, C), labels(gt, C), cls);
      },
      py::arg("pred"), py::arg("gt"), py::arg("cls") = 1);
  m.def(
      "assd",
      [](const U8& pred, const U8& gt, int cls, std::array<double, 3> spacing) {
        const int C = std::max(cls + 1, classes_of(pred, gt));
        return assd(labels(pred, C), labels(gt, C), cls, {spacing[0], spacing[1], spacing[2]});
      },
      py::arg("pred"), py::arg("gt"), py::arg("cls") = 1, py::arg("spacing") = std::array<double, 3>{1.0, 1.0, 1.0});
  m.def(
      "soft_dice_loss", [](const F32& p, const F32& t) { return soft_dice_loss(probs(p), probs(t)); }, py::arg("pred"),
      py::arg("target"));

  m.def(
      "entropy_map", [](const F32& pbar) { return to_array(pseudolabel::entropy_map(probs(pbar))); }, py::arg("pbar"));
  m.def(
      "variance_map",
      [](const std::vector<F32>& mc) {
        std::vector<ProbabilityMap> maps;
        for (const auto& a : mc) maps.push_back(probs(a));
        return to_array(pseudolabel::variance_map(maps));
      },
      py::arg("mc"));
  m.def(
      "uncertain_region_size", [](const F32& pbar, double e) { return pseudolabel::uncertain_region_size(probs(pbar), e); },
      py::arg("pbar"), py::arg("e"));
  m.def(
      "image_uncertainty",
      [](const std::vector<double>& v, const std::vector<long>& eta) { return pseudolabel::image_uncertainty(v, eta); },
      py::arg("v"), py::arg("eta"));
  m.def(
      "image_weights", [](const std::vector<double>& u) { return pseudolabel::image_weights(u); }, py::arg("u"));
}

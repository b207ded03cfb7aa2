#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "nerfmd/config.hpp"
#include "nerfmd/dataset.hpp"
#include "nerfmd/generator.hpp"
#include "nerfmd/image_io.hpp"
#include "nerfmd/pipeline.hpp"
#include "nerfmd/scoring.hpp"

namespace py = pybind11;
using namespace nerfmd;

namespace {

py::object json_to_py(const nlohmann::json& j) {
  py::module_ json = py::module_::import("json");
  return json.attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "radiance-field mirror detection pipeline";

  py::class_<PipelineConfig>(m, "PipelineConfig")
      .def(py::init<>())
      .def_static("load", &PipelineConfig::load, py::arg("path"))
      .def("canonical", &PipelineConfig::canonical)
      .def("hash", &PipelineConfig::hash)
      .def("scene_diameter", &PipelineConfig::scene_diameter)
      .def_readwrite("scene_width", &PipelineConfig::scene_width)
      .def_readwrite("scene_height", &PipelineConfig::scene_height)
      .def_readwrite("scene_train_views", &PipelineConfig::scene_train_views)
      .def_readwrite("scene_test_views", &PipelineConfig::scene_test_views)
      .def_readwrite("scene_mirrors", &PipelineConfig::scene_mirrors)
      .def_readwrite("stage1_iterations", &PipelineConfig::stage1_iterations)
      .def_readwrite("stage2_iterations", &PipelineConfig::stage2_iterations)
      .def_readwrite("score_threshold", &PipelineConfig::score_threshold)
      .def_readwrite("detect_k", &PipelineConfig::detect_k);

  m.def("generate", &run_generate, py::arg("config"), py::arg("seed"),
        py::arg("out_dir"), "Synthesize a dataset.");
  m.def("stage1", &run_stage1, py::arg("config"), py::arg("data_dir"),
        py::arg("run_dir"), "Train the radiance field.");
  m.def("detect", &run_detect, py::arg("run_dir"), "Fit mirror primitives.");
  m.def("stage2", &run_stage2, py::arg("run_dir"),
        "Jointly refine field and primitives.");
  m.def(
      "eval",
      [](const std::string& run_dir, const std::string& split) {
        return json_to_py(run_eval(run_dir, split));
      },
      py::arg("run_dir"), py::arg("split") = "test",
      "Evaluate a run; returns the summary as a dict.");
  m.def("render", &run_render, py::arg("run_dir"), py::arg("camera"),
        py::arg("out_png"), "Render one dataset view to a PNG.");

  m.def(
      "psnr_files",
      [](const std::string& a, const std::string& b) {
        return psnr(read_png(a), read_png(b));
      },
      py::arg("a"), py::arg("b"), "PSNR between two PNG files (capped 99 dB).");
  m.def(
      "mean_ssim_files",
      [](const std::string& a, const std::string& b) {
        return mean_ssim(read_png(a), read_png(b));
      },
      py::arg("a"), py::arg("b"), "Mean SSIM between two PNG files.");
}

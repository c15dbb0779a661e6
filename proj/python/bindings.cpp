#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cli.hpp"
#include "iadc/train.hpp"
#include "iadc/verify.hpp"

namespace py = pybind11;
using namespace iadc;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <typename T>
py::array_t<T> to_numpy(const Tensor<T>& t) {
  py::array_t<T> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

template <typename T>
Tensor<T> from_numpy(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() < 1 || a.ndim() > 4) throw ShapeError("arrays must have 1 to 4 axes");
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(shape, std::vector<T>(a.data(), a.data() + a.size()));
}

py::dict sample_dict(const Sample& s) {
  py::dict d;
  d["scene"] = s.scene_id;
  d["condition"] = s.condition;
  d["rgb"] = to_numpy(s.rgb);
  d["depth"] = to_numpy(s.depth_gt);
  py::list inst;
  for (const auto& m : s.instances) inst.append(to_numpy(m));
  d["instances"] = inst;
  return d;
}

Sample sample_from_dict(const py::dict& d) {
  Sample s;
  s.scene_id = d.contains("scene") ? d["scene"].cast<std::string>() : "scene";
  s.condition = d.contains("condition") ? d["condition"].cast<std::string>() : "clone";
  s.rgb = from_numpy<float>(d["rgb"].cast<FloatArray>());
  s.depth_gt = from_numpy<float>(d["depth"].cast<FloatArray>());
  for (auto m : d["instances"]) s.instances.push_back(from_numpy<float>(m.cast<FloatArray>()));
  return s;
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["mae"] = m.mae;
  d["rmse"] = m.rmse;
  d["n_valid"] = m.n_valid;
  return d;
}

// Model plus the run configuration it was built from.
struct PyModel {
  RunConfig config;
  Model<float> model;
  std::uint64_t step = 0;
};

py::dict forward(PyModel& m, const FloatArray& rgb, const FloatArray& depth_sparse, const FloatArray& validity,
                 const FloatArray& m_seg) {
  ModelInput<float> in{from_numpy<float>(rgb), from_numpy<float>(depth_sparse), from_numpy<float>(validity),
                       from_numpy<float>(m_seg)};
  ModelOutput<float> out;
  {
    py::gil_scoped_release release;
    NoGradScope<float> no_grad;
    out = m.model.forward(in, NormMode::eval);
  }
  py::dict d;
  d["d_init"] = to_numpy(out.d_init);
  d["d_final"] = to_numpy(out.d_final);
  d["f_att"] = to_numpy(out.f_att);
  d["attention"] = to_numpy(out.attention);
  return d;
}

}  // namespace

PYBIND11_MODULE(_iadc, m) {
  m.doc() = "Instance-aware sparse-to-dense depth completion (C++ core)";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("generate_scene", [](std::uint64_t seed, std::size_t h, std::size_t w, std::size_t objects) {
    return sample_dict(generate_scene(seed, h, w, objects));
  }, py::arg("seed"), py::arg("height"), py::arg("width"), py::arg("objects"));

  m.def("sparsify", [](const py::dict& sample, double keep_prob, std::uint64_t seed) {
    const SparseInput sp = sparsify(sample_from_dict(sample), keep_prob, seed);
    return py::make_tuple(to_numpy(sp.depth_sparse), to_numpy(sp.validity));
  }, py::arg("sample"), py::arg("keep_prob"), py::arg("seed"));

  m.def("merge_masks", [](const std::vector<FloatArray>& masks, std::size_t h, std::size_t w) {
    std::vector<Tensor<float>> t;
    for (const auto& a : masks) t.push_back(from_numpy<float>(a));
    return to_numpy(merge_masks(t, h, w));
  }, py::arg("masks"), py::arg("height"), py::arg("width"));

  m.def("evaluate", [](const DoubleArray& pred, const DoubleArray& gt) {
    if (pred.size() != gt.size()) throw ShapeError("pred and gt differ in size");
    return metrics_dict(evaluate<double>(std::span(pred.data(), pred.size()), std::span(gt.data(), gt.size())));
  }, py::arg("pred"), py::arg("gt"), "MAE/RMSE over pixels with gt > 0.");

  m.def("masked_weighted_l1", [](const DoubleArray& pred, const DoubleArray& gt, const DoubleArray& fg, double lambda_obj) {
    return masked_weighted_l1(from_numpy<double>(pred), from_numpy<double>(gt), from_numpy<double>(fg), lambda_obj).item();
  }, py::arg("pred"), py::arg("gt"), py::arg("foreground"), py::arg("lambda_obj") = 3.0);

  m.def("default_config", [] { return RunConfig{}.to_text(); }, "Default run configuration as key = value text.");

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const std::string& config_text, std::uint64_t seed) {
             PyModel p;
             p.config = RunConfig::from_text(config_text, "config");
             p.model = Model<float>(p.config.model, seed);
             return p;
           }),
           py::arg("config_text") = std::string(), py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& path) {
        LoadedModel lm = load_model(path);
        return PyModel{lm.config, std::move(lm.model), lm.step};
      }, py::arg("checkpoint"))
      .def_property_readonly("config_text", [](const PyModel& p) { return p.config.to_text(); })
      .def_property_readonly("step", [](const PyModel& p) { return p.step; })
      .def("parameter_count", [](PyModel& p) { return p.model.parameter_count(); })
      .def("parameters", [](PyModel& p) {
        py::dict d;
        for (auto& [name, t] : p.model.named_params()) d[py::str(name)] = to_numpy(t);
        return d;
      })
      .def("forward", &forward, py::arg("rgb"), py::arg("depth_sparse"), py::arg("validity"), py::arg("m_seg"),
           "Eval-mode forward on B×C×H×W float arrays.");

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = cli::run(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs an iadc subcommand; returns (exit_code, stdout, stderr).");

  m.def("check_op_gradients", [] {
    py::dict d;
    for (const auto& r : check_op_gradients()) d[py::str(r.op)] = r.max_rel_error;
    return d;
  });
  m.def("check_pipeline_gradient", [] {
    const PipelineGradReport r = check_pipeline_gradient();
    return py::make_tuple(r.max_rel_error, r.coordinates);
  });
}

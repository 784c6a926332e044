#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "xmodal/autodiff.hpp"
#include "xmodal/commands.hpp"
#include "xmodal/config.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/synth.hpp"
#include "xmodal/trainer.hpp"

namespace py = pybind11;
using namespace xmodal;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  Matrix m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + m.size(), m.data.begin());
  return m;
}

Array to_array(const Matrix& m) {
  Array out({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

RunConfig config_from(const std::string& text) {
  RunConfig cfg = parse_config_text(text);
  cfg.finalize();
  return cfg;
}

py::dict set_to_dict(const SampleSet& s) {
  std::vector<int> domains;
  domains.reserve(s.size());
  for (Domain d : s.domain_labels) domains.push_back(static_cast<int>(d));
  py::dict out;
  out["features"] = to_array(s.features);
  out["identity"] = py::array_t<std::uint32_t>(s.identity_labels.size(), s.identity_labels.data());
  out["domain"] = py::array_t<int>(domains.size(), domains.data());
  return out;
}

double pair_loss(Metric metric, const std::vector<double>& d2, const std::vector<int>& y,
                 const MarginConfig& cfg) {
  ad::Tape t;
  auto d = t.leaf(Matrix(d2.size(), 1, d2));
  return metric_loss(metric, d, y, cfg).value()(0, 0);
}

MarginConfig margin(double r1, double r2, double delta) {
  MarginConfig cfg;
  cfg.r1 = r1;
  cfg.r2 = r2;
  cfg.delta = delta;
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_xmodal, m) {
  m.doc() = "Cross-modal identity embedding trainer";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("effective_config", [](const std::string& text) { return config_from(text).to_text(); },
        py::arg("config") = "");

  m.def(
      "generate",
      [](const std::string& text) {
        auto data = generate(config_from(text).synth);
        py::dict out;
        out["train"] = set_to_dict(data.train);
        out["test"] = set_to_dict(data.test);
        return out;
      },
      py::arg("config") = "");

  m.def("gen", [](const std::string& text, const std::filesystem::path& out) { cli::cmd_gen(config_from(text), out); },
        py::arg("config"), py::arg("out"));

  m.def("beta_indicator", [](double d2, int y, double r1, double r2) {
    return beta_indicator(d2, y, margin(r1, r2, 0.5));
  }, py::arg("d2"), py::arg("y"), py::arg("r1") = 5.0, py::arg("r2") = 100.0);

  m.def("lmm_loss",
        [](const std::vector<double>& d2, const std::vector<int>& y, double r1, double r2) {
          return pair_loss(Metric::kLmm, d2, y, margin(r1, r2, 0.5));
        },
        py::arg("d2"), py::arg("y"), py::arg("r1") = 5.0, py::arg("r2") = 100.0);

  m.def("apm_loss",
        [](const std::vector<double>& d2, const std::vector<int>& y, double r1, double r2, double delta) {
          return pair_loss(Metric::kApm, d2, y, margin(r1, r2, delta));
        },
        py::arg("d2"), py::arg("y"), py::arg("r1") = 5.0, py::arg("r2") = 100.0, py::arg("delta") = 0.5);

  m.def(
      "train",
      [](const std::string& text, const std::filesystem::path& data, const std::filesystem::path& out,
         bool resume) {
        TrainResult res;
        {
          py::gil_scoped_release release;
          res = cli::cmd_train(config_from(text), data, out, resume);
        }
        py::dict d;
        d["completed_stage"] = res.completed_stage;
        d["resumed_from"] = res.resumed_from;
        d["trajectories"] = std::vector<std::vector<double>>(res.trajectories.begin(), res.trajectories.end());
        return d;
      },
      py::arg("config"), py::arg("data"), py::arg("out"), py::arg("resume") = false);

  m.def(
      "evaluate",
      [](const std::string& text, const std::filesystem::path& checkpoint, const std::filesystem::path& data,
         const std::filesystem::path& out) {
        EvalReport rep;
        {
          py::gil_scoped_release release;
          rep = cli::cmd_eval(config_from(text), checkpoint, data, out, std::nullopt);
        }
        return report_to_json(rep);
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("data"), py::arg("out"));

  m.def("inspect", [](const std::filesystem::path& p) { return cli::cmd_inspect(p); }, py::arg("checkpoint"));

  m.def(
      "load_set", [](const std::filesystem::path& p) { return set_to_dict(load_set(p)); }, py::arg("path"));

  m.def(
      "cosine_scores", [](const Array& probe, const Array& gallery) {
        return to_array(cosine_scores(to_matrix(probe), to_matrix(gallery)));
      },
      py::arg("probe"), py::arg("gallery"));

  m.def(
      "rank1",
      [](const Array& scores, const std::vector<std::uint32_t>& probe_ids,
         const std::vector<std::uint32_t>& gallery_ids) { return rank1(to_matrix(scores), probe_ids, gallery_ids); },
      py::arg("scores"), py::arg("probe_ids"), py::arg("gallery_ids"));

  m.def(
      "roc_and_vr",
      [](const Array& scores, const std::vector<std::uint32_t>& probe_ids,
         const std::vector<std::uint32_t>& gallery_ids, const std::vector<double>& far_targets) {
        auto r = roc_and_vr(to_matrix(scores), probe_ids, gallery_ids, far_targets);
        py::list roc, vr;
        for (const auto& p : r.roc) roc.append(py::make_tuple(p.far, p.vr));
        for (const auto& v : r.vr_at) {
          py::dict d;
          d["far_target"] = v.far_target;
          d["vr"] = v.vr;
          d["achieved_far"] = v.achieved_far;
          d["threshold"] = v.threshold ? py::object(py::float_(*v.threshold)) : py::object(py::none());
          vr.append(d);
        }
        py::dict out;
        out["roc"] = roc;
        out["vr_at"] = vr;
        out["n_genuine"] = r.n_genuine;
        out["n_impostor"] = r.n_impostor;
        return out;
      },
      py::arg("scores"), py::arg("probe_ids"), py::arg("gallery_ids"),
      py::arg("far_targets") = std::vector<double>{0.001, 0.01});
}

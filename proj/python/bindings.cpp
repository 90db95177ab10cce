#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <tuple>
#include <vector>

#include "ivapcal/data.hpp"
#include "ivapcal/error.hpp"
#include "ivapcal/isotonic.hpp"
#include "ivapcal/metrics.hpp"
#include "ivapcal/synth.hpp"
#include "ivapcal/temperature.hpp"
#include "ivapcal/venn_abers.hpp"

namespace py = pybind11;
using namespace ivapcal;

namespace {

std::vector<ScoredExample> zip_scored(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  std::vector<ScoredExample> out;
  out.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out.push_back({scores[i], labels[i]});
  return out;
}

py::tuple as_tuple(const venn_abers::Multiprobability& mp) { return py::make_tuple(mp.p0, mp.p1); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of the ivapcal calibration toolkit";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::enum_<ScoreKind>(m, "ScoreKind")
      .value("softmax2", ScoreKind::softmax2)
      .value("softmaxK", ScoreKind::softmaxK);

  py::class_<LogitRecord>(m, "LogitRecord")
      .def(py::init<>())
      .def(py::init([](std::string id, double u_pos, double u_neg, int label) {
             LogitRecord r;
             r.id = std::move(id);
             r.u_pos = u_pos;
             r.u_neg = u_neg;
             r.label = label;
             validate(r);
             return r;
           }),
           py::arg("id"), py::arg("u_pos"), py::arg("u_neg"), py::arg("label"))
      .def_readwrite("id", &LogitRecord::id)
      .def_readwrite("u_pos", &LogitRecord::u_pos)
      .def_readwrite("u_neg", &LogitRecord::u_neg)
      .def_readwrite("full_logits", &LogitRecord::full_logits)
      .def_readwrite("pos_index", &LogitRecord::pos_index)
      .def_readwrite("neg_index", &LogitRecord::neg_index)
      .def_readwrite("label", &LogitRecord::label)
      .def_readwrite("true_posterior", &LogitRecord::true_posterior)
      .def("__eq__", [](const LogitRecord& a, const LogitRecord& b) { return a == b; })
      .def("__repr__", [](const LogitRecord& r) { return "LogitRecord(" + data::to_jsonl_line(r) + ")"; });

  m.def("softmax2", &data::softmax2, py::arg("u_pos"), py::arg("u_neg"), py::arg("tau") = 1.0);
  m.def(
      "softmax_k", [](const std::vector<double>& logits, std::size_t index, double tau) {
        return data::softmax_k(logits, index, tau);
      },
      py::arg("logits"), py::arg("index"), py::arg("tau") = 1.0);
  m.def(
      "transform_scores",
      [](const std::vector<LogitRecord>& recs, ScoreKind kind, double tau) {
        const auto s = data::transform_scores(recs, kind, tau);
        return py::make_tuple(data::scores_of(s), data::labels_of(s));
      },
      py::arg("records"), py::arg("kind") = ScoreKind::softmax2, py::arg("tau") = 1.0,
      "Returns (scores, labels).");
  m.def(
      "split",
      [](const std::vector<LogitRecord>& recs, std::uint64_t seed, double fraction) {
        auto s = data::split(recs, {seed, fraction});
        return py::make_tuple(std::move(s.calibration), std::move(s.test));
      },
      py::arg("records"), py::arg("seed") = 0, py::arg("calibration_fraction") = 0.2,
      "Returns (calibration, test).");

  m.def(
      "generate",
      [](std::size_t n, double prior, double mu, double sigma, std::uint64_t seed) {
        return synth::generate({n, prior, mu, sigma, seed});
      },
      py::arg("n") = 1000, py::arg("prior") = 0.5, py::arg("mu") = 1.0, py::arg("sigma") = 1.0,
      py::arg("seed") = 0);
  m.def(
      "planted_temperature",
      [](double mu, double sigma) { return synth::planted_temperature({1, 0.5, mu, sigma, 0}); }, py::arg("mu"),
      py::arg("sigma"));

  m.def(
      "fit_pava",
      [](const std::vector<double>& scores, const std::vector<double>& values, std::vector<double> weights) {
        if (weights.empty()) weights.assign(scores.size(), 1.0);
        if (values.size() != scores.size() || weights.size() != scores.size())
          throw ValidationError("scores, values and weights differ in length");
        std::vector<isotonic::WeightedPoint> pts;
        for (std::size_t i = 0; i < scores.size(); ++i) pts.push_back({scores[i], values[i], weights[i]});
        return isotonic::fit_pava(pts).values;
      },
      py::arg("scores"), py::arg("values"), py::arg("weights") = std::vector<double>{},
      "Weighted non-decreasing least-squares fit; scores must be strictly increasing.");

  m.def(
      "merge", [](double p0, double p1) { return venn_abers::merge({p0, p1}); }, py::arg("p0"), py::arg("p1"));
  m.def(
      "predict_naive",
      [](const std::vector<double>& scores, const std::vector<int>& labels, double z) {
        return as_tuple(venn_abers::predict_naive(zip_scored(scores, labels), z));
      },
      py::arg("scores"), py::arg("labels"), py::arg("z"), "Reference (p0, p1) by refitting per query.");

  py::class_<venn_abers::IvapCalibrator>(m, "IvapCalibrator")
      .def_static(
          "fit",
          [](const std::vector<double>& scores, const std::vector<int>& labels) {
            return venn_abers::IvapCalibrator::fit(zip_scored(scores, labels));
          },
          py::arg("scores"), py::arg("labels"))
      .def(
          "predict", [](const venn_abers::IvapCalibrator& c, double z) { return as_tuple(c.predict(z)); },
          py::arg("z"), "Returns (p0, p1).")
      .def(
          "predict_merged",
          [](const venn_abers::IvapCalibrator& c, const std::vector<double>& z) {
            std::vector<double> out;
            for (const auto& p : c.predict_batch(z)) out.push_back(p.merged);
            return out;
          },
          py::arg("z"))
      .def(
          "predict_batch",
          [](const venn_abers::IvapCalibrator& c, const std::vector<double>& z) {
            std::vector<std::tuple<double, double, double>> out;
            for (const auto& p : c.predict_batch(z)) out.emplace_back(p.mp.p0, p.mp.p1, p.merged);
            return out;
          },
          py::arg("z"), "Returns a list of (p0, p1, merged).")
      .def_property_readonly("scores", &venn_abers::IvapCalibrator::scores)
      .def_property_readonly("calibration_size", &venn_abers::IvapCalibrator::calibration_size)
      .def_property_readonly("degenerate", &venn_abers::IvapCalibrator::degenerate)
      .def("to_json", [](const venn_abers::IvapCalibrator& c) { return c.to_json().dump(); })
      .def_static("from_json", [](const std::string& text) {
        nlohmann::json doc;
        try {
          doc = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
          throw ValidationError(e.what());
        }
        return venn_abers::IvapCalibrator::from_json(doc);
      });

  m.def(
      "fit_temperature",
      [](const std::vector<LogitRecord>& recs, ScoreKind kind, double lo, double hi) {
        temperature::FitOptions opt;
        opt.bounds = {lo, hi};
        const auto model = temperature::fit_temperature(recs, kind, opt);
        return py::make_tuple(model.tau_hat, model.final_nll);
      },
      py::arg("records"), py::arg("kind") = ScoreKind::softmax2, py::arg("lo") = 0.01, py::arg("hi") = 1000.0,
      "Returns (tau_hat, mean NLL at tau_hat).");

  m.def(
      "ece",
      [](const std::vector<double>& p, const std::vector<int>& y, int bins) { return metrics::ece(p, y, bins); },
      py::arg("preds"), py::arg("labels"), py::arg("bins") = metrics::kDefaultBins);
  m.def(
      "brier", [](const std::vector<double>& p, const std::vector<int>& y) { return metrics::brier(p, y); },
      py::arg("preds"), py::arg("labels"));
  m.def(
      "auc", [](const std::vector<double>& s, const std::vector<int>& y) { return metrics::auc(s, y); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "f1_macro",
      [](const std::vector<double>& p, const std::vector<int>& y, double threshold) {
        return metrics::f1_macro(p, y, threshold);
      },
      py::arg("preds"), py::arg("labels"), py::arg("threshold") = 0.5);
  m.def(
      "evaluate",
      [](const std::vector<double>& p, const std::vector<int>& y, int bins) {
        const auto text = metrics::to_json(metrics::evaluate_all(p, p, y, bins)).dump();
        return py::module_::import("json").attr("loads")(text);
      },
      py::arg("preds"), py::arg("labels"), py::arg("bins") = metrics::kDefaultBins,
      "Metrics report as a dict.");
}

#include "spotkit/cli.hpp"
#include "spotkit/data/manifest.hpp"
#include "spotkit/data/synthetic.hpp"
#include "spotkit/evaluation.hpp"
#include "spotkit/inference.hpp"
#include "spotkit/model.hpp"

#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <sstream>

namespace py = pybind11;
using namespace spotkit;

namespace {

// Keep the Python side free of nlohmann types: configs and reports cross the
// boundary as JSON text and are decoded by the package __init__.
std::string generate(const std::string& config_json, const std::string& out_dir) {
  data::SyntheticConfig cfg = nlohmann::json::parse(config_json).get<data::SyntheticConfig>();
  data::generate_synthetic(cfg, out_dir);
  return (std::filesystem::path(out_dir) / "manifest.json").string();
}

std::string evaluate(const std::string& manifest_path, const std::string& predictions_path,
                     const std::vector<int>& deltas, const std::vector<std::string>& videos) {
  const auto manifest = data::load_manifest(manifest_path);
  const auto preds = inference::read_predictions(predictions_path);
  return evaluation::map_at_deltas(preds, manifest, deltas, videos).to_json().dump();
}

py::array_t<double> predict(const std::string& checkpoint, py::array frames, int clip_len) {
  auto loaded = load_checkpoint(checkpoint);
  if (frames.ndim() != 4) throw Error("frames must be [N, H, W, C]");
  data::VideoData v;
  v.num_frames = static_cast<int>(frames.shape(0));
  v.height = static_cast<int>(frames.shape(1));
  v.width = static_cast<int>(frames.shape(2));
  v.channels = static_cast<int>(frames.shape(3));
  if (py::isinstance<py::array_t<std::uint8_t>>(frames)) {
    auto a = py::array_t<std::uint8_t, py::array::c_style>::ensure(frames);
    v.bytes.assign(a.data(), a.data() + a.size());
  } else {
    auto a = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(frames);
    v.values.assign(a.data(), a.data() + a.size());
  }
  ScoreSeq s;
  {
    py::gil_scoped_release release;
    s = inference::predict_video(*loaded.model, v, clip_len);
  }
  py::array_t<double> out({s.scores.rows(), s.scores.cols()});
  std::memcpy(out.mutable_data(), s.scores.data(), sizeof(double) * static_cast<std::size_t>(s.scores.size()));
  return out;
}

std::size_t param_count(const std::string& shift, const std::string& head, int num_classes) {
  BackboneConfig bb = default_backbone();
  bb.shift_mode = nn::parse_shift_mode(shift);
  HeadConfig hc;
  hc.kind = nn::parse_head_kind(head);
  hc.num_classes = num_classes;
  SpotModel<float> m(bb, hc);
  return m.parameter_count();
}

py::tuple run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = cli::run(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_spotkit, m) {
  m.doc() = "Precise temporal event spotting";

  py::register_exception<Error>(m, "SpotkitError", PyExc_ValueError);

  py::class_<SpotPrediction>(m, "Prediction")
      .def(py::init([](std::string video, int frame, int class_id, double score) {
             return SpotPrediction{std::move(video), frame, class_id, score};
           }),
           py::arg("video"), py::arg("frame"), py::arg("class_id"), py::arg("score"))
      .def_readwrite("video", &SpotPrediction::video_id)
      .def_readwrite("frame", &SpotPrediction::frame)
      .def_readwrite("class_id", &SpotPrediction::class_id)
      .def_readwrite("score", &SpotPrediction::score)
      .def(py::self == py::self)
      .def("__repr__", [](const SpotPrediction& p) {
        return "Prediction(" + p.video_id + ", frame=" + std::to_string(p.frame) +
               ", class_id=" + std::to_string(p.class_id) + ", score=" + std::to_string(p.score) + ")";
      });

  py::class_<EventLabel>(m, "Event")
      .def(py::init([](std::string video, int frame, int class_id) {
             return EventLabel{std::move(video), frame, class_id};
           }),
           py::arg("video"), py::arg("frame"), py::arg("class_id"))
      .def_readwrite("video", &EventLabel::video_id)
      .def_readwrite("frame", &EventLabel::frame)
      .def_readwrite("class_id", &EventLabel::class_id);

  m.def("average_precision", &evaluation::average_precision, py::arg("predictions"), py::arg("events"),
        py::arg("delta"), "AP of one class; None when there are neither events nor predictions.");
  m.def("nms", &inference::nms, py::arg("predictions"), py::arg("window"));
  m.def("plan_windows", [](int n, int l) { return inference::plan_windows(n, l).starts; }, py::arg("num_frames"),
        py::arg("clip_len"));
  m.def("tolerance_radius", &evaluation::tolerance_radius, py::arg("fps"), py::arg("seconds"));
  m.def("shift_channel_count", &nn::shift_channel_count, py::arg("channels"), py::arg("num") = 1,
        py::arg("den") = 4);
  m.def("parameter_count", &param_count, py::arg("shift") = "gsm", py::arg("head") = "bigru",
        py::arg("num_classes") = 3);

  m.def("_generate_synthetic", &generate);
  m.def("_evaluate", &evaluate);
  m.def("predict_scores", &predict, py::arg("checkpoint"), py::arg("frames"), py::arg("clip_len") = 100,
        "Per-frame class probabilities [N, K + 1] for one video.");
  m.def("run_cli", &run_cli, py::arg("args"), "Runs the command line tool in-process: (exit code, stdout, stderr).");
}

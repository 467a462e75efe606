#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <string>
#include <vector>

#include "sbl/anchors.hpp"
#include "sbl/cli.hpp"
#include "sbl/data.hpp"
#include "sbl/evaluation.hpp"
#include "sbl/geometry.hpp"
#include "sbl/losses.hpp"
#include "sbl/model.hpp"
#include "sbl/salience.hpp"

namespace py = pybind11;
using namespace sbl;

namespace {

// HxWx3 float array in [0, 1] to an Image.
Image image_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("expected an HxWx3 array");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

py::array_t<float> image_to_array(const Image& img) {
  py::array_t<float> out({img.height, img.width, 3});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

py::array_t<double> boxes_to_array(const std::vector<Box>& boxes) {
  py::array_t<double> out({static_cast<py::ssize_t>(boxes.size()), py::ssize_t{4}});
  auto v = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto r = static_cast<py::ssize_t>(i);
    v(r, 0) = boxes[i].x_min;
    v(r, 1) = boxes[i].y_min;
    v(r, 2) = boxes[i].x_max;
    v(r, 3) = boxes[i].y_max;
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(pysbl, m) {
  m.doc() = "Salience biased loss detector toolkit";

  py::class_<Box>(m, "Box")
      .def(py::init<>())
      .def(py::init<double, double, double, double>(), py::arg("x_min"), py::arg("y_min"), py::arg("x_max"),
           py::arg("y_max"))
      .def_readwrite("x_min", &Box::x_min)
      .def_readwrite("y_min", &Box::y_min)
      .def_readwrite("x_max", &Box::x_max)
      .def_readwrite("y_max", &Box::y_max)
      .def_property_readonly("area", &Box::area)
      .def("__eq__", [](const Box& a, const Box& b) { return a == b; })
      .def("__repr__", [](const Box& b) {
        return "Box(" + std::to_string(b.x_min) + ", " + std::to_string(b.y_min) + ", " + std::to_string(b.x_max) +
               ", " + std::to_string(b.y_max) + ")";
      });

  py::class_<Detection>(m, "Detection")
      .def(py::init<>())
      .def(py::init<Box, double, int>(), py::arg("box"), py::arg("score"), py::arg("class_id") = 0)
      .def_readwrite("box", &Detection::box)
      .def_readwrite("score", &Detection::score)
      .def_readwrite("class_id", &Detection::class_id);

  py::class_<BoxDelta>(m, "BoxDelta")
      .def(py::init<>())
      .def(py::init<double, double, double, double>())
      .def_readwrite("tx", &BoxDelta::tx)
      .def_readwrite("ty", &BoxDelta::ty)
      .def_readwrite("tw", &BoxDelta::tw)
      .def_readwrite("th", &BoxDelta::th);

  m.def("iou", &iou, py::arg("a"), py::arg("b"));
  m.def(
      "nms", [](const std::vector<Detection>& d, double thr) { return nms(d, thr); }, py::arg("detections"),
      py::arg("iou_threshold"));
  m.def("encode_deltas", &encode_deltas, py::arg("anchor"), py::arg("target"));
  m.def(
      "decode_deltas", [](const Box& a, const BoxDelta& d) { return decode_deltas(a, d); }, py::arg("anchor"),
      py::arg("delta"));

  py::class_<FocalConfig>(m, "FocalConfig")
      .def(py::init<>())
      .def_readwrite("alpha", &FocalConfig::alpha)
      .def_readwrite("gamma", &FocalConfig::gamma)
      .def_readwrite("alpha_balanced", &FocalConfig::alpha_balanced);

  m.def("cross_entropy", &cross_entropy, py::arg("p"), py::arg("y"));
  m.def("focal_loss", &focal_loss, py::arg("p"), py::arg("y"), py::arg("config") = FocalConfig{});
  m.def("focal_loss_grad_logit", &focal_loss_grad_logit, py::arg("logit"), py::arg("y"),
        py::arg("config") = FocalConfig{});
  m.def("salience_biased_loss", &salience_biased_loss, py::arg("classification_loss"), py::arg("s_prime"));
  m.def("smooth_l1", &smooth_l1, py::arg("pred"), py::arg("target"), py::arg("beta") = 1.0);

  py::class_<AnchorConfig>(m, "AnchorConfig")
      .def(py::init<>())
      .def_readwrite("aspect_ratios", &AnchorConfig::aspect_ratios)
      .def_readwrite("scale_multipliers", &AnchorConfig::scale_multipliers)
      .def_readwrite("base_sizes", &AnchorConfig::base_sizes)
      .def_readwrite("strides", &AnchorConfig::strides);
  m.def(
      "generate_anchors",
      [](int w, int h, const AnchorConfig& cfg) { return boxes_to_array(generate_anchors(w, h, cfg).boxes); },
      py::arg("width"), py::arg("height"), py::arg("config") = AnchorConfig{},
      "Anchors as an Nx4 array of (x_min, y_min, x_max, y_max).");

  m.def(
      "average_precision",
      [](const std::vector<Detection>& dets, const std::vector<Box>& gts, double thr, const std::string& interp) {
        return average_precision(dets, gts, thr, parse_interpolation(interp));
      },
      py::arg("detections"), py::arg("ground_truth"), py::arg("iou_threshold") = 0.5,
      py::arg("interpolation") = "11point");

  m.def(
      "salience",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& image, const std::string& tap) {
        static const ConvStackExtractor extractor;
        return estimate_salience(image_from_array(image), extractor, parse_tap(tap));
      },
      py::arg("image"), py::arg("tap") = "C2", "Mean activation of the default frozen extractor.");
  m.def(
      "normalize_salience",
      [](double raw, double lo, double hi, double new_min, double new_max) {
        SalienceStats st;
        st.taps[Tap::kC2] = {lo, hi};
        st.new_min = new_min;
        st.new_max = new_max;
        return normalize_salience(raw, st, Tap::kC2);
      },
      py::arg("raw"), py::arg("min"), py::arg("max"), py::arg("new_min") = 0.5, py::arg("new_max") = 1.0);
  m.def("salience_call_count", &salience_call_count);

  m.def(
      "synthesize",
      [](int num_images, int image_size, std::uint64_t seed, std::vector<double> levels) {
        SynthConfig cfg;
        cfg.num_images = num_images;
        cfg.image_size = image_size;
        cfg.seed = seed;
        cfg.complexity_levels = std::move(levels);
        const Dataset ds = synthesize_dataset(cfg);
        py::list out;
        for (const auto& img : ds.images) {
          py::dict d;
          d["id"] = img.id;
          d["image"] = image_to_array(img.pixels);
          std::vector<Box> boxes;
          std::vector<int> classes;
          for (const auto& o : img.objects) {
            boxes.push_back(o.box);
            classes.push_back(o.class_id);
          }
          d["boxes"] = boxes_to_array(boxes);
          d["classes"] = classes;
          d["complexity"] = img.complexity.value_or(0.0);
          out.append(d);
        }
        return out;
      },
      py::arg("num_images"), py::arg("image_size") = 128, py::arg("seed") = 0,
      py::arg("complexity_levels") = std::vector<double>{0.1, 0.9},
      "Synthetic images as dicts with id, image (HxWx3), boxes (Nx4), classes and complexity.");

  py::class_<LoadedCheckpoint>(m, "Checkpoint")
      .def_property_readonly("step", [](const LoadedCheckpoint& c) { return c.step; })
      .def_property_readonly("input_size", [](const LoadedCheckpoint& c) { return c.detector.config().input_size; })
      .def(
          "predict",
          [](const LoadedCheckpoint& c, const py::array_t<float, py::array::c_style | py::array::forcecast>& image,
             double score_threshold, double nms_threshold) {
            return predict(c.detector, image_from_array(image), score_threshold, nms_threshold);
          },
          py::arg("image"), py::arg("score_threshold") = 0.05, py::arg("nms_threshold") = 0.3);
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def(
      "run_cli", [](const std::vector<std::string>& args) { return run_cli(args); }, py::arg("args"),
      "Runs a command as the sbl tool would and returns its exit code.");
}

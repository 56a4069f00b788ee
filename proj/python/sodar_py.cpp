#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "sodar/config.hpp"
#include "sodar/flops.hpp"
#include "sodar/mask.hpp"
#include "sodar/model.hpp"
#include "sodar/parallel.hpp"
#include "sodar/postprocess.hpp"
#include "sodar/scene.hpp"

namespace py = pybind11;
using namespace sodar;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const GridTensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

GridTensor from_numpy(const F64Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return GridTensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<uint8_t> mask_to_numpy(const BinaryMask& m) {
  py::array_t<uint8_t> out({m.height, m.width});
  std::copy(m.pixels.begin(), m.pixels.end(), out.mutable_data());
  return out;
}

BinaryMask mask_from_numpy(const U8Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("mask must be 2-D");
  BinaryMask m(a.shape(0), a.shape(1));
  for (py::ssize_t k = 0; k < a.size(); ++k) m.pixels[static_cast<size_t>(k)] = a.data()[k] != 0;
  return m;
}

RunConfig config_from_text(const std::string& text) {
  std::istringstream is(text);
  RunConfig cfg = parse_config(is);
  cfg.validate();
  return cfg;
}

py::dict scene_dict(const Scene& s) {
  py::dict d;
  d["seed"] = s.seed;
  d["image"] = to_numpy(s.image);
  py::list classes, masks;
  for (const auto& inst : s.instances) {
    classes.append(inst.class_id);
    masks.append(mask_to_numpy(inst.mask));
  }
  d["classes"] = classes;
  d["masks"] = masks;
  return d;
}

class PyModel {
 public:
  PyModel(const std::string& config, uint64_t seed) : cfg_(config_from_text(config)), model_(seeded(cfg_, seed)) {}

  py::list predict(const F64Array& image) const {
    py::list out;
    for (const auto& d : sodar::predict(model_, from_numpy(image), cfg_.decode)) {
      py::dict r;
      r["class_id"] = d.class_id;
      r["score"] = d.score;
      r["mask"] = mask_to_numpy(d.mask);
      out.append(r);
    }
    return out;
  }

  int64_t parameter_count() const { return sodar::parameter_count(model_.params()); }
  std::string config() const { return dump_config(cfg_); }

 private:
  static ModelConfig seeded(const RunConfig& cfg, uint64_t seed) {
    ModelConfig m = cfg.model;
    m.init_seed = seed;
    return m;
  }
  RunConfig cfg_;
  ToyModel model_;
};

}  // namespace

PYBIND11_MODULE(sodar, m) {
  m.doc() = "SODAR toy instance segmentation";

  m.def("generate_scene", [](uint64_t seed, int64_t index, int64_t size, int64_t max_objects) {
    return scene_dict(generate_scene(seed, index, size, size, max_objects));
  }, py::arg("seed"), py::arg("index"), py::arg("size") = 64, py::arg("max_objects") = 4);

  m.def("mask_iou", [](const U8Array& a, const U8Array& b) { return mask_iou(mask_from_numpy(a), mask_from_numpy(b)); });
  m.def("rle_encode", [](const U8Array& a) { return rle_encode(mask_from_numpy(a)); });
  m.def("rle_decode", [](const std::vector<int64_t>& counts, int64_t h, int64_t w) {
    return mask_to_numpy(rle_decode(counts, h, w));
  });

  m.def("normalize_config", [](const std::string& text) { return dump_config(config_from_text(text)); },
        "Parses key=value text and returns the full config.");
  m.def("config_keys", &config_keys);

  m.def("flops_csv", [](const std::string& variant_grids, const std::string& base_grids) {
    const AggregationConfig agg;
    return flops_table_csv(flops_mask_head(parse_grids(base_grids), agg, {}),
                           flops_mask_head(parse_grids(variant_grids), agg, {}));
  }, py::arg("variant_grids"), py::arg("base_grids") = "default");

  m.def("thread_budget", &thread_budget);

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, uint64_t>(), py::arg("config") = "", py::arg("seed") = 1)
      .def("predict", &PyModel::predict, py::arg("image"))
      .def_property_readonly("parameter_count", &PyModel::parameter_count)
      .def_property_readonly("config", &PyModel::config);
}

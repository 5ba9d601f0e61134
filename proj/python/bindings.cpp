#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mancount/attention.hpp"
#include "mancount/checkpoint.hpp"
#include "mancount/gradcheck.hpp"
#include "mancount/harness.hpp"
#include "mancount/lar.hpp"
#include "mancount/losses.hpp"
#include "mancount/model.hpp"
#include "mancount/ops.hpp"
#include "mancount/synthcrowd.hpp"

#include <sstream>

namespace py = pybind11;
using namespace mancount;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  Shape shape;
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
    shape.push_back(static_cast<int>(arr.shape(i)));
  }
  std::vector<double> data(arr.data(), arr.data() + arr.size());
  return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (int i = 0; i < t.rank(); ++i) shape.push_back(t.extent(i));
  py::array_t<double> arr(shape);
  std::copy(t.data(), t.data() + t.size(), arr.mutable_data());
  return arr;
}

CdfDir parse_dir(const std::string& dir) {
  if (dir == "bl") return CdfDir::BottomLeft;
  if (dir == "ur") return CdfDir::UpperRight;
  throw ConfigError("direction must be \"bl\" or \"ur\", got \"" + dir + "\"");
}

std::vector<Point> points_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& pts) {
  if (pts.size() == 0) return {};
  if (pts.ndim() != 2 || pts.shape(1) != 2) {
    throw DimensionError("points must be an (N, 2) array");
  }
  std::vector<Point> out;
  for (py::ssize_t i = 0; i < pts.shape(0); ++i) {
    out.push_back({pts.at(i, 0), pts.at(i, 1)});
  }
  return out;
}

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

/// Model wrapper operating on numpy grayscale images in [0, 1].
class CountingModel {
 public:
  CountingModel(int dim, int layers, int ffn_hidden, bool use_lra, std::uint64_t seed)
      : params_(init_params(make_config(dim, layers, ffn_hidden, use_lra), seed)) {}

  explicit CountingModel(ModelParams params) : params_(std::move(params)) {}

  static CountingModel load(const std::string& path) {
    return CountingModel(load_checkpoint(path));
  }

  void save(const std::string& path) const { save_checkpoint(path, params_); }

  py::array_t<double> forward(const DoubleArray& image) const {
    Tensor img = tensor_from_array(image);
    if (img.rank() != 2) throw DimensionError("image must be a 2D array");
    ForwardResult fw =
        model_forward(img.reshaped({1, img.extent(0), img.extent(1)}), params_);
    return array_from_tensor(fw.density.grid);
  }

  double count(const DoubleArray& image) const {
    Tensor img = tensor_from_array(image);
    if (img.rank() != 2) throw DimensionError("image must be a 2D array");
    ForwardResult fw =
        model_forward(img.reshaped({1, img.extent(0), img.extent(1)}), params_);
    return fw.density.count();
  }

  std::size_t parameter_count() const { return params_.parameter_count(); }

  std::string config_str() const {
    std::ostringstream os;
    os << "dim=" << params_.config.dim << " layers=" << params_.config.layers
       << " ffn_hidden=" << params_.config.ffn() << " use_lra="
       << (params_.config.use_lra ? "True" : "False");
    return os.str();
  }

 private:
  static ModelConfig make_config(int dim, int layers, int ffn_hidden, bool use_lra) {
    ModelConfig c;
    c.dim = dim;
    c.layers = layers;
    c.ffn_hidden = ffn_hidden;
    c.use_lra = use_lra;
    return c;
  }

  ModelParams params_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Crowd counting with learnable region attention";

  py::register_exception<Error>(m, "MancountError");

  m.def("softmax_rows",
        [](const DoubleArray& x) { return array_from_tensor(softmax_rows(tensor_from_array(x))); },
        py::arg("x"), "Row-wise softmax of a 2D array.");

  m.def("matmul",
        [](const DoubleArray& a, const DoubleArray& b) {
          return array_from_tensor(matmul(tensor_from_array(a), tensor_from_array(b)));
        },
        py::arg("a"), py::arg("b"));

  m.def("cumsum2d",
        [](const DoubleArray& c, const std::string& dir) {
          return array_from_tensor(cumsum2d(tensor_from_array(c), parse_dir(dir)));
        },
        py::arg("c"), py::arg("dir"),
        "Directional 2D CDF of an (H, W) array; dir is \"bl\" or \"ur\".");

  m.def("hard_region_map",
        [](int bx, int by, int ux, int uy, int w, int h) {
          return array_from_tensor(hard_region_map({bx, by}, {ux, uy}, w, h));
        },
        py::arg("bx"), py::arg("by"), py::arg("ux"), py::arg("uy"), py::arg("w"),
        py::arg("h"), "Binary rectangle mask between two vertices.");

  m.def("region_maps",
        [](const DoubleArray& c1, const DoubleArray& c2, int w, int h) {
          CoverageMaps cov{tensor_from_array(c1), tensor_from_array(c2)};
          RegionMaps maps = learnable_region_maps(cov, w, h);
          return array_from_tensor(maps.rtilde);
        },
        py::arg("c1"), py::arg("c2"), py::arg("w"), py::arg("h"),
        "Complete region maps from two (WH, WH) coverage matrices.");

  m.def("deviation_penalty",
        [](const DoubleArray& a, const DoubleArray& b) {
          return deviation_penalty(tensor_from_array(a), tensor_from_array(b)).value();
        },
        py::arg("a"), py::arg("b"), "Cosine deviation in [0, 2].");

  m.def("posterior_map",
        [](const DoubleArray& points, int grid_h, int grid_w, double stride,
           double sigma) {
          PosteriorMap post =
              posterior_map(points_from_array(points), grid_h, grid_w, stride, sigma);
          if (post.n == 0) {
            return py::array_t<double>(std::vector<py::ssize_t>{0, grid_h * grid_w});
          }
          return array_from_tensor(post.prob);
        },
        py::arg("points"), py::arg("grid_h"), py::arg("grid_w"), py::arg("stride"),
        py::arg("sigma"));

  m.def("instance_mask",
        [](const std::vector<double>& deviations, double delta) {
          return instance_mask(deviations, delta);
        },
        py::arg("deviations"), py::arg("delta"));

  m.def("instance_attention_loss",
        [](const DoubleArray& deviations, const std::vector<int>& mask) {
          return instance_attention_loss(tensor_from_array(deviations), mask).value();
        },
        py::arg("deviations"), py::arg("mask"));

  m.def("generate_scene",
        [](int size, int count_min, int count_max, std::uint64_t seed) {
          SceneParams params;
          params.size = size;
          params.count_min = count_min;
          params.count_max = count_max;
          CrowdScene scene = generate_scene(params, seed);
          py::array_t<double> pts(
              std::vector<py::ssize_t>{static_cast<py::ssize_t>(scene.points.size()), 2});
          for (std::size_t i = 0; i < scene.points.size(); ++i) {
            pts.mutable_at(static_cast<py::ssize_t>(i), 0) = scene.points[i].x;
            pts.mutable_at(static_cast<py::ssize_t>(i), 1) = scene.points[i].y;
          }
          return py::make_tuple(array_from_tensor(scene.image), pts);
        },
        py::arg("size"), py::arg("count_min"), py::arg("count_max"), py::arg("seed"),
        "Deterministic synthetic crowd scene: (image, points).");

  m.def("gradcheck",
        [](std::uint64_t seed) {
          GradCheckOptions opt;
          opt.seed = seed;
          std::ostringstream sink;
          return run_gradcheck(opt, sink);
        },
        py::arg("seed") = 1, "Finite-difference suite; True when all checks pass.");

  py::class_<CountingModel>(m, "CountingModel")
      .def(py::init<int, int, int, bool, std::uint64_t>(), py::arg("dim") = 64,
           py::arg("layers") = 4, py::arg("ffn_hidden") = 0,
           py::arg("use_lra") = true, py::arg("seed") = 1)
      .def_static("load", &CountingModel::load, py::arg("path"))
      .def("save", &CountingModel::save, py::arg("path"))
      .def("forward", &CountingModel::forward, py::arg("image"),
           "Density map for a 2D grayscale image in [0, 1].")
      .def("count", &CountingModel::count, py::arg("image"))
      .def("parameter_count", &CountingModel::parameter_count)
      .def("__repr__", [](const CountingModel& m2) {
        return "CountingModel(" + m2.config_str() + ")";
      });
}

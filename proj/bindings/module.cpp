// Python bindings for the core similarity, masking, loss and archive
// operations. Training itself stays on the C++ CLI; these entry points are
// for offline analysis and prototyping.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dpk/archive.hpp"
#include "dpk/losses.hpp"
#include "dpk/masking.hpp"
#include "dpk/rng.hpp"
#include "dpk/similarity.hpp"
#include "dpk/transform.hpp"

namespace py = pybind11;

namespace {

py::array_t<bool> mask_to_array(const dpk::MaskPattern& m) {
  py::array_t<bool> out({m.rows, m.cols});
  auto r = out.mutable_unchecked<2>();
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) r(i, j) = m.at(i, j);
  return out;
}

dpk::nn::Tensor4 to_tensor4(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 4) throw dpk::ShapeError("expected a 4-d array (B, C, H, W)");
  dpk::nn::Tensor4 t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                     static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3)));
  std::copy(a.data(), a.data() + a.size(), t.data.begin());
  return t;
}

}  // namespace

PYBIND11_MODULE(_dpk, m) {
  m.doc() = "dynamic prior-knowledge distillation: similarity, masking and loss primitives";

  m.def("gram", &dpk::gram, py::arg("x"), "Linear-kernel Gram matrix X X^T.");
  m.def("hsic1", &dpk::hsic1, py::arg("k"), py::arg("l"),
        "Unbiased HSIC estimator over two Gram matrices (n >= 4).");
  m.def("cka_minibatch", &dpk::cka_minibatch, py::arg("xs"), py::arg("ys"),
        "Minibatch CKA between two lists of (n_i x p) feature matrices.");
  m.def("cosine_gap", &dpk::cosine_gap, py::arg("x"), py::arg("y"), py::arg("projection_seed") = 0,
        "Mean per-example cosine similarity; mismatched widths are projected.");
  m.def("dynamic_ratio", &dpk::dynamic_ratio, py::arg("similarity"),
        "Mask ratio pi = clamp(1 - similarity, 0, 1).");

  m.def(
      "random_mask",
      [](int rows, int cols, double ratio, uint64_t seed) {
        dpk::Rng rng(seed);
        return mask_to_array(dpk::random_mask(rows, cols, ratio, rng));
      },
      py::arg("rows"), py::arg("cols"), py::arg("ratio"), py::arg("seed") = 0,
      "Uniform mask with exactly round(ratio * rows * cols) positions set.");
  m.def(
      "block_mask",
      [](int rows, int cols, double ratio, uint64_t seed) {
        dpk::Rng rng(seed);
        return mask_to_array(dpk::block_mask(rows, cols, ratio, rng));
      },
      py::arg("rows"), py::arg("cols"), py::arg("ratio"), py::arg("seed") = 0,
      "Blockwise mask trimmed to exactly round(ratio * rows * cols) positions.");
  m.def(
      "grid_mask", [](int rows, int cols) { return mask_to_array(dpk::grid_mask(rows, cols)); },
      py::arg("rows"), py::arg("cols"), "Deterministic mask keeping one corner of each 2x2 cell.");

  m.def(
      "logits_kd_loss",
      [](const dpk::Matrix& student, const dpk::Matrix& teacher, double tau, bool tau_squared) {
        dpk::Matrix grad;
        const double loss = dpk::losses::logits_kd_loss(student, teacher, tau, tau_squared, &grad);
        return py::make_tuple(loss, grad);
      },
      py::arg("student_logits"), py::arg("teacher_logits"), py::arg("tau") = 4.0,
      py::arg("tau_squared") = true,
      "Temperature-softened KL(teacher || student); returns (loss, grad).");

  m.def(
      "feature_mse",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& target) {
        dpk::nn::Tensor4 p = to_tensor4(pred), t = to_tensor4(target);
        return dpk::losses::feature_loss(p, t, nullptr, dpk::losses::Region::kFull);
      },
      py::arg("prediction"), py::arg("target"),
      "Full-region mean squared error between two (B, C, H, W) feature maps.");

  m.def(
      "write_feature_archive",
      [](const std::string& path, const py::dict& tensors) {
        std::vector<dpk::archive::TensorRecord> records;
        for (auto item : tensors) {
          dpk::archive::TensorRecord r;
          r.name = py::cast<std::string>(item.first);
          r.is_f64 = true;
          auto arr = py::cast<py::array_t<double, py::array::c_style | py::array::forcecast>>(
              item.second);
          for (py::ssize_t d = 0; d < arr.ndim(); ++d)
            r.dims.push_back(static_cast<uint32_t>(arr.shape(d)));
          r.values.assign(arr.data(), arr.data() + arr.size());
          records.push_back(std::move(r));
        }
        dpk::archive::write_archive(path, records);
      },
      py::arg("path"), py::arg("tensors"),
      "Write a dict of name -> float64 array as a DPKF feature archive.");

  m.def(
      "read_feature_archive",
      [](const std::string& path) {
        py::dict out;
        for (const auto& r : dpk::archive::read_archive(path)) {
          std::vector<py::ssize_t> shape(r.dims.begin(), r.dims.end());
          py::array_t<double> arr(shape);
          std::copy(r.values.begin(), r.values.end(), arr.mutable_data());
          out[py::str(r.name)] = std::move(arr);
        }
        return out;
      },
      py::arg("path"), "Read a DPKF feature archive into a dict of float64 arrays.");

  m.def("default_patch_size", &dpk::transform::default_patch_size, py::arg("h"), py::arg("w"),
        py::arg("max_tokens") = 64,
        "Smallest patch size dividing the map with at most max_tokens tokens.");

  py::register_exception<dpk::InvalidInputError>(m, "InvalidInputError", PyExc_ValueError);
  py::register_exception<dpk::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<dpk::SizeError>(m, "SizeError", PyExc_ValueError);
  py::register_exception<dpk::DegenerateBatchError>(m, "DegenerateBatchError", PyExc_ValueError);
  py::register_exception<dpk::ConfigError>(m, "ConfigError", PyExc_ValueError);
}

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "refdrop/attention.hpp"
#include "refdrop/commands.hpp"
#include "refdrop/config.hpp"
#include "refdrop/io.hpp"
#include "refdrop/oracle.hpp"
#include "refdrop/pipeline.hpp"

namespace py = pybind11;
using namespace refdrop;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style>;

template <typename T>
Matrix<T> to_matrix(const Array<T>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  const T* p = a.data();
  return Matrix<T>(a.shape(0), a.shape(1), std::vector<T>(p, p + a.size()));
}

template <typename T>
Array<T> to_array(const Matrix<T>& m) {
  Array<T> out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

template <typename T>
Matrix<widened_t<T>> to_coefficient(const Array<double>& c) {
  return cast<widened_t<T>>(to_matrix<double>(c));
}

template <typename T>
void def_kernels(py::module_& m) {
  m.def("attention", [](const Array<T>& q, const Array<T>& k, const Array<T>& v) {
    return to_array(attention(to_matrix(q), to_matrix(k), to_matrix(v)));
  }, py::arg("q"), py::arg("k"), py::arg("v"));

  m.def("concat_attention",
        [](const Array<T>& q, const Array<T>& kr, const Array<T>& vr, const Array<T>& ks,
           const Array<T>& vs) {
          return to_array(concat_attention(to_matrix(q), to_matrix(kr), to_matrix(vr),
                                           to_matrix(ks), to_matrix(vs)));
        },
        py::arg("q"), py::arg("k_ref"), py::arg("v_ref"), py::arg("k_self"), py::arg("v_self"));

  m.def("rfg_attention",
        [](const Array<T>& q, const Array<T>& kr, const Array<T>& vr, const Array<T>& ks,
           const Array<T>& vs, double c) {
          return to_array(rfg_attention(to_matrix(q), to_matrix(kr), to_matrix(vr), to_matrix(ks),
                                        to_matrix(vs), c));
        },
        py::arg("q"), py::arg("k_ref"), py::arg("v_ref"), py::arg("k_self"), py::arg("v_self"),
        py::arg("c"));

  m.def("rfg_multi",
        [](const Array<T>& q, const std::vector<std::tuple<Array<T>, Array<T>, double>>& refs,
           const Array<T>& ks, const Array<T>& vs) {
          std::vector<Matrix<T>> keys, values;
          for (const auto& [k, v, c] : refs) {
            keys.push_back(to_matrix(k));
            values.push_back(to_matrix(v));
          }
          std::vector<WeightedReference<T>> weighted;
          for (std::size_t j = 0; j < refs.size(); ++j)
            weighted.push_back({keys[j], values[j], std::get<2>(refs[j])});
          return to_array(rfg_multi<T>(to_matrix(q), weighted, to_matrix(ks), to_matrix(vs)));
        },
        py::arg("q"), py::arg("refs"), py::arg("k_self"), py::arg("v_self"));

  m.def("concat_coefficient_vector",
        [](const Array<T>& q, const Array<T>& kr, const Array<T>& ks) {
          const auto c = concat_coefficient_vector(to_matrix(q), to_matrix(kr), to_matrix(ks));
          Array<double> out(static_cast<py::ssize_t>(c.values.size()));
          std::transform(c.values.begin(), c.values.end(), out.mutable_data(),
                         [](auto x) { return static_cast<double>(x); });
          return out;
        },
        py::arg("q"), py::arg("k_ref"), py::arg("k_self"));

  m.def("rfg_matrix",
        [](const Array<T>& q, const Array<T>& kr, const Array<T>& vr, const Array<T>& ks,
           const Array<T>& vs, const Array<double>& c) {
          return to_array(rfg_matrix(to_matrix(q), to_matrix(kr), to_matrix(vr), to_matrix(ks),
                                     to_matrix(vs), to_coefficient<T>(c)));
        },
        py::arg("q"), py::arg("k_ref"), py::arg("v_ref"), py::arg("k_self"), py::arg("v_self"),
        py::arg("C"));

  m.def("guidance_form",
        [](const Array<T>& q, const Array<T>& kr, const Array<T>& vr, const Array<T>& ks,
           const Array<T>& vs, const Array<double>& c) {
          return to_array(guidance_form(to_matrix(q), to_matrix(kr), to_matrix(vr), to_matrix(ks),
                                        to_matrix(vs), to_coefficient<T>(c)));
        },
        py::arg("q"), py::arg("k_ref"), py::arg("v_ref"), py::arg("k_self"), py::arg("v_self"),
        py::arg("C"));
}

template <typename T>
py::list final_latents(const cli::RunConfig& config) {
  const auto trajectory = pipeline::generate_batch<T>(config.pipeline);
  const std::size_t side = config.pipeline.latent_size;
  py::list out;
  for (const auto& flat : trajectory.final()) {
    out.append(to_array(Matrix<T>(side, side, {flat.values().begin(), flat.values().end()})));
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_refdrop, m) {
  m.doc() = "Reference feature guidance kernels, equivalence oracle and toy pipeline";

  py::register_exception<cli::ConfigError>(m, "ConfigError", PyExc_ValueError);

  // float32 overloads first: without conversion a float32 array binds to them
  // and a float64 array falls through to the double overloads.
  def_kernels<float>(m);
  def_kernels<double>(m);

  m.def("naive_concat_attention",
        [](const Array<double>& q, const Array<double>& kr, const Array<double>& vr,
           const Array<double>& ks, const Array<double>& vs) {
          return to_array(oracle::naive_concat_attention(to_matrix(q), to_matrix(kr),
                                                         to_matrix(vr), to_matrix(ks),
                                                         to_matrix(vs)));
        },
        py::arg("q"), py::arg("k_ref"), py::arg("v_ref"), py::arg("k_self"), py::arg("v_self"));

  m.def("_resolve_config", [](const std::string& doc) {
    return cli::to_json(cli::resolve_config(nlohmann::json::parse(doc))).dump();
  });

  m.def("_run_check", [](const std::string& doc) {
    const auto config = cli::resolve_config(nlohmann::json::parse(doc));
    const auto options = cli::suite_options(config);
    py::gil_scoped_release release;
    return io::to_json(oracle::run_equivalence_suite(options)).dump();
  });

  m.def("_generate", [](const std::string& doc) {
    const auto config = cli::resolve_config(nlohmann::json::parse(doc));
    return config.precision == oracle::Precision::F32 ? final_latents<float>(config)
                                                      : final_latents<double>(config);
  });
}

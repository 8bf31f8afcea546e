#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rrf/error.hpp"
#include "rrf/fusion.hpp"
#include "rrf/geometry.hpp"
#include "rrf/io.hpp"
#include "rrf/metric.hpp"
#include "rrf/protocol.hpp"

namespace py = pybind11;
using namespace rrf;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

Array to_array(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
  Array out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Array to_array(const std::vector<double>& v) { return to_array(v, {py::ssize_t(v.size())}); }

EmbeddingSet make_set(const Array& values, std::uint64_t fingerprint, const std::string& image_id) {
  if (values.ndim() != 2) throw Error(ErrorKind::Domain, "embeddings must be a 2-d (K, D) array");
  return {image_id, std::size_t(values.shape(0)), std::size_t(values.shape(1)), to_vector(values), fingerprint};
}

py::dict plan_dict(const ShapePlan& p) {
  auto shape = [](const TensorShape& s) { return py::make_tuple(s.count, s.width, s.height, s.channels); };
  py::list blocks;
  for (const auto& b : p.blocks) blocks.append(shape(b));
  py::dict d;
  d["variant"] = std::string(to_string(p.variant));
  d["input"] = shape(p.input);
  d["blocks"] = blocks;
  d["feature"] = py::make_tuple(p.feature_count, p.feature_dim);
  if (p.variant == Architecture::RRFNet) d["mean"] = py::make_tuple(p.mean_count, p.feature_dim);
  return d;
}

PairList pairs_from(const std::vector<int>& labels, const std::vector<int>& folds) {
  if (labels.size() != folds.size()) throw Error(ErrorKind::Domain, "labels and folds differ in length");
  PairList p;
  for (std::size_t i = 0; i < labels.size(); ++i)
    p.entries.push_back({std::to_string(i) + "a", std::to_string(i) + "b", labels[i], folds[i]});
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Core of the rrf package";

  // Leaked on purpose: the type must outlive the interpreter's module teardown.
  static PyObject* rrf_error = PyErr_NewException("rrf._core.RRFError", nullptr, nullptr);
  m.attr("RRFError") = py::handle(rrf_error);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = py::reinterpret_borrow<py::object>(rrf_error)(e.what());
      err.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(rrf_error, err.ptr());
    }
  });

  py::class_<PatchLayout>(m, "PatchLayout")
      .def_readonly("image_width", &PatchLayout::image_width)
      .def_readonly("image_height", &PatchLayout::image_height)
      .def_readonly("patch_width", &PatchLayout::patch_width)
      .def_readonly("patch_height", &PatchLayout::patch_height)
      .def_readonly("stride", &PatchLayout::stride)
      .def_readonly("corner_exclusion", &PatchLayout::corner_exclusion)
      .def_property_readonly("positions",
                             [](const PatchLayout& l) {
                               std::vector<std::pair<int, int>> out;
                               for (const auto& p : l.positions) out.emplace_back(p.x, p.y);
                               return out;
                             })
      .def_property_readonly("fingerprint", [](const PatchLayout& l) { return layout_fingerprint(l); })
      .def("canonical_json", [](const PatchLayout& l) { return canonical_json(l); })
      .def("__len__", &PatchLayout::size)
      .def("__eq__", [](const PatchLayout& a, const PatchLayout& b) { return a == b; })
      .def("__repr__", [](const PatchLayout& l) {
        return "<PatchLayout " + std::to_string(l.patch_width) + "x" + std::to_string(l.patch_height) +
               " stride " + std::to_string(l.stride) + ", K=" + std::to_string(l.size()) + ">";
      });

  m.def("layout_patches", &layout_patches, py::arg("image_width") = 112, py::arg("image_height") = 112,
        py::arg("patch_width") = 28, py::arg("patch_height") = 28, py::arg("stride") = 14,
        py::arg("corner_exclusion") = false);
  m.def("layout_fingerprint", &layout_fingerprint);
  m.def("mirror_map", [](const PatchLayout& l) {
    const auto mm = mirror_map(l);
    return py::make_tuple(mm.pairs, mm.class_count);
  }, "(mirror index of every position, number of mirror classes)");
  m.def("shape_plan", [](const std::string& variant, long batch, const PatchLayout& l, long channels) {
    return plan_dict(shape_plan(parse_architecture(variant), batch, l.image_width, l.image_height, channels,
                                l.patch_width, l.patch_height, long(l.size())));
  }, py::arg("variant"), py::arg("batch"), py::arg("layout"), py::arg("channels") = 3);

  py::class_<EmbeddingSet>(m, "EmbeddingSet")
      .def(py::init(&make_set), py::arg("values"), py::arg("layout_fingerprint"), py::arg("image_id") = "")
      .def_property_readonly("image_id", &EmbeddingSet::image_id)
      .def_property_readonly("patch_count", &EmbeddingSet::patch_count)
      .def_property_readonly("dim", &EmbeddingSet::dim)
      .def_property_readonly("layout_fingerprint", &EmbeddingSet::layout_fingerprint)
      .def_property_readonly("values", [](const EmbeddingSet& s) {
        return to_array({s.values().begin(), s.values().end()},
                        {py::ssize_t(s.patch_count()), py::ssize_t(s.dim())});
      })
      .def("__eq__", [](const EmbeddingSet& a, const EmbeddingSet& b) { return a == b; });

  m.def("local_similarity", [](const Array& a, const Array& b) {
    return local_similarity(to_vector(a), to_vector(b));
  });
  m.def("rrfnet_similarity", &rrfnet_similarity_direct, "Cosine of the mean patch embeddings");
  m.def("rrfnet_breakdown", [](const EmbeddingSet& a, const EmbeddingSet& b) {
    const auto br = rrfnet_similarity_decomposed(a, b);
    const auto k = py::ssize_t(br.patch_count);
    return py::make_tuple(br.global_score, to_array(br.contributions, {k, k}));
  }, "(global score, K x K contribution matrix)");
  m.def("region_similarity", [](const EmbeddingSet& a, const EmbeddingSet& b, const FusionModel& model) {
    const auto br = region_similarity(a, b, model);
    return py::make_tuple(br.logit, to_array(br.local), to_array(br.terms));
  }, "(logit, per-position cosines, weighted terms)");
  m.def("heatmap", [](const EmbeddingSet& a, const EmbeddingSet& b, const std::string& side) {
    if (side != "a" && side != "b") throw Error(ErrorKind::Domain, "side must be 'a' or 'b'");
    return to_array(heatmap(rrfnet_similarity_decomposed(a, b), side == "a" ? Side::A : Side::B));
  }, py::arg("a"), py::arg("b"), py::arg("side") = "a");

  m.def("best_threshold", [](const std::vector<double>& scores, const std::vector<int>& labels) {
    const auto r = best_threshold(scores, labels);
    return py::make_tuple(r.threshold, r.accuracy);
  });
  m.def("cross_validate", [](const std::vector<double>& scores, const std::vector<int>& labels,
                             const std::vector<int>& folds) {
    const auto r = cross_validate(pairs_from(labels, folds), scores);
    py::list per_fold;
    for (const auto& f : r.folds)
      per_fold.append(py::dict(py::arg("fold") = f.fold, py::arg("pairs") = f.pair_count,
                               py::arg("threshold") = f.threshold, py::arg("accuracy") = f.accuracy,
                               py::arg("skipped") = f.skipped));
    return py::dict(py::arg("mean_accuracy") = r.mean_accuracy, py::arg("stddev") = r.stddev,
                    py::arg("folds") = per_fold, py::arg("warnings") = r.warnings);
  }, py::arg("scores"), py::arg("labels"), py::arg("folds"));

  py::class_<FusionModel>(m, "FusionModel")
      .def(py::init([](std::vector<double> weights, double bias) {
             FusionModel f;
             f.weights = std::move(weights);
             f.bias = bias;
             return f;
           }),
           py::arg("weights"), py::arg("bias") = 0.0)
      .def_readonly("weights", &FusionModel::weights)
      .def_readonly("bias", &FusionModel::bias)
      .def_readonly("reg", &FusionModel::reg)
      .def_readonly("iterations", &FusionModel::iterations)
      .def_readonly("loss", &FusionModel::loss)
      .def_readonly("gradient_norm", &FusionModel::gradient_norm)
      .def_readonly("converged", &FusionModel::converged)
      .def("score", [](const FusionModel& f, const Array& locals) { return fused_score(f, to_vector(locals)); });

  m.def("fit_fusion", [](const Array& features, const std::vector<int>& labels, double reg, int max_iterations,
                         double tolerance, std::uint64_t seed) {
    if (features.ndim() != 2) throw Error(ErrorKind::Domain, "features must be a 2-d (pairs, K) array");
    const auto v = to_vector(features);
    return fit_fusion({v, std::size_t(features.shape(0)), std::size_t(features.shape(1))}, labels,
                      {reg, seed, max_iterations, tolerance});
  }, py::arg("features"), py::arg("labels"), py::arg("reg") = 1e-4, py::arg("max_iterations") = 10000,
     py::arg("tolerance") = 1e-6, py::arg("seed") = 0);

  m.def("encode_embeddings", [](const EmbeddingSet& s) {
    const auto b = io::encode_embeddings(s);
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  });
  m.def("decode_embeddings", [](const py::bytes& data, std::optional<std::uint64_t> fingerprint,
                                const std::string& image_id) {
    const std::string_view sv(data);
    return io::decode_embeddings({reinterpret_cast<const std::uint8_t*>(sv.data()), sv.size()}, fingerprint,
                                 image_id);
  }, py::arg("data"), py::arg("layout_fingerprint") = py::none(), py::arg("image_id") = "");
  m.def("write_embeddings", &io::write_embeddings, py::arg("set"), py::arg("path"));
  m.def("read_embeddings", [](const std::filesystem::path& path, std::optional<std::uint64_t> fingerprint,
                              const std::string& image_id) { return io::read_embeddings(path, fingerprint, image_id); },
        py::arg("path"), py::arg("layout_fingerprint") = py::none(), py::arg("image_id") = "");
}

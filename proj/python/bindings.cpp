#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "craft/experiment.hpp"
#include "craft/losses.hpp"
#include "craft/mmd.hpp"

namespace py = pybind11;
using namespace craft;

namespace {

AnchorSet anchor_set(const Matrix& rows, Modality modality) { return AnchorSet{rows, modality, AnchorKind::Static}; }

// Runs one experiment from a config document and returns the results as JSON.
std::string run_experiment(const std::string& config_json, const std::string& mode) {
  RunConfig cfg = parse_run_config(nlohmann::json::parse(config_json));
  if (!mode.empty()) cfg.train.mode = parse_train_mode(mode);
  const auto data = generate_synthetic(cfg.synthetic);
  const auto splits = make_splits(cfg, data.source, &data.target);
  const auto anchors = experiment_anchors(cfg, splits);
  const auto result = run_training(cfg, splits, anchors);
  nlohmann::ordered_json out;
  out["results"] = evaluate_experiment(cfg, result.adapter, splits, anchors);
  out["history"] = nlohmann::ordered_json::array();
  for (const auto& e : result.history.epochs) {
    out["history"].push_back({{"epoch", e.epoch}, {"total", e.loss.total}, {"train_accuracy", e.train_accuracy}});
  }
  return out.dump();
}

}  // namespace

PYBIND11_MODULE(_craft, m) {
  m.doc() = "Anchor-aligned adapter tuning on frozen dual-modality embeddings";

  static py::exception<Error> craft_error(m, "CraftError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = craft_error;
      PyErr_SetString(err.ptr(), (e.name() + ": " + e.what()).c_str());
    }
  });

  py::enum_<Modality>(m, "Modality").value("Image", Modality::Image).value("Text", Modality::Text);

  py::class_<SyntheticConfig>(m, "SyntheticConfig")
      .def(py::init<>())
      .def_readwrite("num_classes", &SyntheticConfig::num_classes)
      .def_readwrite("dim", &SyntheticConfig::dim)
      .def_readwrite("samples_per_class_per_modality", &SyntheticConfig::samples_per_class_per_modality)
      .def_readwrite("cluster_spread", &SyntheticConfig::cluster_spread)
      .def_readwrite("cross_modal_noise", &SyntheticConfig::cross_modal_noise)
      .def_readwrite("domain_shift_magnitude", &SyntheticConfig::domain_shift_magnitude)
      .def_readwrite("group_spurious_strength", &SyntheticConfig::group_spurious_strength)
      .def_readwrite("majority_fraction", &SyntheticConfig::majority_fraction)
      .def_readwrite("modality_gap", &SyntheticConfig::modality_gap)
      .def_readwrite("seed", &SyntheticConfig::seed);

  py::class_<EmbeddingSet>(m, "EmbeddingSet")
      .def_readonly("dim", &EmbeddingSet::dim)
      .def_readonly("class_names", &EmbeddingSet::class_names)
      .def("__len__", [](const EmbeddingSet& s) { return s.records.size(); })
      .def("matrix", &EmbeddingSet::matrix)
      .def("labels", &EmbeddingSet::labels);

  py::class_<SyntheticData>(m, "SyntheticData")
      .def_readonly("source", &SyntheticData::source)
      .def_readonly("target", &SyntheticData::target);

  m.def("generate_synthetic", &generate_synthetic);
  m.def("read_embeddings", [](const std::string& p) { return read_embeddings(p); });
  m.def("write_embeddings", [](const EmbeddingSet& s, const std::string& p) { write_embeddings(s, p); });

  py::class_<Adapter>(m, "Adapter")
      .def_static("zeros", &Adapter::zeros)
      .def_property_readonly("dim", &Adapter::dim)
      .def("flat", &Adapter::flat)
      .def_static("from_flat", &Adapter::from_flat)
      .def("encode_rows", &Adapter::encode_rows);
  m.def("read_checkpoint", [](const std::string& p) { return read_checkpoint(p); });
  m.def("write_checkpoint", [](const Adapter& a, const std::string& p) { write_checkpoint(a, p); });

  m.def("class_probabilities", [](const Vector& q, const Matrix& anchors, double tau) {
    return class_distribution(q, anchor_set(anchors, Modality::Text), tau).probs;
  });
  m.def("aligned_loss_static",
        [](const Matrix& img, const Matrix& txt, const std::vector<std::uint32_t>& labels, const Matrix& text_anchors,
           const Matrix& image_anchors, double tau) {
          return aligned_loss_static(img, txt, labels, anchor_set(text_anchors, Modality::Text),
                                     anchor_set(image_anchors, Modality::Image), tau);
        });
  m.def("aligned_loss_stochastic", &aligned_loss_stochastic);
  m.def("text_cross_entropy",
        [](const Matrix& img, const std::vector<std::uint32_t>& labels, const Matrix& text_anchors, double tau) {
          return text_cross_entropy(img, labels, anchor_set(text_anchors, Modality::Text), tau);
        });

  m.def("median_heuristic", &median_heuristic);
  m.def("mmd2_biased", [](const Matrix& x, const Matrix& y, double bw) { return mmd2_biased(x, y, KernelSpec{bw}); });
  m.def("mmd2_unbiased",
        [](const Matrix& x, const Matrix& y, double bw) { return mmd2_unbiased(x, y, KernelSpec{bw}); });
  m.def("permutation_test", [](const Matrix& x, const Matrix& y, double bw, std::size_t n_perms, std::uint64_t seed) {
    Rng rng(seed);
    return permutation_test(x, y, KernelSpec{bw}, n_perms, rng);
  });

  m.def(
      "kmeans",
      [](const Matrix& points, std::size_t k, std::uint64_t seed) {
        Rng rng(seed);
        const auto r = kmeans(points, k, rng);
        return py::make_tuple(r.centroids, r.assignments, r.objective_history);
      },
      py::arg("points"), py::arg("k"), py::arg("seed") = 0);

  m.def("group_metrics", [](const std::vector<std::pair<std::size_t, std::size_t>>& counts) {
    std::vector<GroupCount> groups;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      groups.push_back({"group" + std::to_string(i), counts[i].first, counts[i].second});
    }
    const auto r = group_metrics(groups);
    return py::make_tuple(r.worst_group, r.average, r.gap);
  });
  m.def("ood_average", [](const std::vector<double>& v) { return ood_average(v); });
  m.def("format_percent", &format_percent);
  m.def("cosine_lr", &cosine_lr);

  m.def("run_experiment_json", &run_experiment, py::arg("config_json"), py::arg("mode") = "");
}

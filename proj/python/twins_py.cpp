// Python bindings for the twins library.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "twins/co_retrieval.hpp"
#include "twins/data.hpp"
#include "twins/error.hpp"
#include "twins/metrics.hpp"
#include "twins/model.hpp"

namespace py = pybind11;
using namespace twins;

namespace {

std::vector<int> labels_of(const std::vector<LabeledPair>& pairs) {
  std::vector<int> y;
  y.reserve(pairs.size());
  for (const auto& p : pairs) y.push_back(p.label);
  return y;
}

py::dict tensors_of(const ModelParams& params) {
  py::dict out;
  for (const auto& [name, t] : params.named())
    out[py::str(name)] = py::make_tuple(t->shape(), std::vector<double>(t->data().begin(), t->data().end()));
  return out;
}

}  // namespace

PYBIND11_MODULE(_twins, m) {
  m.doc() = "Two-side cross-domain recommendation model";

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  py::register_exception<InputError>(m, "InputError", error.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());
  py::register_exception<FormatError>(m, "FormatError", error.ptr());

  py::enum_<ObjectKind>(m, "ObjectKind")
      .value("user", ObjectKind::user)
      .value("anchor", ObjectKind::anchor)
      .value("item", ObjectKind::item);

  py::class_<LabeledPair>(m, "LabeledPair")
      .def(py::init<>())
      .def(py::init([](Index u, Index a, int y) { return LabeledPair{u, a, y}; }), py::arg("user"),
           py::arg("anchor"), py::arg("label"))
      .def_readwrite("user", &LabeledPair::user)
      .def_readwrite("anchor", &LabeledPair::anchor)
      .def_readwrite("label", &LabeledPair::label)
      .def("__eq__", [](const LabeledPair& a, const LabeledPair& b) { return a == b; })
      .def("__repr__", [](const LabeledPair& p) {
        return "LabeledPair(user=" + std::to_string(p.user) + ", anchor=" + std::to_string(p.anchor) +
               ", label=" + std::to_string(p.label) + ")";
      });

  py::class_<Catalog>(m, "Catalog")
      .def_property_readonly("num_users", [](const Catalog& c) { return c.users().size(); })
      .def_property_readonly("num_anchors", [](const Catalog& c) { return c.anchors().size(); })
      .def_property_readonly("num_items", [](const Catalog& c) { return c.items().size(); })
      .def("user_id", [](const Catalog& c, Index i) { return c.user(i).id; })
      .def("anchor_id", [](const Catalog& c, Index i) { return c.anchor(i).id; })
      .def("browsed_items", [](const Catalog& c, Index i) { return c.user(i).browsed_items; })
      .def("broadcast_items", [](const Catalog& c, Index i) { return c.anchor(i).broadcast_items; })
      .def("item_category", [](const Catalog& c, Index i) { return c.item(i).category(); })
      .def("index_of", &Catalog::index_of)
      .def("vocab_size", &Catalog::vocab_size);

  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("num_users", &SyntheticSpec::num_users)
      .def_readwrite("num_anchors", &SyntheticSpec::num_anchors)
      .def_readwrite("num_items", &SyntheticSpec::num_items)
      .def_readwrite("num_categories", &SyntheticSpec::num_categories)
      .def_readwrite("num_pairs", &SyntheticSpec::num_pairs)
      .def_readwrite("history_len_range", &SyntheticSpec::history_len_range)
      .def_readwrite("browsed_anchor_range", &SyntheticSpec::browsed_anchor_range)
      .def_readwrite("max_interests", &SyntheticSpec::max_interests)
      .def_readwrite("focus", &SyntheticSpec::focus)
      .def_readwrite("signal_strength", &SyntheticSpec::signal_strength)
      .def_readwrite("base_rate", &SyntheticSpec::base_rate)
      .def_readwrite("seed", &SyntheticSpec::seed);

  py::class_<SyntheticData>(m, "SyntheticData")
      .def_readonly("catalog", &SyntheticData::catalog)
      .def_readonly("pairs", &SyntheticData::pairs);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("catalog", &Dataset::catalog)
      .def_readonly("pairs", &Dataset::pairs)
      .def_property_readonly("rejected_catalog_lines",
                             [](const Dataset& d) { return d.rejected_catalog_lines.size(); })
      .def_property_readonly("rejected_pair_lines", [](const Dataset& d) { return d.rejected_pair_lines.size(); });

  py::class_<DatasetSplit>(m, "DatasetSplit")
      .def_readonly("train", &DatasetSplit::train)
      .def_readonly("validation", &DatasetSplit::validation)
      .def_readonly("test", &DatasetSplit::test)
      .def_readonly("degenerate", &DatasetSplit::degenerate);

  m.def("generate_synthetic", &generate_synthetic, py::arg("spec"));
  m.def(
      "ingest_logs",
      [](const std::filesystem::path& catalog, const std::filesystem::path& pairs, std::size_t max_history) {
        return ingest_logs(catalog, pairs, IngestOptions{max_history, nullptr});
      },
      py::arg("catalog"), py::arg("pairs"), py::arg("max_history") = 200);
  m.def("split_dataset", &split_dataset, py::arg("pairs"), py::arg("ratios") = std::array<double, 3>{0.6, 0.2, 0.2},
        py::arg("seed") = 0);

  py::enum_<Variant>(m, "Variant")
      .value("full", Variant::full)
      .value("no_item_aspect", Variant::no_item_aspect)
      .value("no_anchor_aspect", Variant::no_anchor_aspect)
      .value("with_co_retrieval", Variant::with_co_retrieval);
  py::enum_<OptimizerKind>(m, "Optimizer").value("sgd", OptimizerKind::sgd).value("adam", OptimizerKind::adam);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("variant", &TrainConfig::variant)
      .def_readwrite("lr_start", &TrainConfig::lr_start)
      .def_readwrite("lr_end", &TrainConfig::lr_end)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("l2_weight", &TrainConfig::l2_weight)
      .def_readwrite("dropout", &TrainConfig::dropout)
      .def_readwrite("dim", &TrainConfig::dim)
      .def_readwrite("co_retrieval_k", &TrainConfig::co_retrieval_k)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("literal_product", &TrainConfig::literal_product)
      .def_readwrite("optimizer", &TrainConfig::optimizer)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm)
      .def_readwrite("threads", &TrainConfig::threads)
      .def("validate", &TrainConfig::validate)
      .def("to_json", [](const TrainConfig& c) { return config_to_json(c); })
      .def_static("from_json", &config_from_json)
      .def("__eq__", [](const TrainConfig& a, const TrainConfig& b) { return a == b; });

  py::class_<ModelParams>(m, "ModelParams")
      .def_static("init", py::overload_cast<const Catalog&, std::size_t, std::uint64_t>(&ModelParams::init),
                  py::arg("catalog"), py::arg("dim"), py::arg("seed") = 0)
      .def_property_readonly("dim", &ModelParams::dim)
      .def("tensors", &tensors_of, "Map of name to (shape, flat values).")
      .def("squared_norm", &ModelParams::squared_norm)
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  py::class_<EpochMetrics>(m, "EpochMetrics")
      .def_readonly("epoch", &EpochMetrics::epoch)
      .def_readonly("lr", &EpochMetrics::lr)
      .def_readonly("train_loss", &EpochMetrics::train_loss)
      .def_readonly("val_auc", &EpochMetrics::val_auc)
      .def_readonly("val_acc", &EpochMetrics::val_acc)
      .def_readonly("val_logloss", &EpochMetrics::val_logloss)
      .def_readonly("wall_seconds", &EpochMetrics::wall_seconds);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("params", &TrainResult::params)
      .def_readonly("log", &TrainResult::log);

  py::class_<RetrievalIndices>(m, "RetrievalIndices").def_static("build", &RetrievalIndices::build);

  m.def(
      "train",
      [](const Catalog& c, const std::vector<LabeledPair>& tr, const std::vector<LabeledPair>& val,
         const TrainConfig& config, const EpochCallback& on_epoch) {
        py::gil_scoped_release release;
        EpochCallback locked;
        if (on_epoch)
          locked = [&](const EpochMetrics& e) {
            py::gil_scoped_acquire acquire;
            on_epoch(e);
          };
        return train(c, tr, val, config, locked);
      },
      py::arg("catalog"), py::arg("train_pairs"), py::arg("validation_pairs"), py::arg("config"),
      py::arg("on_epoch") = EpochCallback{});

  m.def(
      "predict",
      [](const Catalog& c, const ModelParams& p, const TrainConfig& config, const std::vector<LabeledPair>& pairs,
         const RetrievalIndices* indices) {
        py::gil_scoped_release release;
        return predict(c, p, config, pairs, indices).scores;
      },
      py::arg("catalog"), py::arg("params"), py::arg("config"), py::arg("pairs"), py::arg("indices") = nullptr);

  m.def(
      "forward_pair",
      [](const Catalog& c, const ModelParams& p, const TrainConfig& config, ObjectId user, ObjectId anchor,
         const RetrievalIndices* indices) { return forward_pair(c, p, config, user, anchor, Mode::eval, indices); },
      py::arg("catalog"), py::arg("params"), py::arg("config"), py::arg("user_id"), py::arg("anchor_id"),
      py::arg("indices") = nullptr);

  m.def(
      "co_retrieve",
      [](const RetrievalIndices& idx, Index user, Index anchor, std::size_t k) {
        auto r = co_retrieve(idx.user, idx.anchor, user, anchor, k);
        return py::dict(py::arg("user_items") = r.user_items, py::arg("anchor_items") = r.anchor_items,
                        py::arg("common_categories") = r.common_categories,
                        py::arg("pair_budget") = pair_budget(r));
      },
      py::arg("indices"), py::arg("user"), py::arg("anchor"), py::arg("k") = 10);

  m.def("save_checkpoint",
        py::overload_cast<const std::filesystem::path&, const ModelParams&, const TrainConfig&>(&save_checkpoint),
        py::arg("path"), py::arg("params"), py::arg("config"));
  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path) {
        auto ck = load_checkpoint(path);
        return py::make_tuple(ck.params, ck.config);
      },
      py::arg("path"));

  m.def("auc", [](const std::vector<double>& s, const std::vector<int>& y) { return compute_auc(s, y); });
  m.def("acc", [](const std::vector<double>& s, const std::vector<int>& y, double t) { return compute_acc(s, y, t); },
        py::arg("scores"), py::arg("labels"), py::arg("threshold") = 0.5);
  m.def("logloss", [](const std::vector<double>& s, const std::vector<int>& y) { return compute_logloss(s, y); });
  m.def("labels", &labels_of, py::arg("pairs"));
}

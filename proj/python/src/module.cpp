#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cigl/calibration.hpp"
#include "cigl/checkpoint.hpp"
#include "cigl/config.hpp"
#include "cigl/data.hpp"
#include "cigl/error.hpp"
#include "cigl/harness.hpp"
#include "cigl/masks.hpp"
#include "cigl/mlp.hpp"
#include "cigl/train.hpp"

namespace py = pybind11;
using namespace cigl;

namespace {

template <typename T>
using CArray = py::array_t<T, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const CArray<float>& a) {
  Tensor t;
  for (py::ssize_t d = 0; d < a.ndim(); ++d) t.shape.push_back(static_cast<std::size_t>(a.shape(d)));
  t.data.assign(a.data(), a.data() + a.size());
  return t;
}

Tensor to_matrix_tensor(const CArray<float>& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array, got " + std::to_string(a.ndim()) + " dimensions");
  return to_tensor(a);
}

py::array_t<float> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<float> out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

py::array_t<double> to_numpy(const DoubleMatrix& m) {
  py::array_t<double> out({static_cast<py::ssize_t>(m.rows), static_cast<py::ssize_t>(m.cols)});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

DoubleMatrix to_double_matrix(const CArray<double>& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array, got " + std::to_string(a.ndim()) + " dimensions");
  DoubleMatrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

std::vector<std::int32_t> to_labels(const CArray<std::int32_t>& a) {
  if (a.ndim() != 1) throw ShapeError("labels must be a 1-d array");
  return {a.data(), a.data() + a.size()};
}

py::array_t<std::int32_t> labels_to_numpy(const std::vector<std::int32_t>& y) {
  py::array_t<std::int32_t> out(static_cast<py::ssize_t>(y.size()));
  std::copy(y.begin(), y.end(), out.mutable_data());
  return out;
}

py::list masks_to_numpy(const std::vector<Mask>& masks, const MlpModel& model) {
  py::list out;
  for (std::size_t l = 0; l < masks.size(); ++l) {
    const auto& shape = model.layers[l].weight.shape;
    py::array_t<std::uint8_t> a({static_cast<py::ssize_t>(shape[0]), static_cast<py::ssize_t>(shape[1])});
    std::copy(masks[l].begin(), masks[l].end(), a.mutable_data());
    out.append(a);
  }
  return out;
}

DeterministicMask masks_from_numpy(const std::vector<CArray<std::uint8_t>>& arrays) {
  DeterministicMask m;
  for (const auto& a : arrays) {
    m.layers.emplace_back(a.data(), a.data() + a.size());
    m.target_nnz.push_back(static_cast<std::size_t>(std::count(m.layers.back().begin(), m.layers.back().end(), 1)));
    m.maskable.push_back(true);
  }
  return m;
}

Dataset make_dataset(const CArray<float>& x, const CArray<std::int32_t>& y, std::optional<std::size_t> num_classes) {
  Dataset d;
  d.features = to_matrix_tensor(x);
  d.labels = to_labels(y);
  d.num_classes = num_classes.value_or(
      d.labels.empty() ? 0 : static_cast<std::size_t>(*std::max_element(d.labels.begin(), d.labels.end())) + 1);
  d.provenance = "numpy";
  d.validate();
  return d;
}

py::dict record_to_dict(const EpochRecord& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["train_loss"] = r.train_loss;
  d["test_accuracy"] = r.test_accuracy;
  d["test_ece"] = r.test_ece;
  d["test_nll"] = r.test_nll;
  d["lr"] = r.lr;
  d["sparsity"] = r.sparsity;
  d["n_models"] = r.n_models;
  return d;
}

py::dict report_to_dict(const CalibrationReport& r) {
  py::dict d;
  d["accuracy"] = r.accuracy;
  d["ece"] = r.ece;
  d["nll"] = r.nll;
  d["temperature"] = r.temperature ? py::cast(*r.temperature) : py::none();
  return d;
}

py::list bins_to_list(const ReliabilityBins& rb) {
  py::list out;
  for (const auto& b : rb.bins) {
    py::dict d;
    d["lower"] = b.lower;
    d["upper"] = b.upper;
    d["count"] = b.count;
    d["mean_confidence"] = b.mean_confidence ? py::cast(*b.mean_confidence) : py::none();
    d["mean_accuracy"] = b.mean_accuracy ? py::cast(*b.mean_accuracy) : py::none();
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_cigl, m) {
  m.doc() = "Sparse MLP training with deterministic and random masks";

  static py::exception<Error> base_error(m, "CiglError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const Error& e) {
      py::set_error(base_error, e.what());
    }
  });

  py::class_<MlpModel>(m, "Model")
      .def(py::init([](std::vector<std::size_t> widths, std::uint64_t seed) {
             auto rng = Rng::derive(seed, "init.weights");
             return MlpModel::create(widths, rng);
           }),
           py::arg("widths"), py::arg("seed") = 0)
      .def_property_readonly("widths", &MlpModel::widths)
      .def_property(
          "weights",
          [](const MlpModel& self) {
            py::list out;
            for (const auto& l : self.layers) out.append(to_numpy(l.weight));
            return out;
          },
          [](MlpModel& self, const std::vector<CArray<float>>& ws) {
            if (ws.size() != self.layers.size()) throw ShapeError("one weight array per layer is required");
            for (std::size_t l = 0; l < ws.size(); ++l) {
              Tensor t = to_tensor(ws[l]);
              if (t.shape != self.layers[l].weight.shape) throw ShapeError("layer " + std::to_string(l) + ": weight shape mismatch");
              self.layers[l].weight = std::move(t);
            }
          })
      .def_property(
          "biases",
          [](const MlpModel& self) {
            py::list out;
            for (const auto& l : self.layers) out.append(to_numpy(l.bias));
            return out;
          },
          [](MlpModel& self, const std::vector<CArray<float>>& bs) {
            if (bs.size() != self.layers.size()) throw ShapeError("one bias array per layer is required");
            for (std::size_t l = 0; l < bs.size(); ++l) {
              Tensor t = to_tensor(bs[l]);
              if (t.shape != self.layers[l].bias.shape) throw ShapeError("layer " + std::to_string(l) + ": bias shape mismatch");
              self.layers[l].bias = std::move(t);
            }
          })
      .def("forward", [](const MlpModel& self, const CArray<float>& x) { return to_numpy(forward(self, to_matrix_tensor(x))); })
      .def("logits", [](const MlpModel& self, const CArray<float>& x) {
        return to_numpy(predict_logits(self, to_matrix_tensor(x)));
      })
      .def("__eq__", [](const MlpModel& a, const MlpModel& b) { return a == b; });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_property(
          "method", [](const TrainConfig& c) { return std::string(to_string(c.method)); },
          [](TrainConfig& c, const std::string& s) { c.method = parse_method(s); })
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("hidden", &TrainConfig::hidden)
      .def_readwrite("sparsity", &TrainConfig::sparsity)
      .def_property(
          "sparsity_mode", [](const TrainConfig& c) { return std::string(to_string(c.sparsity_mode)); },
          [](TrainConfig& c, const std::string& s) { c.sparsity_mode = parse_allocation_mode(s); })
      .def_readwrite("dense_layers", &TrainConfig::dense_layers)
      .def_readwrite("update_interval", &TrainConfig::update_interval)
      .def_readwrite("update_fraction", &TrainConfig::update_fraction)
      .def_readwrite("update_end", &TrainConfig::update_end)
      .def_readwrite("keep_prob", &TrainConfig::keep_prob)
      .def_readwrite("wma", &TrainConfig::wma)
      .def_readwrite("wma_start_epoch", &TrainConfig::wma_start_epoch)
      .def_readwrite("wma_period", &TrainConfig::wma_period)
      .def_property(
          "lr", [](const TrainConfig& c) { return c.lr.base_lr; }, [](TrainConfig& c, double v) { c.lr.base_lr = v; })
      .def_property(
          "lr_milestones", [](const TrainConfig& c) { return c.lr.milestones; },
          [](TrainConfig& c, std::vector<int> v) { c.lr.milestones = std::move(v); })
      .def_property(
          "lr_decay", [](const TrainConfig& c) { return c.lr.decay_factor; },
          [](TrainConfig& c, double v) { c.lr.decay_factor = v; })
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("mc_samples", &TrainConfig::mc_samples)
      .def_readwrite("label_smoothing", &TrainConfig::label_smoothing)
      .def_readwrite("mixup_alpha", &TrainConfig::mixup_alpha)
      .def_readwrite("n_bins", &TrainConfig::n_bins)
      .def("validate", &TrainConfig::validate);

  py::class_<TrainResult>(m, "TrainResult")
      .def_property_readonly("method", [](const TrainResult& r) { return std::string(to_string(r.method)); })
      .def_readonly("model", &TrainResult::model)
      .def_readonly("last_iterate", &TrainResult::last_iterate)
      .def_readonly("n_models", &TrainResult::n_models)
      .def_property_readonly("masks", [](const TrainResult& r) { return masks_to_numpy(r.mask.layers, r.model); })
      .def_property_readonly("history", [](const TrainResult& r) {
        py::list out;
        for (const auto& rec : r.history) out.append(record_to_dict(rec));
        return out;
      });

  m.def(
      "train",
      [](const TrainConfig& config, const CArray<float>& x_train, const CArray<std::int32_t>& y_train,
         const CArray<float>& x_test, const CArray<std::int32_t>& y_test, std::optional<std::size_t> num_classes) {
        const Dataset train_data = make_dataset(x_train, y_train, num_classes);
        const Dataset test_data = make_dataset(x_test, y_test, train_data.num_classes);
        py::gil_scoped_release release;
        return train(config, train_data, test_data);
      },
      py::arg("config"), py::arg("x_train"), py::arg("y_train"), py::arg("x_test"), py::arg("y_test"),
      py::arg("num_classes") = py::none(), "Train with the method selected in config.");

  m.def(
      "predict",
      [](const TrainResult& result, const TrainConfig& config, const CArray<float>& x, std::uint64_t seed) {
        auto rng = Rng::derive(seed, "eval.mc_dropout");
        return to_numpy(predict_method(result, config, to_matrix_tensor(x), rng));
      },
      py::arg("result"), py::arg("config"), py::arg("x"), py::arg("seed") = 0,
      "Class probabilities using the method's prediction rule.");

  m.def(
      "predict_mc_dropout",
      [](const MlpModel& model, const std::vector<CArray<std::uint8_t>>& masks, double keep_prob, std::size_t samples,
         const CArray<float>& x, std::uint64_t seed) {
        Rng rng(seed);
        return to_numpy(predict_mc_dropout(model, masks_from_numpy(masks), keep_prob, samples, to_matrix_tensor(x), rng));
      },
      py::arg("model"), py::arg("masks"), py::arg("keep_prob"), py::arg("samples"), py::arg("x"), py::arg("seed") = 0);

  m.def("softmax", [](const CArray<double>& logits, double t) { return to_numpy(softmax(to_double_matrix(logits), t)); },
        py::arg("logits"), py::arg("temperature") = 1.0);
  m.def("ece", [](const CArray<double>& p, const CArray<std::int32_t>& y, std::size_t bins) {
    return ece(to_double_matrix(p), to_labels(y), bins);
  }, py::arg("probs"), py::arg("labels"), py::arg("n_bins") = kDefaultBins);
  m.def("reliability_bins", [](const CArray<double>& p, const CArray<std::int32_t>& y, std::size_t bins) {
    return bins_to_list(reliability_bins(to_double_matrix(p), to_labels(y), bins));
  }, py::arg("probs"), py::arg("labels"), py::arg("n_bins") = kDefaultBins);
  m.def("nll", [](const CArray<double>& p, const CArray<std::int32_t>& y) { return nll(to_double_matrix(p), to_labels(y)); },
        py::arg("probs"), py::arg("labels"));
  m.def("accuracy", [](const CArray<double>& p, const CArray<std::int32_t>& y) {
    return accuracy(to_double_matrix(p), to_labels(y));
  }, py::arg("probs"), py::arg("labels"));
  m.def("fit_temperature", [](const CArray<double>& logits, const CArray<std::int32_t>& y) {
    return fit_temperature(to_double_matrix(logits), to_labels(y));
  }, py::arg("logits"), py::arg("labels"));
  m.def("label_smoothing_targets", [](const CArray<std::int32_t>& y, double eps, std::size_t k) {
    return to_numpy(label_smoothing_targets(to_labels(y), eps, k));
  }, py::arg("labels"), py::arg("epsilon"), py::arg("num_classes"));

  m.def("erk_allocate", [](const std::vector<Shape>& shapes, double s) { return erk_allocate(shapes, s); },
        py::arg("shapes"), py::arg("sparsity"));
  m.def("mask_update_fraction", &mask_update_fraction, py::arg("t"), py::arg("alpha"), py::arg("t_end"));
  m.def(
      "update_layer_mask",
      [](const CArray<float>& w, const CArray<float>& g, const CArray<std::uint8_t>& mask, double f) {
        const Mask in(mask.data(), mask.data() + mask.size());
        const auto u = update_layer_mask({w.data(), static_cast<std::size_t>(w.size())},
                                         {g.data(), static_cast<std::size_t>(g.size())}, in, f);
        py::array_t<std::uint8_t> out(static_cast<py::ssize_t>(u.mask.size()));
        std::copy(u.mask.begin(), u.mask.end(), out.mutable_data());
        return out;
      },
      py::arg("weights"), py::arg("dense_grads"), py::arg("mask"), py::arg("fraction"),
      "Prune the smallest active weights and regrow the largest inactive gradients (flat arrays).");

  m.def(
      "two_moons",
      [](std::size_t n, double noise_sd, std::uint64_t seed) {
        auto rng = Rng::derive(seed, "data.synth");
        const Dataset d = synth_two_moons(n, noise_sd, rng);
        return py::make_tuple(to_numpy(d.features), labels_to_numpy(d.labels));
      },
      py::arg("n"), py::arg("noise_sd"), py::arg("seed") = 0);
  m.def(
      "load_csv",
      [](const std::filesystem::path& path, const std::string& label_column) {
        const Dataset d = load_csv(path, label_column);
        return py::make_tuple(to_numpy(d.features), labels_to_numpy(d.labels));
      },
      py::arg("path"), py::arg("label_column") = "label");

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def_readwrite("train", &ExperimentConfig::train)
      .def_readwrite("out_dir", &ExperimentConfig::out_dir)
      .def_readwrite("run_id", &ExperimentConfig::run_id)
      .def("serialize", [](const ExperimentConfig& c) { return serialize_config(c); })
      .def("validate", &ExperimentConfig::validate);
  m.def("parse_config", [](const std::string& text) { return parse_config(text); }, py::arg("text"));
  m.def("load_config", &load_config, py::arg("path"));

  m.def(
      "run_experiment",
      [](const ExperimentConfig& config, const std::filesystem::path& run_dir, bool force) {
        RunOutcome outcome;
        {
          py::gil_scoped_release release;
          outcome = run_experiment(config, run_dir, force);
        }
        py::dict d = report_to_dict(outcome.report);
        d["dir"] = outcome.dir.string();
        return d;
      },
      py::arg("config"), py::arg("run_dir"), py::arg("force") = false,
      "Train, evaluate and write the run artifacts; returns the final test report.");

  m.def(
      "sweep",
      [](const ExperimentConfig& config, const std::vector<double>& sparsities, const std::vector<std::uint64_t>& seeds,
         const std::filesystem::path& out_dir, std::size_t jobs, bool force) {
        std::vector<SweepRow> rows;
        {
          py::gil_scoped_release release;
          rows = sweep(config, sparsities, seeds, out_dir, jobs, force);
        }
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["sparsity"] = r.sparsity;
          d["seed"] = r.seed;
          d["test_accuracy"] = r.test_accuracy;
          d["ece"] = r.ece;
          d["nll"] = r.nll;
          out.append(d);
        }
        return out;
      },
      py::arg("config"), py::arg("sparsities"), py::arg("seeds"), py::arg("out_dir"), py::arg("jobs") = 1,
      py::arg("force") = false);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("method", [](const Checkpoint& c) { return std::string(to_string(c.method)); })
      .def_readonly("seed", &Checkpoint::seed)
      .def_readonly("model", &Checkpoint::model)
      .def_readonly("n_models", &Checkpoint::n_models)
      .def_property_readonly("masks", [](const Checkpoint& c) { return masks_to_numpy(c.masks, c.model); })
      .def("__eq__", [](const Checkpoint& a, const Checkpoint& b) { return a == b; });
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def("save_checkpoint", &save_checkpoint, py::arg("checkpoint"), py::arg("path"));

  m.def(
      "correlate",
      [](const Checkpoint& ckpt, const CArray<float>& x, const CArray<std::int32_t>& y, double keep_prob,
         std::size_t draws, std::uint64_t seed) {
        const Dataset data = make_dataset(x, y, ckpt.model.output_dim());
        auto rng = Rng::derive(seed, "correlate.random_mask");
        const auto r = correlate(ckpt, data, keep_prob, draws, rng);
        py::dict d;
        d["base_accuracy"] = r.base_accuracy;
        d["mean_masked_accuracy"] = r.mean_masked_accuracy;
        d["accuracy_drop"] = r.accuracy_drop;
        d["draw_accuracies"] = r.draw_accuracies;
        return d;
      },
      py::arg("checkpoint"), py::arg("x"), py::arg("y"), py::arg("keep_prob") = 0.9,
      py::arg("draws") = kDefaultCorrelationDraws, py::arg("seed") = 0);
}

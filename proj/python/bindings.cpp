// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

// Python bindings: task generation, the segmentation network, the update
// routine, meta-training, joint training, UHO, GP/EI and weight analysis.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "microlab/analysis.hpp"
#include "microlab/checkpoint.hpp"
#include "microlab/error.hpp"
#include "microlab/gp.hpp"
#include "microlab/meta.hpp"
#include "microlab/tasks.hpp"
#include "microlab/uho.hpp"

namespace py = pybind11;
using namespace microlab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array a(shape);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

Tensor from_numpy(const Array& a) {
  std::vector<std::size_t> shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

/// (N, H, W) images and masks to examples of shape (1, H, W).
std::vector<Example> examples_from(const Array& images, const Array& masks) {
  if (images.ndim() != 3 || masks.ndim() != 3)
    throw ContractError("expected images and masks of shape (N, H, W)");
  for (int d = 0; d < 3; ++d)
    if (images.shape(d) != masks.shape(d)) throw ContractError("images and masks differ in shape");
  const auto n = static_cast<std::size_t>(images.shape(0));
  const auto h = static_cast<std::size_t>(images.shape(1)), w = static_cast<std::size_t>(images.shape(2));
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double* pi = images.data() + i * h * w;
    const double* pm = masks.data() + i * h * w;
    out.push_back({Tensor({1, h, w}, std::vector<double>(pi, pi + h * w)),
                   Tensor({1, h, w}, std::vector<double>(pm, pm + h * w))});
  }
  return out;
}

Array stack_field(const Task& t, bool masks) {
  if (t.examples.empty()) return Array(std::vector<py::ssize_t>{0, 0, 0});
  const Tensor& first = t.examples[0].image;
  const auto h = first.dim(1), w = first.dim(2);
  Array a(std::vector<py::ssize_t>{static_cast<py::ssize_t>(t.examples.size()), static_cast<py::ssize_t>(h),
                                   static_cast<py::ssize_t>(w)});
  double* dst = a.mutable_data();
  for (const auto& ex : t.examples) {
    const Tensor& src = masks ? ex.mask : ex.image;
    dst = std::copy(src.data().begin(), src.data().end(), dst);
  }
  return a;
}

SegmentationLearner learner_for(const ModelConfig& cfg) { return SegmentationLearner(SegmentationNet(cfg)); }

}  // namespace

PYBIND11_MODULE(_microlab, m) {
  m.doc() = "Few-shot segmentation meta-learning core";

  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  // --- data ---------------------------------------------------------------
  py::class_<Task>(m, "Task")
      .def(py::init([](std::string id, const Array& images, const Array& masks) {
             Task t;
             t.id = std::move(id);
             t.examples = examples_from(images, masks);
             return t;
           }),
           py::arg("id"), py::arg("images"), py::arg("masks"))
      .def_readonly("id", &Task::id)
      .def_property_readonly("images", [](const Task& t) { return stack_field(t, false); })
      .def_property_readonly("masks", [](const Task& t) { return stack_field(t, true); })
      .def_property_readonly("generated", [](const Task& t) { return t.family.has_value(); })
      .def("__len__", [](const Task& t) { return t.examples.size(); })
      .def("__repr__", [](const Task& t) {
        return "<Task " + t.id + " with " + std::to_string(t.examples.size()) + " examples>";
      });

  m.def("generate_task_library", &generate_task_library, py::arg("families") = 24, py::arg("examples") = 10,
        py::arg("hw") = 32, py::arg("seed") = 1);
  m.def("deepen_task", &deepen_task, py::arg("task"), py::arg("pool_size"));
  m.def("save_dataset", [](const std::vector<Task>& tasks, const std::filesystem::path& root) {
    save_dataset(tasks, root);
  });
  m.def("load_dataset", &load_dataset);
  m.def(
      "split_tasks",
      [](const std::vector<Task>& tasks, std::array<double, 3> fractions, std::uint64_t seed) {
        const TaskSplit s = split_tasks(tasks, fractions, seed);
        return py::make_tuple(select_tasks(tasks, s.train_tasks), select_tasks(tasks, s.val_tasks),
                              select_tasks(tasks, s.test_tasks));
      },
      py::arg("tasks"), py::arg("fractions") = std::array<double, 3>{0.6, 0.2, 0.2}, py::arg("seed") = 1);

  // --- model --------------------------------------------------------------
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("input_hw", &ModelConfig::input_hw)
      .def_readwrite("base_channels", &ModelConfig::base_channels)
      .def_readwrite("encoder_stages", &ModelConfig::encoder_stages)
      .def_readwrite("rsd_skip_stage", &ModelConfig::rsd_skip_stage)
      .def_readwrite("rsd_out_channels", &ModelConfig::rsd_out_channels)
      .def_readwrite("dropout_rate", &ModelConfig::dropout_rate)
      .def_readwrite("num_output_channels", &ModelConfig::num_output_channels)
      .def("validate", &ModelConfig::validate)
      .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; });
  m.def("expected_param_count", &expected_param_count);

  py::class_<ParameterSet>(m, "Parameters")
      .def_property_readonly("num_params", &ParameterSet::num_params)
      .def("flatten", [](const ParameterSet& p) {
        const auto v = p.flatten();
        Array a(static_cast<py::ssize_t>(v.size()));
        std::copy(v.begin(), v.end(), a.mutable_data());
        return a;
      })
      .def("unflatten", [](ParameterSet& p, const Array& a) {
        p.unflatten(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())));
      })
      .def("block_names", &ParameterSet::block_names)
      .def("names", [](const ParameterSet& p) {
        std::vector<std::string> out;
        for (const auto& e : p.params()) out.push_back(e.name);
        return out;
      })
      .def("param", [](const ParameterSet& p, const std::string& name) { return to_numpy(p.param(name)); })
      .def("squared_norm", &ParameterSet::squared_norm)
      .def("identical", &ParameterSet::identical)
      .def("copy", [](const ParameterSet& p) { return p; });

  m.def(
      "build_params",
      [](const ModelConfig& cfg, std::uint64_t seed) {
        Rng rng(seed);
        return SegmentationNet(cfg).build(rng);
      },
      py::arg("config"), py::arg("seed") = 0);
  m.def(
      "predict_probs",
      [](const ModelConfig& cfg, const ParameterSet& p, const Array& images) {
        return to_numpy(SegmentationNet(cfg).predict_probs(p, from_numpy(images)));
      },
      py::arg("config"), py::arg("params"), py::arg("images"), "Images (N, 1, H, W) to probabilities (N, C, H, W).");
  m.def("predict_mask", [](const Array& probs) { return to_numpy(predict_mask(from_numpy(probs))); });

  // --- losses -------------------------------------------------------------
  m.def(
      "soft_iou", [](const Array& y, const Array& yhat, double eps) {
        return soft_iou(from_numpy(y), from_numpy(yhat), eps);
      },
      py::arg("y"), py::arg("yhat"), py::arg("eps") = kDefaultIouEps);
  m.def(
      "bce", [](const Array& y, const Array& yhat) { return bce(from_numpy(y), from_numpy(yhat)); }, py::arg("y"),
      py::arg("yhat"));
  m.def("dice_from_iou", &dice_from_iou);
  m.def(
      "composite_loss",
      [](const Array& y, const Array& yhat, double eps) {
        const CompositeLoss l = composite_loss(from_numpy(y), from_numpy(yhat), nullptr, 0.0, eps);
        py::dict d;
        d["H"] = l.value.H;
        d["IoU"] = l.value.IoU;
        d["J"] = l.value.J;
        d["total"] = l.value.total;
        d["grad"] = to_numpy(l.grad_yhat);
        return d;
      },
      py::arg("y"), py::arg("yhat"), py::arg("eps") = kDefaultIouEps,
      "Data terms H - log J and their gradient with respect to yhat.");

  // --- update routine and meta-learning -----------------------------------
  py::enum_<OmegaTag>(m, "OmegaTag").value("train", OmegaTag::train).value("test", OmegaTag::test);
  py::class_<UpdateHyperparams>(m, "UpdateHyperparams")
      .def(py::init<>())
      .def_readwrite("lr", &UpdateHyperparams::lr)
      .def_readwrite("steps", &UpdateHyperparams::steps)
      .def_readwrite("inner_batch", &UpdateHyperparams::inner_batch)
      .def_readwrite("dropout_rate", &UpdateHyperparams::dropout_rate)
      .def_readwrite("aug_rate", &UpdateHyperparams::aug_rate)
      .def_readwrite("l2_lambda", &UpdateHyperparams::l2_lambda)
      .def_readwrite("mode_tag", &UpdateHyperparams::mode_tag)
      .def("validate", &UpdateHyperparams::validate)
      .def("__eq__", [](const UpdateHyperparams& a, const UpdateHyperparams& b) { return a == b; })
      .def("__repr__", [](const UpdateHyperparams& w) {
        return "<UpdateHyperparams lr=" + std::to_string(w.lr) + " steps=" + std::to_string(w.steps) + ">";
      });

  py::enum_<MetaAlgorithm>(m, "MetaAlgorithm")
      .value("reptile", MetaAlgorithm::reptile)
      .value("fomaml_disjoint", MetaAlgorithm::fomaml_disjoint)
      .value("fomaml_star", MetaAlgorithm::fomaml_star);
  py::class_<MetaConfig>(m, "MetaConfig")
      .def(py::init<>())
      .def_readwrite("algorithm", &MetaConfig::algorithm)
      .def_readwrite("meta_batch", &MetaConfig::meta_batch)
      .def_readwrite("meta_steps", &MetaConfig::meta_steps)
      .def_readwrite("meta_lr_initial", &MetaConfig::meta_lr_initial)
      .def_readwrite("meta_lr_final", &MetaConfig::meta_lr_final)
      .def_readwrite("train_shots", &MetaConfig::train_shots)
      .def_readwrite("inner", &MetaConfig::inner)
      .def_readwrite("threads", &MetaConfig::threads)
      .def("meta_lr", &MetaConfig::meta_lr);

  m.def(
      "adapt_and_eval",
      [](const ModelConfig& cfg, const ParameterSet& theta, const Array& train_images, const Array& train_masks,
         const Array& eval_images, const Array& eval_masks, const UpdateHyperparams& omega, std::uint64_t seed) {
        const auto train = examples_from(train_images, train_masks);
        const auto eval = examples_from(eval_images, eval_masks);
        Rng rng(seed);
        py::gil_scoped_release release;
        return adapt_and_eval(learner_for(cfg), theta, train, eval, omega, rng).iou;
      },
      py::arg("config"), py::arg("params"), py::arg("train_images"), py::arg("train_masks"),
      py::arg("eval_images"), py::arg("eval_masks"), py::arg("omega") = UpdateHyperparams{}, py::arg("seed") = 0);
  m.def(
      "inner_update",
      [](const ModelConfig& cfg, const ParameterSet& theta, const Array& images, const Array& masks,
         const UpdateHyperparams& omega, std::uint64_t seed) {
        const auto data = examples_from(images, masks);
        Rng rng(seed);
        py::gil_scoped_release release;
        return inner_update(learner_for(cfg), theta, data, omega, rng);
      },
      py::arg("config"), py::arg("params"), py::arg("images"), py::arg("masks"),
      py::arg("omega") = UpdateHyperparams{}, py::arg("seed") = 0);
  m.def(
      "meta_train",
      [](const ModelConfig& cfg, const ParameterSet& theta, const std::vector<Task>& tasks, const MetaConfig& mc,
         std::uint64_t seed, std::function<void(std::size_t, double, double)> on_step) {
        Rng rng(seed);
        MetaCallbacks cb;
        if (on_step) cb.on_step = [&](std::size_t s, double lr, double loss) {
          py::gil_scoped_acquire acquire;
          on_step(s, lr, loss);
        };
        py::gil_scoped_release release;
        return meta_train(learner_for(cfg), theta, tasks, mc, rng, cb);
      },
      py::arg("config"), py::arg("params"), py::arg("tasks"), py::arg("meta_config") = MetaConfig{},
      py::arg("seed") = 0, py::arg("on_step") = nullptr);

  py::class_<JointConfig>(m, "JointConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &JointConfig::epochs)
      .def_readwrite("batch", &JointConfig::batch)
      .def_readwrite("lr", &JointConfig::lr)
      .def_readwrite("l2_lambda", &JointConfig::l2_lambda)
      .def_readwrite("dropout_rate", &JointConfig::dropout_rate)
      .def_readwrite("aug_rate", &JointConfig::aug_rate);
  m.def(
      "joint_train",
      [](const ModelConfig& cfg, const std::vector<Task>& tasks, const JointConfig& jc, std::uint64_t seed) {
        Rng rng(seed);
        JointTrainResult r;
        {
          py::gil_scoped_release release;
          r = joint_train(cfg, tasks, jc, rng);
        }
        return py::make_tuple(std::move(r.params), r.epoch_loss, r.class_names);
      },
      py::arg("config"), py::arg("tasks"), py::arg("joint_config") = JointConfig{}, py::arg("seed") = 0,
      "Returns (params with a fresh binary head, per-epoch loss, class names).");

  // --- UHO and GP ---------------------------------------------------------
  py::class_<SearchSpace>(m, "SearchSpace")
      .def(py::init<>())
      .def_static("extended_space", &SearchSpace::extended_space)
      .def_readwrite("lr_low", &SearchSpace::lr_low)
      .def_readwrite("lr_high", &SearchSpace::lr_high)
      .def_readwrite("max_steps", &SearchSpace::max_steps)
      .def_readwrite("patience", &SearchSpace::patience)
      .def_readonly("extended", &SearchSpace::extended)
      .def("decode", &SearchSpace::decode, py::arg("unit"), py::arg("base") = UpdateHyperparams{})
      .def("encode", &SearchSpace::encode);
  m.def(
      "uho_optimize",
      [](const ModelConfig& cfg, const ParameterSet& theta, const std::vector<Task>& val_tasks,
         const SearchSpace& space, const UpdateHyperparams& base, std::size_t budget, std::size_t episodes,
         std::size_t adapt_shots, std::uint64_t seed) {
        UHOOptions opt;
        opt.budget = budget;
        opt.episodes = episodes;
        opt.adapt_shots = adapt_shots;
        Rng rng(seed);
        UHOResult r;
        {
          py::gil_scoped_release release;
          r = uho_optimize(learner_for(cfg), theta, val_tasks, space, base, opt, rng);
        }
        py::list trace;
        for (const auto& row : r.trace) trace.append(py::make_tuple(row.omega, row.objective));
        return py::make_tuple(r.omega_test, trace);
      },
      py::arg("config"), py::arg("params"), py::arg("val_tasks"), py::arg("space") = SearchSpace{},
      py::arg("base") = UpdateHyperparams{}, py::arg("budget") = 16, py::arg("episodes") = 32,
      py::arg("adapt_shots") = 5, py::arg("seed") = 0, "Returns (omega_test, [(omega, objective), ...]).");

  py::class_<GPModel>(m, "GPModel")
      .def_static("fit_ml", &GPModel::fit_ml, py::arg("xs"), py::arg("ys"))
      .def("predict",
           [](const GPModel& g, const std::vector<double>& x) {
             const Posterior p = g.predict(x);
             return py::make_tuple(p.mean, p.var);
           })
      .def_property_readonly("log_marginal_likelihood", &GPModel::log_marginal_likelihood)
      .def_property_readonly("length_scales", [](const GPModel& g) { return g.hyper().length_scales; });
  m.def(
      "gp_fit",
      [](std::vector<std::vector<double>> xs, std::vector<double> ys, std::vector<double> length_scales,
         double signal_var, double noise_var) {
        KernelHyper h;
        h.length_scales = std::move(length_scales);
        h.signal_var = signal_var;
        h.noise_var = noise_var;
        return GPModel::fit(std::move(xs), std::move(ys), h);
      },
      py::arg("xs"), py::arg("ys"), py::arg("length_scales"), py::arg("signal_var") = 1.0,
      py::arg("noise_var") = kNoiseFloor);
  m.def("expected_improvement", py::overload_cast<double, double, double>(&expected_improvement), py::arg("mu"),
        py::arg("sigma"), py::arg("best"));

  // --- analysis and files -------------------------------------------------
  m.def("weight_distances", [](const ParameterSet& a, const ParameterSet& b) {
    const DistanceReport r = weight_distances(a, b);
    py::dict blocks;
    for (const auto& bd : r.per_block) {
      py::object d2 = bd.d2 ? py::object(py::float_(*bd.d2)) : py::object(py::none());
      blocks[py::str(bd.block)] = py::make_tuple(d2, bd.d3);
    }
    return py::make_tuple(r.d1, blocks);
  });
  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("config"), py::arg("params"));
  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path) {
        Checkpoint ck = load_checkpoint(path);
        return py::make_tuple(ck.config, std::move(ck.params));
      },
      py::arg("path"));
  m.def("save_omega", &save_omega, py::arg("path"), py::arg("omega"));
  m.def("load_omega", &load_omega, py::arg("path"));
}

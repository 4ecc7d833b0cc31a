#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "udaforge/config.hpp"
#include "udaforge/confmask.hpp"
#include "udaforge/eval.hpp"
#include "udaforge/losses.hpp"
#include "udaforge/nets.hpp"
#include "udaforge/toyscenes.hpp"
#include "udaforge/trainer.hpp"

namespace py = pybind11;
using namespace udaforge;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape;
  for (py::ssize_t d = 0; d < a.ndim(); ++d) shape.push_back(static_cast<int>(a.shape(d)));
  std::vector<double> vals(a.data(), a.data() + a.size());
  return Tensor::from_values(std::move(shape), std::move(vals));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  auto v = t.values();
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

LabelGrid labels_from_array(const py::array_t<std::uint8_t, py::array::c_style>& a) {
  check(a.ndim() == 2, "shape", "label array must be 2-d [H,W]");
  LabelGrid g;
  g.h = static_cast<int>(a.shape(0));
  g.w = static_cast<int>(a.shape(1));
  g.v.assign(a.data(), a.data() + a.size());
  return g;
}

py::array_t<std::uint8_t> array_from_labels(const LabelGrid& g) {
  py::array_t<std::uint8_t> a({py::ssize_t(g.h), py::ssize_t(g.w)});
  std::copy(g.v.begin(), g.v.end(), a.mutable_data());
  return a;
}

RealGrid grid_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  check(a.ndim() == 2, "shape", "confidence array must be 2-d [H,W]");
  RealGrid g;
  g.h = static_cast<int>(a.shape(0));
  g.w = static_cast<int>(a.shape(1));
  g.v.assign(a.data(), a.data() + a.size());
  return g;
}

py::array_t<double> array_from_grid(const RealGrid& g) {
  py::array_t<double> a({py::ssize_t(g.h), py::ssize_t(g.w)});
  std::copy(g.v.begin(), g.v.end(), a.mutable_data());
  return a;
}

Mask mask_from_array(const py::array_t<std::uint8_t, py::array::c_style>& a) {
  check(a.ndim() == 2, "shape", "mask array must be 2-d [H,W]");
  Mask m;
  m.h = static_cast<int>(a.shape(0));
  m.w = static_cast<int>(a.shape(1));
  m.v.assign(a.data(), a.data() + a.size());
  return m;
}

py::array_t<std::uint8_t> array_from_mask(const Mask& m) {
  py::array_t<std::uint8_t> a({py::ssize_t(m.h), py::ssize_t(m.w)});
  std::copy(m.v.begin(), m.v.end(), a.mutable_data());
  return a;
}

Domain domain_from_name(const std::string& name) {
  if (name == "source") return Domain::source;
  if (name == "target") return Domain::target;
  fail("usage", "domain must be \"source\" or \"target\", got \"" + name + "\"");
}

py::dict metrics_to_dict(const Metrics& m) {
  py::dict d;
  d["checkpoint"] = m.checkpoint;
  d["dataset"] = m.dataset;
  py::list per;
  for (const auto& v : m.per_class) {
    if (v)
      per.append(*v);
    else
      per.append(py::none());
  }
  d["per_class"] = per;
  d["miou"] = m.miou;
  d["pixels_evaluated"] = m.pixels_evaluated;
  return d;
}

py::dict record_to_dict(const TrainStepRecord& r) {
  py::dict d;
  d["step"] = r.step;
  d["lr"] = r.lr;
  d["l_g1"] = r.l_g1;
  d["l_g2_s"] = r.l_g2_s;
  d["l_g2_t"] = r.l_g2_t;
  d["l_g3"] = r.l_g3;
  d["l_d"] = r.l_d;
  d["mask_fraction"] = r.mask_fraction;
  d["ms"] = r.ms;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "adversarial + self-teaching domain adaptation on procedural scenes";

  py::register_exception<Error>(m, "UdaforgeError");

  m.def("default_config", [] { return run_config_to_json(RunConfig{}); },
        "default run configuration as a JSON string");

  m.def("apply_preset",
        [](const std::string& config_json, const std::string& preset) {
          RunConfig cfg = run_config_from_json(config_json);
          apply_preset(cfg.train, preset);
          return run_config_to_json(cfg);
        },
        py::arg("config_json"), py::arg("preset"));

  m.def("preset_names", [] { return preset_names(); });

  m.def("generate_scene",
        [](const std::string& spec_json, const std::string& domain, std::uint64_t seed) {
          SceneSpec spec = scene_spec_from_json(spec_json);
          Sample s = generate_scene(spec, domain_from_name(domain), seed);
          return py::make_tuple(array_from_tensor(s.image), array_from_labels(s.labels));
        },
        py::arg("spec_json"), py::arg("domain"), py::arg("seed"),
        "render one scene; returns (image [3,H,W] float, labels [H,W] uint8)");

  m.def("write_dataset",
        [](const std::string& dir, const std::string& spec_json, const std::string& domain,
           int count, std::uint64_t seed) {
          write_dataset(dir, scene_spec_from_json(spec_json), domain_from_name(domain), count,
                        seed);
        },
        py::arg("dir"), py::arg("spec_json"), py::arg("domain"), py::arg("count"),
        py::arg("seed"));

  m.def("one_hot",
        [](const py::array_t<std::uint8_t, py::array::c_style>& labels, int num_classes) {
          return array_from_tensor(one_hot(labels_from_array(labels), num_classes));
        },
        py::arg("labels"), py::arg("num_classes"));

  m.def("pseudo_labels",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& probmap) {
          return array_from_labels(pseudo_labels(tensor_from_array(probmap)));
        },
        py::arg("probmap"), "per-pixel argmax of a [C,H,W] probability map");

  m.def("threshold_mask",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& conf,
           double t_u) { return array_from_mask(threshold_mask(grid_from_array(conf), t_u)); },
        py::arg("conf"), py::arg("t_u") = 0.2);

  m.def("grow_mask",
        [](const py::array_t<std::uint8_t, py::array::c_style>& seeds,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& probmap,
           double t_r, int connectivity, int max_rounds) {
          return array_from_mask(grow_mask(mask_from_array(seeds), tensor_from_array(probmap),
                                           t_r, connectivity, max_rounds));
        },
        py::arg("seeds"), py::arg("probmap"), py::arg("t_r") = 1.0 - 1e-5,
        py::arg("connectivity") = 4, py::arg("max_rounds") = 0);

  m.def("reliability_weights",
        [](const py::array_t<std::uint8_t, py::array::c_style>& grown,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& conf) {
          return array_from_grid(reliability_weights(mask_from_array(grown),
                                                     grid_from_array(conf)));
        },
        py::arg("grown"), py::arg("conf"));

  m.def("class_frequencies",
        [](const std::string& dataset_dir) {
          return class_frequencies(load_dataset(dataset_dir, false)).w;
        },
        py::arg("dataset_dir"), "per-class weights 1 - freq estimated over a labeled dataset");

  m.def("poly_lr",
        [](int step, int total_steps, double lr_start, double lr_end, double lr_power) {
          TrainConfig cfg;
          cfg.total_steps = total_steps;
          cfg.lr_start = lr_start;
          cfg.lr_end = lr_end;
          cfg.lr_power = lr_power;
          return poly_lr(step, cfg);
        },
        py::arg("step"), py::arg("total_steps"), py::arg("lr_start") = 1e-4,
        py::arg("lr_end") = 1e-6, py::arg("lr_power") = 0.9);

  m.def("loss_supervised_ce",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& probmap,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& onehot) {
          Graph g(false);
          return loss_supervised_ce(g, tensor_from_array(probmap), tensor_from_array(onehot))
              .item();
        },
        py::arg("probmap"), py::arg("onehot"));

  m.def("loss_discriminator",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& d_on_fake,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& d_on_real) {
          Graph g(false);
          return loss_discriminator(g, tensor_from_array(d_on_fake), tensor_from_array(d_on_real))
              .item();
        },
        py::arg("d_on_fake"), py::arg("d_on_real"));

  m.def("loss_adversarial",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& d_on_fake) {
          Graph g(false);
          return loss_adversarial(g, tensor_from_array(d_on_fake)).item();
        },
        py::arg("d_on_fake"));

  m.def("loss_self_teach",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& probmap,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& weights,
           const std::vector<double>& class_weights) {
          Graph g(false);
          ClassWeights cw;
          cw.w = class_weights;
          return loss_self_teach(g, tensor_from_array(probmap), tensor_from_array(weights), cw)
              .item();
        },
        py::arg("probmap"), py::arg("weights"), py::arg("class_weights"));

  m.def("train",
        [](const std::string& config_json, const std::string& source_dir,
           const std::string& target_dir, const std::string& out_dir, py::object progress) {
          RunConfig cfg = run_config_from_json(config_json);
          ProgressFn fn;
          if (!progress.is_none())
            fn = [&progress](const TrainStepRecord& r) { progress(record_to_dict(r)); };
          TrainLog log = train(cfg.train, source_dir, target_dir, out_dir, fn);
          py::list out;
          for (const auto& r : log.steps) out.append(record_to_dict(r));
          return out;
        },
        py::arg("config_json"), py::arg("source_dir"), py::arg("target_dir"), py::arg("out_dir"),
        py::arg("progress") = py::none(),
        "run the training loop; returns the per-step log as a list of dicts");

  m.def("evaluate_checkpoint",
        [](const std::string& checkpoint, const std::string& dataset) {
          return metrics_to_dict(evaluate_checkpoint(checkpoint, dataset));
        },
        py::arg("checkpoint"), py::arg("dataset"));

  m.def("segment",
        [](const std::string& checkpoint,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& image) {
          GeneratorParams G = generator_from_checkpoint(checkpoint);
          Tensor img = tensor_from_array(image);
          check(img.shape().size() == 3 && img.dim(0) == 3, "shape", "image must be [3,H,W]");
          const int h = img.dim(1), w = img.dim(2);
          std::vector<double> v(img.values().begin(), img.values().end());
          Graph g(false);
          Tensor probs = generator_forward(g, G, Tensor::from_values({1, 3, h, w}, std::move(v)));
          std::vector<double> out(probs.values().begin(), probs.values().end());
          return array_from_tensor(
              Tensor::from_values({G.num_classes, h, w}, std::move(out)));
        },
        py::arg("checkpoint"), py::arg("image"),
        "class probabilities [C,H,W] for one [3,H,W] image");

  m.def("miou",
        [](const py::array_t<std::uint8_t, py::array::c_style>& pred,
           const py::array_t<std::uint8_t, py::array::c_style>& gt, int num_classes) {
          ConfusionMatrix cm(num_classes);
          confusion_accumulate(labels_from_array(pred), labels_from_array(gt), cm);
          MiouResult r = miou(cm);
          py::list per;
          for (const auto& v : r.per_class) {
            if (v)
              per.append(*v);
            else
              per.append(py::none());
          }
          return py::make_tuple(per, r.mean);
        },
        py::arg("pred"), py::arg("gt"), py::arg("num_classes"),
        "(per-class IoU list with None for absent classes, mean IoU)");
}

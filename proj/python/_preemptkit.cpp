// Thin bindings: images cross as float32 numpy arrays, configs and reports as
// JSON text (the Python package wraps both in dicts).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "preemptkit/attacks.hpp"
#include "preemptkit/dataset.hpp"
#include "preemptkit/defense.hpp"
#include "preemptkit/gradcheck.hpp"
#include "preemptkit/metrics.hpp"
#include "preemptkit/network.hpp"
#include "preemptkit/pipeline.hpp"
#include "preemptkit/reversion.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

pk::Shape image_shape(const Array& a, py::ssize_t skip) {
  if (a.ndim() - skip != 3) throw pk::ShapeError("expected images shaped [C,H,W] (or [N,C,H,W] for a batch)");
  return {static_cast<std::size_t>(a.shape(skip)), static_cast<std::size_t>(a.shape(skip + 1)),
          static_cast<std::size_t>(a.shape(skip + 2))};
}

pk::Tensor to_tensor(const Array& a) {
  const pk::Shape s = image_shape(a, 0);
  return pk::Tensor(s, std::vector<float>(a.data(), a.data() + s.size()));
}

std::vector<pk::Tensor> to_batch(const Array& a) {
  const pk::Shape s = image_shape(a, 1);
  std::vector<pk::Tensor> out;
  out.reserve(static_cast<std::size_t>(a.shape(0)));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    const float* p = a.data() + i * static_cast<py::ssize_t>(s.size());
    out.emplace_back(s, std::vector<float>(p, p + s.size()));
  }
  return out;
}

Array from_tensor(const pk::Tensor& t) {
  const pk::Shape s = t.shape();
  Array out({s.channels, s.height, s.width});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Array from_batch(const std::vector<pk::Tensor>& ts, pk::Shape fallback) {
  const pk::Shape s = ts.empty() ? fallback : ts.front().shape();
  Array out({ts.size(), s.channels, s.height, s.width});
  float* p = out.mutable_data();
  for (const auto& t : ts) p = std::copy(t.data().begin(), t.data().end(), p);
  return out;
}

std::vector<std::uint64_t> default_ids(const std::vector<std::uint64_t>& ids, std::size_t n) {
  if (!ids.empty()) return ids;
  std::vector<std::uint64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

pk::Dataset make_dataset(const Array& images, const std::vector<std::size_t>& labels, std::size_t classes,
                         const std::vector<std::uint64_t>& ids) {
  pk::Dataset d;
  d.images = to_batch(images);
  d.labels = labels;
  d.ids = default_ids(ids, d.images.size());
  d.classes = classes;
  d.validate();
  return d;
}

}  // namespace

PYBIND11_MODULE(_preemptkit, m) {
  m.doc() = "preemptkit native core";

  auto base = py::register_exception<pk::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<pk::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<pk::ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<pk::FormatError>(m, "FormatError", base.ptr());
  py::register_exception<pk::NumericError>(m, "NumericError", base.ptr());

  py::class_<pk::Model>(m, "Model")
      .def_static(
          "initialized",
          [](const std::string& definition, std::uint64_t seed) {
            return pk::Model::initialized(pk::NetworkDef::from_json(json::parse(definition)), seed);
          },
          py::arg("definition"), py::arg("seed"))
      .def_static(
          "load",
          [](const std::string& path) { return pk::pipeline::load_model(path); }, py::arg("path"))
      .def_static(
          "load_weights",
          [](const std::string& definition, const std::string& path) {
            return pk::load_weights(pk::NetworkDef::from_json(json::parse(definition)), path);
          },
          py::arg("definition"), py::arg("path"))
      .def("save_weights", [](const pk::Model& self, const std::string& path) { pk::save_weights(self, path); })
      .def_property_readonly("definition", [](const pk::Model& self) { return self.def().to_json().dump(); })
      .def_property_readonly("fingerprint", [](const pk::Model& self) { return pk::weights_fingerprint(self); })
      .def_property_readonly("train_accuracy", [](const pk::Model& self) { return self.params().train_accuracy; })
      .def("logits", [](const pk::Model& self, const Array& x) { return self.forward(to_tensor(x)); })
      .def("predict",
           [](const pk::Model& self, const Array& xs) {
             const auto batch = to_batch(xs);
             std::vector<std::size_t> out(batch.size());
             py::gil_scoped_release release;
             for (std::size_t i = 0; i < batch.size(); ++i) out[i] = self.predict(batch[i]);
             return out;
           })
      .def("input_gradient", [](const pk::Model& self, const Array& x, std::size_t label) {
        const auto lg = self.input_gradient(to_tensor(x), label);
        return py::make_tuple(lg.loss, from_tensor(lg.grad));
      });

  m.def(
      "synth_dataset",
      [](const std::string& spec, std::uint64_t seed) {
        const pk::Dataset d = pk::synth_dataset(pk::SynthSpec::from_json(json::parse(spec)), seed);
        return py::make_tuple(from_batch(d.images, {}), d.labels, d.ids);
      },
      py::arg("spec"), py::arg("seed"));

  m.def(
      "train",
      [](const std::string& definition, const Array& images, const std::vector<std::size_t>& labels,
         std::size_t classes, const std::string& config) {
        const pk::NetworkDef def = pk::NetworkDef::from_json(json::parse(definition));
        const pk::TrainConfig tc = pk::TrainConfig::from_json(json::parse(config));
        const pk::Dataset data = make_dataset(images, labels, classes, {});
        py::gil_scoped_release release;
        return tc.adversarial ? pk::train_adversarial(def, data, tc) : pk::train_standard(def, data, tc);
      },
      py::arg("definition"), py::arg("images"), py::arg("labels"), py::arg("classes"), py::arg("config"));

  m.def("reference_definition", [](const std::vector<std::size_t>& shape, std::size_t classes, std::size_t filters) {
    if (shape.size() != 3) throw pk::ShapeError("shape must be [C,H,W]");
    return pk::NetworkDef::reference({shape[0], shape[1], shape[2]}, classes, filters).to_json().dump();
  });
  m.def("linear_definition", [](const std::vector<std::size_t>& shape, std::size_t classes) {
    if (shape.size() != 3) throw pk::ShapeError("shape must be [C,H,W]");
    return pk::NetworkDef::linear({shape[0], shape[1], shape[2]}, classes).to_json().dump();
  });

  m.def(
      "defend",
      [](const pk::Model& classifier, const pk::Model& backbone, const Array& images,
         const std::vector<std::uint64_t>& ids, const std::string& config) {
        const auto xs = to_batch(images);
        const auto use_ids = default_ids(ids, xs.size());
        const pk::DefenseConfig dc = pk::DefenseConfig::from_json(json::parse(config));
        std::vector<pk::Tensor> robust;
        std::vector<std::size_t> labels;
        {
          py::gil_scoped_release release;
          for (auto& r : pk::batch_defend(classifier, backbone, xs, use_ids, dc)) {
            robust.push_back(std::move(r.robust));
            labels.push_back(r.label_used);
          }
        }
        return py::make_tuple(from_batch(robust, image_shape(images, 1)), labels, dc.fingerprint());
      },
      py::arg("classifier"), py::arg("backbone"), py::arg("images"), py::arg("ids"), py::arg("config"));

  m.def(
      "attack",
      [](const pk::Model& model, const Array& images, const std::vector<std::size_t>& labels,
         const std::vector<std::uint64_t>& ids, const std::string& budget) {
        const auto xs = to_batch(images);
        const auto use_ids = default_ids(ids, xs.size());
        const pk::AttackBudget b = pk::AttackBudget::from_json(json::parse(budget));
        std::vector<pk::Tensor> out;
        {
          py::gil_scoped_release release;
          out = pk::attack_batch(model, xs, labels, use_ids, b);
        }
        return from_batch(out, image_shape(images, 1));
      },
      py::arg("model"), py::arg("images"), py::arg("labels"), py::arg("ids"), py::arg("budget"));

  m.def(
      "revert",
      [](const pk::Model& classifier, const pk::Model& backbone, const Array& robust,
         const std::vector<std::uint64_t>& ids, const std::string& config) {
        const auto xs = to_batch(robust);
        const auto use_ids = default_ids(ids, xs.size());
        const pk::DefenseConfig dc = pk::DefenseConfig::from_json(json::parse(config));
        std::vector<pk::Tensor> out(xs.size());
        {
          py::gil_scoped_release release;
          for (std::size_t i = 0; i < xs.size(); ++i) {
            pk::DefenseConfig local = dc;
            local.seed = pk::sample_seed(dc.seed, use_ids[i]);
            const pk::DefenseFn defense = [&](const pk::Tensor& t) {
              return pk::fast_preemption(classifier, backbone, t, local).robust;
            };
            out[i] = pk::preemptive_reversion(defense, xs[i]);
          }
        }
        return from_batch(out, image_shape(robust, 1));
      },
      py::arg("classifier"), py::arg("backbone"), py::arg("robust"), py::arg("ids"), py::arg("config"));

  m.def(
      "evaluate",
      [](const pk::Model& victim, const Array& originals, const std::vector<std::size_t>& labels,
         const std::vector<std::uint64_t>& ids, const Array& robust, const std::string& budget,
         const std::string& backbone_fingerprint) {
        const auto xs = to_batch(originals);
        const auto rs = to_batch(robust);
        const auto use_ids = default_ids(ids, xs.size());
        pk::EvalOptions options;
        options.backbone_fingerprint = backbone_fingerprint;
        options.transferable = !backbone_fingerprint.empty();
        const pk::AttackBudget b = pk::AttackBudget::from_json(json::parse(budget));
        py::gil_scoped_release release;
        return pk::clean_robust_eval(victim, xs, labels, use_ids, rs, b, options).to_json().dump();
      },
      py::arg("victim"), py::arg("originals"), py::arg("labels"), py::arg("ids"), py::arg("robust"),
      py::arg("budget"), py::arg("backbone_fingerprint"));

  m.def(
      "reversion_protocol",
      [](const pk::Model& victim, const Array& images, const std::vector<std::size_t>& labels, std::size_t classes,
         const pk::Model& classifier, const pk::Model& backbone, const std::string& config,
         const pk::Model& black_box_backbone, std::uint64_t black_box_seed, double fraction, double noise_sigma,
         std::uint64_t seed) {
        const pk::Dataset data = make_dataset(images, labels, classes, {});
        const pk::DefenseConfig dc = pk::DefenseConfig::from_json(json::parse(config));
        pk::DefenseConfig other = dc;
        other.seed = black_box_seed;
        const pk::Defender defender{&classifier, &backbone, dc};
        const std::vector<pk::ReversionScenario> scenarios{
            {"white_box_pr", pk::ReversionMode::white_box, &classifier, &backbone, dc},
            {"black_box_pr", pk::ReversionMode::black_box, &classifier, &black_box_backbone, other}};
        py::gil_scoped_release release;
        return pk::run_reversion_protocol(victim, data, defender, scenarios, {fraction, noise_sigma, seed})
            .to_json()
            .dump();
      },
      py::arg("victim"), py::arg("images"), py::arg("labels"), py::arg("classes"), py::arg("classifier"),
      py::arg("backbone"), py::arg("config"), py::arg("black_box_backbone"), py::arg("black_box_seed"),
      py::arg("fraction"), py::arg("noise_sigma"), py::arg("seed"));

  m.def(
      "ssim",
      [](const Array& a, const Array& b) {
        const auto r = pk::ssim(to_tensor(a), to_tensor(b));
        return py::make_tuple(r.value, r.fallback);
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "perturbation_grayscale",
      [](const Array& delta, double eps) { return from_tensor(pk::perturbation_grayscale(to_tensor(delta), eps)); },
      py::arg("delta"), py::arg("eps"));

  m.def(
      "gradcheck",
      [](std::size_t nets, std::uint64_t seed) {
        pk::GradcheckOptions o;
        o.nets = nets;
        o.seed = seed;
        py::gil_scoped_release release;
        return pk::run_gradcheck(o).to_json().dump();
      },
      py::arg("nets"), py::arg("seed"));

  m.def(
      "cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "preemptkit");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        return pk::pipeline::main(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"));
}

#include "preemptkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "preemptkit/random.hpp"

namespace pk {

nlohmann::json GradcheckReport::to_json() const {
  return {{"nets", nets},
          {"input_coordinates", input_coordinates},
          {"param_coordinates", param_coordinates},
          {"redrawn_points", redrawn_points},
          {"max_input_rel_error", max_input_rel_error},
          {"max_param_rel_error", max_param_rel_error},
          {"worst_architecture", worst_architecture},
          {"h", options.h},
          {"tolerance", options.tolerance},
          {"min_kink_margin", options.min_kink_margin},
          {"floor", options.floor},
          {"seed", options.seed},
          {"passed", passed()}};
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

using NetD = Network<double>;

struct Candidate {
  NetworkDef def;
  std::string name;
};

Candidate draw_architecture(Rng& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  const Shape input{pick(1, 3), 2 * pick(2, 3), 2 * pick(2, 3)};
  const std::size_t classes = pick(2, 5);
  switch (pick(0, 2)) {
    case 0:
      return {NetworkDef::linear(input, classes), "dense"};
    case 1: {
      NetworkDef def = NetworkDef::reference(input, classes, pick(2, 4));
      return {def, "conv-relu-pool-dense"};
    }
    default: {
      const std::size_t hidden = pick(3, 8);
      NetworkDef def{input,
                     {LayerSpec::flatten(), LayerSpec::dense(input.size(), hidden), LayerSpec::relu(),
                      LayerSpec::dense(hidden, classes)},
                     classes};
      return {def, "dense-relu-dense"};
    }
  }
}

TensorD random_input(const Shape& shape, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TensorD x(shape);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = unit(rng);
  return x;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  if (options.nets == 0) throw ConfigError("gradcheck: nets must be positive");
  if (!(options.h > 0.0)) throw ConfigError("gradcheck: h must be positive");
  GradcheckReport report;
  report.options = options;
  report.nets = options.nets;
  double worst = -1.0;

  for (std::size_t k = 0; k < options.nets; ++k) {
    Rng rng(derive_seed(options.seed, k));
    const Candidate cand = draw_architecture(rng);
    NetD net = NetD::initialized(cand.def, rng());
    std::uniform_real_distribution<double> bias(-0.1, 0.1);
    for (auto& layer : net.params().layers) {
      for (double& b : layer.bias) b = bias(rng);
    }
    const std::size_t classes = cand.def.classes;
    std::uniform_int_distribution<std::size_t> label_dist(0, classes - 1);

    // Two samples away from kinks; the first also serves the input check.
    std::vector<TensorD> xs;
    while (xs.size() < 2) {
      TensorD x = random_input(cand.def.input, rng);
      if (net.kink_margin(x) < options.min_kink_margin) {
        ++report.redrawn_points;
        if (report.redrawn_points > 1000 * options.nets) throw NumericError("gradcheck: cannot find kink-free points");
        continue;
      }
      xs.push_back(std::move(x));
    }
    const std::vector<std::size_t> labels{label_dist(rng), label_dist(rng)};

    double net_worst = 0.0;
    const auto analytic = net.input_gradient(xs[0], labels[0]);
    const TensorD numeric =
        finite_diff_grad([&](const TensorD& p) { return net.loss(p, labels[0]); }, xs[0], options.h);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double e = relative_error(analytic.grad[i], numeric[i], options.floor);
      report.max_input_rel_error = std::max(report.max_input_rel_error, e);
      net_worst = std::max(net_worst, e);
    }
    report.input_coordinates += numeric.size();

    const auto batch = net.param_gradient(std::span<const TensorD>(xs), std::span<const std::size_t>(labels));
    auto mean_loss = [&](const NetD& n) { return 0.5 * (n.loss(xs[0], labels[0]) + n.loss(xs[1], labels[1])); };
    NetD probe = net;
    for (std::size_t li = 0; li < probe.params().layers.size(); ++li) {
      for (int which = 0; which < 2; ++which) {
        auto& values = which == 0 ? probe.params().layers[li].weight : probe.params().layers[li].bias;
        const auto& grads = which == 0 ? batch.grads[li].weight : batch.grads[li].bias;
        for (std::size_t i = 0; i < values.size(); ++i) {
          const double saved = values[i];
          values[i] = saved + options.h;
          const double up = mean_loss(probe);
          values[i] = saved - options.h;
          const double down = mean_loss(probe);
          values[i] = saved;
          const double e = relative_error(grads[i], (up - down) / (2.0 * options.h), options.floor);
          report.max_param_rel_error = std::max(report.max_param_rel_error, e);
          net_worst = std::max(net_worst, e);
          ++report.param_coordinates;
        }
      }
    }
    if (net_worst > worst) {
      worst = net_worst;
      report.worst_architecture = cand.name + " " + cand.def.input.str();
    }
  }
  return report;
}

}  // namespace pk

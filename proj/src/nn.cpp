#include "rlgan/nn.hpp"

#include <algorithm>

namespace rlgan::nn {

GradCheckReport check_gradients(const std::function<double()>& loss, std::span<GradCheckTarget> targets, double h,
                                const std::function<bool()>& smooth_at) {
  GradCheckReport report;
  for (auto& target : targets) {
    if (target.coords.size() != target.analytic.size()) {
      throw ShapeError("gradient check '" + target.name + "': analytic gradient size mismatch");
    }
    for (std::size_t i = 0; i < target.coords.size(); ++i) {
      double& x = *target.coords[i];
      const double saved = x;
      x = saved + h;
      const double plus = loss();
      const bool smooth_plus = !smooth_at || smooth_at();
      x = saved - h;
      const double minus = loss();
      const bool smooth_minus = !smooth_at || smooth_at();
      x = saved;
      if (!smooth_plus || !smooth_minus) {
        ++report.skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(target.analytic[i], numeric);
      ++report.checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst = target.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

std::vector<std::int64_t> activation_pattern(const Sequential<double>& net, const Matrix<double>& input,
                                             std::span<const std::size_t> offsets) {
  std::vector<std::int64_t> pattern;
  Matrix<double> h = input;
  std::vector<Eigen::Index> argmax;
  for (const auto& layer : net.layers()) {
    switch (layer.kind) {
      case LayerKind::dense:
      case LayerKind::pointwise_conv: h = dense_forward(layer.weight.value, layer.bias.value, h); break;
      case LayerKind::relu:
        for (Eigen::Index i = 0; i < h.size(); ++i) pattern.push_back(h.data()[i] > 0.0 ? 1 : 0);
        h = relu_forward(h);
        break;
      case LayerKind::tanh: h = tanh_forward(h); break;
      case LayerKind::max_pool_over_points:
        h = max_pool_forward(h, offsets, argmax);
        pattern.insert(pattern.end(), argmax.begin(), argmax.end());
        break;
    }
  }
  return pattern;
}

GradCheckReport finite_difference_check(Sequential<double>& net, const Matrix<double>& input,
                                        std::span<const std::size_t> offsets, double h, std::uint64_t seed) {
  Matrix<double> x = input;
  const Matrix<double> probe = net.predict(x, offsets);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Matrix<double> weights(probe.rows(), probe.cols());
  for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = dist(rng);

  auto loss = [&] { return (net.predict(x, offsets).array() * weights.array()).sum(); };

  const bool was_frozen = net.frozen();
  net.unfreeze();
  net.zero_grad();
  net.forward(x, offsets);
  const Matrix<double> input_grad = net.backward(weights);
  if (was_frozen) net.freeze();

  std::vector<GradCheckTarget> targets;
  for (auto* p : net.params()) {
    GradCheckTarget t{p->name, {}, {}};
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      t.coords.push_back(p->value.data() + i);
      t.analytic.push_back(p->grad.data()[i]);
    }
    targets.push_back(std::move(t));
  }
  GradCheckTarget in{"input", {}, {}};
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    in.coords.push_back(x.data() + i);
    in.analytic.push_back(input_grad.data()[i]);
  }
  targets.push_back(std::move(in));

  const auto base_pattern = activation_pattern(net, x, offsets);
  auto smooth = [&] { return activation_pattern(net, x, offsets) == base_pattern; };
  return check_gradients(loss, targets, h, smooth);
}

}  // namespace rlgan::nn

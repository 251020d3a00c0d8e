#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rlgan::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a frozen network is asked to train.
class FrozenError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return "(" + std::to_string(rows) + " x " + std::to_string(cols) + ")";
}

template <typename T>
struct Param {
  std::string name;
  std::vector<std::uint32_t> shape;
  Matrix<T> value;
  Matrix<T> grad;

  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
};

enum class LayerKind : std::uint8_t { dense, pointwise_conv, relu, tanh, max_pool_over_points };

// ---------------------------------------------------------------------------
// Per-layer forward/backward rules. Rows are samples (or points), columns are
// features. Dense weights are (out x in); biases are (1 x out).

template <typename T>
Matrix<T> dense_forward(const Matrix<T>& weight, const Matrix<T>& bias, const Matrix<T>& x) {
  if (x.cols() != weight.cols()) {
    throw ShapeError("dense: input " + shape_string(x.rows(), x.cols()) + " incompatible with weight " +
                     shape_string(weight.rows(), weight.cols()));
  }
  Matrix<T> y(x.rows(), weight.rows());
  y.noalias() = x * weight.transpose();
  y.rowwise() += bias.row(0);
  return y;
}

/// Accumulates into `grad_weight`/`grad_bias` and returns the input gradient.
template <typename T>
Matrix<T> dense_backward(const Matrix<T>& weight, const Matrix<T>& x, const Matrix<T>& upstream,
                         Matrix<T>& grad_weight, Matrix<T>& grad_bias) {
  if (upstream.rows() != x.rows() || upstream.cols() != weight.rows()) {
    throw ShapeError("dense backward: upstream " + shape_string(upstream.rows(), upstream.cols()) +
                     " incompatible with output " + shape_string(x.rows(), weight.rows()));
  }
  grad_weight.noalias() += upstream.transpose() * x;
  grad_bias += upstream.colwise().sum();
  return upstream * weight;
}

template <typename T>
Matrix<T> relu_forward(const Matrix<T>& x) {
  return x.cwiseMax(T(0));
}

template <typename T>
Matrix<T> relu_backward(const Matrix<T>& x, const Matrix<T>& upstream) {
  if (upstream.rows() != x.rows() || upstream.cols() != x.cols()) {
    throw ShapeError("relu backward: upstream " + shape_string(upstream.rows(), upstream.cols()) + " vs input " +
                     shape_string(x.rows(), x.cols()));
  }
  return (x.array() > T(0)).select(upstream, T(0));
}

template <typename T>
Matrix<T> tanh_forward(const Matrix<T>& x) {
  return x.array().tanh().matrix();
}

/// Uses the forward output y = tanh(x).
template <typename T>
Matrix<T> tanh_backward(const Matrix<T>& y, const Matrix<T>& upstream) {
  if (upstream.rows() != y.rows() || upstream.cols() != y.cols()) {
    throw ShapeError("tanh backward: upstream " + shape_string(upstream.rows(), upstream.cols()) + " vs output " +
                     shape_string(y.rows(), y.cols()));
  }
  return (upstream.array() * (T(1) - y.array().square())).matrix();
}

/// Column-wise maximum over each group of rows. `offsets` holds group
/// boundaries (size groups + 1); empty means one group spanning all rows.
/// Ties resolve to the lowest row.
template <typename T>
Matrix<T> max_pool_forward(const Matrix<T>& x, std::span<const std::size_t> offsets,
                           std::vector<Eigen::Index>& argmax) {
  std::vector<std::size_t> whole;
  if (offsets.empty()) {
    whole = {0, static_cast<std::size_t>(x.rows())};
    offsets = whole;
  }
  if (offsets.size() < 2 || offsets.back() != static_cast<std::size_t>(x.rows())) {
    throw ShapeError("max_pool: segment offsets do not cover input " + shape_string(x.rows(), x.cols()));
  }
  const std::size_t groups = offsets.size() - 1;
  Matrix<T> y(static_cast<Eigen::Index>(groups), x.cols());
  argmax.assign(groups * static_cast<std::size_t>(x.cols()), 0);
  for (std::size_t g = 0; g < groups; ++g) {
    const auto begin = static_cast<Eigen::Index>(offsets[g]);
    const auto end = static_cast<Eigen::Index>(offsets[g + 1]);
    if (end <= begin) throw ShapeError("max_pool: empty point group");
    auto out = y.row(static_cast<Eigen::Index>(g));
    Eigen::Index* arg = argmax.data() + g * static_cast<std::size_t>(x.cols());
    out = x.row(begin);
    for (Eigen::Index c = 0; c < x.cols(); ++c) arg[c] = begin;
    for (Eigen::Index r = begin + 1; r < end; ++r) {
      const T* row = x.row(r).data();
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        if (row[c] > out[c]) {
          out[c] = row[c];
          arg[c] = r;
        }
      }
    }
  }
  return y;
}

template <typename T>
Matrix<T> max_pool_backward(const Matrix<T>& upstream, const std::vector<Eigen::Index>& argmax,
                            Eigen::Index input_rows) {
  if (argmax.size() != static_cast<std::size_t>(upstream.size())) {
    throw ShapeError("max_pool backward: upstream " + shape_string(upstream.rows(), upstream.cols()) +
                     " does not match the pooled forward output");
  }
  Matrix<T> dx = Matrix<T>::Zero(input_rows, upstream.cols());
  for (Eigen::Index g = 0; g < upstream.rows(); ++g) {
    for (Eigen::Index c = 0; c < upstream.cols(); ++c) {
      dx(argmax[static_cast<std::size_t>(g * upstream.cols() + c)], c) += upstream(g, c);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

template <typename T>
struct Layer {
  LayerKind kind;
  Param<T> weight;  // dense / pointwise_conv only
  Param<T> bias;

  std::vector<Eigen::Index> argmax;  // winners of the last training-mode max pool

  bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::pointwise_conv; }
};

/// Feed-forward stack of layers with hand-written reverse-mode rules.
///
/// `forward` caches activations for a following `backward`; `predict` is a
/// const, cache-free pass usable on shared inference copies.
template <typename T>
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::string name) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }

  Sequential& dense(std::size_t in, std::size_t out) { return add_affine(LayerKind::dense, in, out); }
  Sequential& pointwise_conv(std::size_t in, std::size_t out) {
    return add_affine(LayerKind::pointwise_conv, in, out);
  }
  Sequential& relu() { return add_plain(LayerKind::relu); }
  Sequential& tanh() { return add_plain(LayerKind::tanh); }
  Sequential& max_pool_over_points() { return add_plain(LayerKind::max_pool_over_points); }

  /// Uniform in +-sqrt(6 / (fan_in + fan_out)) for weights, zero biases.
  template <typename Engine>
  void init(Engine& rng) {
    for (auto& layer : layers_) {
      if (!layer.has_params()) continue;
      const auto fan_out = static_cast<double>(layer.weight.value.rows());
      const auto fan_in = static_cast<double>(layer.weight.value.cols());
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index i = 0; i < layer.weight.value.size(); ++i) {
        layer.weight.value.data()[i] = static_cast<T>(dist(rng));
      }
      layer.bias.value.setZero();
    }
  }

  Matrix<T> forward(const Matrix<T>& x, std::span<const std::size_t> offsets = {}) {
    const std::size_t n = layers_.size();
    activations_.resize(n + 1);
    activations_[0] = x;
    for (std::size_t k = 0; k < n; ++k) {
      auto& layer = layers_[k];
      const Matrix<T>& in = activations_[k];
      if (fused_relu(k)) {
        // Slot k + 1 (the pre-activation) is never read by backward.
        affine_into(layer, in, activations_[k + 2], true);
        ++k;
        continue;
      }
      Matrix<T>& out = activations_[k + 1];
      switch (layer.kind) {
        case LayerKind::dense:
        case LayerKind::pointwise_conv: affine_into(layer, in, out, false); break;
        case LayerKind::relu: out = in.cwiseMax(T(0)); break;
        case LayerKind::tanh: out = in.array().tanh().matrix(); break;
        case LayerKind::max_pool_over_points: out = max_pool_forward(in, offsets, layer.argmax); break;
      }
    }
    return activations_.back();
  }

  Matrix<T> predict(const Matrix<T>& x, std::span<const std::size_t> offsets = {}) const {
    Matrix<T> h = x;
    Matrix<T> next;
    std::vector<Eigen::Index> argmax;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& layer = layers_[k];
      if (fused_relu(k)) {
        affine_into(layer, h, next, true);
        ++k;
      } else {
        switch (layer.kind) {
          case LayerKind::dense:
          case LayerKind::pointwise_conv: affine_into(layer, h, next, false); break;
          case LayerKind::relu: next = h.cwiseMax(T(0)); break;
          case LayerKind::tanh: next = h.array().tanh().matrix(); break;
          case LayerKind::max_pool_over_points: next = max_pool_forward(h, offsets, argmax); break;
        }
      }
      std::swap(h, next);
    }
    return h;
  }

  /// Accumulates parameter gradients; returns the gradient w.r.t. the input
  /// of the last `forward` call.
  Matrix<T> backward(const Matrix<T>& upstream) {
    if (frozen_) throw FrozenError("backward called on frozen network '" + name_ + "'");
    return backward_impl(upstream, true);
  }

  /// Input gradient only; parameter gradients are left untouched. Allowed on
  /// frozen networks.
  Matrix<T> input_gradient(const Matrix<T>& upstream) { return backward_impl(upstream, false); }

  void zero_grad() {
    for (auto& layer : layers_) {
      if (!layer.has_params()) continue;
      layer.weight.grad.setZero();
      layer.bias.grad.setZero();
    }
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& layer : layers_) {
      if (!layer.has_params()) continue;
      out.push_back(&layer.weight);
      out.push_back(&layer.bias);
    }
    return out;
  }
  std::vector<const Param<T>*> params() const {
    std::vector<const Param<T>*> out;
    for (const auto& layer : layers_) {
      if (!layer.has_params()) continue;
      out.push_back(&layer.weight);
      out.push_back(&layer.bias);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : params()) n += p->size();
    return n;
  }

  /// Cached activation entering layer k (k = layers().size() gives the output)
  /// of the last training-mode forward. The pre-activation slot of a dense
  /// layer directly followed by a ReLU is not populated.
  const Matrix<T>& activation(std::size_t k) const { return activations_.at(k); }

  std::vector<Layer<T>>& layers() { return layers_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }

  void freeze() { frozen_ = true; }
  void unfreeze() { frozen_ = false; }
  bool frozen() const { return frozen_; }

  /// Same architecture and values in another scalar type.
  template <typename U>
  Sequential<U> cast() const {
    Sequential<U> out(name_);
    for (const auto& layer : layers_) {
      if (layer.has_params()) {
        out.add_affine(layer.kind, static_cast<std::size_t>(layer.weight.value.cols()),
                       static_cast<std::size_t>(layer.weight.value.rows()));
        auto& dst = out.layers().back();
        dst.weight.value = layer.weight.value.template cast<U>();
        dst.bias.value = layer.bias.value.template cast<U>();
      } else {
        out.add_plain(layer.kind);
      }
    }
    if (frozen_) out.freeze();
    return out;
  }

  /// θ ← τ·θ_source + (1 − τ)·θ.
  void soft_update_from(const Sequential& source, T tau) {
    auto dst = params();
    auto src = source.params();
    if (dst.size() != src.size()) throw ShapeError("soft update between different architectures");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i]->value.rows() != src[i]->value.rows() || dst[i]->value.cols() != src[i]->value.cols()) {
        throw ShapeError("soft update: parameter '" + dst[i]->name + "' shape mismatch");
      }
      dst[i]->value = tau * src[i]->value + (T(1) - tau) * dst[i]->value;
    }
  }

  Sequential& add_affine(LayerKind kind, std::size_t in, std::size_t out) {
    Layer<T> layer{kind, {}, {}, {}};
    const std::string prefix = name_ + "." + std::to_string(layers_.size());
    layer.weight = Param<T>{prefix + ".weight",
                            {static_cast<std::uint32_t>(out), static_cast<std::uint32_t>(in)},
                            Matrix<T>::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
                            Matrix<T>::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in))};
    layer.bias = Param<T>{prefix + ".bias",
                          {static_cast<std::uint32_t>(out)},
                          Matrix<T>::Zero(1, static_cast<Eigen::Index>(out)),
                          Matrix<T>::Zero(1, static_cast<Eigen::Index>(out))};
    layers_.push_back(std::move(layer));
    return *this;
  }
  Sequential& add_plain(LayerKind kind) {
    layers_.push_back(Layer<T>{kind, {}, {}, {}});
    return *this;
  }

 private:
  bool fused_relu(std::size_t k) const {
    return layers_[k].has_params() && k + 1 < layers_.size() && layers_[k + 1].kind == LayerKind::relu;
  }

  static void affine_into(const Layer<T>& layer, const Matrix<T>& in, Matrix<T>& out, bool relu) {
    const auto& w = layer.weight.value;
    if (in.cols() != w.cols()) {
      throw ShapeError("dense: input " + shape_string(in.rows(), in.cols()) + " incompatible with weight " +
                       shape_string(w.rows(), w.cols()));
    }
    // Eigen's GEMM rounds rows in a partial register block differently from
    // full ones, so point rows are padded to whole blocks. A point's features
    // then do not depend on its position, and max pooling is exactly order
    // independent.
    constexpr Eigen::Index block = Eigen::internal::gebp_traits<T, T>::mr;
    if (layer.kind == LayerKind::pointwise_conv && in.rows() % block != 0) {
      thread_local Matrix<T> padded_, product_;
      const Eigen::Index rows = in.rows();
      padded_.resize((rows / block + 1) * block, in.cols());
      padded_.topRows(rows) = in;
      padded_.bottomRows(padded_.rows() - rows).setZero();
      product_.resize(padded_.rows(), w.rows());
      product_.noalias() = padded_ * w.transpose();
      out = product_.topRows(rows);
    } else {
      out.resize(in.rows(), w.rows());
      out.noalias() = in * w.transpose();
    }
    if (relu) {
      out = (out.rowwise() + layer.bias.value.row(0)).cwiseMax(T(0));
    } else {
      out.rowwise() += layer.bias.value.row(0);
    }
  }

  // Layer k reads activations_[k] and writes activations_[k + 1]. ReLU and
  // tanh differentiate through their outputs (relu(x) > 0 iff x > 0).
  Matrix<T> backward_impl(const Matrix<T>& upstream, bool accumulate) {
    if (activations_.size() != layers_.size() + 1) {
      throw ShapeError("backward called before forward on network '" + name_ + "'");
    }
    Matrix<T>* g = &grad_a_;
    Matrix<T>* other = &grad_b_;
    *g = upstream;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      auto& layer = layers_[k];
      const Matrix<T>& in = activations_[k];
      const Matrix<T>& out = activations_[k + 1];
      switch (layer.kind) {
        case LayerKind::dense:
        case LayerKind::pointwise_conv: {
          const auto& w = layer.weight.value;
          if (g->cols() != w.rows() || g->rows() != in.rows()) {
            throw ShapeError("dense backward: upstream " + shape_string(g->rows(), g->cols()) +
                             " incompatible with output " + shape_string(in.rows(), w.rows()));
          }
          if (accumulate) {
            layer.weight.grad.noalias() += g->transpose() * in;
            layer.bias.grad += g->colwise().sum();
          }
          other->resize(g->rows(), w.cols());
          other->noalias() = (*g) * w;
          std::swap(g, other);
          break;
        }
        case LayerKind::relu:
          if (g->rows() != out.rows() || g->cols() != out.cols()) {
            throw ShapeError("relu backward: upstream " + shape_string(g->rows(), g->cols()) + " vs output " +
                             shape_string(out.rows(), out.cols()));
          }
          *g = (out.array() > T(0)).select(*g, T(0));
          break;
        case LayerKind::tanh:
          if (g->rows() != out.rows() || g->cols() != out.cols()) {
            throw ShapeError("tanh backward: upstream " + shape_string(g->rows(), g->cols()) + " vs output " +
                             shape_string(out.rows(), out.cols()));
          }
          g->array() *= T(1) - out.array().square();
          break;
        case LayerKind::max_pool_over_points: {
          if (layer.argmax.size() != static_cast<std::size_t>(g->size())) {
            throw ShapeError("max_pool backward: upstream " + shape_string(g->rows(), g->cols()) +
                             " does not match the pooled forward output");
          }
          other->setZero(in.rows(), g->cols());
          const Eigen::Index cols = g->cols();
          for (Eigen::Index r = 0; r < g->rows(); ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
              (*other)(layer.argmax[static_cast<std::size_t>(r * cols + c)], c) += (*g)(r, c);
            }
          }
          std::swap(g, other);
          break;
        }
      }
    }
    return *g;
  }

  std::string name_ = "net";
  std::vector<Layer<T>> layers_;
  std::vector<Matrix<T>> activations_;
  Matrix<T> grad_a_;
  Matrix<T> grad_b_;
  bool frozen_ = false;
};

/// Copies parameter values between two networks of identical architecture.
template <typename T, typename U>
void copy_values(const Sequential<T>& from, Sequential<U>& to) {
  auto src = from.params();
  auto dst = to.params();
  if (src.size() != dst.size()) throw ShapeError("copy between different architectures");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->value.rows() != dst[i]->value.rows() || src[i]->value.cols() != dst[i]->value.cols()) {
      throw ShapeError("copy: parameter '" + dst[i]->name + "' shape mismatch");
    }
    dst[i]->value = src[i]->value.template cast<U>();
  }
}

// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are bound to the parameter list given
/// at construction; that list must stay alive and keep its order.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Param<T>*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (auto* p : params_) {
      first_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      second_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    const T lr = static_cast<T>(config_.learning_rate);
    const T eps = static_cast<T>(config_.epsilon);
    const T c1 = static_cast<T>(bc1 == 0.0 ? 1.0 : bc1);
    const T c2 = static_cast<T>(bc2 == 0.0 ? 1.0 : bc2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      if (p.grad.rows() != first_[i].rows() || p.grad.cols() != first_[i].cols()) {
        throw ShapeError("adam: gradient of '" + p.name + "' changed shape");
      }
      auto m = first_[i].array();
      auto v = second_[i].array();
      const auto g = p.grad.array();
      m = b1 * m + (T(1) - b1) * g;
      v = b2 * v + (T(1) - b2) * g.square();
      p.value.array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
    }
  }

  std::uint64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<Matrix<T>>& first_moments() const { return first_; }
  const std::vector<Matrix<T>>& second_moments() const { return second_; }

 private:
  std::vector<Param<T>*> params_;
  AdamConfig config_;
  std::vector<Matrix<T>> first_;
  std::vector<Matrix<T>> second_;
  std::uint64_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Central-difference gradient checking (64-bit).

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst;            // name of the coordinate with the largest error
  std::size_t checked = 0;
  std::size_t skipped = 0;      // coordinates whose perturbation crossed a kink
};

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Generic checker: perturbs each coordinate in `coords` by ±h and compares
/// against `analytic`. `smooth_at` (optional) reports whether the function is
/// differentiable along the perturbation; coordinates failing it are skipped.
struct GradCheckTarget {
  std::string name;
  std::vector<double*> coords;
  std::vector<double> analytic;
};

GradCheckReport check_gradients(const std::function<double()>& loss, std::span<GradCheckTarget> targets,
                                double h = 1e-5, const std::function<bool()>& smooth_at = {});

/// Checks every parameter and the input gradient of `net` under the loss
/// L = Σ c ⊙ net(x), with fixed pseudo-random weights c.
GradCheckReport finite_difference_check(Sequential<double>& net, const Matrix<double>& input,
                                        std::span<const std::size_t> offsets = {}, double h = 1e-5,
                                        std::uint64_t seed = 1);

/// Activation pattern (ReLU signs and max-pool winners) of a forward pass,
/// used to detect finite-difference steps that cross a non-smooth point.
std::vector<std::int64_t> activation_pattern(const Sequential<double>& net, const Matrix<double>& input,
                                             std::span<const std::size_t> offsets = {});

}  // namespace rlgan::nn

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include "p2e/error.hpp"
#include "p2e/quantizer.hpp"
#include "p2e/random.hpp"
#include "p2e/tensor.hpp"

namespace p2e {

enum class Activation { relu, softmax, identity };
enum class LossKind { categorical_crossentropy, mean_squared_error, mean_absolute_error };
enum class OptimizerKind { sgd, adam };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::categorical_crossentropy: return "categorical_crossentropy";
    case LossKind::mean_squared_error: return "mean_squared_error";
    case LossKind::mean_absolute_error: return "mean_absolute_error";
  }
  return "?";
}

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "softmax") return Activation::softmax;
  if (s == "identity") return Activation::identity;
  fail(ErrorCode::config, "unknown activation '" + std::string(s) + "'");
}

inline LossKind loss_from_string(std::string_view s) {
  if (s == "categorical_crossentropy") return LossKind::categorical_crossentropy;
  if (s == "mean_squared_error") return LossKind::mean_squared_error;
  if (s == "mean_absolute_error") return LossKind::mean_absolute_error;
  fail(ErrorCode::config, "unknown loss '" + std::string(s) + "'");
}

inline OptimizerKind optimizer_from_string(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  fail(ErrorCode::config, "unknown optimizer '" + std::string(s) + "'");
}

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::relu;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Training/pruning hyperparameters of one pool member.
struct HyperParams {
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  LossKind loss = LossKind::categorical_crossentropy;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double initial_sparsity = 0.1;
  double final_sparsity = 0.7;
  std::uint64_t frequency = 100;
  std::uint64_t seed = 0;

  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

struct ModelMetadata {
  std::optional<HyperParams> hyperparams;
  std::optional<double> learning_rate;
  std::vector<double> sparsity;  // achieved, per weight tensor
  std::optional<double> pruning_accuracy;

  friend bool operator==(const ModelMetadata&, const ModelMetadata&) = default;
};

template <typename T>
struct BasicLayer {
  LayerSpec spec;
  BasicTensor<T> weights;  // out_dim x in_dim
  BasicTensor<T> bias;     // out_dim
  std::optional<BasicTensor<T>> mask;
  // Set once the model has been quantized: the int8 weight codes (weights
  // then hold their dequantized values) and the calibrated input range.
  std::optional<QuantizedTensor> qweights;
  std::optional<QuantParams> input_quant;

  friend bool operator==(const BasicLayer&, const BasicLayer&) = default;
};

template <typename T>
struct BasicModel {
  std::vector<BasicLayer<T>> layers;
  ModelMetadata metadata;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().spec.in_dim; }
  std::size_t n_classes() const { return layers.empty() ? 0 : layers.back().spec.out_dim; }
  bool is_quantized() const {
    return !layers.empty() && std::all_of(layers.begin(), layers.end(),
                                          [](const auto& l) { return l.qweights.has_value(); });
  }
  bool has_masks() const {
    return std::any_of(layers.begin(), layers.end(), [](const auto& l) { return l.mask.has_value(); });
  }
  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers) out.push_back(l.spec);
    return out;
  }

  friend bool operator==(const BasicModel&, const BasicModel&) = default;
};

using Layer = BasicLayer<float>;
using Model = BasicModel<float>;

inline void validate_specs(std::span<const LayerSpec> specs) {
  require(!specs.empty(), ErrorCode::config, "model needs at least one layer");
  for (std::size_t k = 0; k < specs.size(); ++k) {
    require(specs[k].in_dim >= 1 && specs[k].out_dim >= 1, ErrorCode::config,
            "layer " + std::to_string(k) + " has a zero dimension");
    require(specs[k].activation != Activation::softmax || k + 1 == specs.size(), ErrorCode::config,
            "softmax is only allowed on the final layer");
    if (k + 1 < specs.size()) {
      require(specs[k].out_dim == specs[k + 1].in_dim, ErrorCode::shape,
              "layer " + std::to_string(k) + " output does not chain into layer " + std::to_string(k + 1));
    }
  }
}

/// Builds the usual classifier stack: relu hidden layers, softmax output.
inline std::vector<LayerSpec> mlp_specs(std::size_t inputs, std::span<const std::size_t> hidden,
                                        std::size_t classes) {
  std::vector<LayerSpec> specs;
  std::size_t prev = inputs;
  for (const std::size_t h : hidden) {
    specs.push_back({prev, h, Activation::relu});
    prev = h;
  }
  specs.push_back({prev, classes, Activation::softmax});
  return specs;
}

/// Checks every structural invariant of a model.
template <typename T>
void validate(const BasicModel<T>& model) {
  validate_specs(model.specs());
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& layer = model.layers[k];
    const std::string where = "layer " + std::to_string(k);
    require(layer.weights.shape == Shape{layer.spec.out_dim, layer.spec.in_dim}, ErrorCode::shape,
            where + " weight shape " + shape_string(layer.weights.shape));
    require(layer.bias.shape == Shape{layer.spec.out_dim}, ErrorCode::shape, where + " bias shape");
    require(layer.weights.all_finite() && layer.bias.all_finite(), ErrorCode::numeric,
            where + " has non-finite parameters");
    if (layer.mask) {
      require(layer.mask->shape == layer.weights.shape, ErrorCode::shape, where + " mask shape");
      for (std::size_t i = 0; i < layer.mask->size(); ++i) {
        const T m = layer.mask->data[i];
        require(m == T{0} || m == T{1}, ErrorCode::corrupt, where + " mask is not binary");
        require(m == T{1} || layer.weights.data[i] == T{0}, ErrorCode::corrupt,
                where + " has a nonzero weight under a zero mask");
      }
    }
    if (layer.qweights) {
      require(layer.qweights->shape == layer.weights.shape, ErrorCode::shape, where + " int8 shape");
      require(layer.qweights->params.zero_point == 0 && layer.qweights->in_range(), ErrorCode::corrupt,
              where + " int8 weights violate the symmetric range");
    }
  }
}

/// Glorot-uniform weights, zero biases.
template <typename T = float>
BasicModel<T> init_model(std::span<const LayerSpec> specs, std::uint64_t seed) {
  validate_specs(specs);
  Rng rng(seed);
  BasicModel<T> model;
  for (const auto& spec : specs) {
    BasicLayer<T> layer{spec, BasicTensor<T>(Shape{spec.out_dim, spec.in_dim}), BasicTensor<T>(Shape{spec.out_dim}),
                        std::nullopt, std::nullopt, std::nullopt};
    const double limit = std::sqrt(6.0 / static_cast<double>(spec.in_dim + spec.out_dim));
    for (T& w : layer.weights.data) w = static_cast<T>(rng.uniform(-limit, limit));
    model.layers.push_back(std::move(layer));
  }
  return model;
}

/// Row-wise softmax with max subtraction.
template <typename T>
void softmax_rows(BasicTensor<T>& z) {
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    const T peak = *std::max_element(row.begin(), row.end());
    T total{0};
    for (T& v : row) {
      v = std::exp(v - peak);
      total += v;
    }
    for (T& v : row) v /= total;
  }
}

template <typename T>
void apply_activation(BasicTensor<T>& z, Activation activation) {
  switch (activation) {
    case Activation::relu:
      for (T& v : z.data) v = v > T{0} ? v : T{0};
      break;
    case Activation::softmax:
      softmax_rows(z);
      break;
    case Activation::identity:
      break;
  }
}

template <typename T>
struct ForwardTrace {
  std::vector<BasicTensor<T>> inputs;  // input seen by each layer
  BasicTensor<T> output;
};

template <typename T>
ForwardTrace<T> forward_trace(const BasicModel<T>& model, const BasicTensor<T>& inputs) {
  require(!model.layers.empty(), ErrorCode::config, "empty model");
  require(inputs.shape.size() == 2 && inputs.cols() == model.input_dim(), ErrorCode::shape,
          "input shape " + shape_string(inputs.shape) + " does not match model input width " +
              std::to_string(model.input_dim()));
  require(inputs.all_finite(), ErrorCode::numeric, "non-finite input");

  ForwardTrace<T> trace;
  trace.inputs.reserve(model.layers.size());
  BasicTensor<T> activ = inputs;
  for (const auto& layer : model.layers) {
    if (layer.input_quant) fake_quantize(activ, *layer.input_quant, QuantRole::activation);
    BasicTensor<T> z(Shape{activ.rows(), layer.spec.out_dim});
    z.matrix().noalias() = activ.matrix() * layer.weights.matrix().transpose();
    z.matrix().rowwise() += layer.bias.matrix().row(0);
    apply_activation(z, layer.spec.activation);
    trace.inputs.push_back(std::move(activ));
    activ = std::move(z);
  }
  require(activ.all_finite(), ErrorCode::numeric, "forward pass produced non-finite values");
  trace.output = std::move(activ);
  return trace;
}

template <typename T>
BasicTensor<T> forward(const BasicModel<T>& model, const BasicTensor<T>& inputs) {
  return forward_trace(model, inputs).output;
}

template <typename T>
std::vector<std::uint32_t> argmax_rows(const BasicTensor<T>& probs) {
  std::vector<std::uint32_t> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    // max_element returns the first maximum, so ties go to the lowest class.
    out[r] = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

template <typename T>
std::vector<std::uint32_t> predict_classes(const BasicModel<T>& model, const BasicTensor<T>& inputs) {
  return argmax_rows(forward(model, inputs));
}

inline double accuracy_of(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> labels) {
  require(predicted.size() == labels.size(), ErrorCode::shape, "prediction/label count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

template <typename T>
double accuracy(const BasicModel<T>& model, const BasicTensor<T>& inputs, std::span<const std::uint32_t> labels) {
  return accuracy_of(predict_classes(model, inputs), labels);
}

template <typename T = float>
BasicTensor<T> one_hot(std::span<const std::uint32_t> labels, std::size_t n_classes) {
  BasicTensor<T> out(Shape{labels.size(), n_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < n_classes, ErrorCode::shape, "label out of range");
    out.at(i, labels[i]) = T{1};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kProbabilityClip = 1e-12;

template <typename T>
double loss(LossKind kind, const BasicTensor<T>& predictions, const BasicTensor<T>& targets) {
  require(predictions.shape == targets.shape, ErrorCode::shape, "prediction/target shape mismatch");
  const std::size_t batch = predictions.rows();
  require(batch > 0, ErrorCode::shape, "empty batch");
  double total = 0.0;
  switch (kind) {
    case LossKind::categorical_crossentropy:
      for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double t = static_cast<double>(targets.data[i]);
        if (t != 0.0) total -= t * std::log(std::max(static_cast<double>(predictions.data[i]), kProbabilityClip));
      }
      return total / static_cast<double>(batch);
    case LossKind::mean_squared_error:
      for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = static_cast<double>(predictions.data[i]) - static_cast<double>(targets.data[i]);
        total += d * d;
      }
      return total / static_cast<double>(predictions.size());
    case LossKind::mean_absolute_error:
      for (std::size_t i = 0; i < predictions.size(); ++i) {
        total += std::abs(static_cast<double>(predictions.data[i]) - static_cast<double>(targets.data[i]));
      }
      return total / static_cast<double>(predictions.size());
  }
  return total;
}

// ---------------------------------------------------------------------------
// Backpropagation

template <typename T>
struct Gradients {
  std::vector<BasicTensor<T>> weights;
  std::vector<BasicTensor<T>> biases;
};

/// Gradient of the loss with respect to the final layer's pre-activation.
template <typename T>
BasicTensor<T> output_delta(LossKind kind, Activation final_activation, const BasicTensor<T>& predictions,
                            const BasicTensor<T>& targets) {
  require(predictions.shape == targets.shape, ErrorCode::shape, "prediction/target shape mismatch");
  const T batch = static_cast<T>(predictions.rows());
  const T count = static_cast<T>(predictions.size());

  if (kind == LossKind::categorical_crossentropy) {
    require(final_activation == Activation::softmax, ErrorCode::config,
            "categorical_crossentropy requires a softmax output layer");
    // Fused softmax + crossentropy: (p - t) / batch.
    BasicTensor<T> delta(predictions.shape);
    for (std::size_t i = 0; i < delta.size(); ++i) delta.data[i] = (predictions.data[i] - targets.data[i]) / batch;
    return delta;
  }

  BasicTensor<T> dp(predictions.shape);
  for (std::size_t i = 0; i < dp.size(); ++i) {
    const T d = predictions.data[i] - targets.data[i];
    if (kind == LossKind::mean_squared_error) {
      dp.data[i] = T{2} * d / count;
    } else {
      dp.data[i] = (d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0})) / count;
    }
  }

  switch (final_activation) {
    case Activation::identity:
      return dp;
    case Activation::relu:
      for (std::size_t i = 0; i < dp.size(); ++i) {
        if (predictions.data[i] <= T{0}) dp.data[i] = T{0};
      }
      return dp;
    case Activation::softmax: {
      // Softmax Jacobian-vector product: dz = p * (dp - <dp, p>).
      BasicTensor<T> dz(predictions.shape);
      for (std::size_t r = 0; r < predictions.rows(); ++r) {
        const auto p = predictions.row(r);
        const auto g = dp.row(r);
        T inner{0};
        for (std::size_t c = 0; c < p.size(); ++c) inner += g[c] * p[c];
        auto out = dz.row(r);
        for (std::size_t c = 0; c < p.size(); ++c) out[c] = p[c] * (g[c] - inner);
      }
      return dz;
    }
  }
  return dp;
}

template <typename T>
Gradients<T> backward(const BasicModel<T>& model, const ForwardTrace<T>& trace, const BasicTensor<T>& targets,
                      LossKind kind) {
  const std::size_t n_layers = model.layers.size();
  Gradients<T> grads;
  grads.weights.resize(n_layers);
  grads.biases.resize(n_layers);

  BasicTensor<T> delta = output_delta(kind, model.layers.back().spec.activation, trace.output, targets);
  for (std::size_t k = n_layers; k-- > 0;) {
    const auto& layer = model.layers[k];
    const auto& input = trace.inputs[k];
    grads.weights[k] = BasicTensor<T>(layer.weights.shape);
    grads.weights[k].matrix().noalias() = delta.matrix().transpose() * input.matrix();
    grads.biases[k] = BasicTensor<T>(layer.bias.shape);
    grads.biases[k].matrix().row(0) = delta.matrix().colwise().sum();
    if (k == 0) break;

    BasicTensor<T> upstream(input.shape);
    upstream.matrix().noalias() = delta.matrix() * layer.weights.matrix();
    // Hidden layers are relu or identity; input[k] is layer k-1's activation.
    if (model.layers[k - 1].spec.activation == Activation::relu) {
      for (std::size_t i = 0; i < upstream.size(); ++i) {
        if (input.data[i] <= T{0}) upstream.data[i] = T{0};
      }
    }
    delta = std::move(upstream);
  }
  return grads;
}

template <typename T>
struct LossAndGradients {
  double loss = 0.0;
  Gradients<T> gradients;
};

/// Forward + backward over one batch of inputs and one-hot targets.
template <typename T>
LossAndGradients<T> backward(const BasicModel<T>& model, const BasicTensor<T>& inputs, const BasicTensor<T>& targets,
                             LossKind kind) {
  const auto trace = forward_trace(model, inputs);
  LossAndGradients<T> out;
  out.loss = loss(kind, trace.output, targets);
  out.gradients = backward(model, trace, targets, kind);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers

template <typename T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first;   // Adam moments, one slot per parameter tensor
  std::vector<std::vector<T>> second;

  OptimizerState() = default;
  OptimizerState(OptimizerKind k, double lr) : kind(k), learning_rate(lr) {
    require(lr > 0.0 && std::isfinite(lr), ErrorCode::config, "learning rate must be positive");
  }

  void begin_step() { ++step; }

  /// Updates one parameter slot. Call begin_step() once per optimizer step
  /// before updating its slots.
  void update(std::size_t slot, std::span<T> params, std::span<const T> grads) {
    require(params.size() == grads.size(), ErrorCode::shape, "parameter/gradient size mismatch");
    if (kind == OptimizerKind::sgd) {
      const T lr = static_cast<T>(learning_rate);
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
      return;
    }
    if (first.size() <= slot) {
      first.resize(slot + 1);
      second.resize(slot + 1);
    }
    auto& m = first[slot];
    auto& v = second[slot];
    if (m.empty()) {
      m.assign(params.size(), T{0});
      v.assign(params.size(), T{0});
    }
    require(m.size() == params.size(), ErrorCode::shape, "Adam moment shape mismatch");
    const double t = static_cast<double>(std::max<std::uint64_t>(step, 1));
    const T b1 = static_cast<T>(beta1);
    const T b2 = static_cast<T>(beta2);
    const T correction1 = static_cast<T>(1.0 - std::pow(beta1, t));
    const T correction2 = static_cast<T>(1.0 - std::pow(beta2, t));
    const T lr = static_cast<T>(learning_rate);
    const T eps = static_cast<T>(epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const T g = grads[i];
      m[i] = b1 * m[i] + (T{1} - b1) * g;
      v[i] = b2 * v[i] + (T{1} - b2) * g * g;
      const T m_hat = m[i] / correction1;
      const T v_hat = v[i] / correction2;
      params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
};

template <typename T>
void optimizer_step(OptimizerState<T>& state, BasicModel<T>& model, const Gradients<T>& grads) {
  require(grads.weights.size() == model.layers.size() && grads.biases.size() == model.layers.size(),
          ErrorCode::shape, "gradient count does not match layer count");
  state.begin_step();
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    auto& layer = model.layers[k];
    require(grads.weights[k].shape == layer.weights.shape && grads.biases[k].shape == layer.bias.shape,
            ErrorCode::shape, "gradient shape mismatch at layer " + std::to_string(k));
    state.update(2 * k, std::span<T>(layer.weights.data), std::span<const T>(grads.weights[k].data));
    state.update(2 * k + 1, std::span<T>(layer.bias.data), std::span<const T>(grads.biases[k].data));
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  LossKind loss = LossKind::categorical_crossentropy;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double learning_rate = 0.05;
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

inline std::size_t steps_per_epoch(std::size_t n_samples, std::size_t batch_size) {
  return (n_samples + batch_size - 1) / batch_size;
}

/// Callbacks the pruner uses to interleave masking with training.
template <typename T>
struct TrainingHooks {
  std::function<void(std::uint64_t step, BasicModel<T>&)> before_step;
  std::function<void(BasicModel<T>&, Gradients<T>&)> before_update;
  std::function<void(BasicModel<T>&)> after_update;
  std::function<void(std::uint64_t total_steps, BasicModel<T>&)> at_end;
};

namespace detail {

/// Flushes denormals to zero on this thread while alive. Adam moments of
/// masked weights decay geometrically and would otherwise crawl through the
/// denormal range.
class DenormalGuard {
 public:
#if defined(__SSE__)
  DenormalGuard() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~DenormalGuard() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

}  // namespace detail

/// Minibatch training. Samples are reshuffled each epoch from the config
/// seed; the step counter counts optimizer batches from 0.
template <typename T>
void train(BasicModel<T>& model, const BasicTensor<T>& inputs, std::span<const std::uint32_t> labels,
           const TrainConfig& config, const TrainingHooks<T>& hooks = {}) {
  require(config.epochs >= 1 && config.batch_size >= 1, ErrorCode::config, "epochs and batch size must be >= 1");
  require(inputs.rows() == labels.size() && !labels.empty(), ErrorCode::shape, "input/label count mismatch");
  OptimizerState<T> optimizer(config.optimizer, config.learning_rate);
  Rng rng(mix_seed(config.seed, 1));
  const detail::DenormalGuard denormal_guard;

  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      if (hooks.before_step) hooks.before_step(step, model);

      const auto batch = gather_rows(inputs, idx);
      std::vector<std::uint32_t> batch_labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) batch_labels[i] = labels[idx[i]];
      const auto targets = one_hot<T>(batch_labels, model.n_classes());

      auto result = backward(model, batch, targets, config.loss);
      if (hooks.before_update) hooks.before_update(model, result.gradients);
      optimizer_step(optimizer, model, result.gradients);
      if (hooks.after_update) hooks.after_update(model);
      ++step;
    }
  }
  if (hooks.at_end) hooks.at_end(step, model);
}

}  // namespace p2e

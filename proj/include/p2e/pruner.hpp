#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "p2e/nncore.hpp"

namespace p2e {

/// Polynomial (cubic) sparsity ramp from `initial_sparsity` to
/// `final_sparsity`, with pruning events at begin_step + i*frequency for
/// i in [0, steps].
struct PruningSchedule {
  double initial_sparsity = 0.0;
  double final_sparsity = 0.9;
  std::uint64_t begin_step = 0;
  std::uint64_t steps = 1;
  std::uint64_t frequency = 100;

  void validate() const {
    require(initial_sparsity >= 0.0 && initial_sparsity < final_sparsity && final_sparsity <= 1.0, ErrorCode::config,
            "pruning schedule needs 0 <= initial_sparsity < final_sparsity <= 1");
    require(steps >= 1 && frequency >= 1, ErrorCode::config, "pruning steps and frequency must be >= 1");
  }

  std::uint64_t end_step() const { return begin_step + steps * frequency; }

  bool is_event(std::uint64_t t) const {
    return t >= begin_step && t <= end_step() && (t - begin_step) % frequency == 0;
  }
};

inline double sparsity_at(const PruningSchedule& schedule, std::uint64_t t) {
  schedule.validate();
  require(schedule.is_event(t), ErrorCode::out_of_schedule,
          "step " + std::to_string(t) + " is not a pruning event of this schedule");
  const double progress = static_cast<double>(t - schedule.begin_step) /
                          static_cast<double>(schedule.steps * schedule.frequency);
  const double remaining = 1.0 - progress;
  return schedule.final_sparsity +
         (schedule.initial_sparsity - schedule.final_sparsity) * remaining * remaining * remaining;
}

/// Number of entries zeroed when pruning `count` weights to `sparsity`.
inline std::size_t pruned_count(double sparsity, std::size_t count) {
  return static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(count)));
}

/// Magnitude mask: zeros the floor(sparsity * |W|) smallest-|w| entries,
/// ties resolved toward the lowest flat index.
template <typename T>
BasicTensor<T> build_mask(const BasicTensor<T>& weights, double sparsity) {
  require(sparsity >= 0.0 && sparsity <= 1.0, ErrorCode::config, "target sparsity outside [0, 1]");
  BasicTensor<T> mask(weights.shape, T{1});
  const std::size_t drop = pruned_count(sparsity, weights.size());
  if (drop == 0) return mask;

  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(weights.data[a]) < std::abs(weights.data[b]);
  });
  for (std::size_t i = 0; i < drop; ++i) mask.data[order[i]] = T{0};
  return mask;
}

template <typename T>
void apply_mask(BasicLayer<T>& layer) {
  if (!layer.mask) return;
  const T* mask = layer.mask->data.data();
  T* w = layer.weights.data.data();
  for (std::size_t i = 0; i < layer.weights.size(); ++i) w[i] = mask[i] == T{0} ? T{0} : w[i];
}

template <typename T>
double zero_fraction(const BasicTensor<T>& t) {
  if (t.size() == 0) return 0.0;
  const auto zeros = std::count(t.data.begin(), t.data.end(), T{0});
  return static_cast<double>(zeros) / static_cast<double>(t.size());
}

/// Fraction of each weight tensor removed by its mask.
template <typename T>
std::vector<double> mask_sparsity(const BasicModel<T>& model) {
  std::vector<double> out;
  for (const auto& layer : model.layers) out.push_back(layer.mask ? zero_fraction(*layer.mask) : 0.0);
  return out;
}

/// Trains a fresh model while pruning every weight tensor on `schedule`.
///
/// At each event the masks are recomputed from current magnitudes and the
/// masked weights zeroed. Masked positions get no optimizer update: their
/// gradients are cleared before the step and the weights re-zeroed after it
/// (Adam momentum would otherwise move them).
template <typename T = float>
BasicModel<T> pruned_train(const BasicTensor<T>& inputs, std::span<const std::uint32_t> labels,
                           std::span<const LayerSpec> specs, const TrainConfig& config,
                           const std::optional<PruningSchedule>& schedule) {
  const std::uint64_t total_steps = config.epochs * steps_per_epoch(labels.size(), std::max<std::size_t>(config.batch_size, 1));
  if (schedule) {
    schedule->validate();
    require(schedule->end_step() <= total_steps, ErrorCode::config,
            "pruning schedule ends at step " + std::to_string(schedule->end_step()) + " but training has only " +
                std::to_string(total_steps) + " steps");
  }

  BasicModel<T> model = init_model<T>(specs, mix_seed(config.seed, 0));
  TrainingHooks<T> hooks;
  if (schedule) {
    auto prune_event = [&schedule](std::uint64_t t, BasicModel<T>& m) {
      if (!schedule->is_event(t)) return;
      const double target = sparsity_at(*schedule, t);
      for (auto& layer : m.layers) {
        layer.mask = build_mask(layer.weights, target);
        apply_mask(layer);
      }
    };
    hooks.before_step = prune_event;
    hooks.before_update = [](BasicModel<T>& m, Gradients<T>& g) {
      for (std::size_t k = 0; k < m.layers.size(); ++k) {
        const auto& mask = m.layers[k].mask;
        if (!mask) continue;
        const T* bits = mask->data.data();
        T* grad = g.weights[k].data.data();
        for (std::size_t i = 0; i < mask->size(); ++i) grad[i] = bits[i] == T{0} ? T{0} : grad[i];
      }
    };
    hooks.after_update = [](BasicModel<T>& m) {
      for (auto& layer : m.layers) apply_mask(layer);
    };
    // A final event scheduled exactly at the end of training fires here.
    hooks.at_end = prune_event;
  }
  train(model, inputs, labels, config, hooks);

  model.metadata.learning_rate = config.learning_rate;
  model.metadata.sparsity = mask_sparsity(model);
  return model;
}

}  // namespace p2e

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "p2e/dataset.hpp"
#include "p2e/pruner.hpp"
#include "p2e/quantize_model.hpp"
#include "p2e/store.hpp"

namespace p2e {

// Sampling ranges for pool hyperparameters.
inline constexpr std::size_t kEpochChoices[] = {3, 4, 5, 6, 8};
inline constexpr std::size_t kBatchChoices[] = {32, 64, 128};
inline constexpr LossKind kLossChoices[] = {LossKind::categorical_crossentropy, LossKind::mean_squared_error,
                                            LossKind::mean_absolute_error};
inline constexpr OptimizerKind kOptimizerChoices[] = {OptimizerKind::sgd, OptimizerKind::adam};
inline constexpr std::uint64_t kFrequencyChoices[] = {100, 200, 300, 400};
inline constexpr double kInitialSparsityRange[] = {0.1, 0.6};
inline constexpr double kFinalSparsityRange[] = {0.7, 0.9};

template <typename T, std::size_t N>
const T& pick(Rng& rng, const T (&choices)[N]) {
  return choices[rng.below(N)];
}

/// Draws every field uniformly from its set or range. The draw order is
/// fixed so a seed always yields the same HyperParams.
inline HyperParams sample_hyperparams(Rng& rng) {
  HyperParams h;
  h.epochs = pick(rng, kEpochChoices);
  h.batch_size = pick(rng, kBatchChoices);
  h.loss = pick(rng, kLossChoices);
  h.optimizer = pick(rng, kOptimizerChoices);
  h.initial_sparsity = rng.uniform(kInitialSparsityRange[0], kInitialSparsityRange[1]);
  h.final_sparsity = rng.uniform(kFinalSparsityRange[0], kFinalSparsityRange[1]);
  h.frequency = pick(rng, kFrequencyChoices);
  return h;
}

/// Schedule starting at step 0 with as many events as fit in training.
inline PruningSchedule schedule_for(const HyperParams& h, std::uint64_t total_steps) {
  const std::uint64_t steps = total_steps / h.frequency;
  require(steps >= 1, ErrorCode::config,
          "training has " + std::to_string(total_steps) + " steps, fewer than one pruning interval of " +
              std::to_string(h.frequency));
  return {h.initial_sparsity, h.final_sparsity, 0, steps, h.frequency};
}

struct PoolConfig {
  std::size_t pool_size = 20;
  std::uint64_t base_seed = 0;
  std::vector<std::size_t> hidden{192, 192};
  bool prune = true;
  bool quantize = true;
  std::size_t calibration_size = 128;
  std::optional<double> fixed_final_sparsity;
  std::size_t workers = 0;  // 0: one per hardware thread
  double sgd_learning_rate = 0.1;
  double adam_learning_rate = 0.002;
};

struct PoolEntry {
  std::string model_id;
  std::string path;  // relative to the manifest directory
  HyperParams hyperparams;
  std::vector<double> sparsity;
  double pruning_accuracy = 0.0;
  std::size_t file_size_bytes = 0;
  bool ok = true;
  std::string error;

  /// Weighted fraction of zero weights over the whole model.
  double overall_sparsity = 0.0;
};

struct PoolManifest {
  std::string pool_id;
  std::string dataset_path;
  std::string dataset_sha256;
  std::uint64_t base_seed = 0;
  bool pruned = true;
  bool quantized = true;
  std::vector<std::size_t> hidden;
  std::vector<PoolEntry> entries;

  std::vector<const PoolEntry*> usable() const {
    std::vector<const PoolEntry*> out;
    for (const auto& e : entries) {
      if (e.ok) out.push_back(&e);
    }
    return out;
  }
};

struct Pool {
  PoolManifest manifest;
  std::vector<std::optional<Model>> models;  // parallel to manifest.entries
};

inline std::string model_id_for(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "m%03zu", index);
  return buf;
}

inline double learning_rate_for(OptimizerKind kind, const PoolConfig& config) {
  return kind == OptimizerKind::sgd ? config.sgd_learning_rate : config.adam_learning_rate;
}

inline double overall_zero_fraction(const Model& model) {
  std::size_t zeros = 0;
  std::size_t total = 0;
  for (const auto& layer : model.layers) {
    zeros += static_cast<std::size_t>(std::count(layer.weights.data.begin(), layer.weights.data.end(), 0.0f));
    total += layer.weights.size();
  }
  return total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
}

/// Trains, prunes and quantizes one pool member. Throws on failure.
inline Model build_pool_member(const Dataset& data, const LabeledData& train, const LabeledData& pruning,
                               const PoolConfig& config, const HyperParams& h) {
  const auto specs = mlp_specs(data.n_features(), config.hidden, data.n_classes);
  const TrainConfig train_config{h.loss, h.optimizer, learning_rate_for(h.optimizer, config), h.epochs,
                                 h.batch_size, h.seed};
  std::optional<PruningSchedule> schedule;
  if (config.prune) {
    schedule = schedule_for(h, h.epochs * steps_per_epoch(train.size(), h.batch_size));
  }
  Model model = pruned_train(train.features, train.labels, specs, train_config, schedule);
  model.metadata.hyperparams = h;
  if (config.quantize) {
    const std::size_t n_cal = std::min(config.calibration_size, pruning.size());
    std::vector<std::size_t> idx(n_cal);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    model = quantize_model(model, gather_rows(pruning.features, idx));
  }
  model.metadata.pruning_accuracy = accuracy(model, pruning.features, pruning.labels);
  return model;
}

inline std::string pool_id_for(const std::string& dataset_sha256, const PoolConfig& config) {
  std::string key = dataset_sha256 + "|" + std::to_string(config.base_seed) + "|" + std::to_string(config.pool_size) +
                    "|" + (config.prune ? "p" : "-") + (config.quantize ? "q" : "-");
  for (const auto h : config.hidden) key += "|" + std::to_string(h);
  if (config.fixed_final_sparsity) key += "|sf" + std::to_string(*config.fixed_final_sparsity);
  return "pool-" + sha256_hex(key).substr(0, 12);
}

/// Trains `pool_size` independently configured members. Jobs run on a small
/// thread pool; each slot's result depends only on its index, so output is
/// the same for any worker count. A failed job is recorded and skipped.
inline Pool generate_pool(const Dataset& data, const PoolConfig& config, const std::string& dataset_sha256 = {},
                          const std::string& dataset_path = {}) {
  require(config.pool_size >= 1, ErrorCode::config, "pool size must be >= 1");
  require(!config.fixed_final_sparsity ||
              (*config.fixed_final_sparsity > kInitialSparsityRange[1] && *config.fixed_final_sparsity <= 1.0),
          ErrorCode::config, "fixed final sparsity must lie in (0.6, 1]");
  data.validate();
  const LabeledData train = data.subset(Split::train);
  const LabeledData pruning = data.subset(Split::pruning);
  require(train.size() > 0 && pruning.size() > 0, ErrorCode::config, "dataset needs train and pruning samples");

  Pool pool;
  pool.manifest.pool_id = pool_id_for(dataset_sha256, config);
  pool.manifest.dataset_path = dataset_path;
  pool.manifest.dataset_sha256 = dataset_sha256;
  pool.manifest.base_seed = config.base_seed;
  pool.manifest.pruned = config.prune;
  pool.manifest.quantized = config.quantize;
  pool.manifest.hidden = config.hidden;
  pool.manifest.entries.resize(config.pool_size);
  pool.models.resize(config.pool_size);

  for (std::size_t i = 0; i < config.pool_size; ++i) {
    auto& entry = pool.manifest.entries[i];
    entry.model_id = model_id_for(i);
    entry.path = entry.model_id + ".json";
    const std::uint64_t seed = mix_seed(config.base_seed, i);
    Rng rng(seed);
    entry.hyperparams = sample_hyperparams(rng);
    entry.hyperparams.seed = seed;
    if (config.fixed_final_sparsity) entry.hyperparams.final_sparsity = *config.fixed_final_sparsity;
  }

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < config.pool_size; i = next++) {
      auto& entry = pool.manifest.entries[i];
      try {
        Model model = build_pool_member(data, train, pruning, config, entry.hyperparams);
        entry.sparsity = model.metadata.sparsity;
        entry.overall_sparsity = overall_zero_fraction(model);
        entry.pruning_accuracy = *model.metadata.pruning_accuracy;
        entry.file_size_bytes = serialize_model(model).size();
        pool.models[i] = std::move(model);
        spdlog::debug("{}: pruning-set accuracy {:.4f}", entry.model_id, entry.pruning_accuracy);
      } catch (const std::exception& e) {
        entry.ok = false;
        entry.error = e.what();
        spdlog::warn("{} failed: {}", entry.model_id, e.what());
      }
    }
  };
  std::size_t workers = config.workers ? config.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, config.pool_size);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work);
  }

  require(!pool.manifest.usable().empty(), ErrorCode::pool, "every pool training job failed");
  return pool;
}

/// Post-training quantization of every usable member. Members already
/// quantized pass through unchanged, so the operation is idempotent.
inline Pool quantize_pool(const Pool& pool, const Dataset& data, std::size_t calibration_size = 128) {
  const LabeledData pruning = data.subset(Split::pruning);
  require(pruning.size() > 0, ErrorCode::config, "dataset has no pruning samples for calibration");
  std::vector<std::size_t> idx(std::min(calibration_size, pruning.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Tensor calibration = gather_rows(pruning.features, idx);
  Pool out = pool;
  out.manifest.quantized = true;
  for (std::size_t i = 0; i < out.models.size(); ++i) {
    if (!out.models[i] || out.models[i]->is_quantized()) continue;
    Model q = quantize_model(*out.models[i], calibration);
    q.metadata.pruning_accuracy = accuracy(q, pruning.features, pruning.labels);
    auto& entry = out.manifest.entries[i];
    entry.pruning_accuracy = *q.metadata.pruning_accuracy;
    entry.overall_sparsity = overall_zero_fraction(q);
    entry.file_size_bytes = serialize_model(q).size();
    out.models[i] = std::move(q);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest persistence

inline void to_json(json& j, const PoolEntry& e) {
  j = json{{"model_id", e.model_id}, {"path", e.path}, {"hyperparams", e.hyperparams}, {"status", e.ok ? "ok" : "failed"}};
  if (e.ok) {
    j["sparsity"] = e.sparsity;
    j["overall_sparsity"] = e.overall_sparsity;
    j["pruning_accuracy"] = e.pruning_accuracy;
    j["file_size_bytes"] = e.file_size_bytes;
  } else {
    j["error"] = e.error;
  }
}

inline void from_json(const json& j, PoolEntry& e) {
  e.model_id = j.at("model_id").get<std::string>();
  e.path = j.at("path").get<std::string>();
  e.hyperparams = j.at("hyperparams").get<HyperParams>();
  e.ok = j.at("status").get<std::string>() == "ok";
  if (e.ok) {
    e.sparsity = j.at("sparsity").get<std::vector<double>>();
    e.overall_sparsity = j.at("overall_sparsity").get<double>();
    e.pruning_accuracy = j.at("pruning_accuracy").get<double>();
    e.file_size_bytes = j.at("file_size_bytes").get<std::size_t>();
  } else {
    e.error = j.value("error", std::string{});
  }
}

inline void to_json(json& j, const PoolManifest& m) {
  j = json{{"pool_id", m.pool_id},       {"dataset", m.dataset_path}, {"dataset_sha256", m.dataset_sha256},
           {"base_seed", m.base_seed},   {"pruned", m.pruned},        {"quantized", m.quantized},
           {"hidden", m.hidden},         {"entries", m.entries}};
}

inline void from_json(const json& j, PoolManifest& m) {
  m.pool_id = j.at("pool_id").get<std::string>();
  m.dataset_path = j.at("dataset").get<std::string>();
  m.dataset_sha256 = j.at("dataset_sha256").get<std::string>();
  m.base_seed = j.at("base_seed").get<std::uint64_t>();
  m.pruned = j.at("pruned").get<bool>();
  m.quantized = j.at("quantized").get<bool>();
  m.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  m.entries = j.at("entries").get<std::vector<PoolEntry>>();
}

/// Saves every model and the manifest into `dir`.
inline fs::path write_pool(const Pool& pool, const fs::path& dir) {
  for (std::size_t i = 0; i < pool.models.size(); ++i) {
    if (pool.models[i]) save_model(*pool.models[i], dir / pool.manifest.entries[i].path);
  }
  const fs::path manifest_path = dir / "manifest.json";
  write_json(manifest_path, json(pool.manifest));
  return manifest_path;
}

inline PoolManifest read_manifest(const fs::path& path) {
  const json j = read_json(path);
  PoolManifest m;
  try {
    m = j.get<PoolManifest>();
  } catch (const json::exception& e) {
    fail(ErrorCode::corrupt, path.string() + ": " + e.what());
  }
  std::vector<std::string> ids;
  for (const auto& e : m.entries) ids.push_back(e.model_id);
  std::sort(ids.begin(), ids.end());
  require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), ErrorCode::corrupt, "duplicate model_id in manifest");
  return m;
}

/// Loads the manifest and every usable model, in manifest order.
inline Pool load_pool(const fs::path& manifest_path) {
  Pool pool;
  pool.manifest = read_manifest(manifest_path);
  const fs::path dir = manifest_path.parent_path();
  for (const auto& e : pool.manifest.entries) {
    if (e.ok) {
      pool.models.emplace_back(load_model(dir / e.path));
    } else {
      pool.models.emplace_back(std::nullopt);
    }
  }
  return pool;
}

}  // namespace p2e

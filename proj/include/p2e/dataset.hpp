#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "p2e/random.hpp"
#include "p2e/tensor.hpp"

namespace p2e {

enum class DatasetKind { blobs, moons, spiral };

inline std::string_view to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::blobs: return "blobs";
    case DatasetKind::moons: return "moons";
    case DatasetKind::spiral: return "spiral";
  }
  return "?";
}

inline DatasetKind dataset_kind_from_string(std::string_view s) {
  if (s == "blobs") return DatasetKind::blobs;
  if (s == "moons") return DatasetKind::moons;
  if (s == "spiral") return DatasetKind::spiral;
  fail(ErrorCode::config, "unknown dataset kind '" + std::string(s) + "'");
}

/// Contiguous sample ranges. Samples are shuffled at generation, so ranges
/// are random subsets. The training split is [0, pruning_end); its last
/// fifth is held out as the pruning set, the rest ("train") fits models.
struct SplitBounds {
  std::size_t train_end = 0;
  std::size_t pruning_end = 0;
  std::size_t n_samples = 0;

  static SplitBounds standard(std::size_t n) {
    const std::size_t training = n * 4 / 5;
    const std::size_t pruning = training / 5;
    return {training - pruning, training, n};
  }

  friend bool operator==(const SplitBounds&, const SplitBounds&) = default;
};

enum class Split { train, pruning, test, all };

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "pruning") return Split::pruning;
  if (s == "test") return Split::test;
  if (s == "all") return Split::all;
  fail(ErrorCode::config, "unknown split '" + std::string(s) + "'");
}

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::pruning: return "pruning";
    case Split::test: return "test";
    case Split::all: return "all";
  }
  return "?";
}

struct LabeledData {
  Tensor features;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
};

struct Dataset {
  Tensor features;  // n_samples x n_features
  std::vector<std::uint32_t> labels;
  std::size_t n_classes = 0;
  SplitBounds bounds;

  std::size_t n_samples() const { return labels.size(); }
  std::size_t n_features() const { return features.cols(); }

  std::pair<std::size_t, std::size_t> range(Split split) const {
    switch (split) {
      case Split::train: return {0, bounds.train_end};
      case Split::pruning: return {bounds.train_end, bounds.pruning_end};
      case Split::test: return {bounds.pruning_end, bounds.n_samples};
      case Split::all: return {0, bounds.n_samples};
    }
    return {0, 0};
  }

  LabeledData subset(Split split) const {
    const auto [begin, end] = range(split);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    LabeledData out{gather_rows(features, idx), {labels.begin() + static_cast<std::ptrdiff_t>(begin),
                                                  labels.begin() + static_cast<std::ptrdiff_t>(end)}};
    return out;
  }

  void validate() const {
    require(features.shape.size() == 2 && features.rows() == labels.size(), ErrorCode::corrupt,
            "feature rows do not match label count");
    require(n_classes >= 1, ErrorCode::corrupt, "dataset needs at least one class");
    for (const auto l : labels) require(l < n_classes, ErrorCode::corrupt, "label out of range");
    require(bounds.n_samples == labels.size() && bounds.train_end <= bounds.pruning_end &&
                bounds.pruning_end <= bounds.n_samples,
            ErrorCode::corrupt, "inconsistent split bounds");
  }
};

struct DatasetSpec {
  DatasetKind kind = DatasetKind::blobs;
  std::size_t n_samples = 1000;
  std::size_t n_classes = 4;
  std::size_t n_features = 2;
  double noise = 1.0;
  std::uint64_t seed = 0;
};

/// Synthetic classification data, deterministic in the seed.
///
/// blobs: one Gaussian cluster per class (std = noise), centers uniform in
/// [-5, 5]^d. moons: the two interleaved half circles (2 classes, 2-D).
/// spiral: one arm per class in 2-D with Gaussian jitter.
inline Dataset gen_dataset(const DatasetSpec& spec) {
  require(spec.n_samples >= 1 && spec.n_classes >= 1 && spec.n_features >= 1, ErrorCode::config,
          "dataset needs samples, classes and features");
  require(spec.noise >= 0.0 && std::isfinite(spec.noise), ErrorCode::config, "noise must be >= 0");
  require(spec.n_classes <= 65535, ErrorCode::config, "too many classes for u16 labels");
  if (spec.kind == DatasetKind::moons) {
    require(spec.n_classes == 2, ErrorCode::config, "moons requires exactly 2 classes");
  }
  if (spec.kind != DatasetKind::blobs) {
    require(spec.n_features == 2, ErrorCode::config, std::string(to_string(spec.kind)) + " is 2-D only");
  }

  Rng rng(spec.seed);
  const std::size_t n = spec.n_samples;
  const std::size_t d = spec.n_features;
  Dataset data;
  data.n_classes = spec.n_classes;
  data.features = Tensor(Shape{n, d});
  data.labels.resize(n);

  std::vector<double> centers;
  if (spec.kind == DatasetKind::blobs) {
    centers.resize(spec.n_classes * d);
    for (double& c : centers) c = rng.uniform(-5.0, 5.0);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  for (std::size_t i = 0; i < n; ++i) {
    // Balanced classes; the shuffled slot spreads them over the file.
    const auto label = static_cast<std::uint32_t>(i % spec.n_classes);
    auto row = data.features.row(order[i]);
    data.labels[order[i]] = label;
    switch (spec.kind) {
      case DatasetKind::blobs:
        for (std::size_t j = 0; j < d; ++j) {
          row[j] = static_cast<float>(centers[label * d + j] + spec.noise * rng.normal());
        }
        break;
      case DatasetKind::moons: {
        const double t = std::numbers::pi * rng.uniform();
        const double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
        const double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
        row[0] = static_cast<float>(x + spec.noise * rng.normal());
        row[1] = static_cast<float>(y + spec.noise * rng.normal());
        break;
      }
      case DatasetKind::spiral: {
        const double r = rng.uniform();
        const double theta = 2.0 * std::numbers::pi * label / static_cast<double>(spec.n_classes) + 4.0 * r +
                             spec.noise * rng.normal();
        row[0] = static_cast<float>(r * std::cos(theta));
        row[1] = static_cast<float>(r * std::sin(theta));
        break;
      }
    }
  }
  data.bounds = SplitBounds::standard(n);
  return data;
}

}  // namespace p2e

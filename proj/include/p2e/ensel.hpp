#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "p2e/nncore.hpp"
#include "p2e/random.hpp"
#include "p2e/store.hpp"

namespace p2e {

/// Pool output on one sample: row i is model i's class-probability vector.
struct PredictionMatrix {
  std::size_t sample = 0;
  Tensor values;  // models x classes
};

/// Features for clustering models: row i is model i, column j is sample j.
struct ClusterMatrix {
  BasicTensor<double> values;

  std::size_t n_models() const { return values.rows(); }
  std::size_t n_samples() const { return values.cols(); }
};

inline std::vector<PredictionMatrix> predict_pool(std::span<const Model> models, const Tensor& samples) {
  require(!models.empty(), ErrorCode::config, "empty pool");
  const std::size_t n_classes = models.front().n_classes();
  for (const auto& m : models) {
    require(m.n_classes() == n_classes, ErrorCode::shape, "pool models disagree on the class count");
  }
  const std::size_t n_samples = samples.rows();
  std::vector<PredictionMatrix> out(n_samples);
  for (std::size_t j = 0; j < n_samples; ++j) out[j] = {j, Tensor(Shape{models.size(), n_classes})};
  for (std::size_t i = 0; i < models.size(); ++i) {
    const Tensor probs = forward(models[i], samples);
    for (std::size_t j = 0; j < n_samples; ++j) {
      const auto src = probs.row(j);
      std::copy(src.begin(), src.end(), out[j].values.row(i).begin());
    }
  }
  return out;
}

/// For each sample, finds the single most confident (model, class) pair and
/// takes every model's probability for that class as the sample's column.
/// Ties go to the lowest model index, then the lowest class index.
inline ClusterMatrix build_cluster_matrix(std::span<const PredictionMatrix> matrices) {
  require(!matrices.empty(), ErrorCode::config, "need at least one prediction matrix");
  const Shape shape = matrices.front().values.shape;
  require(shape.size() == 2 && shape[0] >= 1 && shape[1] >= 1, ErrorCode::shape, "prediction matrix must be m x n");
  const std::size_t n_models = shape[0];

  ClusterMatrix c{BasicTensor<double>(Shape{n_models, matrices.size()})};
  for (std::size_t j = 0; j < matrices.size(); ++j) {
    const Tensor& a = matrices[j].values;
    require(a.shape == shape, ErrorCode::shape, "prediction matrices differ in shape");
    std::size_t best_class = 0;
    float best = -1.0f;
    for (std::size_t i = 0; i < n_models; ++i) {
      for (std::size_t cls = 0; cls < shape[1]; ++cls) {
        const float v = a.at(i, cls);
        require(v >= 0.0f && v <= 1.0f, ErrorCode::numeric, "prediction outside [0, 1]");
        if (v > best) {
          best = v;
          best_class = cls;
        }
      }
    }
    for (std::size_t i = 0; i < n_models; ++i) c.values.at(i, j) = static_cast<double>(a.at(i, best_class));
  }
  return c;
}

// ---------------------------------------------------------------------------
// k-means

struct KMeansOptions {
  std::size_t k = 3;
  std::uint64_t seed = 0;
  std::size_t max_iters = 300;
  double tol = 1e-6;
};

struct KMeansResult {
  std::vector<std::size_t> labels;
  BasicTensor<double> centroids;  // k x dim
  std::vector<double> sse_history;  // one entry per assignment step
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

/// k-means++ seeding; returns the chosen point indices.
inline std::vector<std::size_t> seed_centroids(const BasicTensor<double>& points, std::size_t k, Rng& rng) {
  const std::size_t m = points.rows();
  std::vector<std::size_t> chosen{static_cast<std::size_t>(rng.below(m))};
  std::vector<double> nearest(m, std::numeric_limits<double>::infinity());
  while (chosen.size() < k) {
    const auto last = points.row(chosen.back());
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(points.row(i), last));
      total += nearest[i];
    }
    std::size_t pick = m;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double running = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        running += nearest[i];
        if (nearest[i] > 0.0 && running > target) {
          pick = i;
          break;
        }
      }
      // Rounding can leave target just above the final running sum.
      if (pick == m) {
        for (std::size_t i = m; i-- > 0;) {
          if (nearest[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      // Every point coincides with a chosen centroid: take the lowest unused index.
      for (std::size_t i = 0; i < m && pick == m; ++i) {
        if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pick = i;
      }
    }
    chosen.push_back(pick);
  }
  return chosen;
}

}  // namespace detail

/// Lloyd's algorithm over the rows of `points`, seeded with k-means++.
///
/// Each iteration assigns points to the nearest centroid (ties to the lowest
/// centroid index), repairs empty clusters by moving in the point farthest
/// from its centroid, records the SSE, and recomputes centroids as member
/// means. Stops once no centroid moves by `tol` or more.
inline KMeansResult kmeans(const BasicTensor<double>& points, const KMeansOptions& options) {
  const std::size_t m = points.rows();
  const std::size_t dim = points.cols();
  const std::size_t k = options.k;
  require(points.shape.size() == 2 && m >= 1, ErrorCode::config, "k-means needs at least one point");
  require(k >= 1 && k <= m, ErrorCode::config,
          "k must satisfy 1 <= k <= number of models (k=" + std::to_string(k) + ", m=" + std::to_string(m) + ")");
  require(points.all_finite(), ErrorCode::numeric, "non-finite k-means input");

  Rng rng(options.seed);
  KMeansResult result;
  result.centroids = BasicTensor<double>(Shape{k, dim});
  const auto seeds = detail::seed_centroids(points, k, rng);
  for (std::size_t c = 0; c < k; ++c) {
    const auto src = points.row(seeds[c]);
    std::copy(src.begin(), src.end(), result.centroids.row(c).begin());
  }

  result.labels.assign(m, 0);
  std::vector<double> dist(m, 0.0);
  for (std::size_t iter = 0; iter < std::max<std::size_t>(options.max_iters, 1); ++iter) {
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = detail::squared_distance(points.row(i), result.centroids.row(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      result.labels[i] = best;
      dist[i] = best_d;
      ++counts[best];
    }

    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = m;
      for (std::size_t i = 0; i < m; ++i) {
        if (counts[result.labels[i]] > 1 && (far == m || dist[i] > dist[far])) far = i;
      }
      --counts[result.labels[far]];
      result.labels[far] = c;
      counts[c] = 1;
      dist[far] = 0.0;
      const auto src = points.row(far);
      std::copy(src.begin(), src.end(), result.centroids.row(c).begin());
    }

    result.sse_history.push_back(std::accumulate(dist.begin(), dist.end(), 0.0));
    ++result.iterations;

    BasicTensor<double> updated(Shape{k, dim});
    for (std::size_t i = 0; i < m; ++i) {
      auto dst = updated.row(result.labels[i]);
      const auto src = points.row(i);
      for (std::size_t d = 0; d < dim; ++d) dst[d] += src[d];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      auto row = updated.row(c);
      for (double& v : row) v /= static_cast<double>(counts[c]);
      shift = std::max(shift, std::sqrt(detail::squared_distance(row, result.centroids.row(c))));
    }
    result.centroids = std::move(updated);
    if (shift < options.tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Cluster ranking and representative selection

struct Cluster {
  std::size_t id = 0;
  std::vector<std::size_t> members;  // model indices, best pruning-set accuracy first
  double mean_accuracy = 0.0;
};

struct ClusterAssignment {
  std::size_t k = 0;
  std::vector<std::string> model_ids;
  std::vector<double> accuracies;
  std::vector<std::size_t> labels;  // model index -> cluster id
  BasicTensor<double> centroids;
  std::vector<double> sse_history;
  std::vector<Cluster> clusters;  // indexed by cluster id

  /// Cluster ids by descending mean accuracy (ties: lowest id).
  std::vector<std::size_t> ranking() const {
    std::vector<std::size_t> order(clusters.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) {
      return clusters[a].mean_accuracy > clusters[b].mean_accuracy;
    });
    return order;
  }
};

/// Groups models by cluster label and ranks members and clusters.
inline ClusterAssignment rank_clusters(std::vector<std::string> model_ids, std::vector<double> accuracies,
                                       std::vector<std::size_t> labels, std::size_t k) {
  require(model_ids.size() == accuracies.size() && model_ids.size() == labels.size(), ErrorCode::shape,
          "model ids, accuracies and labels must align");
  ClusterAssignment out;
  out.k = k;
  out.clusters.resize(k);
  for (std::size_t c = 0; c < k; ++c) out.clusters[c].id = c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < k, ErrorCode::config, "cluster label out of range");
    out.clusters[labels[i]].members.push_back(i);
  }
  for (auto& cluster : out.clusters) {
    require(!cluster.members.empty(), ErrorCode::config, "cluster " + std::to_string(cluster.id) + " is empty");
    std::sort(cluster.members.begin(), cluster.members.end(), [&](std::size_t a, std::size_t b) {
      if (accuracies[a] != accuracies[b]) return accuracies[a] > accuracies[b];
      return model_ids[a] < model_ids[b];
    });
    double total = 0.0;
    for (const auto i : cluster.members) total += accuracies[i];
    cluster.mean_accuracy = total / static_cast<double>(cluster.members.size());
  }
  out.model_ids = std::move(model_ids);
  out.accuracies = std::move(accuracies);
  out.labels = std::move(labels);
  return out;
}

/// k-means over the models (rows of C), then ranking by pruning-set accuracy.
inline ClusterAssignment cluster_models(const ClusterMatrix& c, std::vector<std::string> model_ids,
                                        std::vector<double> accuracies, const KMeansOptions& options) {
  require(model_ids.size() == c.n_models(), ErrorCode::shape, "one model id per cluster-matrix row required");
  auto km = kmeans(c.values, options);
  auto out = rank_clusters(std::move(model_ids), std::move(accuracies), std::move(km.labels), options.k);
  out.centroids = std::move(km.centroids);
  out.sse_history = std::move(km.sse_history);
  return out;
}

/// Top members of the best cluster, spilling into the next-ranked clusters
/// when the best one is too small.
inline std::vector<std::string> select_accuracy_first(const ClusterAssignment& a, std::size_t ensemble_size) {
  require(ensemble_size >= 1, ErrorCode::config, "ensemble size must be >= 1");
  require(ensemble_size <= a.model_ids.size(), ErrorCode::config,
          "ensemble size " + std::to_string(ensemble_size) + " exceeds pool size " +
              std::to_string(a.model_ids.size()));
  std::vector<std::string> out;
  for (const auto c : a.ranking()) {
    for (const auto i : a.clusters[c].members) {
      if (out.size() == ensemble_size) return out;
      out.push_back(a.model_ids[i]);
    }
  }
  return out;
}

/// The most accurate member of every cluster, clusters in ranking order.
inline std::vector<std::string> select_diversity_first(const ClusterAssignment& a) {
  require(!a.clusters.empty(), ErrorCode::config, "no clusters to select from");
  std::vector<std::string> out;
  for (const auto c : a.ranking()) {
    require(!a.clusters[c].members.empty(), ErrorCode::config, "empty cluster");
    out.push_back(a.model_ids[a.clusters[c].members.front()]);
  }
  return out;
}

enum class SelectionStrategy { accuracy_first, diversity_first };

inline std::string_view to_string(SelectionStrategy s) {
  return s == SelectionStrategy::accuracy_first ? "accuracy-first" : "diversity-first";
}

inline SelectionStrategy strategy_from_string(std::string_view s) {
  if (s == "accuracy-first") return SelectionStrategy::accuracy_first;
  if (s == "diversity-first") return SelectionStrategy::diversity_first;
  fail(ErrorCode::config, "unknown selection strategy '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Persistence

inline json to_json_doc(const ClusterAssignment& a, std::uint64_t seed) {
  json clusters = json::array();
  for (const auto& c : a.clusters) {
    json members = json::array();
    for (const auto i : c.members) members.push_back(a.model_ids[i]);
    clusters.push_back({{"id", c.id}, {"mean_accuracy", c.mean_accuracy}, {"members", members}});
  }
  json assignment = json::object();
  for (std::size_t i = 0; i < a.model_ids.size(); ++i) assignment[a.model_ids[i]] = a.labels[i];
  json centroids = json::array();
  for (std::size_t c = 0; c < a.centroids.rows(); ++c) {
    const auto row = a.centroids.row(c);
    centroids.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return json{{"k", a.k},
              {"seed", seed},
              {"model_ids", a.model_ids},
              {"accuracies", a.accuracies},
              {"assignment", assignment},
              {"clusters", clusters},
              {"ranking", a.ranking()},
              {"centroids", centroids},
              {"sse_history", a.sse_history}};
}

inline ClusterAssignment cluster_assignment_from_json(const json& j) {
  try {
    const auto ids = j.at("model_ids").get<std::vector<std::string>>();
    std::vector<std::size_t> labels;
    for (const auto& id : ids) labels.push_back(j.at("assignment").at(id).get<std::size_t>());
    auto a = rank_clusters(ids, j.at("accuracies").get<std::vector<double>>(), labels, j.at("k").get<std::size_t>());
    a.sse_history = j.value("sse_history", std::vector<double>{});
    return a;
  } catch (const json::exception& e) {
    fail(ErrorCode::corrupt, std::string("malformed cluster file: ") + e.what());
  }
}

struct DeploymentManifest {
  SelectionStrategy strategy = SelectionStrategy::accuracy_first;
  std::size_t k = 0;
  std::vector<std::string> model_ids;
  std::vector<std::string> paths;  // parallel to model_ids
};

inline json to_json_doc(const DeploymentManifest& d) {
  json models = json::array();
  for (std::size_t i = 0; i < d.model_ids.size(); ++i) models.push_back({{"model_id", d.model_ids[i]}, {"path", d.paths[i]}});
  return json{{"strategy", std::string(to_string(d.strategy))}, {"k", d.k}, {"model_ids", d.model_ids}, {"models", models}};
}

inline DeploymentManifest deployment_from_json(const json& j) {
  try {
    DeploymentManifest d;
    d.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    d.k = j.at("k").get<std::size_t>();
    d.model_ids = j.at("model_ids").get<std::vector<std::string>>();
    for (const auto& m : j.at("models")) d.paths.push_back(m.at("path").get<std::string>());
    require(d.paths.size() == d.model_ids.size(), ErrorCode::corrupt, "deployment paths and ids disagree");
    return d;
  } catch (const json::exception& e) {
    fail(ErrorCode::corrupt, std::string("malformed deployment manifest: ") + e.what());
  }
}

}  // namespace p2e

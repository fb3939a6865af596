// Runs every acceptance criterion and prints one PASS/FAIL line per
// criterion. Exit status is non-zero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <future>
#include <map>
#include <string>

#include <spdlog/spdlog.h>

#include "p2e/prune2edge.hpp"

namespace {

using namespace p2e;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome schedule_exactness() {
  Outcome o;
  const PruningSchedule s{0.0, 0.9, 0, 4, 100};
  o.check(std::abs(sparsity_at(s, 0) - 0.0) <= 1e-12, "start != s_i");
  o.check(std::abs(sparsity_at(s, 400) - 0.9) <= 1e-12, "end != s_f");
  o.check(std::abs(sparsity_at(s, 200) - 0.7875) <= 1e-12, "t=200 != 0.7875");
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const double si = rng.uniform(0.0, 0.95);
    const double sf = rng.uniform(si + 1e-6, 1.0);
    const PruningSchedule r{si, sf, rng.below(1000), 1 + rng.below(50), 1 + rng.below(500)};
    o.check(std::abs(sparsity_at(r, r.begin_step) - si) <= 1e-12, "random start != s_i");
    o.check(std::abs(sparsity_at(r, r.end_step()) - sf) <= 1e-12, "random end != s_f");
    double prev = -1.0;
    for (std::uint64_t i = 0; i <= r.steps; ++i) {
      const double v = sparsity_at(r, r.begin_step + i * r.frequency);
      o.check(v >= prev, "decrease in schedule " + std::to_string(trial));
      prev = v;
    }
  }
  o.detail = o.pass ? "s(200)=" + num(sparsity_at(s, 200), 6) + ", 100 random schedules monotone" : o.detail;
  return o;
}

Outcome mask_freeze() {
  Outcome o;
  std::size_t tensors = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset d = gen_dataset({DatasetKind::blobs, 4000, 4, 16, 2.0, seed});
    const auto fit = d.subset(Split::train);
    const double sf = 0.7 + 0.05 * static_cast<double>(seed - 1);
    const auto optimizer = seed % 2 ? OptimizerKind::sgd : OptimizerKind::adam;
    const TrainConfig config{LossKind::categorical_crossentropy, optimizer, optimizer == OptimizerKind::sgd ? 0.1 : 0.002,
                             3, 32, seed};
    const Model m = pruned_train(fit.features, fit.labels, mlp_specs(16, std::vector<std::size_t>{64, 64}, 4), config,
                                 PruningSchedule{0.2, sf, 0, 4, 50});
    for (const auto& layer : m.layers) {
      ++tensors;
      const std::size_t expected = pruned_count(sf, layer.weights.size());
      std::size_t masked = 0;
      for (std::size_t i = 0; i < layer.weights.size(); ++i) {
        if (layer.mask->data[i] != 0.0f) continue;
        ++masked;
        o.check(std::bit_cast<std::uint32_t>(layer.weights.data[i]) == 0u, "masked weight not bit-zero");
      }
      o.check(masked == expected, "seed " + std::to_string(seed) + ": " + std::to_string(masked) + " masked, expected " +
                                      std::to_string(expected));
    }
  }
  if (o.pass) o.detail = std::to_string(tensors) + " weight tensors over 5 seeds exact and bit-zero";
  return o;
}

double fd_error(std::uint64_t seed, LossKind kind) {
  Rng rng(seed);
  const std::size_t in = 5, classes = 3, batch = 8;
  const std::size_t h1 = 4 + rng.below(12), h2 = 4 + rng.below(12);
  auto model = init_model<double>(mlp_specs(in, std::vector<std::size_t>{h1, h2}, classes), seed);
  for (auto& layer : model.layers) {
    for (double& b : layer.bias.data) b = rng.uniform(-0.5, 0.5);
  }
  BasicTensor<double> x(Shape{batch, in});
  for (double& v : x.data) v = rng.uniform(-2, 2);
  std::vector<std::uint32_t> labels(batch);
  for (auto& l : labels) l = static_cast<std::uint32_t>(rng.below(classes));
  const auto targets = one_hot<double>(labels, classes);
  const auto analytic = backward(model, x, targets, kind).gradients;

  const double h = 1e-6;
  double worst = 0.0;
  auto check = [&](double& param, double grad) {
    const double saved = param;
    param = saved + h;
    const double up = loss(kind, forward(model, x), targets);
    param = saved - h;
    const double down = loss(kind, forward(model, x), targets);
    param = saved;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(numeric - grad) / std::max({std::abs(numeric), std::abs(grad), 1e-6}));
  };
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    auto& layer = model.layers[k];
    for (std::size_t i = 0; i < layer.weights.size(); ++i) check(layer.weights.data[i], analytic.weights[k].data[i]);
    for (std::size_t i = 0; i < layer.bias.size(); ++i) check(layer.bias.data[i], analytic.biases[k].data[i]);
  }
  return worst;
}

Outcome gradient_check() {
  Outcome o;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (const auto kind : {LossKind::categorical_crossentropy, LossKind::mean_squared_error,
                            LossKind::mean_absolute_error}) {
      worst = std::max(worst, fd_error(seed, kind));
    }
  }
  o.check(worst <= 1e-4, "max relative error " + std::to_string(worst));
  if (o.pass) o.detail = "max relative error " + std::to_string(worst) + " (5 seeds x 3 losses)";
  return o;
}

Outcome quantization_bound() {
  Outcome o;
  Rng rng(4);
  double worst_ratio = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    BasicTensor<double> t(Shape{1 + rng.below(20), 1 + rng.below(20)});
    const double amp = std::exp(rng.uniform(-6, 6));
    for (double& v : t.data) v = rng.uniform(-amp, amp);
    const auto p = calibrate_weight_params(std::span<const double>(t.data));
    const auto q = quantize(t, p, QuantRole::weight);
    o.check(q.params.zero_point == 0, "weight zero_point != 0");
    for (const auto c : q.data) o.check(c >= -127 && c <= 127, "weight code outside [-127, 127]");
    const auto back = dequantize<double>(q);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double err = std::abs(back.data[i] - t.data[i]);
      o.check(err <= p.scale / 2 + 1e-9, "error above scale/2 in tensor " + std::to_string(trial));
      worst_ratio = std::max(worst_ratio, err / p.scale);
    }
  }
  if (o.pass) o.detail = "worst error " + num(worst_ratio) + " x scale over 100 tensors";
  return o;
}

Dataset default_dataset(std::uint64_t seed) { return gen_dataset({DatasetKind::blobs, 30000, 4, 16, 5.0, seed}); }

// Pools shared by the compression and distributed criteria.
std::map<double, Pool>& compression_pools() {
  static std::map<double, Pool> pools;
  return pools;
}

Outcome compression() {
  Outcome o;
  const Dataset d = default_dataset(11);
  std::string detail;
  for (const double sf : {0.9, 0.7}) {
    PoolConfig config;
    config.pool_size = 20;
    config.base_seed = 11;
    config.fixed_final_sparsity = sf;
    const auto t0 = Clock::now();
    Pool pool = generate_pool(d, config);
    const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    const double limit = sf == 0.9 ? 0.15 : 0.35;
    double worst = 0.0;
    std::size_t n = 0;
    for (const auto& m : pool.models) {
      if (!m) continue;
      ++n;
      const double ratio = static_cast<double>(serialize_model(*m).size()) /
                           static_cast<double>(serialize_model(*m, SavePolicy::dense_f32).size());
      worst = std::max(worst, ratio);
    }
    o.check(n == 20, "only " + std::to_string(n) + " usable models at s_f=" + num(sf, 1));
    o.check(worst <= limit, "s_f=" + num(sf, 1) + " worst ratio " + num(worst) + " > " + num(limit, 2));
    o.check(seconds < 60.0, "s_f=" + num(sf, 1) + " pool took " + num(seconds, 1) + " s");
    detail += (detail.empty() ? "" : "; ") + std::string("s_f=") + num(sf, 1) + " worst " + num(100 * worst, 2) +
              "% (limit " + num(100 * limit, 0) + "%), pool " + num(seconds, 1) + " s";
    compression_pools().emplace(sf, std::move(pool));
  }
  if (o.pass) o.detail = detail;
  return o;
}

std::uint32_t count_vote(const std::vector<std::uint32_t>& votes, std::size_t classes) {
  std::vector<int> counts(classes, 0);
  for (const auto v : votes) ++counts[v];
  std::uint32_t best = 0;
  for (std::uint32_t c = 1; c < classes; ++c) {
    if (counts[c] > counts[best]) best = c;
  }
  return best;
}

Outcome voting_oracle() {
  Outcome o;
  std::size_t cases = 0, ties = 0;
  for (const auto [members, classes] : {std::pair<std::size_t, std::size_t>{3, 4}, {4, 3}}) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < members; ++i) total *= classes;
    for (std::size_t code = 0; code < total; ++code) {
      std::vector<std::uint32_t> votes(members);
      std::size_t c = code;
      for (auto& v : votes) v = static_cast<std::uint32_t>(c % classes), c /= classes;
      const VoteBallot ballot{votes, classes};
      const auto expected = count_vote(votes, classes);
      std::vector<int> counts(classes, 0);
      for (const auto v : votes) ++counts[v];
      ties += std::count(counts.begin(), counts.end(), *std::max_element(counts.begin(), counts.end())) > 1;
      o.check(max_vote(ballot) == expected, "max_vote mismatch");
      o.check(hierarchical_vote(std::span<const VoteBallot>(&ballot, 1)) == expected, "hierarchical mismatch");
      ++cases;
    }
  }
  o.check(cases == 145, "expected 145 ballots");
  if (o.pass) o.detail = std::to_string(cases) + " ballots (" + std::to_string(ties) + " with ties) match";
  return o;
}

Outcome clustering() {
  Outcome o;
  Rng rng(7);
  BasicTensor<double> pts(Shape{40, 6});
  for (double& v : pts.data) v = rng.uniform();
  const auto first = kmeans(pts, {4, 123});
  for (int run = 0; run < 10; ++run) {
    const auto again = kmeans(pts, {4, 123});
    o.check(again.labels == first.labels && again.centroids.data == first.centroids.data, "non-deterministic k-means");
  }
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = kmeans(pts, {1 + seed % 6, seed});
    for (std::size_t i = 1; i < r.sse_history.size(); ++i) {
      o.check(r.sse_history[i] <= r.sse_history[i - 1], "SSE increased");
    }
  }
  const BasicTensor<double> four(Shape{4, 2}, std::vector<double>{0, 0, 0, 1, 10, 10, 10, 11});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = kmeans(four, {2, seed});
    o.check(r.labels[0] == r.labels[1] && r.labels[2] == r.labels[3] && r.labels[0] != r.labels[2],
            "wrong 2-means partition for seed " + std::to_string(seed));
  }
  if (o.pass) o.detail = "10 identical runs, SSE monotone, 20/20 seeds optimal";
  return o;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome ensemble_benefit() {
  Outcome o;
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset d = default_dataset(100 + seed);
    PoolConfig config;
    config.pool_size = 20;
    config.base_seed = seed;
    const Pool pool = generate_pool(d, config);
    std::vector<Model> models;
    std::vector<std::string> ids;
    std::vector<double> pruning_acc;
    for (std::size_t i = 0; i < pool.models.size(); ++i) {
      if (!pool.models[i]) continue;
      models.push_back(*pool.models[i]);
      ids.push_back(pool.manifest.entries[i].model_id);
      pruning_acc.push_back(pool.manifest.entries[i].pruning_accuracy);
    }
    const auto pruning = d.subset(Split::pruning);
    const auto c = build_cluster_matrix(predict_pool(models, pruning.features));
    const auto assignment = cluster_models(c, ids, pruning_acc, {3, seed});
    const auto chosen = select_accuracy_first(assignment, 3);
    std::vector<Model> members;
    for (const auto& id : chosen) members.push_back(models[std::find(ids.begin(), ids.end(), id) - ids.begin()]);

    const auto test = d.subset(Split::test);
    const double ens = evaluate_ensemble(members, test.features, test.labels).accuracy;
    std::vector<double> individual;
    for (const auto& m : models) individual.push_back(accuracy(m, test.features, test.labels));
    const double med = median(individual);
    wins += ens >= med;
    detail += (detail.empty() ? "" : ", ") + num(ens) + (ens >= med ? ">=" : "<") + num(med);
  }
  o.check(wins >= 4, "ensemble beat the median in only " + std::to_string(wins) + "/5 seeds");
  o.detail = (o.pass ? std::to_string(wins) + "/5 seeds: " + detail : o.detail + ": " + detail);
  return o;
}

Outcome distributed_equivalence() {
  using namespace p2e::edgenet;
  Outcome o;
  if (!compression_pools().count(0.7)) {
    PoolConfig config;
    config.pool_size = 5;
    config.base_seed = 11;
    config.fixed_final_sparsity = 0.7;
    compression_pools().emplace(0.7, generate_pool(default_dataset(11), config));
  }
  const Pool& pool = compression_pools().at(0.7);
  std::vector<Model> usable;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < pool.models.size() && usable.size() < 5; ++i) {
    if (pool.models[i]) usable.push_back(*pool.models[i]), ids.push_back(pool.manifest.entries[i].model_id);
  }
  const Dataset d = default_dataset(11);
  const auto test = d.subset(Split::test);
  const std::string fp = "acceptance/test";
  Worker node1("node1", {usable[0], usable[1]}, {ids[0], ids[1]}, test, fp);
  Worker node2("node2", {usable[2], usable[3], usable[4]}, {ids[2], ids[3], ids[4]}, test, fp);
  const std::vector<Endpoint> nodes{Endpoint{"127.0.0.1", node1.start(Endpoint{"127.0.0.1", 0})},
                                    Endpoint{"127.0.0.1", node2.start(Endpoint{"127.0.0.1", 0})}};

  const std::size_t n = 100;
  std::vector<std::vector<std::uint32_t>> votes;
  for (const auto& m : usable) votes.push_back(predict_classes(m, test.features));
  std::vector<std::uint32_t> oracle(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::vector<VoteBallot> ballots{{{votes[0][s], votes[1][s]}, 4}, {{votes[2][s], votes[3][s], votes[4][s]}, 4}};
    oracle[s] = hierarchical_vote(ballots);
  }

  double worst_e2e = 0.0;
  for (int run = 0; run < 3; ++run) {
    const auto t0 = Clock::now();
    MasterOptions options;
    options.request_id = 1 + static_cast<std::uint64_t>(run);
    const auto report = run_master(nodes, n, fp, 4, test.labels, options);
    const double wall = std::chrono::duration<double>(Clock::now() - t0).count();
    o.check(report.predictions == oracle, "run " + std::to_string(run) + " differs from the oracle");
    o.check(wall <= 60.0, "run took " + num(wall, 1) + " s");
    o.check(report.end_to_end_ms >= report.max_node_latency_ms(), "end-to-end below node latency");
    worst_e2e = std::max(worst_e2e, report.end_to_end_ms);
  }
  node1.stop();
  node2.stop();
  if (o.pass) o.detail = "3 runs identical to oracle, end-to-end <= " + num(worst_e2e, 3) + " ms";
  return o;
}

Outcome protocol_robustness() {
  using namespace p2e::edgenet;
  Outcome o;
  const Dataset d = gen_dataset({DatasetKind::blobs, 500, 3, 4, 1.0, 3});
  const auto test = d.subset(Split::test);
  Worker worker("fuzz", {init_model(mlp_specs(4, std::vector<std::size_t>{8}, 3), 1)}, {"m0"}, test, "fz/test");
  const Endpoint endpoint{"127.0.0.1", worker.start(Endpoint{"127.0.0.1", 0})};
  const Millis watchdog(10000);

  auto open_session = [&]() {
    LineChannel ch(connect_tcp(endpoint, watchdog));
    ch.send_line(encode(Hello{"master", {}, "fz/test", 0}));
    std::string line;
    require(ch.read_line(line, watchdog) == LineChannel::Status::line, ErrorCode::protocol, "no hello");
    return ch;
  };

  const std::vector<std::string> templates{
      encode(PredictRequest{9, {0, 1, 2, 3, 4}}), encode(PredictResult{9, {0, 1}, 1.0}),
      encode(Metrics{9, {{"m0", 0.1}}}), encode(Hello{"x", {"m0"}, "fz/test", 3}), encode(Bye{})};
  Rng rng(10);
  std::size_t errors = 0, results = 0, closes = 0;
  auto ch = std::make_unique<LineChannel>(open_session());
  for (int i = 0; i < 1000 && o.pass; ++i) {
    std::string frame = templates[rng.below(templates.size())];
    const int edits = 1 + static_cast<int>(rng.below(4));
    for (int e = 0; e < edits; ++e) {
      char c = static_cast<char>(rng.below(256));
      frame[rng.below(frame.size())] = c == '\n' ? ' ' : c;
    }
    if (!ch->send_line(frame)) {
      o.check(false, "worker stopped accepting frames");
      break;
    }
    std::string line;
    switch (ch->read_line(line, watchdog)) {
      case LineChannel::Status::timeout: o.check(false, "no answer within 10 s to frame " + std::to_string(i)); break;
      case LineChannel::Status::too_long: o.check(false, "oversized reply"); break;
      case LineChannel::Status::closed:
        ++closes;
        ch = std::make_unique<LineChannel>(open_session());
        break;
      case LineChannel::Status::line:
        try {
          const Message reply = decode(line);
          if (std::holds_alternative<ErrorFrame>(reply)) {
            ++errors;
          } else if (std::holds_alternative<PredictResult>(reply)) {
            ++results;
            o.check(ch->read_line(line, watchdog) == LineChannel::Status::line, "missing metrics frame");
          } else {
            o.check(false, "unexpected reply type " + std::string(type_name(reply)));
          }
        } catch (const Error& e) {
          o.check(false, std::string("worker sent an invalid frame: ") + e.what());
        }
        break;
    }
  }
  // The worker must still serve a clean session afterwards.
  LineChannel fresh = open_session();
  fresh.send_line(encode(PredictRequest{1, {0}}));
  std::string line;
  o.check(fresh.read_line(line, watchdog) == LineChannel::Status::line &&
              std::holds_alternative<PredictResult>(decode(line)),
          "worker unhealthy after fuzzing");
  fresh.send_line(encode(Bye{}));
  ch.reset();
  worker.stop();
  if (o.pass) {
    o.detail = std::to_string(errors) + " error frames, " + std::to_string(results) + " results, " +
               std::to_string(closes) + " clean closes";
  }
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<Criterion> criteria{
      {1, "sparsity schedule exactness", 1.0, schedule_exactness},
      {2, "mask freeze", 120.0, mask_freeze},
      {3, "gradient correctness", 30.0, gradient_check},
      {4, "quantization bound", 5.0, quantization_bound},
      {5, "compression ratio", 120.0, compression},
      {6, "voting oracle", 1.0, voting_oracle},
      {7, "clustering determinism and quality", 5.0, clustering},
      {8, "ensemble benefit", 600.0, ensemble_benefit},
      {9, "distributed equivalence", 60.0, distributed_equivalence},
      {10, "protocol robustness", 120.0, protocol_robustness},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    if (seconds > c.limit_seconds) {
      o.pass = false;
      o.detail = "took " + num(seconds, 2) + " s, limit " + num(c.limit_seconds, 0) + " s; " + o.detail;
    }
    failures += !o.pass;
    std::printf("[%s] %2d %-36s %8.2f s  %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, seconds, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}

// p2e: command-line driver for the pool -> ensemble -> edge pipeline.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "p2e/prune2edge.hpp"

namespace {

using namespace p2e;
using nlohmann::json;

constexpr int kUsageExit = 2;

struct Globals {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  std::string log_level;
};

std::vector<std::string> g_argv;

fs::path out_path(const Globals& g, const std::string& name) { return fs::path(g.out_dir) / name; }

/// Absolute, normalized form used in every artifact that refers to a file.
std::string canonical_string(const fs::path& p) { return fs::weakly_canonical(fs::absolute(p)).string(); }

/// Merges this subcommand's provenance into <out-dir>/run.json.
void record_run(const Globals& g, const std::string& command, json details) {
  const fs::path path = out_path(g, "run.json");
  json run = fs::exists(path) ? read_json(path) : json::object();
  details["argv"] = g_argv;
  details["seed"] = g.seed;
  run["tool"] = "p2e";
  run["commands"][command] = std::move(details);
  write_json(path, run);
}

fs::path manifest_file(const std::string& pool) {
  const fs::path p(pool);
  return fs::is_directory(p) ? p / "manifest.json" : p;
}

/// Dataset referenced by a pool manifest, relative paths against the manifest.
fs::path pool_dataset(const fs::path& manifest_path, const PoolManifest& m) {
  const fs::path p(m.dataset_path);
  return p.is_absolute() ? p : manifest_path.parent_path() / p;
}

std::vector<Model> load_models(const std::vector<std::string>& paths) {
  std::vector<Model> out;
  for (const auto& p : paths) out.push_back(load_model(p));
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string kind = "blobs";
  std::size_t samples = 30000;
  std::size_t classes = 4;
  std::size_t features = 16;
  double noise = 5.0;
  std::string name = "dataset.p2ed";
};

int cmd_gen_data(const Globals& g, const GenDataArgs& a) {
  DatasetSpec spec{dataset_kind_from_string(a.kind), a.samples, a.classes, a.features, a.noise, g.seed};
  if (spec.kind != DatasetKind::blobs) spec.n_features = 2;
  const Dataset data = gen_dataset(spec);
  const fs::path path = out_path(g, a.name);
  const json provenance{{"kind", a.kind},   {"n_samples", spec.n_samples}, {"n_classes", spec.n_classes},
                        {"n_features", spec.n_features}, {"noise", spec.noise}, {"seed", spec.seed}};
  const std::string sha = save_dataset(data, path, provenance);
  record_run(g, "gen-data", {{"dataset", canonical_string(path)}, {"sha256", sha}, {"params", provenance}});
  std::cout << "dataset " << path.string() << "\nsha256 " << sha << "\n";
  return 0;
}

struct TrainPoolArgs {
  std::string dataset;
  std::size_t size = 20;
  std::vector<std::size_t> hidden{192, 192};
  bool no_prune = false;
  bool no_quant = false;
  std::optional<double> final_sparsity;
  std::size_t workers = 0;
  std::string name;
};

int cmd_train_pool(const Globals& g, const TrainPoolArgs& a) {
  const auto loaded = load_dataset(a.dataset);
  PoolConfig config;
  config.pool_size = a.size;
  config.base_seed = g.seed;
  config.hidden = a.hidden;
  config.prune = !a.no_prune;
  config.quantize = !a.no_quant;
  config.fixed_final_sparsity = a.final_sparsity;
  config.workers = a.workers;
  const std::string name = !a.name.empty() ? a.name : (a.no_prune && a.no_quant ? "baseline" : "pool");
  const fs::path dir = out_path(g, name);
  Pool pool = generate_pool(loaded.data, config, loaded.sha256, canonical_string(a.dataset));
  const fs::path manifest = write_pool(pool, dir);

  std::size_t ok = 0;
  for (const auto& e : pool.manifest.entries) {
    if (!e.ok) continue;
    ++ok;
    std::printf("%s  acc=%.4f  sparsity=%.3f  bytes=%zu\n", e.model_id.c_str(), e.pruning_accuracy,
                e.overall_sparsity, e.file_size_bytes);
  }
  std::printf("pool %s: %zu/%zu models in %s\n", pool.manifest.pool_id.c_str(), ok, pool.manifest.entries.size(),
              manifest.string().c_str());
  record_run(g, "train-pool " + name,
             {{"dataset", canonical_string(a.dataset)},
              {"dataset_sha256", loaded.sha256},
              {"manifest", canonical_string(manifest)},
              {"pool_id", pool.manifest.pool_id},
              {"models_ok", ok}});
  return 0;
}

struct QuantizeArgs {
  std::string pool;
  std::size_t calibration = 128;
  std::string name;
};

int cmd_quantize(const Globals& g, const QuantizeArgs& a) {
  const fs::path manifest_path = manifest_file(a.pool);
  const Pool pool = load_pool(manifest_path);
  const auto loaded = load_dataset(pool_dataset(manifest_path, pool.manifest));
  require(pool.manifest.dataset_sha256.empty() || pool.manifest.dataset_sha256 == loaded.sha256, ErrorCode::corrupt,
          "pool was trained on a different dataset");
  if (pool.manifest.quantized) spdlog::info("pool is already quantized; models pass through unchanged");
  const Pool q = quantize_pool(pool, loaded.data, a.calibration);
  const std::string name = a.name.empty() ? manifest_path.parent_path().filename().string() + "-q" : a.name;
  const fs::path dir = out_path(g, name);
  require(fs::weakly_canonical(dir) != fs::weakly_canonical(manifest_path.parent_path()), ErrorCode::config,
          "quantize output must not overwrite its input pool");
  const fs::path out_manifest = write_pool(q, dir);
  std::cout << "quantized pool " << out_manifest.string() << "\n";
  record_run(g, "quantize", {{"input", canonical_string(manifest_path)}, {"manifest", canonical_string(out_manifest)}});
  return 0;
}

struct ClusterArgs {
  std::string pool;
  std::size_t k = 3;
};

int cmd_cluster(const Globals& g, const ClusterArgs& a) {
  const fs::path manifest_path = manifest_file(a.pool);
  const Pool pool = load_pool(manifest_path);
  const auto loaded = load_dataset(pool_dataset(manifest_path, pool.manifest));
  const LabeledData pruning = loaded.data.subset(Split::pruning);

  std::vector<Model> models;
  std::vector<std::string> ids;
  std::vector<double> accs;
  for (std::size_t i = 0; i < pool.models.size(); ++i) {
    if (!pool.models[i]) continue;
    models.push_back(*pool.models[i]);
    ids.push_back(pool.manifest.entries[i].model_id);
    accs.push_back(pool.manifest.entries[i].pruning_accuracy);
  }
  require(a.k >= 1 && a.k <= models.size(), ErrorCode::config,
          "k must lie in [1, " + std::to_string(models.size()) + "]");
  const auto matrices = predict_pool(models, pruning.features);
  const ClusterMatrix c = build_cluster_matrix(matrices);
  KMeansOptions options;
  options.k = a.k;
  options.seed = g.seed;
  const ClusterAssignment assignment = cluster_models(c, ids, accs, options);

  json doc = to_json_doc(assignment, g.seed);
  doc["pool"] = canonical_string(manifest_path);
  const fs::path path = out_path(g, "clusters.json");
  write_json(path, doc);
  for (const auto cid : assignment.ranking()) {
    const auto& cl = assignment.clusters[cid];
    std::printf("cluster %zu  mean_acc=%.4f  members:", cl.id, cl.mean_accuracy);
    for (const auto i : cl.members) std::printf(" %s", ids[i].c_str());
    std::printf("\n");
  }
  record_run(g, "cluster", {{"pool", canonical_string(manifest_path)}, {"k", a.k}, {"clusters", canonical_string(path)}});
  return 0;
}

struct SelectArgs {
  std::string clusters;
  std::string strategy = "accuracy-first";
  std::size_t ensemble_size = 3;
};

int cmd_select(const Globals& g, const SelectArgs& a) {
  const json doc = read_json(a.clusters);
  const ClusterAssignment assignment = cluster_assignment_from_json(doc);
  require(doc.contains("pool"), ErrorCode::corrupt, "cluster file does not name its pool");
  const fs::path manifest_path = doc.at("pool").get<std::string>();
  const PoolManifest manifest = read_manifest(manifest_path);

  DeploymentManifest d;
  d.strategy = strategy_from_string(a.strategy);
  d.k = assignment.k;
  d.model_ids = d.strategy == SelectionStrategy::accuracy_first ? select_accuracy_first(assignment, a.ensemble_size)
                                                                : select_diversity_first(assignment);
  for (const auto& id : d.model_ids) {
    const auto it = std::find_if(manifest.entries.begin(), manifest.entries.end(),
                                 [&](const PoolEntry& e) { return e.model_id == id; });
    require(it != manifest.entries.end(), ErrorCode::corrupt, "model " + id + " missing from pool manifest");
    d.paths.push_back(canonical_string(manifest_path.parent_path() / it->path));
  }
  json out = to_json_doc(d);
  out["pool"] = canonical_string(manifest_path);
  out["dataset"] = canonical_string(pool_dataset(manifest_path, manifest));
  const fs::path path = out_path(g, "deployment.json");
  write_json(path, out);
  std::cout << to_string(d.strategy) << ":";
  for (const auto& id : d.model_ids) std::cout << " " << id;
  std::cout << "\n";
  record_run(g, "select", {{"clusters", canonical_string(a.clusters)}, {"deployment", canonical_string(path)}});
  return 0;
}

struct EvalArgs {
  std::string models;
  std::string split = "test";
  std::string baseline;
  std::string dataset;
  bool soft = false;
};

struct ModelSet {
  std::vector<std::string> ids;
  std::vector<std::string> paths;
  std::string dataset;
};

/// Accepts a deployment manifest or a pool manifest (all usable members).
ModelSet read_model_set(const fs::path& path) {
  const json j = read_json(path);
  ModelSet s;
  if (j.contains("entries")) {
    const PoolManifest m = read_manifest(path);
    for (const auto* e : m.usable()) {
      s.ids.push_back(e->model_id);
      s.paths.push_back((path.parent_path() / e->path).string());
    }
    s.dataset = pool_dataset(path, m).string();
  } else {
    const DeploymentManifest d = deployment_from_json(j);
    s.ids = d.model_ids;
    s.paths = d.paths;
    s.dataset = j.value("dataset", std::string{});
  }
  return s;
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const ModelSet set = read_model_set(manifest_file(a.models));
  const std::string dataset_path = a.dataset.empty() ? set.dataset : a.dataset;
  require(!dataset_path.empty(), ErrorCode::config, "no dataset given and none recorded with the models");
  const auto loaded = load_dataset(dataset_path);
  const Split split = split_from_string(a.split);
  const LabeledData eval = loaded.data.subset(split);
  const std::vector<Model> members = load_models(set.paths);
  const VoteMode mode = a.soft ? VoteMode::soft : VoteMode::hard;
  const EnsembleEvaluation result = evaluate_ensemble(members, eval.features, eval.labels, mode);

  json members_doc = json::object();
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    members_doc[set.ids[i]] = result.member_accuracies[i];
    std::printf("%s  acc=%.4f\n", set.ids[i].c_str(), result.member_accuracies[i]);
  }
  json doc{{"split", a.split},
           {"n_samples", eval.size()},
           {"vote", a.soft ? "soft" : "hard"},
           {"ensemble_accuracy", result.accuracy},
           {"ensemble_size", members.size()},
           {"member_accuracies", members_doc},
           {"median_member_accuracy", median(result.member_accuracies)},
           {"models", canonical_string(manifest_file(a.models))}};
  std::printf("ensemble (%zu models, %s vote): %.4f on %zu %s samples\n", members.size(), a.soft ? "soft" : "hard",
              result.accuracy, eval.size(), a.split.c_str());
  if (!a.baseline.empty()) {
    const ModelSet base = read_model_set(manifest_file(a.baseline));
    require(!base.paths.empty(), ErrorCode::config, "baseline has no usable model");
    const Model baseline = load_model(base.paths.front());
    const double acc = accuracy(baseline, eval.features, eval.labels);
    doc["baseline_accuracy"] = acc;
    doc["baseline_model"] = canonical_string(base.paths.front());
    doc["baseline_file_size_bytes"] = fs::file_size(base.paths.front());
    std::size_t ensemble_bytes = 0;
    for (const auto& p : set.paths) ensemble_bytes += fs::file_size(p);
    doc["ensemble_file_size_bytes"] = ensemble_bytes;
    std::printf("baseline: %.4f\n", acc);
  }
  const fs::path path = out_path(g, "eval.json");
  write_json(path, doc);
  record_run(g, "eval", {{"models", canonical_string(manifest_file(a.models))}, {"eval", canonical_string(path)}});
  return 0;
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

int cmd_worker(const Globals&, const std::string& config_path) {
  const edgenet::NodeConfig config = edgenet::load_node_config(config_path);
  edgenet::Worker worker = edgenet::Worker::from_config(config);
  const edgenet::Endpoint endpoint = edgenet::Endpoint::parse(config.listen);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto port = worker.start(endpoint);
  std::cout << "listening " << endpoint.host << ":" << port << std::endl;
  while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  worker.stop();
  return 0;
}

struct MasterArgs {
  std::vector<std::string> nodes;
  std::size_t samples = 100;
  std::string dataset;
  std::string split = "test";
  double timeout_s = 30.0;
};

int cmd_master(const Globals& g, const MasterArgs& a) {
  std::vector<edgenet::Endpoint> endpoints;
  for (const auto& n : a.nodes) endpoints.push_back(edgenet::Endpoint::parse(n));
  const auto loaded = load_dataset(a.dataset);
  const Split split = split_from_string(a.split);
  const auto [begin, end] = loaded.data.range(split);
  require(a.samples <= end - begin, ErrorCode::config,
          "requested " + std::to_string(a.samples) + " samples but the split holds " + std::to_string(end - begin));
  const std::span<const std::uint32_t> labels(loaded.data.labels.data() + begin, end - begin);
  edgenet::MasterOptions options;
  options.timeout = edgenet::Millis(static_cast<long>(a.timeout_s * 1000.0));
  const auto report = edgenet::run_master(endpoints, a.samples, edgenet::dataset_fingerprint(loaded.sha256, split),
                                          loaded.data.n_classes, labels, options);
  const fs::path path = out_path(g, "master-" + std::to_string(a.samples) + ".json");
  write_json(path, edgenet::to_json_doc(report));
  std::cout << edgenet::latency_table(std::span(&report, 1));
  record_run(g, "master " + std::to_string(a.samples), {{"nodes", a.nodes}, {"report", canonical_string(path)}});
  return 0;
}

edgenet::MasterReport master_report_from_json(const json& j) {
  edgenet::MasterReport r;
  r.n_samples = j.at("n_samples").get<std::size_t>();
  r.end_to_end_ms = j.at("end_to_end_ms").get<double>();
  if (!j.at("accuracy").is_null()) r.accuracy = j.at("accuracy").get<double>();
  for (const auto& n : j.at("nodes")) {
    edgenet::NodeReport node;
    node.node_id = n.at("node_id").get<std::string>();
    node.address = n.at("address").get<std::string>();
    node.node_latency_ms = n.at("node_latency_ms").get<double>();
    node.round_trip_ms = n.at("round_trip_ms").get<double>();
    r.nodes.push_back(std::move(node));
  }
  return r;
}

int cmd_report(const Globals&, const std::string& run_dir) {
  require(fs::is_directory(run_dir), ErrorCode::io, "run directory not found: " + run_dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("master-", 0) == 0 && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::vector<edgenet::MasterReport> runs;
  json latency = json::array();
  for (const auto& f : files) {
    try {
      runs.push_back(master_report_from_json(read_json(f)));
    } catch (const json::exception& e) {
      fail(ErrorCode::corrupt, f.string() + ": " + e.what());
    }
  }
  std::sort(runs.begin(), runs.end(), [](const auto& x, const auto& y) { return x.n_samples < y.n_samples; });
  for (const auto& r : runs) {
    json nodes = json::object();
    for (const auto& n : r.nodes) nodes[n.node_id] = n.node_latency_ms;
    latency.push_back({{"samples", r.n_samples},
                       {"node_latency_ms", nodes},
                       {"end_to_end_ms", r.end_to_end_ms},
                       {"accuracy", r.accuracy ? json(*r.accuracy) : json(nullptr)}});
  }

  std::string text;
  json doc{{"latency", latency}};
  if (!runs.empty()) text += "Latency\n" + edgenet::latency_table(runs);
  const fs::path eval_path = fs::path(run_dir) / "eval.json";
  if (fs::exists(eval_path)) {
    const json e = read_json(eval_path);
    doc["accuracy"] = e;
    char buf[256];
    text += "\nAccuracy (" + e.value("split", std::string("test")) + ")\n";
    std::snprintf(buf, sizeof buf, "  ensemble of %zu   %.4f\n", e.value("ensemble_size", std::size_t{0}),
                  e.value("ensemble_accuracy", 0.0));
    text += buf;
    std::snprintf(buf, sizeof buf, "  median member    %.4f\n", e.value("median_member_accuracy", 0.0));
    text += buf;
    if (e.contains("baseline_accuracy")) {
      std::snprintf(buf, sizeof buf, "  baseline         %.4f\n", e.at("baseline_accuracy").get<double>());
      text += buf;
    }
  }
  require(!runs.empty() || doc.contains("accuracy"), ErrorCode::io, "no master or eval results in " + run_dir);
  write_json(fs::path(run_dir) / "report.json", doc);
  write_text_atomic(fs::path(run_dir) / "report.txt", text);
  std::cout << text;
  return 0;
}

void configure_logging(const std::string& flag) {
  std::string level = flag;
  if (level.empty()) {
    const char* env = std::getenv("P2E_LOG");
    level = env ? env : "info";
  }
  auto logger = spdlog::stderr_color_mt("p2e");
  spdlog::set_default_logger(logger);
  const auto parsed = spdlog::level::from_str(level);
  require(parsed != spdlog::level::off || level == "off", ErrorCode::config, "unknown log level '" + level + "'");
  spdlog::set_level(parsed);
}

}  // namespace

int main(int argc, char** argv) {
  g_argv.assign(argv + 1, argv + argc);
  CLI::App app{"p2e: pruned, quantized model pools, ensemble selection and edge inference"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Directory for all artifacts")->capture_default_str();
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off (default: $P2E_LOG or info)");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset with split sidecar");
  gen_cmd->add_option("--kind", gen.kind, "blobs|moons|spiral")
      ->check(CLI::IsMember({"blobs", "moons", "spiral"}))
      ->capture_default_str();
  gen_cmd->add_option("--samples", gen.samples)->check(CLI::PositiveNumber)->capture_default_str();
  gen_cmd->add_option("--classes", gen.classes)->check(CLI::PositiveNumber)->capture_default_str();
  gen_cmd->add_option("--features", gen.features, "Feature count (blobs only)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gen_cmd->add_option("--noise", gen.noise)->check(CLI::NonNegativeNumber)->capture_default_str();
  gen_cmd->add_option("--name", gen.name, "Output file name")->capture_default_str();

  TrainPoolArgs train;
  auto* train_cmd = app.add_subcommand("train-pool", "Train a pool of pruned, quantized models");
  train_cmd->add_option("--dataset", train.dataset)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--size", train.size)->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--hidden", train.hidden, "Hidden layer widths")->delimiter(',')->capture_default_str();
  train_cmd->add_flag("--no-prune", train.no_prune);
  train_cmd->add_flag("--no-quant", train.no_quant);
  train_cmd->add_option("--final-sparsity", train.final_sparsity, "Override the sampled final sparsity")
      ->check(CLI::Range(0.6, 1.0));
  train_cmd->add_option("--workers", train.workers, "Training threads (0: hardware)")->capture_default_str();
  train_cmd->add_option("--name", train.name, "Pool directory name under --out-dir");

  QuantizeArgs quant;
  auto* quant_cmd = app.add_subcommand("quantize", "Quantize a pool into a new directory");
  quant_cmd->add_option("--pool", quant.pool, "Pool directory or manifest")->required()->check(CLI::ExistingPath);
  quant_cmd->add_option("--calibration", quant.calibration)->check(CLI::PositiveNumber)->capture_default_str();
  quant_cmd->add_option("--name", quant.name, "Output pool directory name");

  ClusterArgs cluster;
  auto* cluster_cmd = app.add_subcommand("cluster", "Cluster pool members by prediction behaviour");
  cluster_cmd->add_option("--pool", cluster.pool)->required()->check(CLI::ExistingPath);
  cluster_cmd->add_option("--k", cluster.k)->check(CLI::PositiveNumber)->capture_default_str();
  cluster_cmd->add_option("--seed", g.seed, "Alias for the global --seed");

  SelectArgs select;
  auto* select_cmd = app.add_subcommand("select", "Pick deployment members from a clustering");
  select_cmd->add_option("--clusters", select.clusters)->required()->check(CLI::ExistingFile);
  select_cmd->add_option("--strategy", select.strategy)
      ->check(CLI::IsMember({"accuracy-first", "diversity-first"}))
      ->capture_default_str();
  select_cmd->add_option("--ensemble-size", select.ensemble_size)->check(CLI::PositiveNumber)->capture_default_str();

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate an ensemble (and optionally a baseline)");
  eval_cmd->add_option("--models", eval.models, "Deployment or pool manifest")->required()->check(CLI::ExistingPath);
  eval_cmd->add_option("--split", eval.split)->check(CLI::IsMember({"train", "pruning", "test", "all"}))->capture_default_str();
  eval_cmd->add_option("--baseline", eval.baseline, "Baseline pool directory or manifest")->check(CLI::ExistingPath);
  eval_cmd->add_option("--dataset", eval.dataset)->check(CLI::ExistingFile);
  eval_cmd->add_flag("--soft", eval.soft, "Soft (probability-sum) voting");

  std::string worker_config;
  auto* worker_cmd = app.add_subcommand("worker", "Serve predictions for a model subset");
  worker_cmd->add_option("--config", worker_config)->required()->check(CLI::ExistingFile);

  MasterArgs master;
  auto* master_cmd = app.add_subcommand("master", "Request and combine predictions from worker nodes");
  master_cmd->add_option("--nodes", master.nodes, "host:port list")->required()->delimiter(',');
  master_cmd->add_option("--samples", master.samples)->capture_default_str();
  master_cmd->add_option("--dataset", master.dataset)->required()->check(CLI::ExistingFile);
  master_cmd->add_option("--split", master.split)->check(CLI::IsMember({"train", "pruning", "test", "all"}))->capture_default_str();
  master_cmd->add_option("--timeout", master.timeout_s, "Per-node timeout in seconds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  std::string run_dir;
  auto* report_cmd = app.add_subcommand("report", "Latency and accuracy tables for a run directory");
  report_cmd->add_option("--run-dir", run_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsageExit;
  }

  try {
    configure_logging(g.log_level);
    if (*gen_cmd) return cmd_gen_data(g, gen);
    if (*train_cmd) return cmd_train_pool(g, train);
    if (*quant_cmd) return cmd_quantize(g, quant);
    if (*cluster_cmd) return cmd_cluster(g, cluster);
    if (*select_cmd) return cmd_select(g, select);
    if (*eval_cmd) return cmd_eval(g, eval);
    if (*worker_cmd) return cmd_worker(g, worker_config);
    if (*master_cmd) return cmd_master(g, master);
    if (*report_cmd) return cmd_report(g, run_dir);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return kUsageExit;
}

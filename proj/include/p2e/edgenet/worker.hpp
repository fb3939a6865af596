#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "p2e/dataset.hpp"
#include "p2e/edgenet/protocol.hpp"
#include "p2e/edgenet/socket.hpp"
#include "p2e/nncore.hpp"
#include "p2e/store.hpp"
#include "p2e/voter.hpp"

namespace p2e::edgenet {

/// Identifies the samples a node can serve: dataset content hash plus split.
inline std::string dataset_fingerprint(const std::string& sha256, Split split) {
  return sha256 + "/" + std::string(to_string(split));
}

struct NodeConfig {
  std::string node_id = "node";
  std::string listen = "127.0.0.1:0";
  std::vector<fs::path> models;
  fs::path dataset;
  Split split = Split::test;
  std::size_t max_batch = 1024;

  void validate() const {
    require(!models.empty(), ErrorCode::config, "node config lists no models");
    require(!dataset.empty(), ErrorCode::config, "node config has no dataset");
    require(max_batch >= 1, ErrorCode::config, "max_batch must be >= 1");
    Endpoint::parse(listen);
  }
};

/// Relative paths in the file resolve against the file's directory.
inline NodeConfig node_config_from_json(const json& j, const fs::path& base_dir = {}) {
  NodeConfig c;
  auto resolve = [&base_dir](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  try {
    c.node_id = j.value("node_id", c.node_id);
    c.listen = j.value("listen", c.listen);
    for (const auto& m : j.at("models")) c.models.push_back(resolve(m.get<std::string>()));
    c.dataset = resolve(j.at("dataset").get<std::string>());
    c.split = split_from_string(j.value("split", std::string("test")));
    c.max_batch = j.value("max_batch", c.max_batch);
  } catch (const json::exception& e) {
    fail(ErrorCode::config, std::string("node config: ") + e.what());
  }
  c.validate();
  return c;
}

inline json to_json_doc(const NodeConfig& c) {
  std::vector<std::string> models;
  for (const auto& m : c.models) models.push_back(m.string());
  return json{{"node_id", c.node_id},     {"listen", c.listen}, {"models", models}, {"dataset", c.dataset.string()},
              {"split", to_string(c.split)}, {"max_batch", c.max_batch}};
}

inline NodeConfig load_node_config(const fs::path& path) {
  return node_config_from_json(read_json(path), path.parent_path());
}

struct WorkerReply {
  PredictResult result;
  Metrics metrics;
};

/// Hosts a model subset over a shard and answers predict frames with
/// per-sample node-level votes.
class Worker {
 public:
  Worker(std::string node_id, std::vector<Model> models, std::vector<std::string> model_ids, LabeledData shard,
         std::string fingerprint, std::size_t max_batch = 1024)
      : node_id_(std::move(node_id)),
        models_(std::move(models)),
        model_ids_(std::move(model_ids)),
        shard_(std::move(shard)),
        fingerprint_(std::move(fingerprint)),
        max_batch_(max_batch) {
    require(!models_.empty(), ErrorCode::config, "worker needs at least one model");
    require(model_ids_.size() == models_.size(), ErrorCode::config, "one model id per model required");
    require(max_batch_ >= 1, ErrorCode::config, "max_batch must be >= 1");
    for (const auto& m : models_) {
      validate(m);
      require(m.n_classes() == models_.front().n_classes(), ErrorCode::config, "hosted models disagree on classes");
      require(m.input_dim() == shard_.features.cols() || shard_.size() == 0, ErrorCode::shape,
              "model input width does not match the dataset");
    }
  }

  /// Loads models and shard from disk; a corrupt model aborts construction.
  static Worker from_config(const NodeConfig& config) {
    config.validate();
    std::vector<Model> models;
    std::vector<std::string> ids;
    for (const auto& path : config.models) {
      models.push_back(load_model(path));
      ids.push_back(path.stem().string());
    }
    auto loaded = load_dataset(config.dataset);
    return Worker(config.node_id, std::move(models), std::move(ids), loaded.data.subset(config.split),
                  dataset_fingerprint(loaded.sha256, config.split), config.max_batch);
  }

  Worker(const Worker&) = delete;
  Worker& operator=(const Worker&) = delete;
  Worker(Worker&& other) noexcept
      : node_id_(std::move(other.node_id_)),
        models_(std::move(other.models_)),
        model_ids_(std::move(other.model_ids_)),
        shard_(std::move(other.shard_)),
        fingerprint_(std::move(other.fingerprint_)),
        max_batch_(other.max_batch_) {}
  ~Worker() { stop(); }

  const std::string& node_id() const { return node_id_; }
  const std::string& fingerprint() const { return fingerprint_; }
  const std::vector<std::string>& model_ids() const { return model_ids_; }
  std::size_t n_classes() const { return models_.front().n_classes(); }
  std::size_t shard_size() const { return shard_.size(); }

  Hello hello() const { return Hello{node_id_, model_ids_, fingerprint_, shard_.size()}; }

  /// Runs every hosted model on the referenced samples and votes per sample.
  WorkerReply predict(const PredictRequest& request) const {
    for (const auto i : request.sample_indices) {
      require(i < shard_.size(), ErrorCode::bad_index,
              "sample index " + std::to_string(i) + " outside shard of " + std::to_string(shard_.size()));
    }
    const auto start = Clock::now();
    const std::size_t n = request.sample_indices.size();
    std::vector<std::vector<std::uint32_t>> votes(models_.size(), std::vector<std::uint32_t>(n));
    std::vector<double> model_ms(models_.size(), 0.0);
    for (std::size_t begin = 0; begin < n; begin += max_batch_) {
      const std::size_t end = std::min(n, begin + max_batch_);
      std::vector<std::size_t> rows(request.sample_indices.begin() + static_cast<std::ptrdiff_t>(begin),
                                    request.sample_indices.begin() + static_cast<std::ptrdiff_t>(end));
      const Tensor batch = gather_rows(shard_.features, rows);
      for (std::size_t m = 0; m < models_.size(); ++m) {
        const auto t0 = Clock::now();
        const auto classes = predict_classes(models_[m], batch);
        model_ms[m] += std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        std::copy(classes.begin(), classes.end(), votes[m].begin() + static_cast<std::ptrdiff_t>(begin));
      }
    }
    WorkerReply reply;
    reply.result.request_id = request.request_id;
    reply.result.predicted_classes.resize(n);
    VoteBallot ballot{std::vector<std::uint32_t>(models_.size()), n_classes()};
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t m = 0; m < models_.size(); ++m) ballot.votes[m] = votes[m][s];
      reply.result.predicted_classes[s] = max_vote(ballot);
    }
    reply.result.node_latency_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    reply.metrics.request_id = request.request_id;
    for (std::size_t m = 0; m < models_.size(); ++m) reply.metrics.per_model_ms.emplace_back(model_ids_[m], model_ms[m]);
    return reply;
  }

  /// Binds and starts accepting in the background; returns the bound port.
  std::uint16_t start(const Endpoint& endpoint) {
    require(!running_.load(), ErrorCode::config, "worker already running");
    listener_ = listen_tcp(endpoint);
    port_ = local_port(listener_);
    stopping_ = false;
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
    spdlog::info("worker {} listening on {}:{} with {} model(s)", node_id_, endpoint.host, port_, models_.size());
    return port_;
  }

  std::uint16_t port() const { return port_; }

  /// Stops accepting and waits for open sessions to wind down.
  void stop() {
    if (!running_.exchange(false)) return;
    stopping_ = true;
    if (accept_thread_.joinable()) accept_thread_.join();
    std::unique_lock lock(sessions_mutex_);
    sessions_done_.wait(lock, [this] { return active_sessions_ == 0; });
    listener_.close();
  }

  /// Blocks until `stop()` is called from another thread.
  void wait() {
    while (running_.load()) std::this_thread::sleep_for(Millis(100));
  }

 private:
  static constexpr Millis kPoll{50};

  void accept_loop() {
    while (!stopping_.load()) {
      Socket s = accept_tcp(listener_, kPoll);
      if (!s.valid()) continue;
      {
        std::lock_guard lock(sessions_mutex_);
        ++active_sessions_;
      }
      std::thread([this, sock = std::move(s)]() mutable {
        try {
          session(LineChannel(std::move(sock)));
        } catch (const std::exception& e) {
          spdlog::warn("worker {} session ended: {}", node_id_, e.what());
        }
        std::lock_guard lock(sessions_mutex_);
        --active_sessions_;
        sessions_done_.notify_all();
      }).detach();
    }
  }

  static void send_error(LineChannel& ch, ErrorCode code, const std::string& message,
                         std::optional<std::uint64_t> request_id = std::nullopt) {
    ch.send_line(encode(ErrorFrame{request_id, std::string(wire_code(code)), message}));
  }

  /// Reads one frame, polling the stop flag. False when the session should end.
  bool next_frame(LineChannel& ch, std::string& line) {
    for (;;) {
      if (stopping_.load()) return false;
      switch (ch.read_line(line, kPoll)) {
        case LineChannel::Status::line: return true;
        case LineChannel::Status::timeout: continue;
        case LineChannel::Status::closed: return false;
        case LineChannel::Status::too_long:
          send_error(ch, ErrorCode::protocol, "frame exceeds " + std::to_string(kMaxFrameBytes) + " bytes");
          return false;
      }
    }
  }

  void session(LineChannel ch) {
    std::string line;
    if (!next_frame(ch, line)) return;
    try {
      const Message first = decode(line);
      const auto* hello = std::get_if<Hello>(&first);
      if (!hello) {
        send_error(ch, ErrorCode::protocol, "expected hello, got " + std::string(type_name(first)));
        return;
      }
      if (hello->dataset_fingerprint != fingerprint_) {
        send_error(ch, ErrorCode::shard_mismatch,
                   "master expects " + hello->dataset_fingerprint + ", node holds " + fingerprint_);
        return;
      }
    } catch (const Error& e) {
      send_error(ch, e.code(), e.what());
      return;
    }
    if (!ch.send_line(encode(hello()))) return;

    while (next_frame(ch, line)) {
      Message message;
      try {
        message = decode(line);
      } catch (const Error& e) {
        send_error(ch, e.code(), e.what(), salvage_request_id(line));
        continue;
      }
      if (std::holds_alternative<Bye>(message)) return;
      const auto* request = std::get_if<PredictRequest>(&message);
      if (!request) {
        send_error(ch, ErrorCode::protocol, "unexpected " + std::string(type_name(message)) + " frame");
        continue;
      }
      try {
        const WorkerReply reply = predict(*request);
        if (!ch.send_line(encode(reply.result)) || !ch.send_line(encode(reply.metrics))) return;
      } catch (const Error& e) {
        send_error(ch, e.code(), e.what(), request->request_id);
      }
    }
  }

  std::string node_id_;
  std::vector<Model> models_;
  std::vector<std::string> model_ids_;
  LabeledData shard_;
  std::string fingerprint_;
  std::size_t max_batch_;

  Socket listener_;
  std::uint16_t port_ = 0;
  std::thread accept_thread_;
  std::atomic<bool> running_{false};
  std::atomic<bool> stopping_{false};
  std::mutex sessions_mutex_;
  std::condition_variable sessions_done_;
  std::size_t active_sessions_ = 0;
};

}  // namespace p2e::edgenet

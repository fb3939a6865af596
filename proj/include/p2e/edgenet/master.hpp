#pragma once

#include <chrono>
#include <cstdio>
#include <exception>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "p2e/edgenet/protocol.hpp"
#include "p2e/edgenet/socket.hpp"
#include "p2e/nncore.hpp"
#include "p2e/voter.hpp"

namespace p2e::edgenet {

struct MasterOptions {
  Millis timeout{30000};  // per node, for connect and for each awaited frame
  std::uint64_t request_id = 1;
};

struct NodeReport {
  std::string address;
  std::string node_id;
  std::vector<std::string> model_ids;
  std::vector<std::uint32_t> predictions;
  double node_latency_ms = 0.0;
  double round_trip_ms = 0.0;
  std::vector<std::pair<std::string, double>> per_model_ms;
};

struct MasterReport {
  std::size_t n_samples = 0;
  std::vector<std::uint32_t> predictions;
  std::optional<double> accuracy;
  std::vector<NodeReport> nodes;
  double end_to_end_ms = 0.0;

  double max_node_latency_ms() const {
    double m = 0.0;
    for (const auto& n : nodes) m = std::max(m, n.node_latency_ms);
    return m;
  }
};

namespace detail {

class NodeLink {
 public:
  NodeLink(const Endpoint& endpoint, Millis timeout) : endpoint_(endpoint), timeout_(timeout) {}

  void connect() { channel_.emplace(connect_tcp(endpoint_, timeout_)); }

  void send(const Message& m) {
    require(channel_->send_line(encode(m)), ErrorCode::io, "send to " + endpoint_.str() + " failed");
  }

  /// Next frame from the node. Error frames are rethrown with their own code.
  Message receive() {
    std::string line;
    switch (channel_->read_line(line, timeout_)) {
      case LineChannel::Status::line: break;
      case LineChannel::Status::timeout:
        fail(ErrorCode::node_timeout, endpoint_.str() + " did not answer within " +
                                          std::to_string(timeout_.count()) + " ms");
      case LineChannel::Status::closed: fail(ErrorCode::protocol, endpoint_.str() + " closed the connection");
      case LineChannel::Status::too_long: fail(ErrorCode::protocol, endpoint_.str() + " sent an oversized frame");
    }
    Message m;
    try {
      m = decode(line);
    } catch (const Error& e) {
      fail(ErrorCode::protocol, endpoint_.str() + " sent a malformed frame: " + e.what());
    }
    if (const auto* err = std::get_if<ErrorFrame>(&m)) {
      fail(error_code_from_wire(err->code), endpoint_.str() + " replied " + err->code + ": " + err->message);
    }
    return m;
  }

  template <typename T>
  T expect(std::string_view what) {
    Message m = receive();
    auto* frame = std::get_if<T>(&m);
    require(frame != nullptr, ErrorCode::protocol,
            endpoint_.str() + " sent " + std::string(type_name(m)) + " where " + std::string(what) + " was expected");
    return std::move(*frame);
  }

  void close() {
    if (channel_) {
      channel_->send_line(encode(Bye{}));
      channel_.reset();
    }
  }

  const Endpoint& endpoint() const { return endpoint_; }

 private:
  Endpoint endpoint_;
  Millis timeout_;
  std::optional<LineChannel> channel_;
};

/// Runs `job(i)` for every node on its own thread and rethrows the first
/// failure in node order.
template <typename Job>
void fan_out(std::size_t n, Job job) {
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < n; ++i) {
    threads.emplace_back([&, i] {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Asks every node for samples [0, n_samples) and combines the node-level
/// votes per sample. Any node failure aborts the whole run.
inline MasterReport run_master(std::span<const Endpoint> nodes, std::size_t n_samples, const std::string& fingerprint,
                               std::size_t n_classes, std::span<const std::uint32_t> labels = {},
                               const MasterOptions& options = {}) {
  require(!nodes.empty(), ErrorCode::config, "no worker nodes given");
  require(n_classes >= 1, ErrorCode::config, "class count must be >= 1");
  require(labels.empty() || labels.size() >= n_samples, ErrorCode::config,
          "requested more samples than the shard has labels");

  std::vector<detail::NodeLink> links;
  for (const auto& e : nodes) links.emplace_back(e, options.timeout);
  MasterReport report;
  report.n_samples = n_samples;
  report.nodes.resize(nodes.size());

  detail::fan_out(links.size(), [&](std::size_t i) {
    auto& link = links[i];
    link.connect();
    link.send(Hello{"master", {}, fingerprint, n_samples});
    const Hello h = link.expect<Hello>("hello");
    require(h.dataset_fingerprint == fingerprint, ErrorCode::shard_mismatch,
            link.endpoint().str() + " holds " + h.dataset_fingerprint + ", expected " + fingerprint);
    require(!h.model_ids.empty(), ErrorCode::protocol, link.endpoint().str() + " hosts no models");
    report.nodes[i].address = link.endpoint().str();
    report.nodes[i].node_id = h.node_id;
    report.nodes[i].model_ids = h.model_ids;
  });

  PredictRequest request{options.request_id, std::vector<std::uint64_t>(n_samples)};
  std::iota(request.sample_indices.begin(), request.sample_indices.end(), std::uint64_t{0});

  const auto start = Clock::now();
  detail::fan_out(links.size(), [&](std::size_t i) {
    auto& link = links[i];
    auto& node = report.nodes[i];
    const auto t0 = Clock::now();
    link.send(request);
    PredictResult result = link.expect<PredictResult>("result");
    const Metrics metrics = link.expect<Metrics>("metrics");
    node.round_trip_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    const std::string who = link.endpoint().str();
    require(result.request_id == request.request_id && metrics.request_id == request.request_id,
            ErrorCode::protocol, who + " answered a different request id");
    require(result.predicted_classes.size() == n_samples, ErrorCode::protocol,
            who + " returned " + std::to_string(result.predicted_classes.size()) + " predictions for " +
                std::to_string(n_samples) + " samples");
    for (const auto c : result.predicted_classes) {
      require(c < n_classes, ErrorCode::protocol, who + " predicted class " + std::to_string(c) + " out of range");
    }
    node.predictions = std::move(result.predicted_classes);
    node.node_latency_ms = result.node_latency_ms;
    node.per_model_ms = metrics.per_model_ms;
  });

  report.predictions.resize(n_samples);
  VoteBallot ballot{std::vector<std::uint32_t>(links.size()), n_classes};
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (std::size_t i = 0; i < links.size(); ++i) ballot.votes[i] = report.nodes[i].predictions[s];
    report.predictions[s] = max_vote(ballot);
  }
  report.end_to_end_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  for (auto& link : links) link.close();

  if (!labels.empty() && n_samples > 0) report.accuracy = accuracy_of(report.predictions, labels.first(n_samples));
  spdlog::info("master: {} samples over {} node(s) in {:.3f} ms", n_samples, links.size(), report.end_to_end_ms);
  return report;
}

inline nlohmann::json to_json_doc(const MasterReport& r) {
  using nlohmann::json;
  json nodes = json::array();
  for (const auto& n : r.nodes) {
    json per_model = json::object();
    for (const auto& [id, ms] : n.per_model_ms) per_model[id] = ms;
    nodes.push_back({{"address", n.address},
                     {"node_id", n.node_id},
                     {"model_ids", n.model_ids},
                     {"node_latency_ms", n.node_latency_ms},
                     {"round_trip_ms", n.round_trip_ms},
                     {"per_model_ms", per_model},
                     {"predictions", n.predictions}});
  }
  json j{{"n_samples", r.n_samples},
         {"end_to_end_ms", r.end_to_end_ms},
         {"nodes", nodes},
         {"predictions", r.predictions},
         {"accuracy", r.accuracy ? json(*r.accuracy) : json(nullptr)}};
  return j;
}

/// Latency table: one row per run, one column per node.
inline std::string latency_table(std::span<const MasterReport> runs) {
  std::ostringstream out;
  if (runs.empty()) return "";
  char buf[64];
  out << "Samples";
  for (const auto& n : runs.front().nodes) {
    std::snprintf(buf, sizeof buf, "  %14s", (n.node_id + " ms").c_str());
    out << buf;
  }
  out << "  End-to-end ms  Accuracy\n";
  for (const auto& r : runs) {
    std::snprintf(buf, sizeof buf, "%7zu", r.n_samples);
    out << buf;
    for (const auto& n : r.nodes) {
      std::snprintf(buf, sizeof buf, "  %14.3f", n.node_latency_ms);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "  %13.3f", r.end_to_end_ms);
    out << buf;
    if (r.accuracy) {
      std::snprintf(buf, sizeof buf, "  %8.4f", *r.accuracy);
      out << buf;
    } else {
      out << "         -";
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace p2e::edgenet

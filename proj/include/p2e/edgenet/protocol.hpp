#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "p2e/error.hpp"

namespace p2e::edgenet {

// Frames are single-line JSON objects terminated by '\n'. Every frame
// carries "type" and "protocol_version". A session starts with the master's
// hello; the worker answers with its own hello, then serves predict frames
// with one result frame followed by one metrics frame each.

inline constexpr int kProtocolVersion = 1;

struct Hello {
  std::string node_id;
  std::vector<std::string> model_ids;
  std::string dataset_fingerprint;
  std::uint64_t n_samples = 0;
};

struct PredictRequest {
  std::uint64_t request_id = 0;
  std::vector<std::uint64_t> sample_indices;
};

struct PredictResult {
  std::uint64_t request_id = 0;
  std::vector<std::uint32_t> predicted_classes;
  double node_latency_ms = 0.0;
};

struct Metrics {
  std::uint64_t request_id = 0;
  std::vector<std::pair<std::string, double>> per_model_ms;
};

struct ErrorFrame {
  std::optional<std::uint64_t> request_id;
  std::string code;
  std::string message;
};

struct Bye {};

using Message = std::variant<Hello, PredictRequest, PredictResult, Metrics, ErrorFrame, Bye>;

inline ErrorCode error_code_from_wire(std::string_view code) {
  for (const auto c : {ErrorCode::config, ErrorCode::shape, ErrorCode::numeric, ErrorCode::out_of_schedule,
                       ErrorCode::io, ErrorCode::corrupt, ErrorCode::version, ErrorCode::pool, ErrorCode::protocol,
                       ErrorCode::bad_index, ErrorCode::node_timeout, ErrorCode::shard_mismatch}) {
    if (wire_code(c) == code) return c;
  }
  return ErrorCode::protocol;
}

namespace detail {

using nlohmann::json;

inline std::string dump(const json& j) {
  // Replace invalid UTF-8 (e.g. echoed garbage) instead of throwing.
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

[[noreturn]] inline void bad_frame(const std::string& why) { fail(ErrorCode::protocol, why); }

inline const json& field(const json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end()) bad_frame(std::string("missing field '") + name + "'");
  return *it;
}

inline std::uint64_t unsigned_field(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number_unsigned()) bad_frame(std::string("field '") + name + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::string string_field(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_string()) bad_frame(std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

inline double latency_field(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number()) bad_frame(std::string("field '") + name + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d) || d < 0.0) bad_frame(std::string("field '") + name + "' must be finite and >= 0");
  return d;
}

template <typename T>
std::vector<T> unsigned_array(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_array()) bad_frame(std::string("field '") + name + "' must be an array");
  std::vector<T> out;
  out.reserve(v.size());
  for (const auto& e : v) {
    if (!e.is_number_unsigned() || e.get<std::uint64_t>() > std::numeric_limits<T>::max()) {
      bad_frame(std::string("field '") + name + "' must hold non-negative integers");
    }
    out.push_back(static_cast<T>(e.get<std::uint64_t>()));
  }
  return out;
}

inline std::vector<std::string> string_array(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_array()) bad_frame(std::string("field '") + name + "' must be an array");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) bad_frame(std::string("field '") + name + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace detail

inline std::string_view type_name(const Message& m) {
  static constexpr std::string_view names[] = {"hello", "predict", "result", "metrics", "error", "bye"};
  return names[m.index()];
}

inline std::string encode(const Message& message) {
  using detail::json;
  json j{{"type", std::string(type_name(message))}, {"protocol_version", kProtocolVersion}};
  std::visit(
      [&j](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, Hello>) {
          j["node_id"] = m.node_id;
          j["model_ids"] = m.model_ids;
          j["dataset_fingerprint"] = m.dataset_fingerprint;
          j["n_samples"] = m.n_samples;
        } else if constexpr (std::is_same_v<M, PredictRequest>) {
          j["request_id"] = m.request_id;
          j["sample_indices"] = m.sample_indices;
        } else if constexpr (std::is_same_v<M, PredictResult>) {
          j["request_id"] = m.request_id;
          j["predicted_classes"] = m.predicted_classes;
          j["node_latency_ms"] = m.node_latency_ms;
        } else if constexpr (std::is_same_v<M, Metrics>) {
          j["request_id"] = m.request_id;
          json per_model = json::array();
          for (const auto& [id, ms] : m.per_model_ms) per_model.push_back({{"model_id", id}, {"ms", ms}});
          j["per_model_ms"] = per_model;
        } else if constexpr (std::is_same_v<M, ErrorFrame>) {
          if (m.request_id) j["request_id"] = *m.request_id;
          j["code"] = m.code;
          j["message"] = m.message;
        }
      },
      message);
  return detail::dump(j);
}

/// Parses and schema-checks one frame. Throws Error(protocol) for anything
/// malformed and Error(version) for a protocol version other than ours.
inline Message decode(std::string_view line) {
  using detail::json;
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    detail::bad_frame(std::string("frame is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) detail::bad_frame("frame must be a JSON object");
  const std::string type = detail::string_field(j, "type");
  const json& version = detail::field(j, "protocol_version");
  if (!version.is_number_integer()) detail::bad_frame("protocol_version must be an integer");
  if (version.get<std::int64_t>() != kProtocolVersion) {
    fail(ErrorCode::version, "unsupported protocol_version " + detail::dump(version));
  }

  if (type == "hello") {
    Hello h;
    h.node_id = detail::string_field(j, "node_id");
    h.model_ids = detail::string_array(j, "model_ids");
    h.dataset_fingerprint = detail::string_field(j, "dataset_fingerprint");
    h.n_samples = detail::unsigned_field(j, "n_samples");
    return h;
  }
  if (type == "predict") {
    return PredictRequest{detail::unsigned_field(j, "request_id"),
                          detail::unsigned_array<std::uint64_t>(j, "sample_indices")};
  }
  if (type == "result") {
    return PredictResult{detail::unsigned_field(j, "request_id"),
                         detail::unsigned_array<std::uint32_t>(j, "predicted_classes"),
                         detail::latency_field(j, "node_latency_ms")};
  }
  if (type == "metrics") {
    Metrics m{detail::unsigned_field(j, "request_id"), {}};
    const json& per_model = detail::field(j, "per_model_ms");
    if (!per_model.is_array()) detail::bad_frame("per_model_ms must be an array");
    for (const auto& e : per_model) {
      if (!e.is_object()) detail::bad_frame("per_model_ms entries must be objects");
      m.per_model_ms.emplace_back(detail::string_field(e, "model_id"), detail::latency_field(e, "ms"));
    }
    return m;
  }
  if (type == "error") {
    ErrorFrame e;
    if (j.contains("request_id")) e.request_id = detail::unsigned_field(j, "request_id");
    e.code = detail::string_field(j, "code");
    e.message = detail::string_field(j, "message");
    return e;
  }
  if (type == "bye") return Bye{};
  detail::bad_frame("unknown frame type '" + type + "'");
}

/// Best-effort request id of a frame that failed validation, for error replies.
inline std::optional<std::uint64_t> salvage_request_id(std::string_view line) {
  const auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_object()) {
    const auto it = j.find("request_id");
    if (it != j.end() && it->is_number_unsigned()) return it->get<std::uint64_t>();
  }
  return std::nullopt;
}

}  // namespace p2e::edgenet

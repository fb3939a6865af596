#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace p2e {

/// Error classes surfaced by every module. Each maps to a stable wire code
/// (`E_*`) and a CLI exit code in [10, 19].
enum class ErrorCode {
  config,          // invalid parameters or configuration
  shape,           // tensor dimension mismatch
  numeric,         // non-finite values
  out_of_schedule, // pruning step not in the event set
  io,              // unreadable / unwritable / missing file
  corrupt,         // file failed validation
  version,         // unsupported format or protocol version
  pool,            // every pool job failed
  protocol,        // malformed frame or protocol violation
  bad_index,       // unknown sample index in a predict request
  node_timeout,    // worker did not answer in time
  shard_mismatch,  // dataset fingerprint disagreement at handshake
};

inline std::string_view wire_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::config: return "E_CONFIG";
    case ErrorCode::shape: return "E_SHAPE";
    case ErrorCode::numeric: return "E_NUMERIC";
    case ErrorCode::out_of_schedule: return "E_OUT_OF_SCHEDULE";
    case ErrorCode::io: return "E_IO";
    case ErrorCode::corrupt: return "E_CORRUPT";
    case ErrorCode::version: return "E_VERSION";
    case ErrorCode::pool: return "E_POOL";
    case ErrorCode::protocol: return "E_PROTOCOL";
    case ErrorCode::bad_index: return "E_BAD_INDEX";
    case ErrorCode::node_timeout: return "E_NODE_TIMEOUT";
    case ErrorCode::shard_mismatch: return "E_SHARD_MISMATCH";
  }
  return "E_UNKNOWN";
}

inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
    case ErrorCode::out_of_schedule: return 10;
    case ErrorCode::shape: return 11;
    case ErrorCode::numeric: return 12;
    case ErrorCode::io: return 13;
    case ErrorCode::corrupt: return 14;
    case ErrorCode::version: return 15;
    case ErrorCode::pool: return 16;
    case ErrorCode::protocol:
    case ErrorCode::bad_index: return 17;
    case ErrorCode::node_timeout: return 18;
    case ErrorCode::shard_mismatch: return 19;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(wire_code(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace p2e

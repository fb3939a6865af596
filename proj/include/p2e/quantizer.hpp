#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "p2e/tensor.hpp"

namespace p2e {

// Affine int8 mapping: real = (q - zero_point) * scale.
//
// Weights are symmetric (zero_point 0, codes in [-127, 127]). Activations
// are asymmetric with codes in [-128, 127]. Rounding is half away from zero.

enum class QuantRole { weight, activation };

struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

constexpr std::int32_t code_min(QuantRole role) { return role == QuantRole::weight ? -127 : -128; }
constexpr std::int32_t code_max(QuantRole) { return 127; }

struct QuantizedTensor {
  Shape shape;
  std::vector<std::int8_t> data;
  QuantParams params;
  QuantRole role = QuantRole::weight;

  std::size_t size() const { return data.size(); }

  bool in_range() const {
    return std::all_of(data.begin(), data.end(), [&](std::int8_t q) {
      return q >= code_min(role) && q <= code_max(role);
    });
  }

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

template <typename T>
QuantParams calibrate_weight_params(std::span<const T> weights) {
  require(!weights.empty(), ErrorCode::config, "cannot calibrate an empty weight tensor");
  double max_abs = 0.0;
  for (const T w : weights) max_abs = std::max(max_abs, std::abs(static_cast<double>(w)));
  if (max_abs == 0.0) return {1.0, 0};
  return {max_abs / 127.0, 0};
}

template <typename T>
QuantParams calibrate_activation_params(std::span<const T> samples) {
  require(!samples.empty(), ErrorCode::config, "cannot calibrate on an empty batch");
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = static_cast<double>(*lo_it);
  const double hi = static_cast<double>(*hi_it);
  if (hi == lo) {
    // Degenerate range: unit scale, zero point chosen so the constant is exact
    // whenever it is an integer in the code range.
    const double zp = std::clamp(-std::round(lo), -128.0, 127.0);
    return {1.0, static_cast<std::int32_t>(zp)};
  }
  // The range is widened to contain 0 so the zero point never clamps and
  // every calibrated value stays representable.
  const double lo0 = std::min(lo, 0.0), hi0 = std::max(hi, 0.0);
  const double scale = (hi0 - lo0) / 255.0;
  const double zp = std::clamp(std::round(-128.0 - lo0 / scale), -128.0, 127.0);
  return {scale, static_cast<std::int32_t>(zp)};
}

inline std::int8_t quantize_value(double real, const QuantParams& params, QuantRole role) {
  const double q = std::round(real / params.scale) + params.zero_point;
  return static_cast<std::int8_t>(std::clamp(q, double(code_min(role)), double(code_max(role))));
}

inline double dequantize_value(std::int8_t q, const QuantParams& params) {
  return (static_cast<double>(q) - params.zero_point) * params.scale;
}

template <typename T>
QuantizedTensor quantize(const BasicTensor<T>& tensor, const QuantParams& params, QuantRole role) {
  require(params.scale > 0.0 && std::isfinite(params.scale), ErrorCode::config,
          "quantization scale must be positive and finite");
  require(role != QuantRole::weight || params.zero_point == 0, ErrorCode::config,
          "weight quantization requires zero_point 0");
  require(params.zero_point >= -128 && params.zero_point <= 127, ErrorCode::config,
          "zero_point outside [-128, 127]");
  QuantizedTensor out{tensor.shape, std::vector<std::int8_t>(tensor.size()), params, role};
  for (std::size_t i = 0; i < tensor.size(); ++i) {
    out.data[i] = quantize_value(static_cast<double>(tensor.data[i]), params, role);
  }
  return out;
}

template <typename T = float>
BasicTensor<T> dequantize(const QuantizedTensor& q) {
  BasicTensor<T> out(q.shape);
  for (std::size_t i = 0; i < q.size(); ++i) {
    out.data[i] = static_cast<T>(dequantize_value(q.data[i], q.params));
  }
  return out;
}

/// Simulated quantization of a real tensor in place (quantize then dequantize).
template <typename T>
void fake_quantize(BasicTensor<T>& tensor, const QuantParams& params, QuantRole role) {
  for (T& v : tensor.data) {
    v = static_cast<T>(dequantize_value(quantize_value(static_cast<double>(v), params, role), params));
  }
}

}  // namespace p2e

#pragma once

#include "p2e/nncore.hpp"
#include "p2e/quantizer.hpp"

namespace p2e {

/// Post-training int8 quantization of a trained model.
///
/// Weights become symmetric per-tensor int8 codes (the float weights are
/// replaced by their dequantized values so inference runs as simulated
/// quantization). Each layer's input range is calibrated with min/max over
/// `calibration` propagated through the float model. Biases stay real.
///
/// A mask, if present, is narrowed to the nonzero int8 codes: weights that
/// round to code 0 are pruned too, so the stored sparsity pattern and the
/// mask always agree. Already-quantized models are returned unchanged.
inline Model quantize_model(const Model& model, const Tensor& calibration) {
  if (model.is_quantized()) return model;
  require(calibration.rows() > 0 && calibration.size() > 0, ErrorCode::config, "empty calibration batch");
  validate(model);

  const auto trace = forward_trace(model, calibration);
  Model out = model;
  for (std::size_t k = 0; k < out.layers.size(); ++k) {
    auto& layer = out.layers[k];
    const auto params = calibrate_weight_params(std::span<const float>(layer.weights.data));
    layer.qweights = quantize(layer.weights, params, QuantRole::weight);
    layer.weights = dequantize<float>(*layer.qweights);
    layer.input_quant = calibrate_activation_params(std::span<const float>(trace.inputs[k].data));
    if (layer.mask) {
      for (std::size_t i = 0; i < layer.mask->size(); ++i) {
        layer.mask->data[i] = layer.qweights->data[i] == 0 ? 0.0f : 1.0f;
      }
    }
  }
  return out;
}

}  // namespace p2e

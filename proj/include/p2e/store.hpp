#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <nlohmann/json.hpp>

#include "p2e/dataset.hpp"
#include "p2e/nncore.hpp"

namespace p2e {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kModelFormatVersion = 1;
inline constexpr std::uint32_t kDatasetFormatVersion = 1;
inline constexpr std::string_view kRoundingMode = "half-away-from-zero";

// ---------------------------------------------------------------------------
// Bytes, hashing, files

using Bytes = std::vector<std::uint8_t>;

inline std::string to_hex(const unsigned char* data, std::size_t n) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    out[2 * i] = digits[data[i] >> 4];
    out[2 * i + 1] = digits[data[i] & 0xF];
  }
  return out;
}

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(bytes.data(), bytes.size(), digest);
  return to_hex(digest, sizeof digest);
}

inline std::string sha256_hex(std::string_view text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline Bytes base64_decode(std::string_view text) {
  require(text.size() % 4 == 0, ErrorCode::corrupt, "base64 length is not a multiple of 4");
  Bytes out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  require(n >= 0, ErrorCode::corrupt, "invalid base64 payload");
  // DecodeBlock keeps the bytes that '=' padding stands for; drop them.
  std::size_t padding = 0;
  if (!text.empty() && text.back() == '=') ++padding;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

inline Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string read_text(const fs::path& path) {
  const Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

/// Writes via a temporary sibling and rename, so readers never see a
/// partially written file.
inline void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::io, "write failed for " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  require(!ec, ErrorCode::io, "cannot rename into " + path.string() + ": " + ec.message());
}

inline void write_text_atomic(const fs::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::corrupt, path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& doc) { write_text_atomic(path, doc.dump(2) + "\n"); }

// Little-endian helpers.
inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_f32(Bytes& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}
inline std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t at) {
  return static_cast<std::uint16_t>(in[at] | (in[at + 1] << 8));
}
inline float get_f32(std::span<const std::uint8_t> in, std::size_t at) { return std::bit_cast<float>(get_u32(in, at)); }

// ---------------------------------------------------------------------------
// JSON mappings for domain types

inline void to_json(json& j, const HyperParams& h) {
  j = json{{"epochs", h.epochs},
           {"batch_size", h.batch_size},
           {"loss", std::string(to_string(h.loss))},
           {"optimizer", std::string(to_string(h.optimizer))},
           {"initial_sparsity", h.initial_sparsity},
           {"final_sparsity", h.final_sparsity},
           {"frequency", h.frequency},
           {"seed", h.seed}};
}

inline void from_json(const json& j, HyperParams& h) {
  h.epochs = j.at("epochs").get<std::size_t>();
  h.batch_size = j.at("batch_size").get<std::size_t>();
  h.loss = loss_from_string(j.at("loss").get<std::string>());
  h.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  h.initial_sparsity = j.at("initial_sparsity").get<double>();
  h.final_sparsity = j.at("final_sparsity").get<double>();
  h.frequency = j.at("frequency").get<std::uint64_t>();
  h.seed = j.at("seed").get<std::uint64_t>();
}

inline void to_json(json& j, const QuantParams& q) { j = json{{"scale", q.scale}, {"zero_point", q.zero_point}}; }
inline void from_json(const json& j, QuantParams& q) {
  q.scale = j.at("scale").get<double>();
  q.zero_point = j.at("zero_point").get<std::int32_t>();
}

inline void to_json(json& j, const ModelMetadata& m) {
  j = json::object();
  if (m.hyperparams) j["hyperparams"] = *m.hyperparams;
  if (m.learning_rate) j["learning_rate"] = *m.learning_rate;
  j["sparsity"] = m.sparsity;
  if (m.pruning_accuracy) j["pruning_accuracy"] = *m.pruning_accuracy;
}

inline void from_json(const json& j, ModelMetadata& m) {
  if (j.contains("hyperparams")) m.hyperparams = j.at("hyperparams").get<HyperParams>();
  if (j.contains("learning_rate")) m.learning_rate = j.at("learning_rate").get<double>();
  m.sparsity = j.value("sparsity", std::vector<double>{});
  if (j.contains("pruning_accuracy")) m.pruning_accuracy = j.at("pruning_accuracy").get<double>();
}

// ---------------------------------------------------------------------------
// Model files

enum class TensorEncoding { dense, sparse_coo };

/// COO stores a u32 index plus the value per nonzero; it is used only when
/// that is smaller than the dense payload.
inline TensorEncoding choose_encoding(std::size_t count, std::size_t nonzeros, std::size_t value_bytes) {
  return nonzeros * (4 + value_bytes) < count * value_bytes ? TensorEncoding::sparse_coo : TensorEncoding::dense;
}

enum class SavePolicy {
  compact,    // int8 where quantized, COO where smaller
  dense_f32,  // every tensor dense f32, no quantization records (size reference)
};

namespace detail {

struct EncodedTensor {
  json header;
  Bytes payload;
};

template <typename Value>
EncodedTensor encode_values(const std::string& name, const Shape& shape, std::span<const Value> values,
                            std::string_view dtype) {
  constexpr std::size_t width = sizeof(Value);
  std::size_t nonzeros = 0;
  for (const Value v : values) nonzeros += v != Value{0};

  EncodedTensor out;
  out.header = json{{"name", name}, {"shape", shape}, {"dtype", std::string(dtype)}};
  auto put_value = [&out](Value v) {
    if constexpr (std::is_same_v<Value, float>) {
      put_f32(out.payload, v);
    } else {
      out.payload.push_back(static_cast<std::uint8_t>(v));
    }
  };
  if (choose_encoding(values.size(), nonzeros, width) == TensorEncoding::sparse_coo) {
    out.header["encoding"] = "sparse-coo-b64";
    out.header["nnz"] = nonzeros;
    out.payload.reserve(nonzeros * (4 + width));
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] != Value{0}) put_u32(out.payload, static_cast<std::uint32_t>(i));
    }
    for (const Value v : values) {
      if (v != Value{0}) put_value(v);
    }
  } else {
    out.header["encoding"] = "dense-b64";
    out.payload.reserve(values.size() * width);
    for (const Value v : values) put_value(v);
  }
  return out;
}

inline EncodedTensor encode_dense_f32(const std::string& name, const Tensor& t) {
  EncodedTensor out;
  out.header = json{{"name", name}, {"shape", t.shape}, {"dtype", "f32"}, {"encoding", "dense-b64"}};
  out.payload.reserve(4 * t.size());
  for (const float v : t.data) put_f32(out.payload, v);
  return out;
}

/// Decodes one tensor entry into `count` values of type Value.
template <typename Value>
std::vector<Value> decode_values(const json& entry, const Bytes& payload, std::size_t count) {
  constexpr std::size_t width = sizeof(Value);
  auto get_value = [&payload](std::size_t at) -> Value {
    if constexpr (std::is_same_v<Value, float>) {
      return get_f32(payload, at);
    } else {
      return static_cast<Value>(payload[at]);
    }
  };
  std::vector<Value> values(count, Value{0});
  const std::string encoding = entry.at("encoding").get<std::string>();
  if (encoding == "dense-b64") {
    require(payload.size() == count * width, ErrorCode::corrupt,
            "dense payload of '" + entry.at("name").get<std::string>() + "' has the wrong length");
    for (std::size_t i = 0; i < count; ++i) values[i] = get_value(i * width);
  } else if (encoding == "sparse-coo-b64") {
    const auto nnz = entry.at("nnz").get<std::size_t>();
    require(nnz <= count && payload.size() == nnz * (4 + width), ErrorCode::corrupt,
            "sparse payload of '" + entry.at("name").get<std::string>() + "' is inconsistent with nnz");
    std::int64_t previous = -1;
    for (std::size_t i = 0; i < nnz; ++i) {
      const std::uint32_t index = get_u32(payload, 4 * i);
      require(static_cast<std::int64_t>(index) > previous && index < count, ErrorCode::corrupt,
              "sparse indices must be strictly increasing and in range");
      previous = index;
      const Value v = get_value(4 * nnz + width * i);
      require(v != Value{0}, ErrorCode::corrupt, "sparse value list contains a zero");
      values[index] = v;
    }
  } else {
    fail(ErrorCode::corrupt, "unknown tensor encoding '" + encoding + "'");
  }
  return values;
}

}  // namespace detail

inline json model_to_json(const Model& model, SavePolicy policy = SavePolicy::compact) {
  json arch = json::array();
  json tensors = json::array();
  Bytes all_payloads;
  const bool compact = policy == SavePolicy::compact;

  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& layer = model.layers[k];
    json spec{{"in_dim", layer.spec.in_dim},
              {"out_dim", layer.spec.out_dim},
              {"activation", std::string(to_string(layer.spec.activation))}};
    if (compact && layer.input_quant) spec["input_quant"] = *layer.input_quant;
    arch.push_back(std::move(spec));

    const std::string prefix = "layers." + std::to_string(k);
    detail::EncodedTensor weight;
    if (compact && layer.qweights) {
      weight = detail::encode_values<std::int8_t>(prefix + ".weight", layer.weights.shape,
                                                  std::span<const std::int8_t>(layer.qweights->data), "i8");
      weight.header["quant"] = layer.qweights->params;
    } else if (compact) {
      weight = detail::encode_values<float>(prefix + ".weight", layer.weights.shape,
                                            std::span<const float>(layer.weights.data), "f32");
    } else {
      weight = detail::encode_dense_f32(prefix + ".weight", layer.weights);
    }
    if (compact && layer.mask) weight.header["masked"] = true;
    // Biases are always dense f32.
    auto bias = detail::encode_dense_f32(prefix + ".bias", layer.bias);
    for (auto* t : {&weight, &bias}) {
      all_payloads.insert(all_payloads.end(), t->payload.begin(), t->payload.end());
      t->header["data"] = base64_encode(t->payload);
      tensors.push_back(std::move(t->header));
    }
  }

  return json{{"format_version", kModelFormatVersion},
              {"rounding_mode", std::string(kRoundingMode)},
              {"arch", std::move(arch)},
              {"tensors", std::move(tensors)},
              {"payload_sha256", sha256_hex(all_payloads)},
              {"metadata", model.metadata}};
}

/// Canonical model file text (sorted keys, no whitespace).
inline std::string serialize_model(const Model& model, SavePolicy policy = SavePolicy::compact) {
  return model_to_json(model, policy).dump();
}

inline Model model_from_json(const json& doc) {
  try {
    require(doc.is_object() && doc.contains("format_version"), ErrorCode::corrupt, "missing format_version");
    const int version = doc.at("format_version").get<int>();
    require(version == kModelFormatVersion, ErrorCode::version,
            "unsupported model format_version " + std::to_string(version));
    require(doc.at("rounding_mode").get<std::string>() == kRoundingMode, ErrorCode::corrupt,
            "unsupported rounding_mode");

    Model model;
    const auto& arch = doc.at("arch");
    const auto& tensors = doc.at("tensors");
    require(arch.is_array() && tensors.is_array() && tensors.size() == 2 * arch.size(), ErrorCode::corrupt,
            "tensor list does not match architecture");
    Bytes all_payloads;
    for (std::size_t k = 0; k < arch.size(); ++k) {
      const auto& spec_json = arch[k];
      Layer layer;
      layer.spec = {spec_json.at("in_dim").get<std::size_t>(), spec_json.at("out_dim").get<std::size_t>(),
                    activation_from_string(spec_json.at("activation").get<std::string>())};
      if (spec_json.contains("input_quant")) {
        layer.input_quant = spec_json.at("input_quant").get<QuantParams>();
        require(layer.input_quant->scale > 0.0 && layer.input_quant->zero_point >= -128 &&
                    layer.input_quant->zero_point <= 127,
                ErrorCode::corrupt, "invalid activation quantization parameters");
      }
      const std::string prefix = "layers." + std::to_string(k);
      const auto& wj = tensors[2 * k];
      const auto& bj = tensors[2 * k + 1];
      require(wj.at("name") == prefix + ".weight" && bj.at("name") == prefix + ".bias", ErrorCode::corrupt,
              "unexpected tensor order near " + prefix);
      const Shape wshape{layer.spec.out_dim, layer.spec.in_dim};
      const Shape bshape{layer.spec.out_dim};
      require(wj.at("shape").get<Shape>() == wshape && bj.at("shape").get<Shape>() == bshape, ErrorCode::corrupt,
              prefix + " tensor shape disagrees with architecture");

      const Bytes wpayload = base64_decode(wj.at("data").get<std::string>());
      const Bytes bpayload = base64_decode(bj.at("data").get<std::string>());
      all_payloads.insert(all_payloads.end(), wpayload.begin(), wpayload.end());
      all_payloads.insert(all_payloads.end(), bpayload.begin(), bpayload.end());

      const std::string wdtype = wj.at("dtype").get<std::string>();
      if (wdtype == "i8") {
        const auto params = wj.at("quant").get<QuantParams>();
        require(params.zero_point == 0 && params.scale > 0.0 && std::isfinite(params.scale), ErrorCode::corrupt,
                prefix + " int8 weights need zero_point 0 and a positive scale");
        QuantizedTensor q{wshape, detail::decode_values<std::int8_t>(wj, wpayload, shape_size(wshape)), params,
                          QuantRole::weight};
        require(q.in_range(), ErrorCode::corrupt, prefix + " int8 weight code -128 is not allowed");
        layer.weights = dequantize<float>(q);
        layer.qweights = std::move(q);
      } else if (wdtype == "f32") {
        layer.weights = Tensor(wshape, detail::decode_values<float>(wj, wpayload, shape_size(wshape)));
      } else {
        fail(ErrorCode::corrupt, "unsupported weight dtype '" + wdtype + "'");
      }
      require(bj.at("dtype") == "f32", ErrorCode::corrupt, "biases must be f32");
      layer.bias = Tensor(bshape, detail::decode_values<float>(bj, bpayload, shape_size(bshape)));

      if (wj.value("masked", false)) {
        Tensor mask(wshape);
        for (std::size_t i = 0; i < mask.size(); ++i) mask.data[i] = layer.weights.data[i] != 0.0f ? 1.0f : 0.0f;
        layer.mask = std::move(mask);
      }
      model.layers.push_back(std::move(layer));
    }
    require(doc.at("payload_sha256").get<std::string>() == sha256_hex(all_payloads), ErrorCode::corrupt,
            "payload hash mismatch");
    model.metadata = doc.at("metadata").get<ModelMetadata>();
    try {
      validate(model);
    } catch (const Error& e) {
      fail(ErrorCode::corrupt, e.what());
    }
    return model;
  } catch (const json::exception& e) {
    fail(ErrorCode::corrupt, std::string("malformed model file: ") + e.what());
  }
}

inline Model parse_model(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::corrupt, std::string("model file is not valid JSON: ") + e.what());
  }
  return model_from_json(doc);
}

/// Writes the model; returns the file size in bytes.
inline std::size_t save_model(const Model& model, const fs::path& path) {
  validate(model);
  const std::string text = serialize_model(model);
  write_text_atomic(path, text);
  return text.size();
}

inline Model load_model(const fs::path& path) {
  require(fs::exists(path), ErrorCode::io, "model file not found: " + path.string());
  return parse_model(read_text(path));
}

// ---------------------------------------------------------------------------
// Dataset files: "P2ED" | u32 version | u32 n | u32 d | u32 classes |
// f32 features (row-major) | u16 labels, all little-endian.

inline Bytes encode_dataset(const Dataset& data) {
  data.validate();
  Bytes out;
  out.reserve(20 + 4 * data.features.size() + 2 * data.labels.size());
  for (const char c : std::string_view("P2ED")) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, kDatasetFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(data.n_samples()));
  put_u32(out, static_cast<std::uint32_t>(data.n_features()));
  put_u32(out, static_cast<std::uint32_t>(data.n_classes));
  for (const float v : data.features.data) put_f32(out, v);
  for (const auto l : data.labels) put_u16(out, static_cast<std::uint16_t>(l));
  return out;
}

inline Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 20 && std::memcmp(bytes.data(), "P2ED", 4) == 0, ErrorCode::corrupt,
          "not a dataset file (bad magic)");
  const std::uint32_t version = get_u32(bytes, 4);
  require(version == kDatasetFormatVersion, ErrorCode::version,
          "unsupported dataset version " + std::to_string(version));
  const std::size_t n = get_u32(bytes, 8);
  const std::size_t d = get_u32(bytes, 12);
  const std::size_t classes = get_u32(bytes, 16);
  require(bytes.size() == 20 + 4 * n * d + 2 * n, ErrorCode::corrupt, "dataset size disagrees with header");
  Dataset data;
  data.n_classes = classes;
  data.features = Tensor(Shape{n, d});
  for (std::size_t i = 0; i < n * d; ++i) data.features.data[i] = get_f32(bytes, 20 + 4 * i);
  data.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) data.labels[i] = get_u16(bytes, 20 + 4 * n * d + 2 * i);
  data.bounds = SplitBounds::standard(n);
  data.validate();
  return data;
}

inline fs::path sidecar_path(const fs::path& dataset_path) {
  fs::path p = dataset_path;
  p.replace_extension(".json");
  return p;
}

/// Writes the binary file plus its sidecar; returns the content hash.
inline std::string save_dataset(const Dataset& data, const fs::path& path, const json& provenance = json::object()) {
  const Bytes bytes = encode_dataset(data);
  const std::string digest = sha256_hex(bytes);
  write_file_atomic(path, bytes);
  json sidecar{{"format_version", kDatasetFormatVersion},
               {"file", path.filename().string()},
               {"sha256", digest},
               {"n_samples", data.n_samples()},
               {"n_features", data.n_features()},
               {"n_classes", data.n_classes},
               {"splits",
                {{"train", {0, data.bounds.train_end}},
                 {"pruning", {data.bounds.train_end, data.bounds.pruning_end}},
                 {"test", {data.bounds.pruning_end, data.bounds.n_samples}}}},
               {"generator", provenance}};
  write_json(sidecar_path(path), sidecar);
  return digest;
}

struct LoadedDataset {
  Dataset data;
  std::string sha256;
};

inline LoadedDataset load_dataset(const fs::path& path) {
  require(fs::exists(path), ErrorCode::io, "dataset file not found: " + path.string());
  const Bytes bytes = read_file(path);
  LoadedDataset out{decode_dataset(bytes), sha256_hex(bytes)};
  const fs::path side = sidecar_path(path);
  if (fs::exists(side)) {
    const json j = read_json(side);
    try {
      require(j.at("sha256").get<std::string>() == out.sha256, ErrorCode::corrupt,
              "dataset hash does not match its sidecar");
      const auto& s = j.at("splits");
      out.data.bounds = {s.at("train").at(1).get<std::size_t>(), s.at("pruning").at(1).get<std::size_t>(),
                         out.data.n_samples()};
    } catch (const json::exception& e) {
      fail(ErrorCode::corrupt, side.string() + ": " + e.what());
    }
    out.data.validate();
  }
  return out;
}

}  // namespace p2e

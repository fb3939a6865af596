#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "p2e/dataset.hpp"

namespace p2e::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("p2e-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Dataset small_blobs(std::uint64_t seed, std::size_t n = 400, std::size_t classes = 4, std::size_t features = 4,
                           double noise = 1.0) {
  return gen_dataset(DatasetSpec{DatasetKind::blobs, n, classes, features, noise, seed});
}

}  // namespace p2e::testing

#include <cstring>

#include "p2e/nncore.hpp"

namespace p2e::testing {

template <typename T>
bool bit_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return a.shape == b.shape && std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(T)) == 0;
}

inline bool bit_equal(const Model& a, const Model& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    const auto& x = a.layers[k];
    const auto& y = b.layers[k];
    if (x.spec.in_dim != y.spec.in_dim || x.spec.out_dim != y.spec.out_dim || x.spec.activation != y.spec.activation)
      return false;
    if (!bit_equal(x.weights, y.weights) || !bit_equal(x.bias, y.bias)) return false;
    if (x.mask.has_value() != y.mask.has_value() || (x.mask && !bit_equal(*x.mask, *y.mask))) return false;
    if (x.qweights != y.qweights || x.input_quant != y.input_quant) return false;
  }
  return true;
}

}  // namespace p2e::testing

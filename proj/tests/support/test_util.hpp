#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "fpx/image.hpp"
#include "fpx/network.hpp"

namespace fpx::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("fpx_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline GrayImage random_image(int w, int h, std::uint64_t seed) {
  GrayImage img(w, h);
  std::mt19937_64 gen(seed);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(gen() & 0xFF);
  return img;
}

// Small enough for finite differences: 32x32 input, one block with a downsample.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.input_height = c.input_width = 32;
  c.stem_channels = 4;
  c.blocks = {{3, 2, 3, 2, 3, 2, true}};
  c.embedding_dim = 6;
  return c;
}

// (B, 1, h, w) batch of uniform [0, 1) values.
inline Tensor random_batch(int b, int h, int w, std::uint64_t seed) {
  Tensor t({b, 1, h, w});
  std::mt19937_64 gen(seed);
  for (auto& v : t.values) v = static_cast<double>(gen() >> 11) * 0x1.0p-53;
  return t;
}

}  // namespace fpx::test

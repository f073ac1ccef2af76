#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>

namespace fpx {

class Fnv1a64 {
 public:
  void update(std::span<const std::uint8_t> bytes) noexcept {
    for (auto b : bytes) {
      state_ ^= b;
      state_ *= 0x100000001B3ULL;
    }
  }
  void update(std::string_view s) noexcept {
    update(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  template <class T>
  void update_value(const T& v) noexcept {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    update(std::span<const std::uint8_t>(buf, sizeof(T)));
  }
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::uint64_t fnv1a64(std::string_view s) noexcept {
  Fnv1a64 h;
  h.update(s);
  return h.digest();
}

}  // namespace fpx

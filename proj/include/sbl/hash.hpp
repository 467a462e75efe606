#pragma once

#include <span>
#include <string>
#include <string_view>

namespace sbl {

/// Incremental SHA-256, hex digest.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t size);
  void update(std::string_view text) { update(text.data(), text.size()); }
  template <typename T>
  void update(std::span<const T> values) { update(values.data(), values.size_bytes()); }

  std::string hex_digest();

 private:
  void* ctx_;
};

}  // namespace sbl

#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstddef>
#include <string>

namespace cirl {

inline std::array<unsigned char, 32> sha256_raw(const void* data,
                                                std::size_t n) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  EVP_Digest(data, n, out.data(), &len, EVP_sha256(), nullptr);
  return out;
}

inline std::string sha256_hex(const void* data, std::size_t n) {
  static const char* hex = "0123456789abcdef";
  const auto raw = sha256_raw(data, n);
  std::string s;
  s.reserve(64);
  for (unsigned char b : raw) {
    s.push_back(hex[b >> 4]);
    s.push_back(hex[b & 0xf]);
  }
  return s;
}

inline std::string sha256_hex(const std::string& bytes) {
  return sha256_hex(bytes.data(), bytes.size());
}

}  // namespace cirl

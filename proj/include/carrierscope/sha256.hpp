#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace carrierscope {

// Lowercase hex SHA-256 digest of a byte buffer (OpenSSL libcrypto backend).
std::string sha256_hex(const void* data, std::size_t size);

inline std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  return sha256_hex(bytes.data(), bytes.size());
}

}  // namespace carrierscope

#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

namespace pu {

// Lowercase hex SHA-256.
[[nodiscard]] std::string sha256_hex(std::string_view data);

// Digest of a sequence of fields, separated so ("ab","c") != ("a","bc").
[[nodiscard]] std::string digest_fields(std::initializer_list<std::string_view> fields);

[[nodiscard]] std::string file_digest(const std::filesystem::path& path);

// 64-bit value from the leading bytes of SHA-256; used to seed mock randomness.
[[nodiscard]] std::uint64_t hash64(std::string_view data);

}  // namespace pu

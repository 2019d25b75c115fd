#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pu/error.hpp"

namespace pu {

// Rejects NaN/Inf anywhere in the document; JSON has no literal for them.
void require_finite(const nlohmann::json& j);

// Serializes one JSONL line (no trailing newline).
[[nodiscard]] std::string dump_line(const nlohmann::json& j);

[[nodiscard]] std::vector<nlohmann::json> read_jsonl_values(const std::filesystem::path& path);
void write_jsonl_values(const std::filesystem::path& path, const std::vector<nlohmann::json>& values);

[[nodiscard]] nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

[[nodiscard]] std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

template <typename T>
std::vector<T> read_jsonl(const std::filesystem::path& path) {
  std::vector<T> out;
  for (const auto& j : read_jsonl_values(path)) {
    try {
      out.push_back(j.get<T>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::InvalidInput, path.string() + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
  std::vector<nlohmann::json> values;
  values.reserve(items.size());
  for (const auto& item : items) values.emplace_back(item);
  write_jsonl_values(path, values);
}

}  // namespace pu

#include "pu/json_io.hpp"

#include <cmath>
#include <sstream>

namespace pu {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::EmptyAnswer: return "EmptyAnswer";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
    case ErrorKind::RateLimited: return "RateLimited";
    case ErrorKind::BackendUnsupported: return "BackendUnsupported";
    case ErrorKind::TokenizationMismatch: return "TokenizationMismatch";
    case ErrorKind::JudgeUnparseable: return "JudgeUnparseable";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::OfflineViolation: return "OfflineViolation";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::MissingUnconditional: return "MissingUnconditional";
    case ErrorKind::EmptySampleSet: return "EmptySampleSet";
    case ErrorKind::EmptyPassageSet: return "EmptyPassageSet";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::EmptyKeep: return "EmptyKeep";
    case ErrorKind::AlignmentMismatch: return "AlignmentMismatch";
    case ErrorKind::MissingJoin: return "MissingJoin";
    case ErrorKind::CostMismatch: return "CostMismatch";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

void require_finite(const nlohmann::json& j) {
  if (j.is_number_float()) {
    if (!std::isfinite(j.get<double>())) {
      throw Error(ErrorKind::InvalidInput, "non-finite number in JSON output");
    }
  } else if (j.is_structured()) {
    for (const auto& child : j) require_finite(child);
  }
}

std::string dump_line(const nlohmann::json& j) {
  require_finite(j);
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

std::vector<nlohmann::json> read_jsonl_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::InvalidInput,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl_values(const std::filesystem::path& path, const std::vector<nlohmann::json>& values) {
  std::ostringstream os;
  for (const auto& v : values) os << dump_line(v) << '\n';
  write_text_file(path, os.str());
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::InvalidInput, path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  require_finite(j);
  write_text_file(path, j.dump(2) + "\n");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Readers never observe a half-written artifact.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(ErrorKind::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace pu

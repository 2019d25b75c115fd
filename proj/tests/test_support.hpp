#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pu/gateway.hpp"
#include "pu/json_io.hpp"
#include "pu/mock_backends.hpp"

namespace pu::test {

inline std::filesystem::path fixture_path(const std::string& name) { return std::filesystem::path(PU_FIXTURE_DIR) / name; }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("pu-" + tag + "-" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline double uniform(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::shared_ptr<const mock::Fixture> make_fixture(nlohmann::json doc) {
  return std::make_shared<const mock::Fixture>(mock::Fixture::from_json(std::move(doc)));
}

inline Gateway mock_gateway(nlohmann::json doc = nlohmann::json::object(), bool offline = false) {
  GatewayOptions opts;
  opts.offline = offline;
  return Gateway(mock::make_services(make_fixture(std::move(doc))), opts, std::make_shared<CallCache>());
}

}  // namespace pu::test

#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pu/backend.hpp"
#include "pu/curation.hpp"
#include "pu/estimators.hpp"
#include "pu/gateway.hpp"
#include "pu/synthetic.hpp"
#include "pu/trainer.hpp"

namespace pu {

[[nodiscard]] std::string_view code_version();

// Replaces ${NAME} with the environment value. Throws InvalidInput for unset
// variables.
[[nodiscard]] std::string interpolate_env(const std::string& text);

struct RunConfig {
  std::filesystem::path train_dataset;
  std::filesystem::path val_dataset;
  std::filesystem::path test_dataset;
  std::filesystem::path few_shot;
  std::array<BackendEndpoint, kRoleCount> backends{};
  int max_new_tokens = 50;
  std::vector<std::string> estimators = all_estimators();
  int n_samples = 10;
  std::size_t passages = 5;
  std::int64_t seed = 0;
  bool offline = false;
  std::filesystem::path cache_dir = "cache";
  std::filesystem::path output_dir = "run";
  CurationConfig curation;
  TrainConfig train;
  bool sweep = false;
  ClusterOptions clustering;
  PTrueChoices choices;
  std::string dataset_tag = "dataset";
  std::string model_tag = "model";
  std::string delong_baseline = "pu";
  std::size_t workers = 4;
  std::size_t rerank_pool = 10;
  std::vector<std::size_t> rerank_cutoffs = {5, 3, 1};

  // Explicit artifact locations; empty means the default under output_dir.
  std::filesystem::path train_pairs;
  std::filesystem::path val_pairs;
  std::filesystem::path checkpoint;
  std::filesystem::path rows;
  std::filesystem::path report_dir;
  std::filesystem::path records;  // per-passage records for the agreement study

  void validate() const;
};

// Relative paths resolve against base_dir.
[[nodiscard]] RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
[[nodiscard]] RunConfig load_run_config(const std::filesystem::path& path);
// Canonical form used for the config digest; secrets are omitted.
[[nodiscard]] nlohmann::json run_config_json(const RunConfig& cfg);

// Service set for four endpoints: "mock" endpoints read their fixture file,
// "http" endpoints talk to the configured server.
[[nodiscard]] GatewayServices make_gateway_services(const std::array<BackendEndpoint, kRoleCount>& endpoints);

enum class StageStatus { ran, skipped };

struct StageReport {
  std::string name;
  StageStatus status = StageStatus::ran;
  std::size_t record_failures = 0;
};

struct RerankSummary {
  std::size_t n = 0;
  std::map<std::string, std::map<std::size_t, double>> accuracy;  // mode -> k -> accuracy
};

void to_json(nlohmann::json& j, const RerankSummary& v);

// Runs stages against one output directory, which it locks for its lifetime.
// Each stage is skipped when its config slice, inputs and outputs match the
// manifest from a previous run.
class Pipeline {
 public:
  explicit Pipeline(RunConfig cfg);
  ~Pipeline();

  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  StageReport curate();
  StageReport train();
  StageReport estimate();
  StageReport evaluate();
  StageReport rerank();
  StageReport cost_report();
  // curate, train, estimate, evaluate, cost-report.
  std::vector<StageReport> end_to_end();

  [[nodiscard]] const RunConfig& config() const { return cfg_; }
  [[nodiscard]] const nlohmann::json& manifest() const { return manifest_; }
  [[nodiscard]] Gateway& gateway() { return *gateway_; }

  [[nodiscard]] std::filesystem::path records_path(const std::string& split) const;
  [[nodiscard]] std::filesystem::path pairs_path(const std::string& split) const;
  [[nodiscard]] std::filesystem::path checkpoint_path() const;
  [[nodiscard]] std::filesystem::path rows_path() const;
  [[nodiscard]] std::filesystem::path costs_path() const;
  [[nodiscard]] std::filesystem::path report_dir() const;
  [[nodiscard]] std::filesystem::path manifest_path() const;

 private:
  template <typename Fn>
  StageReport run_stage(const std::string& name, const nlohmann::json& stage_config,
                        const std::vector<std::filesystem::path>& inputs,
                        const std::vector<std::filesystem::path>& outputs, Fn&& body);

  [[nodiscard]] std::vector<std::filesystem::path> fixture_inputs(std::initializer_list<Role> roles) const;
  [[nodiscard]] EstimatorConfig estimator_config() const;
  void write_manifest() const;

  RunConfig cfg_;
  std::filesystem::path lock_path_;
  std::shared_ptr<CallCache> cache_;
  std::unique_ptr<Gateway> gateway_;
  nlohmann::json manifest_;
};

// Writes train/val/test datasets, the mock fixture, the few-shot bank and a
// ready-to-run offline config into dir. Returns the config path.
std::filesystem::path write_synthetic_bundle(const std::filesystem::path& dir, const SyntheticOptions& opts);

}  // namespace pu

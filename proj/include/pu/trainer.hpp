#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pu/core_types.hpp"
#include "pu/error.hpp"
#include "pu/gateway.hpp"
#include "pu/utility_head.hpp"

namespace pu {

enum class Selection {
  rank_only,  // R: validation pairwise accuracy
  combined,   // C: mean of pairwise accuracy and accuracy-prediction AUROC
};

struct TrainConfig {
  double margin = 0.1;
  double lambda = 0.25;
  int epochs = 3;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 0.001;
  Selection selection = Selection::combined;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 128;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& v);
void from_json(const nlohmann::json& j, TrainConfig& v);

// Pair embeddings keyed by (question_id, pid).
class EmbeddingTable {
 public:
  void put(const std::string& question_id, const std::string& pid, std::vector<double> embedding);
  [[nodiscard]] std::span<const double> get(const std::string& question_id, const std::string& pid) const;
  [[nodiscard]] bool contains(const std::string& question_id, const std::string& pid) const;
  [[nodiscard]] std::size_t dim() const { return dim_; }
  [[nodiscard]] std::size_t size() const { return rows_.size(); }
  [[nodiscard]] std::string digest() const;

 private:
  std::map<std::pair<std::string, std::string>, std::vector<double>> rows_;
  std::size_t dim_ = 0;
};

struct ValidationMetrics {
  double pairwise_accuracy = 0.0;
  std::optional<double> accuracy_auroc;  // absent when validation labels are one class

  [[nodiscard]] double criterion(Selection selection) const;
};

void to_json(nlohmann::json& j, const ValidationMetrics& v);

struct Checkpoint {
  UtilityHead head;
  TrainConfig train_config;
  double selection_metric_value = 0.0;
  int epoch = 0;
  std::string data_digest;
  std::string embedding_source;  // embedding backend identity; pooling happens there
};

void to_json(nlohmann::json& j, const Checkpoint& v);
void from_json(const nlohmann::json& j, Checkpoint& v);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, Checkpoint last_finite)
      : Error(ErrorKind::Diverged, what), last_finite_(std::move(last_finite)) {}

  [[nodiscard]] const Checkpoint& last_finite() const { return last_finite_; }

 private:
  Checkpoint last_finite_;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;  // mean per pair; 0 for the initialization row
  ValidationMetrics validation;
  bool selected = false;
};

void to_json(nlohmann::json& j, const EpochLog& v);

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> history;
};

[[nodiscard]] ValidationMetrics validate_head(const UtilityHead& head, std::span<const PairwiseInstance> pairs,
                                              const EmbeddingTable& embeddings);

// Mini-batch gradient descent with decoupled weight decay. Evaluates the
// validation split before training and after every epoch; keeps the best.
TrainResult train(std::span<const PairwiseInstance> train_pairs, std::span<const PairwiseInstance> val_pairs,
                  const EmbeddingTable& embeddings, const TrainConfig& cfg);

struct SweepRow {
  double lambda = 0.0;
  double margin = 0.0;
  double selection_metric_value = 0.0;
  int epoch = 0;
};

void to_json(nlohmann::json& j, const SweepRow& v);

struct SweepResult {
  Checkpoint best;
  std::vector<SweepRow> rows;
};

// Grid over lambda in {0.25, 1} and margin in {0.05, 0.1, 0.5}.
SweepResult sweep(std::span<const PairwiseInstance> train_pairs, std::span<const PairwiseInstance> val_pairs,
                  const EmbeddingTable& embeddings, const TrainConfig& base);

// One utility score per passage, order-aligned with the input.
std::vector<double> predict_utilities(const Checkpoint& ckpt, Gateway& gw, const std::string& question,
                                      std::span<const Passage> passages, CallTrace* trace = nullptr);

}  // namespace pu

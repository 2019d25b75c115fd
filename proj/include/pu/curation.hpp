#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pu/core_types.hpp"
#include "pu/gateway.hpp"

namespace pu {

struct CurationConfig {
  enum class EntailmentInput {
    passage_only,           // hypothesis = the generated answer alone
    passage_plus_question,  // hypothesis = "Q: <question> A: <answer>"
  };

  std::size_t passages_per_question = 5;
  EntailmentInput entailment_premise = EntailmentInput::passage_plus_question;
  std::vector<std::string> refusal_phrases = default_refusal_phrases();
  int max_new_tokens = 50;
  std::size_t workers = 4;

  void validate() const;
};

void to_json(nlohmann::json& j, const CurationConfig& v);
void from_json(const nlohmann::json& j, CurationConfig& v);

struct CurationFailure {
  std::string question_id;
  std::string pid;
  std::string error;
};

void to_json(nlohmann::json& j, const CurationFailure& v);

struct CuratedQuestion {
  std::string question_id;
  std::size_t expected = 0;  // passages the question was curated over
  std::vector<UtilityRecord> records;
  std::vector<CurationFailure> failures;

  [[nodiscard]] bool fully_labeled() const { return records.size() == expected && failures.empty(); }
};

struct DatasetStats {
  std::size_t n_questions = 0;  // fully labeled questions only
  std::size_t n_pairwise = 0;
  double pct_all_incorrect = 0.0;
  double pct_mixed = 0.0;
  double pct_all_correct = 0.0;
};

void to_json(nlohmann::json& j, const DatasetStats& v);
void from_json(const nlohmann::json& j, DatasetStats& v);

[[nodiscard]] std::string entailment_hypothesis(const CurationConfig& cfg, const std::string& question,
                                                const std::string& answer);

// One greedy single-passage QA call per passage, then a, e and upsilon.
// Per-passage backend failures are collected, not thrown.
CuratedQuestion curate_example(Gateway& gw, const QAExample& ex, const CurationConfig& cfg);

// Curates every example using cfg.workers threads; output order follows input.
std::vector<CuratedQuestion> curate_dataset(Gateway& gw, std::span<const QAExample> examples,
                                            const CurationConfig& cfg);

// Each unordered pair once, in record order; tied utilities are dropped.
[[nodiscard]] std::vector<PairwiseInstance> build_pairwise(std::span<const UtilityRecord> records);

[[nodiscard]] DatasetStats dataset_stats(std::span<const CuratedQuestion> questions);

}  // namespace pu

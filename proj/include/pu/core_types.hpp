#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pu/error.hpp"

namespace pu {

struct Passage {
  std::string pid;
  std::string text;
  double retriever_score = 0.0;
  int rank = 1;  // 1-based position in the retrieved set
};

struct QAExample {
  std::string id;
  std::string question;
  std::vector<std::string> gold_answers;
  std::vector<Passage> passages;
  std::string dataset_tag;

  // Unanswerable-question sets carry no gold answers.
  [[nodiscard]] bool is_unanswerable() const;
};

enum class DecodeKind { greedy, sampled };

NLOHMANN_JSON_SERIALIZE_ENUM(DecodeKind, {{DecodeKind::greedy, "greedy"},
                                          {DecodeKind::sampled, "sampled"}})

struct GeneratedAnswer {
  std::string text;
  std::vector<double> token_logprobs;  // natural log, one per generated token
  std::optional<std::vector<double>> unconditional_token_logprobs;
  DecodeKind decode_kind = DecodeKind::greedy;
  std::optional<std::int64_t> seed;

  // Backend returned nothing; kept so call accounting stays exact.
  [[nodiscard]] bool is_empty_flagged() const { return text.empty() || token_logprobs.empty(); }
};

struct UtilityRecord {
  std::string question_id;
  std::string pid;
  GeneratedAnswer answer;
  int a = 0;       // accuracy label
  double e = 0.0;  // entailment probability
  double upsilon = 0.0;
};

struct PairwiseInstance {
  std::string question_id;
  std::string pid_i;
  std::string pid_j;
  int z = 1;
  int a_i = 0;
  int a_j = 0;
  double upsilon_i_gold = 0.0;
  double upsilon_j_gold = 0.0;
};

struct EstimateRow {
  std::string question_id;
  GeneratedAnswer most_likely_answer;
  int correct = 0;
  std::map<std::string, double> scores;       // higher = more uncertain
  std::map<std::string, std::string> unavailable;  // estimator -> reason
};

// Gold utility: mean of the accuracy label and the entailment probability.
[[nodiscard]] double gold_utility(int a, double e);

// Builds a record and fills upsilon from (a, e).
[[nodiscard]] UtilityRecord make_utility_record(std::string question_id, std::string pid,
                                                GeneratedAnswer answer, int a, double e);

[[nodiscard]] double length_normalized_logprob(const GeneratedAnswer& answer);
[[nodiscard]] double sequence_logprob(const GeneratedAnswer& answer);

// Validation; throw Error(InvalidInput) with the violated invariant.
void validate(const Passage& p);
void validate(const QAExample& ex);
void validate(const GeneratedAnswer& ans);
void validate(const UtilityRecord& rec);
void validate(const PairwiseInstance& pair);
void validate(const EstimateRow& row);

void to_json(nlohmann::json& j, const Passage& v);
void from_json(const nlohmann::json& j, Passage& v);
void to_json(nlohmann::json& j, const QAExample& v);
void from_json(const nlohmann::json& j, QAExample& v);
void to_json(nlohmann::json& j, const GeneratedAnswer& v);
void from_json(const nlohmann::json& j, GeneratedAnswer& v);
void to_json(nlohmann::json& j, const UtilityRecord& v);
void from_json(const nlohmann::json& j, UtilityRecord& v);
void to_json(nlohmann::json& j, const PairwiseInstance& v);
void from_json(const nlohmann::json& j, PairwiseInstance& v);
void to_json(nlohmann::json& j, const EstimateRow& v);
void from_json(const nlohmann::json& j, EstimateRow& v);

}  // namespace pu

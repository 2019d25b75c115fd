#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pu/core_types.hpp"
#include "pu/gateway.hpp"
#include "pu/prompts.hpp"
#include "pu/trainer.hpp"

namespace pu {

// Every estimator returns an uncertainty: higher means more likely wrong.

struct SampleSet {
  GeneratedAnswer most_likely;
  std::vector<GeneratedAnswer> samples;
};

struct Clustering {
  std::vector<int> assignments;  // dense ids 0..m-1, one per sample
  int m = 0;
};

[[nodiscard]] double ppl(const GeneratedAnswer& ans);
[[nodiscard]] double msp(const GeneratedAnswer& ans);
// Negative mean pointwise mutual information between answer and context.
[[nodiscard]] double pmi(const GeneratedAnswer& ans);
// Monte-Carlo sequence entropy from length-normalized sample probabilities.
[[nodiscard]] double regular_entropy(const SampleSet& ss);

struct ClusterOptions {
  bool prefix_question = true;
  double threshold = 0.5;
};

// Greedy single pass in sample order: a sample joins the first cluster whose
// first member it entails in both directions, else founds a new cluster.
// Byte-identical texts join without a backend call; a failed call counts as
// non-entailing.
Clustering cluster_answers(Gateway& gw, const SampleSet& ss, const std::string& question,
                           const ClusterOptions& opts = {}, CallTrace* trace = nullptr);

[[nodiscard]] double semantic_entropy(const SampleSet& ss, const Clustering& cl);
[[nodiscard]] double cluster_assignment_entropy(const Clustering& cl);

[[nodiscard]] double p_true_uncertainty(double p_true_token);
double p_true(Gateway& gw, std::span<const FewShotBlock> few_shot, const std::string& question,
              std::span<const Passage> passages, const SampleSet& ss, const PTrueChoices& choices = {},
              CallTrace* trace = nullptr);

[[nodiscard]] double avg_answer_length(const SampleSet& ss);
[[nodiscard]] double retriever_score_baseline(std::span<const Passage> passages);
// Negated maximum utility. Throws EmptyPassageSet.
[[nodiscard]] double passage_utility_uncertainty(std::span<const double> utilities);

[[nodiscard]] std::size_t word_count(const std::string& text);

// Canonical keys: ppl msp pmi re se ca ptrue avglen retriever pu.
[[nodiscard]] const std::vector<std::string>& all_estimators();
// Accepts canonical keys and long aliases (e.g. passage_utility). Throws InvalidInput.
[[nodiscard]] std::string canonical_estimator(const std::string& name);
[[nodiscard]] std::vector<std::string> parse_estimator_list(const std::string& csv);

struct EstimatorConfig {
  std::vector<std::string> estimators = all_estimators();
  int n_samples = 10;
  std::int64_t seed = 0;
  std::size_t passages = 5;
  int max_new_tokens = 50;
  ClusterOptions cluster;
  PTrueChoices choices;
  std::vector<FewShotBlock> few_shot;
  std::vector<std::string> refusal_phrases = default_refusal_phrases();
  std::size_t workers = 4;

  void validate() const;
};

struct EstimateCosts {
  std::string question_id;
  std::map<std::string, CallTrace> per_estimator;
  CallTrace labeling;  // judge call for the correctness label
};

void to_json(nlohmann::json& j, const EstimateCosts& v);
void from_json(const nlohmann::json& j, EstimateCosts& v);

struct EstimateOutput {
  EstimateRow row;
  EstimateCosts costs;
};

// Greedy answer over the full passage set, N seeded samples, then every
// configured estimator. Estimator failures land in row.unavailable. Throws
// only when the greedy answer or its correctness label cannot be obtained.
// ckpt may be null; pu is then unavailable.
EstimateOutput estimate_all(Gateway& gw, const QAExample& ex, const Checkpoint* ckpt, const EstimatorConfig& cfg);

struct EstimateFailure {
  std::string question_id;
  std::string error;
};

void to_json(nlohmann::json& j, const EstimateFailure& v);

struct EstimateBatch {
  std::vector<EstimateRow> rows;
  std::vector<EstimateCosts> costs;
  std::vector<EstimateFailure> failures;
};

// Rows keep input order; failed questions are dropped into failures.
EstimateBatch estimate_dataset(Gateway& gw, std::span<const QAExample> examples, const Checkpoint* ckpt,
                               const EstimatorConfig& cfg);

// Upper bound on per-question inference calls for one estimator; nullopt for
// estimators without a tabulated cost.
[[nodiscard]] std::optional<CallTrace> cost_formula(const std::string& estimator, int n_samples,
                                                    std::size_t n_passages);

struct CostCheckRow {
  std::string estimator;
  std::size_t questions = 0;
  CallTrace observed_max;  // worst question
  CallTrace observed_total;
  CallTrace bound;
  bool within_bound = true;
};

void to_json(nlohmann::json& j, const CostCheckRow& v);

// Per-estimator worst case against cost_formula; see within_bound.
[[nodiscard]] std::vector<CostCheckRow> check_costs(std::span<const EstimateCosts> costs, int n_samples,
                                                    std::size_t n_passages);

}  // namespace pu

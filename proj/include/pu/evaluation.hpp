#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pu/core_types.hpp"

namespace pu {

// Mann-Whitney AUROC via midranks: P(score_pos > score_neg) + 0.5 P(tie),
// where label 1 is the positive class. Throws SingleClass.
[[nodiscard]] double auroc(std::span<const double> scores, std::span<const int> labels);

// Midranks (1-based, ties averaged).
[[nodiscard]] std::vector<double> midranks(std::span<const double> values);

struct DeLongResult {
  double auroc_a = 0.0;
  double auroc_b = 0.0;
  double z = 0.0;
  double p_two_sided = 1.0;
};

void to_json(nlohmann::json& j, const DeLongResult& v);

// Paired test on correlated AUROCs over the same rows (fast structural
// components). Throws DegenerateVariance when the difference variance is
// not positive but the AUROCs differ.
[[nodiscard]] DeLongResult delong_paired(std::span<const double> scores_a, std::span<const double> scores_b,
                                         std::span<const int> labels);

// Mean accuracy over the floor(keep_fraction * n) least uncertain rows;
// ties keep input order. Throws EmptyKeep.
[[nodiscard]] double accuracy_at_rejection(std::span<const double> scores, std::span<const int> accuracies,
                                           double keep_fraction);

inline constexpr int kAuracGridPoints = 20;

// Mean of accuracy_at_rejection over keep fractions k/20, k = 1..20.
[[nodiscard]] double aurac(std::span<const double> scores, std::span<const int> accuracies);

enum class RerankMode { utility, ppl, retriever };

// utility: descending score; ppl: ascending score; retriever: descending
// retriever_score (scores unused). Ties fall back to the original rank.
[[nodiscard]] std::vector<Passage> rerank_topk(std::span<const Passage> passages, std::span<const double> scores,
                                               std::size_t k, RerankMode mode);

struct AgreementReport {
  std::size_t n = 0;
  // Some passage alone answers correctly while the full set does not.
  double raw_individual_not_full = 0.0;
  double raw_full_not_individual = 0.0;
  // Same with a = 1 downgraded to 0 when e < 0.5.
  double smoothed_individual_not_full = 0.0;
  double smoothed_full_not_individual = 0.0;
};

void to_json(nlohmann::json& j, const AgreementReport& v);

// Joins per-passage records with full-set rows on question id.
// Throws MissingJoin for ids present on one side only.
[[nodiscard]] AgreementReport aggregation_agreement(std::span<const UtilityRecord> records,
                                                    std::span<const EstimateRow> full_set_rows);

inline constexpr double kHeadlineKeepFraction = 0.8;

struct DeLongEntry {
  std::string baseline;
  std::optional<DeLongResult> result;
  std::string diagnostic;
};

struct MetricReport {
  std::size_t n = 0;
  std::string dataset_tag;
  std::string model_tag;
  double accuracy = 0.0;
  std::map<std::string, std::size_t> n_scored;
  std::map<std::string, std::optional<double>> auroc;
  std::map<std::string, double> aurac;
  std::vector<double> keep_fractions;
  std::map<std::string, std::vector<std::optional<double>>> selective_accuracy;  // aligned with keep_fractions
  std::map<std::string, DeLongEntry> delong;
};

void to_json(nlohmann::json& j, const MetricReport& v);

// Rows missing an estimator's score are left out of that estimator's metrics.
[[nodiscard]] MetricReport build_report(std::span<const EstimateRow> rows, const std::string& delong_baseline,
                                        const std::string& dataset_tag, const std::string& model_tag);

// Flat rows: estimator,dataset,metric,value.
[[nodiscard]] std::string report_csv(const MetricReport& report);

}  // namespace pu

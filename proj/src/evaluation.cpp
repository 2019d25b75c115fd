#include "pu/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include <fmt/format.h>

#include "pu/error.hpp"

namespace pu {

using nlohmann::json;

namespace {

void check_binary(std::span<const int> labels) {
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error(ErrorKind::InvalidInput, "labels must be 0 or 1");
  }
}

void check_scores(std::span<const double> scores) {
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error(ErrorKind::InvalidInput, "scores must be finite");
  }
}

}  // namespace

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // Positions i..j (0-based) share the average of ranks i+1..j+1.
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorKind::AlignmentMismatch, "scores and labels differ in length");
  check_binary(labels);
  check_scores(scores);
  const auto ranks = midranks(scores);
  double pos_rank_sum = 0.0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      pos_rank_sum += ranks[i];
      ++m;
    }
  }
  const std::size_t n = labels.size() - m;
  if (m == 0 || n == 0) throw Error(ErrorKind::SingleClass, "AUROC needs both classes");
  const double md = static_cast<double>(m);
  return (pos_rank_sum - md * (md + 1.0) / 2.0) / (md * static_cast<double>(n));
}

void to_json(json& j, const DeLongResult& v) {
  j = json{{"auroc_a", v.auroc_a}, {"auroc_b", v.auroc_b}, {"z", v.z}, {"p_two_sided", v.p_two_sided}};
}

namespace {

struct Components {
  double auc = 0.0;
  std::vector<double> v_pos;  // one per positive row
  std::vector<double> v_neg;  // one per negative row
};

Components structural_components(std::span<const double> scores, std::span<const int> labels) {
  std::vector<double> pos;
  std::vector<double> neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  const std::size_t m = pos.size();
  const std::size_t n = neg.size();
  std::vector<double> all(pos);
  all.insert(all.end(), neg.begin(), neg.end());
  const auto tx = midranks(pos);
  const auto ty = midranks(neg);
  const auto tz = midranks(all);

  Components c;
  double pos_sum = 0.0;
  c.v_pos.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    pos_sum += tz[i];
    c.v_pos[i] = (tz[i] - tx[i]) / static_cast<double>(n);
  }
  c.v_neg.resize(n);
  for (std::size_t j = 0; j < n; ++j) c.v_neg[j] = 1.0 - (tz[m + j] - ty[j]) / static_cast<double>(m);
  const double md = static_cast<double>(m);
  c.auc = (pos_sum - md * (md + 1.0) / 2.0) / (md * static_cast<double>(n));
  return c;
}

// Sample covariance of two equally long vectors.
double covariance(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t k = a.size();
  if (k < 2) return 0.0;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(k);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(k);
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(k - 1);
}

}  // namespace

DeLongResult delong_paired(std::span<const double> scores_a, std::span<const double> scores_b,
                           std::span<const int> labels) {
  if (scores_a.size() != labels.size() || scores_b.size() != labels.size()) {
    throw Error(ErrorKind::AlignmentMismatch, "DeLong inputs differ in length");
  }
  check_binary(labels);
  check_scores(scores_a);
  check_scores(scores_b);
  const auto m = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (m == 0 || m == labels.size()) throw Error(ErrorKind::SingleClass, "DeLong needs both classes");
  const std::size_t n = labels.size() - m;

  const auto ca = structural_components(scores_a, labels);
  const auto cb = structural_components(scores_b, labels);
  const double var_pos = covariance(ca.v_pos, ca.v_pos) + covariance(cb.v_pos, cb.v_pos) -
                         2.0 * covariance(ca.v_pos, cb.v_pos);
  const double var_neg = covariance(ca.v_neg, ca.v_neg) + covariance(cb.v_neg, cb.v_neg) -
                         2.0 * covariance(ca.v_neg, cb.v_neg);
  const double var = var_pos / static_cast<double>(m) + var_neg / static_cast<double>(n);

  DeLongResult r;
  r.auroc_a = ca.auc;
  r.auroc_b = cb.auc;
  const double diff = ca.auc - cb.auc;
  if (!(var > 0.0)) {
    if (diff == 0.0) return r;
    throw Error(ErrorKind::DegenerateVariance,
                fmt::format("difference variance {} with AUROCs {} vs {}", var, ca.auc, cb.auc));
  }
  r.z = diff / std::sqrt(var);
  r.p_two_sided = std::clamp(std::erfc(std::abs(r.z) / std::sqrt(2.0)), 0.0, 1.0);
  return r;
}

namespace {

double accuracy_of_kept(std::span<const double> scores, std::span<const int> accuracies, std::size_t keep) {
  if (keep == 0) throw Error(ErrorKind::EmptyKeep, "keep fraction retains no rows");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  long correct = 0;
  for (std::size_t k = 0; k < keep; ++k) correct += accuracies[order[k]];
  return static_cast<double>(correct) / static_cast<double>(keep);
}

void check_rejection_inputs(std::span<const double> scores, std::span<const int> accuracies) {
  if (scores.size() != accuracies.size()) {
    throw Error(ErrorKind::AlignmentMismatch, "scores and accuracies differ in length");
  }
  check_binary(accuracies);
  check_scores(scores);
}

}  // namespace

double accuracy_at_rejection(std::span<const double> scores, std::span<const int> accuracies, double keep_fraction) {
  check_rejection_inputs(scores, accuracies);
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidInput, "keep_fraction must lie in (0, 1]");
  }
  // The epsilon keeps fractions like 0.8 * 10 from flooring to 7.
  const auto keep = static_cast<std::size_t>(std::floor(keep_fraction * static_cast<double>(scores.size()) + 1e-9));
  return accuracy_of_kept(scores, accuracies, keep);
}

double aurac(std::span<const double> scores, std::span<const int> accuracies) {
  check_rejection_inputs(scores, accuracies);
  if (scores.size() < 2) throw Error(ErrorKind::InvalidInput, "AURAC needs at least two rows");
  const std::size_t n = scores.size();
  double sum = 0.0;
  int points = 0;
  for (int k = 1; k <= kAuracGridPoints; ++k) {
    const std::size_t keep = static_cast<std::size_t>(k) * n / kAuracGridPoints;
    if (keep == 0) continue;
    sum += accuracy_of_kept(scores, accuracies, keep);
    ++points;
  }
  return sum / static_cast<double>(points);
}

std::vector<Passage> rerank_topk(std::span<const Passage> passages, std::span<const double> scores, std::size_t k,
                                 RerankMode mode) {
  if (mode != RerankMode::retriever && scores.size() != passages.size()) {
    throw Error(ErrorKind::AlignmentMismatch, "scores are not aligned with passages");
  }
  if (k > passages.size()) throw Error(ErrorKind::InvalidInput, "k exceeds the passage count");
  auto key = [&](std::size_t i) {
    switch (mode) {
      case RerankMode::utility:
        return -scores[i];
      case RerankMode::ppl:
        return scores[i];
      case RerankMode::retriever:
        break;
    }
    return -passages[i].retriever_score;
  };
  std::vector<std::size_t> order(passages.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ka = key(a);
    const double kb = key(b);
    if (ka != kb) return ka < kb;
    return passages[a].rank < passages[b].rank;
  });
  std::vector<Passage> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(passages[order[i]]);
  return out;
}

void to_json(json& j, const AgreementReport& v) {
  j = json{{"n", v.n},
           {"raw_individual_not_full", v.raw_individual_not_full},
           {"raw_full_not_individual", v.raw_full_not_individual},
           {"smoothed_individual_not_full", v.smoothed_individual_not_full},
           {"smoothed_full_not_individual", v.smoothed_full_not_individual}};
}

AgreementReport aggregation_agreement(std::span<const UtilityRecord> records,
                                      std::span<const EstimateRow> full_set_rows) {
  struct Individual {
    bool raw = false;
    bool smoothed = false;
  };
  std::map<std::string, Individual> individual;
  for (const auto& r : records) {
    auto& ind = individual[r.question_id];
    ind.raw = ind.raw || r.a == 1;
    ind.smoothed = ind.smoothed || (r.a == 1 && r.e >= 0.5);
  }
  std::map<std::string, int> full;
  for (const auto& row : full_set_rows) full[row.question_id] = row.correct;
  for (const auto& [qid, _] : individual) {
    if (!full.contains(qid)) throw Error(ErrorKind::MissingJoin, "no full-set row for question " + qid);
  }
  for (const auto& [qid, _] : full) {
    if (!individual.contains(qid)) throw Error(ErrorKind::MissingJoin, "no passage records for question " + qid);
  }

  AgreementReport rep;
  rep.n = individual.size();
  if (rep.n == 0) return rep;
  std::size_t raw_ind = 0, raw_full = 0, sm_ind = 0, sm_full = 0;
  for (const auto& [qid, ind] : individual) {
    const bool f = full.at(qid) == 1;
    raw_ind += static_cast<std::size_t>(ind.raw && !f);
    raw_full += static_cast<std::size_t>(!ind.raw && f);
    sm_ind += static_cast<std::size_t>(ind.smoothed && !f);
    sm_full += static_cast<std::size_t>(!ind.smoothed && f);
  }
  const double n = static_cast<double>(rep.n);
  rep.raw_individual_not_full = static_cast<double>(raw_ind) / n;
  rep.raw_full_not_individual = static_cast<double>(raw_full) / n;
  rep.smoothed_individual_not_full = static_cast<double>(sm_ind) / n;
  rep.smoothed_full_not_individual = static_cast<double>(sm_full) / n;
  return rep;
}

void to_json(json& j, const MetricReport& v) {
  json au = json::object();
  for (const auto& [name, value] : v.auroc) au[name] = value ? json(*value) : json(nullptr);
  json sel = json::object();
  for (const auto& [name, values] : v.selective_accuracy) {
    json arr = json::array();
    for (const auto& x : values) arr.push_back(x ? json(*x) : json(nullptr));
    sel[name] = arr;
  }
  json dl = json::object();
  for (const auto& [name, entry] : v.delong) {
    json e = {{"baseline", entry.baseline}};
    if (entry.result) {
      e["result"] = *entry.result;
    } else {
      e["result"] = nullptr;
      e["diagnostic"] = entry.diagnostic;
    }
    dl[name] = e;
  }
  j = json{{"n", v.n},
           {"dataset_tag", v.dataset_tag},
           {"model_tag", v.model_tag},
           {"accuracy", v.accuracy},
           {"n_scored", v.n_scored},
           {"auroc", au},
           {"aurac", v.aurac},
           {"keep_fractions", v.keep_fractions},
           {"selective_accuracy", sel},
           {"delong", dl},
           {"metadata",
            {{"positive_class", "incorrect answer (label 1)"},
             {"score_direction", "higher = more uncertain"},
             {"aurac_grid", fmt::format("keep fractions k/{0} for k = 1..{0}", kAuracGridPoints)},
             {"headline_keep_fraction", kHeadlineKeepFraction}}}};
}

MetricReport build_report(std::span<const EstimateRow> rows, const std::string& delong_baseline,
                          const std::string& dataset_tag, const std::string& model_tag) {
  MetricReport rep;
  rep.n = rows.size();
  rep.dataset_tag = dataset_tag;
  rep.model_tag = model_tag;
  for (int k = 1; k <= kAuracGridPoints; ++k) rep.keep_fractions.push_back(k / static_cast<double>(kAuracGridPoints));
  long correct = 0;
  std::set<std::string> names;
  for (const auto& row : rows) {
    correct += row.correct;
    for (const auto& [name, _] : row.scores) names.insert(name);
  }
  if (!rows.empty()) rep.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());

  for (const auto& name : names) {
    std::vector<double> scores;
    std::vector<int> acc;
    std::vector<int> incorrect;
    for (const auto& row : rows) {
      const auto it = row.scores.find(name);
      if (it == row.scores.end()) continue;
      scores.push_back(it->second);
      acc.push_back(row.correct);
      incorrect.push_back(1 - row.correct);
    }
    rep.n_scored[name] = scores.size();
    try {
      rep.auroc[name] = auroc(scores, incorrect);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SingleClass) throw;
      rep.auroc[name] = std::nullopt;
    }
    if (scores.size() >= 2) rep.aurac[name] = aurac(scores, acc);
    auto& table = rep.selective_accuracy[name];
    for (double f : rep.keep_fractions) {
      try {
        table.push_back(accuracy_at_rejection(scores, acc, f));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::EmptyKeep) throw;
        table.push_back(std::nullopt);
      }
    }
  }
  if (names.contains(delong_baseline)) {
    for (const auto& name : names) {
      if (name == delong_baseline) continue;
      std::vector<double> a;
      std::vector<double> b;
      std::vector<int> incorrect;
      for (const auto& row : rows) {
        const auto ia = row.scores.find(delong_baseline);
        const auto ib = row.scores.find(name);
        if (ia == row.scores.end() || ib == row.scores.end()) continue;
        a.push_back(ia->second);
        b.push_back(ib->second);
        incorrect.push_back(1 - row.correct);
      }
      DeLongEntry entry;
      entry.baseline = delong_baseline;
      try {
        entry.result = delong_paired(a, b, incorrect);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateVariance && e.kind() != ErrorKind::SingleClass) throw;
        entry.diagnostic = e.what();
      }
      rep.delong[name] = std::move(entry);
    }
  }
  return rep;
}

std::string report_csv(const MetricReport& report) {
  std::string out = "estimator,dataset,metric,value\n";
  auto row = [&](const std::string& est, const std::string& metric, double value) {
    out += fmt::format("{},{},{},{}\n", est, report.dataset_tag, metric, value);
  };
  for (const auto& [name, value] : report.auroc) {
    if (value) row(name, "auroc", *value);
  }
  for (const auto& [name, value] : report.aurac) row(name, "aurac", value);
  for (const auto& [name, table] : report.selective_accuracy) {
    for (std::size_t i = 0; i < table.size(); ++i) {
      if (!table[i]) continue;
      row(name, fmt::format("accuracy_at_keep_{:.2f}", report.keep_fractions[i]), *table[i]);
    }
  }
  for (const auto& [name, entry] : report.delong) {
    if (!entry.result) continue;
    row(name, "delong_z_vs_" + entry.baseline, entry.result->z);
    row(name, "delong_p_vs_" + entry.baseline, entry.result->p_two_sided);
  }
  return out;
}

}  // namespace pu

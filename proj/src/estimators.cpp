#include "pu/estimators.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "pu/parallel.hpp"

namespace pu {

using nlohmann::json;

double ppl(const GeneratedAnswer& ans) { return std::exp(-length_normalized_logprob(ans)); }

double msp(const GeneratedAnswer& ans) { return 1.0 - std::exp(sequence_logprob(ans)); }

double pmi(const GeneratedAnswer& ans) {
  if (!ans.unconditional_token_logprobs) {
    throw Error(ErrorKind::MissingUnconditional, "answer carries no unconditional logprobs");
  }
  const auto& cond = ans.token_logprobs;
  const auto& uncond = *ans.unconditional_token_logprobs;
  if (cond.empty()) throw Error(ErrorKind::EmptyAnswer, "answer has no tokens");
  if (cond.size() != uncond.size()) {
    throw Error(ErrorKind::TokenizationMismatch, "conditional and unconditional token counts differ (" +
                                                     std::to_string(cond.size()) + " vs " +
                                                     std::to_string(uncond.size()) + ")");
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < cond.size(); ++t) sum += cond[t] - uncond[t];
  return -sum / static_cast<double>(cond.size());
}

double regular_entropy(const SampleSet& ss) {
  if (ss.samples.empty()) throw Error(ErrorKind::EmptySampleSet, "no samples");
  double sum = 0.0;
  for (const auto& s : ss.samples) sum += length_normalized_logprob(s);
  return -sum / static_cast<double>(ss.samples.size());
}

Clustering cluster_answers(Gateway& gw, const SampleSet& ss, const std::string& question, const ClusterOptions& opts,
                           CallTrace* trace) {
  Clustering cl;
  std::vector<std::size_t> representatives;
  auto context = [&](const std::string& text) { return opts.prefix_question ? question + " " + text : text; };
  for (std::size_t i = 0; i < ss.samples.size(); ++i) {
    const std::string& text = ss.samples[i].text;
    int joined = -1;
    for (std::size_t c = 0; c < representatives.size() && joined < 0; ++c) {
      const std::string& rep = ss.samples[representatives[c]].text;
      if (rep == text) {
        joined = static_cast<int>(c);
        break;
      }
      try {
        const auto [fwd, bwd] = gw.entail_bidirectional(context(rep), context(text), trace);
        if (fwd > opts.threshold && bwd > opts.threshold) joined = static_cast<int>(c);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::OfflineViolation) throw;
        spdlog::warn("entailment failed for samples {} and {}: {}", representatives[c], i, e.what());
      }
    }
    if (joined < 0) {
      joined = static_cast<int>(representatives.size());
      representatives.push_back(i);
    }
    cl.assignments.push_back(joined);
  }
  cl.m = static_cast<int>(representatives.size());
  return cl;
}

namespace {

double log_sum_exp(const std::vector<double>& xs) {
  const double hi = *std::max_element(xs.begin(), xs.end());
  if (hi == -std::numeric_limits<double>::infinity()) return hi;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

double entropy_from_log_masses(const std::vector<double>& log_masses) {
  const double total = log_sum_exp(log_masses);
  double h = 0.0;
  for (double lm : log_masses) {
    const double lp = lm - total;
    const double p = std::exp(lp);
    // A zero-mass cluster contributes nothing (x log x -> 0).
    if (p > 0.0) h -= p * lp;
  }
  return std::max(h, 0.0);
}

}  // namespace

double semantic_entropy(const SampleSet& ss, const Clustering& cl) {
  if (ss.samples.empty()) throw Error(ErrorKind::EmptySampleSet, "no samples");
  if (cl.assignments.size() != ss.samples.size()) {
    throw Error(ErrorKind::AlignmentMismatch, "clustering does not cover the sample set");
  }
  std::vector<std::vector<double>> members(static_cast<std::size_t>(cl.m));
  for (std::size_t i = 0; i < ss.samples.size(); ++i) {
    const int c = cl.assignments[i];
    if (c < 0 || c >= cl.m) throw Error(ErrorKind::InvalidInput, "cluster id out of range");
    members[static_cast<std::size_t>(c)].push_back(length_normalized_logprob(ss.samples[i]));
  }
  std::vector<double> log_masses;
  for (const auto& m : members) {
    if (m.empty()) throw Error(ErrorKind::InvalidInput, "cluster ids are not dense");
    log_masses.push_back(log_sum_exp(m));
  }
  return entropy_from_log_masses(log_masses);
}

double cluster_assignment_entropy(const Clustering& cl) {
  if (cl.assignments.empty()) return 0.0;
  std::vector<double> counts(static_cast<std::size_t>(cl.m), 0.0);
  for (int c : cl.assignments) {
    if (c < 0 || c >= cl.m) throw Error(ErrorKind::InvalidInput, "cluster id out of range");
    counts[static_cast<std::size_t>(c)] += 1.0;
  }
  const double n = static_cast<double>(cl.assignments.size());
  double h = 0.0;
  for (double k : counts) {
    if (k > 0.0) h -= (k / n) * std::log(k / n);
  }
  return h;
}

double p_true_uncertainty(double p_true_token) { return 1.0 - p_true_token; }

double p_true(Gateway& gw, std::span<const FewShotBlock> few_shot, const std::string& question,
              std::span<const Passage> passages, const SampleSet& ss, const PTrueChoices& choices, CallTrace* trace) {
  std::vector<std::string> texts;
  texts.reserve(ss.samples.size());
  for (const auto& s : ss.samples) texts.push_back(s.text);
  const auto shots = few_shot.first(std::min(few_shot.size(), kDefaultFewShotCount));
  const Prompt prompt = ptrue_prompt(shots, question, passages, ss.most_likely.text, texts, choices);
  return p_true_uncertainty(gw.next_token_prob(prompt, choices.true_label, trace));
}

std::size_t word_count(const std::string& text) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

double avg_answer_length(const SampleSet& ss) {
  if (ss.samples.empty()) throw Error(ErrorKind::EmptySampleSet, "no samples");
  double total = 0.0;
  for (const auto& s : ss.samples) total += static_cast<double>(word_count(s.text));
  return total / static_cast<double>(ss.samples.size());
}

double retriever_score_baseline(std::span<const Passage> passages) {
  if (passages.empty()) throw Error(ErrorKind::EmptyPassageSet, "no passages");
  double best = passages.front().retriever_score;
  for (const auto& p : passages) best = std::max(best, p.retriever_score);
  return -best;
}

double passage_utility_uncertainty(std::span<const double> utilities) {
  if (utilities.empty()) throw Error(ErrorKind::EmptyPassageSet, "no passage utilities");
  return -*std::max_element(utilities.begin(), utilities.end());
}

const std::vector<std::string>& all_estimators() {
  static const std::vector<std::string> names = {"ppl", "msp",   "pmi",    "re",        "se",
                                                 "ca",  "ptrue", "avglen", "retriever", "pu"};
  return names;
}

std::string canonical_estimator(const std::string& name) {
  static const std::map<std::string, std::string> aliases = {
      {"perplexity", "ppl"},
      {"max_sequence_probability", "msp"},
      {"pointwise_mutual_information", "pmi"},
      {"regular_entropy", "re"},
      {"semantic_entropy", "se"},
      {"cluster_assignment", "ca"},
      {"p_true", "ptrue"},
      {"avg_answer_length", "avglen"},
      {"retriever_score", "retriever"},
      {"passage_utility", "pu"},
  };
  std::string key = name;
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  const auto& names = all_estimators();
  if (std::find(names.begin(), names.end(), key) != names.end()) return key;
  if (const auto it = aliases.find(key); it != aliases.end()) return it->second;
  throw Error(ErrorKind::InvalidInput, "unknown estimator '" + name + "'");
}

std::vector<std::string> parse_estimator_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream in(csv);
  for (std::string item; std::getline(in, item, ',');) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    const auto name = canonical_estimator(item);
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  }
  if (out.empty()) throw Error(ErrorKind::InvalidInput, "estimator list is empty");
  return out;
}

void EstimatorConfig::validate() const {
  if (n_samples < 1) throw Error(ErrorKind::InvalidInput, "n_samples must be >= 1");
  if (passages < 1) throw Error(ErrorKind::InvalidInput, "passages must be >= 1");
  if (estimators.empty()) throw Error(ErrorKind::InvalidInput, "no estimators configured");
  std::set<std::string> seen;
  for (const auto& e : estimators) {
    if (canonical_estimator(e) != e) throw Error(ErrorKind::InvalidInput, "estimator '" + e + "' is not canonical");
    if (!seen.insert(e).second) throw Error(ErrorKind::InvalidInput, "estimator '" + e + "' listed twice");
  }
  if (seen.contains("ptrue") && few_shot.empty()) {
    throw Error(ErrorKind::InvalidInput, "ptrue needs a few-shot bank");
  }
}

void to_json(json& j, const EstimateCosts& v) {
  j = json{{"question_id", v.question_id}, {"per_estimator", v.per_estimator}, {"labeling", v.labeling}};
}

void from_json(const json& j, EstimateCosts& v) {
  j.at("question_id").get_to(v.question_id);
  v.per_estimator = j.at("per_estimator").get<std::map<std::string, CallTrace>>();
  j.at("labeling").get_to(v.labeling);
}

void to_json(json& j, const EstimateFailure& v) { j = json{{"question_id", v.question_id}, {"error", v.error}}; }

namespace {

bool uses_samples(const std::string& name) {
  return name == "re" || name == "se" || name == "ca" || name == "ptrue" || name == "avglen";
}

}  // namespace

EstimateOutput estimate_all(Gateway& gw, const QAExample& ex, const Checkpoint* ckpt, const EstimatorConfig& cfg) {
  EstimateOutput out;
  EstimateRow& row = out.row;
  row.question_id = ex.id;
  out.costs.question_id = ex.id;

  const auto passages =
      std::span<const Passage>(ex.passages).first(std::min(cfg.passages, ex.passages.size()));

  CallTrace greedy_cost;
  SampleSet ss;
  ss.most_likely = gw.generate(qa_prompt(ex.question, passages), DecodeConfig::greedy(cfg.max_new_tokens), &greedy_cost);
  row.most_likely_answer = ss.most_likely;
  row.correct = label_accuracy(gw, ex, ss.most_likely.text, cfg.refusal_phrases, &out.costs.labeling);

  const bool need_samples = std::any_of(cfg.estimators.begin(), cfg.estimators.end(), uses_samples);
  CallTrace sample_cost;
  std::string sample_error;
  if (need_samples) {
    try {
      const Prompt prompt = qa_prompt(ex.question, passages);
      for (int k = 1; k <= cfg.n_samples; ++k) {
        ss.samples.push_back(gw.generate(prompt, DecodeConfig::multinomial(cfg.seed + k, cfg.max_new_tokens),
                                         &sample_cost));
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::OfflineViolation) throw;
      sample_error = e.what();
      ss.samples.clear();
    }
  }

  std::optional<Clustering> clustering;
  CallTrace cluster_cost;
  auto clusters = [&]() -> const Clustering& {
    if (!clustering) clustering = cluster_answers(gw, ss, ex.question, cfg.cluster, &cluster_cost);
    return *clustering;
  };

  for (const auto& name : cfg.estimators) {
    CallTrace cost = greedy_cost;
    if (uses_samples(name)) cost += sample_cost;
    try {
      if (uses_samples(name) && !sample_error.empty()) throw Error(ErrorKind::EmptySampleSet, sample_error);
      double score = 0.0;
      if (name == "ppl") {
        score = ppl(ss.most_likely);
      } else if (name == "msp") {
        score = msp(ss.most_likely);
      } else if (name == "pmi") {
        GeneratedAnswer& ans = row.most_likely_answer;
        ans.unconditional_token_logprobs = gw.score_sequence(empty_prompt(), ans.text, &cost);
        score = pmi(ans);
      } else if (name == "re") {
        score = regular_entropy(ss);
      } else if (name == "se" || name == "ca") {
        const Clustering& cl = clusters();
        cost += cluster_cost;
        score = name == "se" ? semantic_entropy(ss, cl) : cluster_assignment_entropy(cl);
      } else if (name == "ptrue") {
        score = p_true(gw, cfg.few_shot, ex.question, passages, ss, cfg.choices, &cost);
      } else if (name == "avglen") {
        score = avg_answer_length(ss);
      } else if (name == "retriever") {
        cost = CallTrace{};
        score = retriever_score_baseline(passages);
      } else if (name == "pu") {
        cost = CallTrace{};
        if (ckpt == nullptr) throw Error(ErrorKind::InvalidInput, "no utility checkpoint supplied");
        const auto utilities = predict_utilities(*ckpt, gw, ex.question, passages, &cost);
        score = passage_utility_uncertainty(utilities);
      } else {
        throw Error(ErrorKind::InvalidInput, "unknown estimator '" + name + "'");
      }
      if (!std::isfinite(score)) throw Error(ErrorKind::InvalidInput, name + " produced a non-finite score");
      row.scores[name] = score;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::OfflineViolation) throw;
      row.unavailable[name] = e.what();
    }
    out.costs.per_estimator[name] = cost;
  }
  validate(row);
  return out;
}

EstimateBatch estimate_dataset(Gateway& gw, std::span<const QAExample> examples, const Checkpoint* ckpt,
                               const EstimatorConfig& cfg) {
  cfg.validate();
  std::vector<std::optional<EstimateOutput>> outputs(examples.size());
  std::vector<std::string> errors(examples.size());
  parallel_for(examples.size(), cfg.workers, [&](std::size_t i) {
    try {
      outputs[i] = estimate_all(gw, examples[i], ckpt, cfg);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::OfflineViolation) throw;
      errors[i] = e.what();
    }
  });
  EstimateBatch batch;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (outputs[i]) {
      batch.rows.push_back(std::move(outputs[i]->row));
      batch.costs.push_back(std::move(outputs[i]->costs));
    } else {
      batch.failures.push_back(EstimateFailure{examples[i].id, errors[i]});
    }
  }
  return batch;
}

std::optional<CallTrace> cost_formula(const std::string& estimator, int n_samples, std::size_t n_passages) {
  const long n = n_samples;
  CallTrace t;
  if (estimator == "ppl" || estimator == "msp") {
    t.generations = 1;
  } else if (estimator == "pmi") {
    t.generations = 1;
    t.sequence_scores = 1;
  } else if (estimator == "re" || estimator == "avglen") {
    t.generations = n + 1;
  } else if (estimator == "se" || estimator == "ca") {
    t.generations = n + 1;
    t.evaluations = n * (n - 1) / 2;
  } else if (estimator == "ptrue") {
    t.generations = n + 1;
    t.evaluations = 1;
  } else if (estimator == "retriever") {
  } else if (estimator == "pu") {
    t.scorer_passes = static_cast<long>(n_passages);
  } else {
    return std::nullopt;
  }
  return t;
}

void to_json(json& j, const CostCheckRow& v) {
  j = json{{"estimator", v.estimator},       {"questions", v.questions},
           {"observed_max", v.observed_max}, {"observed_total", v.observed_total},
           {"bound", v.bound},               {"within_bound", v.within_bound}};
}

std::vector<CostCheckRow> check_costs(std::span<const EstimateCosts> costs, int n_samples, std::size_t n_passages) {
  std::map<std::string, CostCheckRow> rows;
  for (const auto& q : costs) {
    for (const auto& [name, t] : q.per_estimator) {
      auto& r = rows[name];
      r.estimator = name;
      ++r.questions;
      r.observed_total += t;
      r.observed_max.generations = std::max(r.observed_max.generations, t.generations);
      r.observed_max.sequence_scores = std::max(r.observed_max.sequence_scores, t.sequence_scores);
      r.observed_max.evaluations = std::max(r.observed_max.evaluations, t.evaluations);
      r.observed_max.judgments = std::max(r.observed_max.judgments, t.judgments);
      r.observed_max.scorer_passes = std::max(r.observed_max.scorer_passes, t.scorer_passes);
    }
  }
  std::vector<CostCheckRow> out;
  for (auto& [name, r] : rows) {
    if (const auto bound = cost_formula(name, n_samples, n_passages)) {
      r.bound = *bound;
      const auto& o = r.observed_max;
      r.within_bound = o.generations <= bound->generations && o.sequence_scores <= bound->sequence_scores &&
                       o.evaluations <= bound->evaluations && o.judgments <= bound->judgments &&
                       o.scorer_passes <= bound->scorer_passes;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace pu

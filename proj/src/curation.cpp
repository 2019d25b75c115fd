#include "pu/curation.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "pu/parallel.hpp"
#include "pu/prompts.hpp"

namespace pu {

using nlohmann::json;

NLOHMANN_JSON_SERIALIZE_ENUM(CurationConfig::EntailmentInput,
                             {{CurationConfig::EntailmentInput::passage_only, "passage_only"},
                              {CurationConfig::EntailmentInput::passage_plus_question, "passage_plus_question"}})

void CurationConfig::validate() const {
  if (passages_per_question < 2) throw Error(ErrorKind::InvalidInput, "passages_per_question must be >= 2");
  if (max_new_tokens < 1) throw Error(ErrorKind::InvalidInput, "max_new_tokens must be positive");
}

void to_json(json& j, const CurationConfig& v) {
  j = json{{"passages_per_question", v.passages_per_question},
           {"entailment_premise", v.entailment_premise},
           {"refusal_phrases", v.refusal_phrases},
           {"max_new_tokens", v.max_new_tokens}};
}

void from_json(const json& j, CurationConfig& v) {
  v = CurationConfig{};
  v.passages_per_question = j.value("passages_per_question", v.passages_per_question);
  v.entailment_premise = j.value("entailment_premise", v.entailment_premise);
  v.refusal_phrases = j.value("refusal_phrases", v.refusal_phrases);
  v.max_new_tokens = j.value("max_new_tokens", v.max_new_tokens);
  v.workers = j.value("workers", v.workers);
  v.validate();
}

void to_json(json& j, const CurationFailure& v) {
  j = json{{"question_id", v.question_id}, {"pid", v.pid}, {"error", v.error}};
}

void to_json(json& j, const DatasetStats& v) {
  j = json{{"n_questions", v.n_questions},
           {"n_pairwise", v.n_pairwise},
           {"pct_all_incorrect", v.pct_all_incorrect},
           {"pct_mixed", v.pct_mixed},
           {"pct_all_correct", v.pct_all_correct}};
}

void from_json(const json& j, DatasetStats& v) {
  j.at("n_questions").get_to(v.n_questions);
  j.at("n_pairwise").get_to(v.n_pairwise);
  j.at("pct_all_incorrect").get_to(v.pct_all_incorrect);
  j.at("pct_mixed").get_to(v.pct_mixed);
  j.at("pct_all_correct").get_to(v.pct_all_correct);
}

std::string entailment_hypothesis(const CurationConfig& cfg, const std::string& question, const std::string& answer) {
  if (cfg.entailment_premise == CurationConfig::EntailmentInput::passage_only) return answer;
  return "Q: " + question + " A: " + answer;
}

CuratedQuestion curate_example(Gateway& gw, const QAExample& ex, const CurationConfig& cfg) {
  CuratedQuestion out;
  out.question_id = ex.id;
  std::size_t n = ex.passages.size();
  if (n > cfg.passages_per_question) n = cfg.passages_per_question;
  if (n < cfg.passages_per_question) {
    spdlog::warn("question {}: {} passages, expected {}", ex.id, n, cfg.passages_per_question);
  }
  out.expected = n;
  const auto decode = DecodeConfig::greedy(cfg.max_new_tokens);

  for (std::size_t k = 0; k < n; ++k) {
    const Passage& passage = ex.passages[k];
    try {
      const auto prompt = qa_prompt(ex.question, std::span<const Passage>(&passage, 1));
      GeneratedAnswer answer = gw.generate(prompt, decode);
      if (answer.is_empty_flagged()) spdlog::warn("question {} passage {}: empty answer", ex.id, passage.pid);
      const int a = label_accuracy(gw, ex, answer.text, cfg.refusal_phrases);
      // An empty answer is neither correct nor supported.
      const double e = answer.text.empty()
                           ? 0.0
                           : gw.entail_prob(passage.text, entailment_hypothesis(cfg, ex.question, answer.text));
      out.records.push_back(make_utility_record(ex.id, passage.pid, std::move(answer), a, e));
    } catch (const Error& err) {
      out.failures.push_back(CurationFailure{ex.id, passage.pid, err.what()});
    }
  }
  return out;
}

std::vector<CuratedQuestion> curate_dataset(Gateway& gw, std::span<const QAExample> examples,
                                            const CurationConfig& cfg) {
  cfg.validate();
  std::vector<CuratedQuestion> out(examples.size());
  parallel_for(examples.size(), cfg.workers, [&](std::size_t i) { out[i] = curate_example(gw, examples[i], cfg); });
  return out;
}

std::vector<PairwiseInstance> build_pairwise(std::span<const UtilityRecord> records) {
  std::vector<PairwiseInstance> pairs;
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t j = i + 1; j < records.size(); ++j) {
      const auto& ri = records[i];
      const auto& rj = records[j];
      if (ri.question_id != rj.question_id) {
        throw Error(ErrorKind::InvalidInput, "build_pairwise: records span several questions");
      }
      if (ri.upsilon == rj.upsilon) continue;
      PairwiseInstance p;
      p.question_id = ri.question_id;
      p.pid_i = ri.pid;
      p.pid_j = rj.pid;
      p.z = ri.upsilon > rj.upsilon ? 1 : -1;
      p.a_i = ri.a;
      p.a_j = rj.a;
      p.upsilon_i_gold = ri.upsilon;
      p.upsilon_j_gold = rj.upsilon;
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

DatasetStats dataset_stats(std::span<const CuratedQuestion> questions) {
  DatasetStats s;
  std::size_t incorrect = 0;
  std::size_t mixed = 0;
  std::size_t correct = 0;
  for (const auto& q : questions) {
    s.n_pairwise += build_pairwise(q.records).size();
    if (!q.fully_labeled() || q.records.empty()) continue;
    std::size_t ones = 0;
    for (const auto& r : q.records) ones += static_cast<std::size_t>(r.a);
    if (ones == 0) {
      ++incorrect;
    } else if (ones == q.records.size()) {
      ++correct;
    } else {
      ++mixed;
    }
  }
  s.n_questions = incorrect + mixed + correct;
  if (s.n_questions > 0) {
    const double n = static_cast<double>(s.n_questions);
    s.pct_all_incorrect = 100.0 * static_cast<double>(incorrect) / n;
    s.pct_mixed = 100.0 * static_cast<double>(mixed) / n;
    s.pct_all_correct = 100.0 * static_cast<double>(correct) / n;
  }
  return s;
}

}  // namespace pu

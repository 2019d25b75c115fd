#include "pu/core_types.hpp"

#include <cmath>
#include <numeric>
#include <set>

namespace pu {

using nlohmann::json;

bool QAExample::is_unanswerable() const { return gold_answers.empty(); }

double gold_utility(int a, double e) { return (static_cast<double>(a) + e) / 2.0; }

UtilityRecord make_utility_record(std::string question_id, std::string pid, GeneratedAnswer answer,
                                  int a, double e) {
  UtilityRecord rec;
  rec.question_id = std::move(question_id);
  rec.pid = std::move(pid);
  rec.answer = std::move(answer);
  rec.a = a;
  rec.e = e;
  rec.upsilon = gold_utility(a, e);
  validate(rec);
  return rec;
}

double sequence_logprob(const GeneratedAnswer& answer) {
  if (answer.token_logprobs.empty()) throw Error(ErrorKind::EmptyAnswer, "answer has no tokens");
  return std::accumulate(answer.token_logprobs.begin(), answer.token_logprobs.end(), 0.0);
}

double length_normalized_logprob(const GeneratedAnswer& answer) {
  return sequence_logprob(answer) / static_cast<double>(answer.token_logprobs.size());
}

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw Error(ErrorKind::InvalidInput, msg);
}

bool is_unit_interval(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

}  // namespace

void validate(const Passage& p) {
  check(p.rank >= 1, "passage " + p.pid + ": rank must be >= 1");
  check(std::isfinite(p.retriever_score), "passage " + p.pid + ": retriever_score not finite");
}

void validate(const QAExample& ex) {
  check(!ex.id.empty(), "example id is empty");
  check(!ex.passages.empty(), "example " + ex.id + ": no passages");
  std::set<int> ranks;
  for (const auto& p : ex.passages) {
    validate(p);
    ranks.insert(p.rank);
  }
  const auto n = static_cast<int>(ex.passages.size());
  check(static_cast<int>(ranks.size()) == n && *ranks.begin() == 1 && *ranks.rbegin() == n,
        "example " + ex.id + ": ranks are not a permutation of 1..|R|");
}

void validate(const GeneratedAnswer& ans) {
  for (double lp : ans.token_logprobs) {
    check(std::isfinite(lp) && lp <= 0.0, "token logprob must be finite and <= 0");
  }
  if (ans.unconditional_token_logprobs) {
    check(ans.unconditional_token_logprobs->size() == ans.token_logprobs.size(),
          "unconditional logprobs length differs from conditional");
    for (double lp : *ans.unconditional_token_logprobs) {
      check(std::isfinite(lp) && lp <= 0.0, "unconditional logprob must be finite and <= 0");
    }
  }
}

void validate(const UtilityRecord& rec) {
  check(rec.a == 0 || rec.a == 1, "accuracy label must be 0 or 1");
  check(is_unit_interval(rec.e), "entailment probability outside [0,1]");
  check(std::abs(rec.upsilon - gold_utility(rec.a, rec.e)) <= 1e-12, "upsilon != (a+e)/2");
  validate(rec.answer);
}

void validate(const PairwiseInstance& pair) {
  check(pair.z == 1 || pair.z == -1, "z must be +1 or -1");
  check(pair.upsilon_i_gold != pair.upsilon_j_gold, "tied pair materialized");
  check((pair.z == 1) == (pair.upsilon_i_gold > pair.upsilon_j_gold), "z disagrees with gold order");
  check((pair.a_i == 0 || pair.a_i == 1) && (pair.a_j == 0 || pair.a_j == 1),
        "accuracy label must be 0 or 1");
}

void validate(const EstimateRow& row) {
  check(row.correct == 0 || row.correct == 1, "correct must be 0 or 1");
  for (const auto& [name, value] : row.scores) {
    check(!std::isnan(value), "estimator " + name + " produced NaN");
  }
}

// --- JSON ---------------------------------------------------------------

void to_json(json& j, const Passage& v) {
  j = json{{"pid", v.pid}, {"text", v.text}, {"retriever_score", v.retriever_score}, {"rank", v.rank}};
}

void from_json(const json& j, Passage& v) {
  j.at("pid").get_to(v.pid);
  j.at("text").get_to(v.text);
  v.retriever_score = j.value("retriever_score", 0.0);
  j.at("rank").get_to(v.rank);
}

void to_json(json& j, const QAExample& v) {
  j = json{{"id", v.id},
           {"question", v.question},
           {"gold_answers", v.gold_answers},
           {"passages", v.passages},
           {"dataset_tag", v.dataset_tag}};
}

void from_json(const json& j, QAExample& v) {
  j.at("id").get_to(v.id);
  j.at("question").get_to(v.question);
  v.gold_answers = j.value("gold_answers", std::vector<std::string>{});
  j.at("passages").get_to(v.passages);
  v.dataset_tag = j.value("dataset_tag", std::string{});
}

void to_json(json& j, const GeneratedAnswer& v) {
  j = json{{"text", v.text}, {"token_logprobs", v.token_logprobs}, {"decode_kind", v.decode_kind}};
  j["unconditional_token_logprobs"] =
      v.unconditional_token_logprobs ? json(*v.unconditional_token_logprobs) : json(nullptr);
  j["seed"] = v.seed ? json(*v.seed) : json(nullptr);
}

void from_json(const json& j, GeneratedAnswer& v) {
  j.at("text").get_to(v.text);
  j.at("token_logprobs").get_to(v.token_logprobs);
  v.decode_kind = j.value("decode_kind", DecodeKind::greedy);
  v.unconditional_token_logprobs.reset();
  if (auto it = j.find("unconditional_token_logprobs"); it != j.end() && !it->is_null()) {
    v.unconditional_token_logprobs = it->get<std::vector<double>>();
  }
  v.seed.reset();
  if (auto it = j.find("seed"); it != j.end() && !it->is_null()) v.seed = it->get<std::int64_t>();
}

void to_json(json& j, const UtilityRecord& v) {
  j = json{{"question_id", v.question_id}, {"pid", v.pid}, {"answer", v.answer},
           {"a", v.a},                     {"e", v.e},     {"upsilon", v.upsilon}};
}

void from_json(const json& j, UtilityRecord& v) {
  j.at("question_id").get_to(v.question_id);
  j.at("pid").get_to(v.pid);
  j.at("answer").get_to(v.answer);
  j.at("a").get_to(v.a);
  j.at("e").get_to(v.e);
  j.at("upsilon").get_to(v.upsilon);
}

void to_json(json& j, const PairwiseInstance& v) {
  j = json{{"question_id", v.question_id},
           {"pid_i", v.pid_i},
           {"pid_j", v.pid_j},
           {"z", v.z},
           {"a_i", v.a_i},
           {"a_j", v.a_j},
           {"upsilon_i_gold", v.upsilon_i_gold},
           {"upsilon_j_gold", v.upsilon_j_gold}};
}

void from_json(const json& j, PairwiseInstance& v) {
  j.at("question_id").get_to(v.question_id);
  j.at("pid_i").get_to(v.pid_i);
  j.at("pid_j").get_to(v.pid_j);
  j.at("z").get_to(v.z);
  j.at("a_i").get_to(v.a_i);
  j.at("a_j").get_to(v.a_j);
  j.at("upsilon_i_gold").get_to(v.upsilon_i_gold);
  j.at("upsilon_j_gold").get_to(v.upsilon_j_gold);
}

void to_json(json& j, const EstimateRow& v) {
  j = json{{"question_id", v.question_id},
           {"most_likely_answer", v.most_likely_answer},
           {"correct", v.correct},
           {"scores", v.scores},
           {"unavailable", v.unavailable}};
}

void from_json(const json& j, EstimateRow& v) {
  j.at("question_id").get_to(v.question_id);
  j.at("most_likely_answer").get_to(v.most_likely_answer);
  j.at("correct").get_to(v.correct);
  j.at("scores").get_to(v.scores);
  v.unavailable = j.value("unavailable", std::map<std::string, std::string>{});
}

}  // namespace pu

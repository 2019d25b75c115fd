#include <doctest.h>

#include <random>

#include "pu/curation.hpp"
#include "pu/prompts.hpp"
#include "pu/synthetic.hpp"
#include "test_support.hpp"

using namespace pu;
using nlohmann::json;

namespace {

UtilityRecord rec(const std::string& pid, double upsilon) {
  UtilityRecord r;
  r.question_id = "q";
  r.pid = pid;
  r.a = upsilon >= 0.5 ? 1 : 0;
  r.e = 2.0 * upsilon - r.a;
  r.upsilon = upsilon;
  return r;
}

QAExample fig1_example() {
  QAExample ex;
  ex.id = "nq-1";
  ex.question = "Who sings does he love me with Reba?";
  ex.gold_answers = {"Linda Davis"};
  ex.passages = {{"p1", "recorded as a duet by Reba McEntire and Linda Davis", 0.9, 1},
                 {"p2", "on Patti LaBelle's album, Flame", 0.8, 2}};
  return ex;
}

json fig1_fixture() {
  return {{"generate",
           {{{"prompt_contains", "Linda Davis\n"}, {"mode", "greedy"}, {"text", "Linda Davis"},
             {"token_logprobs", {-0.1, -0.1}}},
            {{"prompt_contains", "Flame"}, {"mode", "greedy"}, {"text", "Patti LaBelle"},
             {"token_logprobs", {-0.9, -0.4}}}}},
          {"entail",
           {{{"premise", "recorded as a duet by Reba McEntire and Linda Davis"},
             {"hypothesis", "Q: Who sings does he love me with Reba? A: Linda Davis"},
             {"prob", 0.97}},
            {{"premise", "on Patti LaBelle's album, Flame"},
             {"hypothesis", "Q: Who sings does he love me with Reba? A: Patti LaBelle"},
             {"prob", 0.3}}}}};
}

}  // namespace

TEST_CASE("pairs are built once per unordered pair, ties dropped") {
  std::vector<UtilityRecord> five;
  for (int k = 0; k < 5; ++k) five.push_back(rec("p" + std::to_string(k), 0.1 * (k + 1)));
  CHECK(build_pairwise(five).size() == 10);

  std::vector<UtilityRecord> tied(5, rec("p", 0.5));
  CHECK(build_pairwise(tied).empty());

  const std::vector<UtilityRecord> three{rec("1", 1.0), rec("2", 0.5), rec("3", 0.5)};
  const auto pairs = build_pairwise(three);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].pid_i == "1");
  CHECK(pairs[0].pid_j == "2");
  CHECK(pairs[0].z == 1);
  CHECK(pairs[1].pid_i == "1");
  CHECK(pairs[1].pid_j == "3");
  CHECK(pairs[1].z == 1);

  const std::vector<UtilityRecord> one{rec("1", 1.0)};
  CHECK(build_pairwise(one).empty());
}

TEST_CASE("pair labels agree with gold order and carry accuracy labels") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<UtilityRecord> rs;
    for (int k = 0; k < 5; ++k) {
      const int a = static_cast<int>(rng() % 2);
      const double e = static_cast<double>(rng() % 3) / 2.0;
      rs.push_back(make_utility_record("q", "p" + std::to_string(k), GeneratedAnswer{"x", {-0.1}}, a, e));
    }
    for (const auto& p : build_pairwise(rs)) {
      CHECK_NOTHROW(validate(p));
      const auto& ri = *std::find_if(rs.begin(), rs.end(), [&](const auto& r) { return r.pid == p.pid_i; });
      CHECK(p.a_i == ri.a);
    }
  }
}

TEST_CASE("records from several questions are rejected") {
  auto a = rec("1", 0.2);
  auto b = rec("2", 0.9);
  b.question_id = "other";
  const std::vector<UtilityRecord> mixed{a, b};
  CHECK_THROWS_AS((void)build_pairwise(mixed), Error);
}

TEST_CASE("dataset statistics") {
  CuratedQuestion all;
  all.question_id = "a";
  all.records = {rec("1", 0.9), rec("2", 0.8), rec("3", 0.7)};
  all.expected = 3;
  auto s = dataset_stats(std::vector<CuratedQuestion>{all});
  CHECK(s.n_questions == 1);
  CHECK(s.pct_all_incorrect == 0.0);
  CHECK(s.pct_mixed == 0.0);
  CHECK(s.pct_all_correct == 100.0);

  CuratedQuestion none = all;
  none.records = {rec("1", 0.1), rec("2", 0.2), rec("3", 0.3)};
  CuratedQuestion some = all;
  some.records = {rec("1", 0.1), rec("2", 0.8), rec("3", 0.9)};
  s = dataset_stats(std::vector<CuratedQuestion>{none, some, all});
  CHECK(s.n_questions == 3);
  CHECK(s.pct_all_incorrect == doctest::Approx(100.0 / 3));
  CHECK(s.pct_mixed == doctest::Approx(100.0 / 3));
  CHECK(s.pct_all_correct == doctest::Approx(100.0 / 3));
  CHECK(s.n_pairwise == 9);

  CuratedQuestion partial = all;
  partial.expected = 5;
  CHECK(dataset_stats(std::vector<CuratedQuestion>{partial}).n_questions == 0);
}

TEST_CASE("curating one question labels every passage") {
  auto gw = test::mock_gateway(fig1_fixture());
  const auto cq = curate_example(gw, fig1_example(), CurationConfig{.passages_per_question = 2});
  REQUIRE(cq.fully_labeled());
  REQUIRE(cq.records.size() == 2);
  CHECK(cq.records[0].answer.text == "Linda Davis");
  CHECK(cq.records[0].a == 1);
  CHECK(cq.records[0].e == 0.97);
  CHECK(cq.records[0].upsilon == doctest::Approx(0.985));
  CHECK(cq.records[1].a == 0);
  CHECK(cq.records[1].upsilon == doctest::Approx(0.15));
  const auto pairs = build_pairwise(cq.records);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].z == 1);
}

TEST_CASE("hypothesis formats") {
  CurationConfig cfg;
  CHECK(entailment_hypothesis(cfg, "Q?", "ans") == "Q: Q? A: ans");
  cfg.entailment_premise = CurationConfig::EntailmentInput::passage_only;
  CHECK(entailment_hypothesis(cfg, "Q?", "ans") == "ans");
}

TEST_CASE("per-passage failures are collected") {
  auto fx = fig1_fixture();
  fx["judge"] = {{{"prompt_contains", "Prediction: Patti LaBelle\nCorrectness:"}, {"output", "unsure"}}};
  auto gw = test::mock_gateway(fx);
  const auto cq = curate_example(gw, fig1_example(), CurationConfig{.passages_per_question = 2});
  CHECK(cq.records.size() == 1);
  REQUIRE(cq.failures.size() == 1);
  CHECK(cq.failures[0].pid == "p2");
  CHECK(cq.failures[0].error.find("JudgeUnparseable") != std::string::npos);
  CHECK_FALSE(cq.fully_labeled());
  CHECK(build_pairwise(cq.records).empty());
}

TEST_CASE("a 40-question fixture yields 200 records and at most 400 pairs") {
  SyntheticOptions opts;
  opts.n_train = 40;
  opts.n_val = 1;
  opts.n_test = 0;
  const auto world = make_synthetic_world(opts);
  auto gw = test::mock_gateway(world.fixture, true);
  const auto curated = curate_dataset(gw, world.train, CurationConfig{});
  std::size_t records = 0;
  std::size_t pairs = 0;
  for (const auto& q : curated) {
    CHECK(q.fully_labeled());
    records += q.records.size();
    pairs += build_pairwise(q.records).size();
  }
  CHECK(records == 200);
  CHECK(pairs <= 400);
  CHECK(pairs > 0);

  // Serial and parallel curation agree.
  CurationConfig serial;
  serial.workers = 1;
  const auto again = curate_dataset(gw, world.train, serial);
  for (std::size_t i = 0; i < curated.size(); ++i) {
    CHECK(json(curated[i].records).dump() == json(again[i].records).dump());
  }
}

TEST_CASE("curation config validation and JSON") {
  CurationConfig cfg;
  cfg.passages_per_question = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.passages_per_question = 7;
  cfg.entailment_premise = CurationConfig::EntailmentInput::passage_only;
  const auto back = json(cfg).get<CurationConfig>();
  CHECK(back.passages_per_question == 7);
  CHECK(back.entailment_premise == CurationConfig::EntailmentInput::passage_only);
}

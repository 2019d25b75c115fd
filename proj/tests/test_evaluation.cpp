#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pu/evaluation.hpp"
#include "test_support.hpp"

using namespace pu;
using nlohmann::json;

namespace {

struct Fixture {
  std::vector<double> scores;
  std::vector<int> labels;
};

Fixture random_fixture(std::mt19937_64& rng, std::size_t n, bool ties) {
  Fixture f;
  for (std::size_t i = 0; i < n; ++i) {
    f.labels.push_back(i < 2 ? static_cast<int>(i) : static_cast<int>(rng() % 2));
    f.scores.push_back(ties ? static_cast<double>(rng() % 7) : test::uniform(rng, -3, 3) + f.labels.back());
  }
  return f;
}

EstimateRow row(const std::string& id, int correct, std::map<std::string, double> scores) {
  EstimateRow r;
  r.question_id = id;
  r.correct = correct;
  r.scores = std::move(scores);
  return r;
}

}  // namespace

TEST_CASE("AUROC anchors") {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(auroc(s, y) == 1.0);
  const std::vector<int> flipped{1, 1, 0, 0};
  CHECK(auroc(s, flipped) == 0.0);
  const std::vector<double> tied{0.5, 0.5, 0.5, 0.5};
  CHECK(auroc(tied, y) == 0.5);
  const std::vector<int> one_class{1, 1, 1, 1};
  try {
    (void)auroc(s, one_class);
    FAIL("expected SingleClass");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SingleClass);
  }
  const std::vector<int> bad{0, 2, 1, 1};
  CHECK_THROWS_AS((void)auroc(s, bad), Error);
  const std::vector<int> short_labels{0, 1};
  CHECK_THROWS_AS((void)auroc(s, short_labels), Error);
}

TEST_CASE("AUROC equals brute-force pair counting") {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 60; ++t) {
    const auto f = random_fixture(rng, 2 + rng() % 199, t % 2 == 0);
    CHECK(std::abs(auroc(f.scores, f.labels) - oracle::auroc_pairs(f.scores, f.labels)) <= 1e-12);
  }
}

TEST_CASE("AUROC is invariant under increasing transforms and complements under negation") {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 20; ++t) {
    const auto f = random_fixture(rng, 80, false);
    const double base = auroc(f.scores, f.labels);
    std::vector<double> ex, aff, cube, neg;
    for (double s : f.scores) {
      ex.push_back(std::exp(s));
      aff.push_back(3.0 * s - 7.0);
      cube.push_back(s * s * s);
      neg.push_back(-s);
    }
    CHECK(auroc(ex, f.labels) == doctest::Approx(base).epsilon(1e-12));
    CHECK(auroc(aff, f.labels) == doctest::Approx(base).epsilon(1e-12));
    CHECK(auroc(cube, f.labels) == doctest::Approx(base).epsilon(1e-12));
    CHECK(base + auroc(neg, f.labels) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("midranks average ties") {
  const std::vector<double> v{3.0, 1.0, 3.0, 2.0};
  CHECK(midranks(v) == std::vector<double>{3.5, 1.0, 3.5, 2.0});
}

TEST_CASE("DeLong on identical and rank-equivalent scores") {
  std::mt19937_64 rng(23);
  const auto f = random_fixture(rng, 100, false);
  auto r = delong_paired(f.scores, f.scores, f.labels);
  CHECK(r.p_two_sided == 1.0);
  CHECK(r.z == 0.0);
  std::vector<double> ex;
  for (double s : f.scores) ex.push_back(std::exp(s));
  r = delong_paired(f.scores, ex, f.labels);
  CHECK(r.auroc_a == r.auroc_b);
  CHECK(r.p_two_sided == 1.0);
}

TEST_CASE("DeLong is symmetric") {
  std::mt19937_64 rng(24);
  const auto f = random_fixture(rng, 100, false);
  std::vector<double> other;
  for (std::size_t i = 0; i < f.scores.size(); ++i) other.push_back(f.scores[i] + test::uniform(rng, -2, 2));
  const auto ab = delong_paired(f.scores, other, f.labels);
  const auto ba = delong_paired(other, f.scores, f.labels);
  CHECK(ab.z == doctest::Approx(-ba.z));
  CHECK(ab.p_two_sided == doctest::Approx(ba.p_two_sided));
  CHECK(ab.auroc_a == doctest::Approx(auroc(f.scores, f.labels)));
  CHECK(ab.p_two_sided > 0.0);
  CHECK(ab.p_two_sided < 1.0);
}

TEST_CASE("DeLong agrees with a paired bootstrap") {
  std::mt19937_64 rng(25);
  const auto f = random_fixture(rng, 100, false);
  std::vector<double> other;
  for (std::size_t i = 0; i < f.scores.size(); ++i) other.push_back(0.6 * f.scores[i] + test::uniform(rng, -2.5, 2.5));
  const auto r = delong_paired(f.scores, other, f.labels);
  CHECK(std::abs(r.p_two_sided - oracle::bootstrap_p(f.scores, other, f.labels, 4000, 1)) <= 0.05);
}

TEST_CASE("DeLong reports degenerate variance") {
  // Perfect separation for a, reversed for b: both components have zero spread.
  const std::vector<double> a{0, 0, 1, 1};
  const std::vector<double> b{1, 1, 0, 0};
  const std::vector<int> y{0, 0, 1, 1};
  try {
    (void)delong_paired(a, b, y);
    FAIL("expected DegenerateVariance");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateVariance);
  }
}

TEST_CASE("accuracy at rejection") {
  const std::vector<int> acc{1, 0, 1, 1, 0, 1, 1, 0, 1, 1};
  const std::vector<double> any{5, 3, 1, 2, 8, 4, 7, 6, 0, 9};
  CHECK(accuracy_at_rejection(any, acc, 1.0) == 0.7);

  std::vector<double> oracle_scores;
  for (int a : acc) oracle_scores.push_back(1.0 - a);
  CHECK(accuracy_at_rejection(oracle_scores, acc, 0.8) == 0.875);

  const std::vector<double> constant(10, 1.0);
  CHECK(accuracy_at_rejection(constant, acc, 0.5) == 0.6);  // rows 0..4

  try {
    (void)accuracy_at_rejection(constant, acc, 0.05);
    FAIL("expected EmptyKeep");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyKeep);
  }
  CHECK_THROWS_AS((void)accuracy_at_rejection(constant, acc, 0.0), Error);
  CHECK_THROWS_AS((void)accuracy_at_rejection(constant, acc, 1.5), Error);
}

TEST_CASE("AURAC") {
  const std::vector<int> ones(40, 1);
  std::vector<double> s(40);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<double>(i % 7);
  CHECK(aurac(s, ones) == 1.0);

  std::mt19937_64 rng(26);
  std::vector<int> acc(200);
  std::vector<double> oracle_scores, anti;
  double mean = 0.0;
  for (auto& a : acc) {
    a = rng() % 10 < 7 ? 1 : 0;
    mean += a;
    oracle_scores.push_back(1.0 - a);
    anti.push_back(a);
  }
  mean /= static_cast<double>(acc.size());
  CHECK(aurac(anti, acc) < mean);
  CHECK(aurac(oracle_scores, acc) > mean);
}

TEST_CASE("selective accuracy never drops when the kept set shrinks under oracle scores") {
  std::mt19937_64 rng(27);
  std::vector<int> acc(57);
  std::vector<double> s;
  for (auto& a : acc) {
    a = static_cast<int>(rng() % 2);
    s.push_back(1.0 - a + 0.01 * test::uniform(rng));
  }
  double prev = 2.0;
  for (int k = 1; k <= 20; ++k) {
    const double v = accuracy_at_rejection(s, acc, k / 20.0);
    CHECK(v <= prev);
    prev = v;
  }
}

TEST_CASE("reranking") {
  const std::vector<Passage> ps{{"a", "", 0.9, 1}, {"b", "", 0.5, 2}, {"c", "", 0.7, 3}};
  const std::vector<double> u{0.1, 0.9, 0.5};
  auto top = rerank_topk(ps, u, 2, RerankMode::utility);
  REQUIRE(top.size() == 2);
  CHECK(top[0].pid == "b");
  CHECK(top[1].pid == "c");

  top = rerank_topk(ps, {}, 3, RerankMode::retriever);
  CHECK(top[0].pid == "a");
  CHECK(top[1].pid == "c");
  CHECK(top[2].pid == "b");

  const std::vector<Passage> ordered{{"a", "", 0.9, 1}, {"b", "", 0.7, 2}, {"c", "", 0.5, 3}};
  top = rerank_topk(ordered, {}, 3, RerankMode::retriever);
  for (std::size_t i = 0; i < 3; ++i) CHECK(top[i].pid == ordered[i].pid);

  top = rerank_topk(ps, u, 1, RerankMode::ppl);
  CHECK(top[0].pid == "a");

  const std::vector<double> ties{0.5, 0.5, 0.5};
  top = rerank_topk(ps, ties, 3, RerankMode::utility);
  CHECK(top[0].pid == "a");
  CHECK(top[2].pid == "c");

  const std::vector<double> short_scores{0.1};
  try {
    (void)rerank_topk(ps, short_scores, 1, RerankMode::utility);
    FAIL("expected AlignmentMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::AlignmentMismatch);
  }
}

TEST_CASE("aggregation agreement") {
  std::vector<UtilityRecord> recs;
  std::vector<EstimateRow> rows;
  for (int q = 0; q < 10; ++q) {
    const std::string id = "q" + std::to_string(q);
    for (int p = 0; p < 3; ++p) {
      UtilityRecord r;
      r.question_id = id;
      r.pid = "p" + std::to_string(p);
      r.a = (q == 0 && p == 1) ? 1 : 0;
      r.e = (q == 0 && p == 1) ? 0.3 : 0.1;
      recs.push_back(r);
    }
    rows.push_back(row(id, 0, {}));
  }
  auto rep = aggregation_agreement(recs, rows);
  CHECK(rep.n == 10);
  CHECK(rep.raw_individual_not_full == doctest::Approx(0.10));
  CHECK(rep.raw_full_not_individual == 0.0);
  // The only correct passage has e < 0.5, so smoothing removes it.
  CHECK(rep.smoothed_individual_not_full == 0.0);

  rows[3].correct = 1;
  rep = aggregation_agreement(recs, rows);
  CHECK(rep.raw_full_not_individual == doctest::Approx(0.10));

  rows.push_back(row("extra", 1, {}));
  try {
    (void)aggregation_agreement(recs, rows);
    FAIL("expected MissingJoin");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingJoin);
  }
  rows.pop_back();
  rows.pop_back();
  CHECK_THROWS_AS((void)aggregation_agreement(recs, rows), Error);
}

TEST_CASE("metric report") {
  std::vector<EstimateRow> rows;
  for (int i = 0; i < 20; ++i) {
    const int c = i % 4 == 0 ? 0 : 1;
    std::map<std::string, double> s{{"pu", c ? -1.0 - 0.01 * i : 1.0 + 0.01 * i}, {"ppl", 1.0 + 0.1 * (i % 5)}};
    if (i != 7) s["se"] = 0.3 * (i % 3);
    rows.push_back(row("q" + std::to_string(i), c, s));
  }
  const auto rep = build_report(rows, "pu", "syn", "mock");
  CHECK(rep.n == 20);
  CHECK(rep.accuracy == 0.75);
  CHECK(rep.auroc.at("pu") == 1.0);
  CHECK(rep.n_scored.at("se") == 19);
  CHECK(rep.keep_fractions.size() == 20);
  CHECK(rep.selective_accuracy.at("pu").back() == 0.75);
  REQUIRE(rep.selective_accuracy.at("pu")[15].has_value());
  CHECK(*rep.selective_accuracy.at("pu")[15] == 15.0 / 16.0);
  CHECK(rep.delong.contains("ppl"));
  CHECK_FALSE(rep.delong.contains("pu"));
  CHECK(rep.delong.at("ppl").baseline == "pu");

  const json j = rep;
  CHECK(j.at("metadata").at("score_direction") == "higher = more uncertain");
  CHECK(j.at("auroc").at("pu") == 1.0);

  const auto csv = report_csv(rep);
  CHECK(csv.rfind("estimator,dataset,metric,value\n", 0) == 0);
  CHECK(csv.find("pu,syn,auroc,1\n") != std::string::npos);
  CHECK(csv.find("ppl,syn,delong_p_vs_pu,") != std::string::npos);
}

TEST_CASE("a single-class report leaves AUROC absent") {
  std::vector<EstimateRow> rows;
  for (int i = 0; i < 5; ++i) rows.push_back(row("q" + std::to_string(i), 1, {{"ppl", 1.0 * i}}));
  const auto rep = build_report(rows, "pu", "d", "m");
  CHECK_FALSE(rep.auroc.at("ppl").has_value());
  CHECK(rep.aurac.at("ppl") == 1.0);
  CHECK(json(rep).at("auroc").at("ppl").is_null());
}

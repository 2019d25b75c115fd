#include "pu/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "pu/digest.hpp"
#include "pu/estimators.hpp"

namespace pu {

using nlohmann::json;

namespace {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }
  bool chance(double p) { return uniform() < p; }

 private:
  std::mt19937_64 gen_;
};

std::vector<double> logprobs_for(const std::string& text, Rng& rng, double lo, double hi) {
  std::vector<double> lp(std::max<std::size_t>(1, word_count(text)));
  for (auto& x : lp) x = rng.uniform(lo, hi);
  return lp;
}

struct PassageTruth {
  int a = 0;
  double e = 0.0;
  std::string answer;
};

struct Builder {
  const SyntheticOptions& opts;
  Rng rng;
  CurationConfig curation;
  json generate = json::array();
  json entail = json::array();
  json next_token = json::array();
  json latents = json::array();
  std::size_t counter = 0;

  explicit Builder(const SyntheticOptions& o) : opts(o), rng(o.seed) { curation.entailment_premise = o.entailment; }

  static std::string gold_name(std::size_t n) { return fmt::format("Corvan {}", n); }
  static std::string wrong_name(std::size_t n, std::size_t k) { return fmt::format("Tessaly{} {}", k, n); }

  void script_generation(const Prompt& prompt, const std::string& mode, std::optional<std::int64_t> seed,
                         const std::string& text, const std::vector<double>& logprobs) {
    json entry = {{"prompt_sha256", sha256_hex(prompt.user)},
                  {"mode", mode},
                  {"text", text},
                  {"token_logprobs", logprobs}};
    if (seed) entry["seed"] = *seed;
    generate.push_back(std::move(entry));
  }

  std::vector<int> accuracy_pattern() {
    const std::size_t r = opts.passages;
    std::vector<int> a(r, 0);
    const double u = rng.uniform();
    if (u < 0.25) return a;
    if (u >= 0.75 || r < 2) {
      std::fill(a.begin(), a.end(), 1);
      return a;
    }
    const std::size_t ones = 1 + rng.index(r - 1);
    std::fill(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(ones), 1);
    for (std::size_t i = r; i > 1; --i) std::swap(a[i - 1], a[rng.index(i)]);
    return a;
  }

  QAExample question(const std::string& split, bool with_samples, std::vector<FewShotBlock>* bank) {
    const std::size_t n = ++counter;
    QAExample ex;
    ex.id = fmt::format("syn-{}-{:04d}", split, n);
    ex.question = fmt::format("Which name is filed under archive entry {} of the {} ledger?", n, split);
    ex.gold_answers = {gold_name(n)};
    ex.dataset_tag = opts.dataset_tag;

    const auto pattern = accuracy_pattern();
    std::vector<PassageTruth> truth;
    for (std::size_t k = 0; k < opts.passages; ++k) {
      PassageTruth t;
      t.a = pattern[k];
      t.e = rng.chance(0.6) ? (t.a == 1 ? 0.98 : 0.02) : 0.5;
      t.answer = t.a == 1 ? gold_name(n) : wrong_name(n, k + 1);
      truth.push_back(t);

      Passage p;
      p.pid = fmt::format("p{}", k + 1);
      p.text = fmt::format("Archive entry {} record {}: the ledger lists {} among the filed names.", n, k + 1,
                           t.a == 1 ? gold_name(n) : wrong_name(n, k + 1));
      p.retriever_score = rng.uniform(0.0, 1.0) + 0.3 * t.a;
      p.rank = static_cast<int>(k + 1);
      ex.passages.push_back(p);
    }
    // Retrieval order follows the retriever score.
    std::stable_sort(ex.passages.begin(), ex.passages.end(),
                     [](const Passage& x, const Passage& y) { return x.retriever_score > y.retriever_score; });
    std::vector<PassageTruth> ordered;
    for (std::size_t k = 0; k < ex.passages.size(); ++k) {
      ex.passages[k].rank = static_cast<int>(k + 1);
      ordered.push_back(truth[std::stoul(ex.passages[k].pid.substr(1)) - 1]);
    }

    bool any_correct = false;
    for (std::size_t k = 0; k < ex.passages.size(); ++k) {
      const auto& p = ex.passages[k];
      const auto& t = ordered[k];
      any_correct = any_correct || t.a == 1;
      const auto lp = t.a == 1 ? logprobs_for(t.answer, rng, -0.3, -0.02) : logprobs_for(t.answer, rng, -1.8, -0.4);
      script_generation(qa_prompt(ex.question, std::span<const Passage>(&p, 1)), "greedy", std::nullopt, t.answer,
                        lp);
      entail.push_back({{"premise", p.text},
                        {"hypothesis", entailment_hypothesis(curation, ex.question, t.answer)},
                        {"prob", t.e}});
      latents.push_back({{"question", ex.question}, {"passage", p.text}, {"latent", gold_utility(t.a, t.e)}});
    }

    const Prompt full = qa_prompt(ex.question, ex.passages);
    const std::string most_likely = any_correct ? gold_name(n) : wrong_name(n, 0);
    const auto greedy_lp =
        any_correct ? logprobs_for(most_likely, rng, -1.0, -0.02) : logprobs_for(most_likely, rng, -1.6, -0.2);
    script_generation(full, "greedy", std::nullopt, most_likely, greedy_lp);

    std::vector<std::string> sample_texts;
    if (with_samples) {
      for (int k = 1; k <= opts.n_samples; ++k) {
        const bool gold = rng.chance(any_correct ? 0.7 : 0.3);
        const std::string text = gold ? gold_name(n) : wrong_name(n, 1 + rng.index(opts.passages));
        const auto lp = gold ? logprobs_for(text, rng, -1.0, -0.05) : logprobs_for(text, rng, -1.8, -0.2);
        script_generation(full, "multinomial", opts.sample_seed + k, text, lp);
        sample_texts.push_back(text);
      }
    }

    if (bank && bank->size() < kDefaultFewShotCount) {
      FewShotBlock block;
      block.question = ex.question;
      block.most_likely = most_likely;
      block.samples = {most_likely, any_correct ? wrong_name(n, 1) : gold_name(n)};
      block.is_correct = any_correct;
      bank->push_back(block);
    } else if (with_samples && bank) {
      const Prompt pt = ptrue_prompt(*bank, ex.question, ex.passages, most_likely, sample_texts);
      const double prob = any_correct ? rng.uniform(0.55, 0.95) : rng.uniform(0.15, 0.65);
      next_token.push_back({{"prompt_sha256", sha256_hex(pt.user)}, {"token", "A"}, {"prob", prob}});
    }
    return ex;
  }
};

}  // namespace

SyntheticWorld make_synthetic_world(const SyntheticOptions& opts) {
  if (opts.passages < 2) throw Error(ErrorKind::InvalidInput, "synthetic world needs at least two passages");
  if (opts.n_val == 0 || opts.n_train == 0) throw Error(ErrorKind::InvalidInput, "train and val splits must be non-empty");
  Builder b(opts);
  SyntheticWorld w;
  // The bank fills from the first train questions, before any test prompt is built.
  for (std::size_t i = 0; i < opts.n_train; ++i) w.train.push_back(b.question("train", false, &w.few_shot));
  for (std::size_t i = 0; i < opts.n_val; ++i) w.val.push_back(b.question("val", false, nullptr));
  for (std::size_t i = 0; i < opts.n_test; ++i) w.test.push_back(b.question("test", true, &w.few_shot));

  w.fixture = json{{"generate", b.generate},
                   {"entail", b.entail},
                   {"next_token", b.next_token},
                   {"embedding",
                    {{"dim", opts.embedding_dim},
                     {"noise_sigma", opts.noise_sigma},
                     {"direction_seed", opts.seed + 7},
                     {"latents", b.latents}}}};
  return w;
}

}  // namespace pu

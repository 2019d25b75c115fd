#include "pu/mock_backends.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "pu/digest.hpp"
#include "pu/json_io.hpp"

namespace pu::mock {

using nlohmann::json;

namespace {

// Engine output is fully specified by the standard; the conversions below
// avoid the implementation-defined std:: distributions.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double standard_normal(std::mt19937_64& rng) {
  double u1 = unit_uniform(rng);
  while (u1 <= 0.0) u1 = unit_uniform(rng);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string gen_key(const std::string& sha, const std::string& mode, const std::string& seed) {
  return sha + "|" + mode + "|" + seed;
}

std::string mode_name(const DecodeConfig& cfg) {
  return cfg.mode == DecodeConfig::Mode::greedy ? "greedy" : "multinomial";
}

const json& section(const Fixture& f, const char* name) {
  static const json kEmpty = json::array();
  auto it = f.doc.find(name);
  return it == f.doc.end() ? kEmpty : *it;
}

constexpr std::array<const char*, 24> kVocabulary{
    "river", "north", "paris", "1984",  "green",  "queen", "delta",  "stone",
    "james", "ocean", "tower", "john",  "silver", "mary",  "winter", "canyon",
    "light", "eagle", "rome",  "seven", "harbor", "maple", "signal", "orbit"};

}  // namespace

// --- Fixture ---------------------------------------------------------------

Fixture Fixture::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

Fixture Fixture::from_json(json doc) {
  Fixture f;
  if (!doc.is_object()) throw Error(ErrorKind::InvalidInput, "mock fixture must be a JSON object");
  f.digest = sha256_hex(doc.dump());
  f.doc = std::move(doc);
  return f;
}

void ConcurrencyProbe::enter() {
  calls.fetch_add(1);
  const int now = in_flight.fetch_add(1) + 1;
  int prev = max_in_flight.load();
  while (now > prev && !max_in_flight.compare_exchange_weak(prev, now)) {
  }
}

void ConcurrencyProbe::leave() { in_flight.fetch_sub(1); }

MockBase::MockBase(std::shared_ptr<const Fixture> fixture, std::string role, MockKnobs knobs)
    : fixture_(std::move(fixture)), role_(std::move(role)), knobs_(knobs), failures_left_(knobs.transient_failures) {
  if (!fixture_) fixture_ = std::make_shared<Fixture>(Fixture::from_json(json::object()));
}

MockBase::CallScope::CallScope(MockBase& base) : base_(base) {
  base_.probe_.enter();
  if (base_.knobs_.latency_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(base_.knobs_.latency_ms));
  if (base_.failures_left_.fetch_sub(1) > 0) {
    base_.probe_.leave();
    throw Error(ErrorKind::Timeout, "mock " + base_.role_ + " injected timeout");
  }
}

MockBase::CallScope::~CallScope() { base_.probe_.leave(); }

std::string MockBase::mock_identity() const { return "mock:" + role_ + ":" + fixture_->digest; }

std::string normalize_answer(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    cleaned += static_cast<char>(std::tolower(c));
  }
  std::string out;
  for (const auto& w : split_words(cleaned)) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::string pair_key(const std::string& a, const std::string& b) { return digest_fields({a, b}); }

// --- QA --------------------------------------------------------------------

MockQa::MockQa(std::shared_ptr<const Fixture> fixture, MockKnobs knobs)
    : MockBase(std::move(fixture), "qa", knobs) {
  for (const auto& entry : section(*fixture_, "generate")) {
    const auto mode = entry.value("mode", std::string("greedy"));
    const auto seed = entry.contains("seed") ? std::to_string(entry.at("seed").get<std::int64_t>()) : "*";
    if (entry.contains("prompt_sha256")) {
      generate_by_sha_[gen_key(entry.at("prompt_sha256").get<std::string>(), mode, seed)] = &entry;
    } else if (entry.contains("prompt_contains")) {
      generate_by_substring_.push_back(&entry);
    }
  }
}

GeneratedAnswer MockQa::generate(const Prompt& prompt, const DecodeConfig& cfg) {
  CallScope scope(*this);
  const auto sha = sha256_hex(prompt.user);
  const auto mode = mode_name(cfg);
  const auto seed = std::to_string(cfg.seed);

  const json* hit = nullptr;
  if (cfg.mode == DecodeConfig::Mode::multinomial) {
    if (auto it = generate_by_sha_.find(gen_key(sha, mode, seed)); it != generate_by_sha_.end()) hit = it->second;
  }
  if (!hit) {
    if (auto it = generate_by_sha_.find(gen_key(sha, mode, "*")); it != generate_by_sha_.end()) hit = it->second;
  }
  if (!hit) {
    for (const json* entry : generate_by_substring_) {
      if (entry->value("mode", std::string("greedy")) != mode) continue;
      if (entry->contains("seed") && cfg.mode == DecodeConfig::Mode::multinomial &&
          entry->at("seed").get<std::int64_t>() != cfg.seed) {
        continue;
      }
      if (prompt.user.find(entry->at("prompt_contains").get<std::string>()) != std::string::npos) {
        hit = entry;
        break;
      }
    }
  }

  GeneratedAnswer ans;
  if (hit) {
    ans.text = hit->at("text").get<std::string>();
    ans.token_logprobs = hit->at("token_logprobs").get<std::vector<double>>();
    return ans;
  }

  const std::string salt = cfg.mode == DecodeConfig::Mode::greedy ? "greedy" : "sample:" + seed;
  std::mt19937_64 rng(hash64(sha + "|" + salt));
  const auto n_words = 1 + static_cast<std::size_t>(rng() % 3);
  for (std::size_t i = 0; i < n_words; ++i) {
    if (i) ans.text += ' ';
    ans.text += kVocabulary[rng() % kVocabulary.size()];
    ans.token_logprobs.push_back(-0.05 - 2.45 * unit_uniform(rng));
  }
  return ans;
}

std::vector<double> MockQa::score_sequence(const Prompt& prompt, const std::string& forced_text) {
  CallScope scope(*this);
  if (knobs_.score_sequence_unsupported) {
    throw Error(ErrorKind::BackendUnsupported, "mock qa cannot score forced continuations");
  }
  const auto sha = sha256_hex(prompt.user);
  for (const auto& entry : section(*fixture_, "score_sequence")) {
    if (entry.at("forced").get<std::string>() != forced_text) continue;
    if (entry.contains("prompt_sha256") && entry.at("prompt_sha256").get<std::string>() != sha) continue;
    return entry.at("token_logprobs").get<std::vector<double>>();
  }
  const auto words = split_words(forced_text);
  if (words.empty()) throw Error(ErrorKind::InvalidInput, "forced text has no tokens");
  std::vector<double> out;
  out.reserve(words.size());
  std::mt19937_64 rng(hash64(sha + "|score|" + forced_text));
  for (std::size_t i = 0; i < words.size(); ++i) out.push_back(-0.1 - 2.9 * unit_uniform(rng));
  return out;
}

TokenProbability MockQa::next_token_prob(const Prompt& prompt, const std::string& token) {
  CallScope scope(*this);
  const auto sha = sha256_hex(prompt.user);
  for (const auto& entry : section(*fixture_, "next_token")) {
    if (entry.at("token").get<std::string>() != token) continue;
    const bool match = entry.contains("prompt_sha256")
                           ? entry.at("prompt_sha256").get<std::string>() == sha
                           : prompt.user.find(entry.value("prompt_contains", std::string{})) != std::string::npos;
    if (match) return TokenProbability{entry.at("prob").get<double>(), false};
  }
  // Each token gets at most half the mass, so any two distinct tokens sum to <= 1.
  std::mt19937_64 rng(hash64(sha + "|next|" + token));
  return TokenProbability{0.5 * unit_uniform(rng), false};
}

// --- NLI -------------------------------------------------------------------

MockNli::MockNli(std::shared_ptr<const Fixture> fixture, MockKnobs knobs)
    : MockBase(std::move(fixture), "nli", knobs) {
  for (const auto& entry : section(*fixture_, "entail")) {
    scripted_[pair_key(entry.at("premise").get<std::string>(), entry.at("hypothesis").get<std::string>())] =
        entry.at("prob").get<double>();
  }
}

double MockNli::rule_prob(const std::string& premise, const std::string& hypothesis) {
  const auto p = lower(premise);
  const auto h = lower(hypothesis);
  if (!h.empty() && p.find(h) != std::string::npos) return 0.99;
  const auto hyp_words = split_words(normalize_answer(hypothesis));
  if (hyp_words.empty()) return 0.01;
  const auto prem_words_v = split_words(normalize_answer(premise));
  const std::set<std::string> prem_words(prem_words_v.begin(), prem_words_v.end());
  std::size_t shared = 0;
  for (const auto& w : hyp_words) shared += prem_words.count(w);
  return 0.01 + 0.48 * static_cast<double>(shared) / static_cast<double>(hyp_words.size());
}

std::vector<double> MockNli::entail_probs(std::span<const TextPair> pairs) {
  CallScope scope(*this);
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) {
    if (pair.premise.empty() || pair.hypothesis.empty()) {
      throw Error(ErrorKind::InvalidInput, "entailment needs non-empty premise and hypothesis");
    }
    auto it = scripted_.find(pair_key(pair.premise, pair.hypothesis));
    out.push_back(it != scripted_.end() ? it->second : rule_prob(pair.premise, pair.hypothesis));
  }
  return out;
}

// --- Judge -----------------------------------------------------------------

MockJudge::MockJudge(std::shared_ptr<const Fixture> fixture, MockKnobs knobs)
    : MockBase(std::move(fixture), "judge", knobs) {}

std::string MockJudge::complete(const Prompt& prompt) {
  CallScope scope(*this);
  for (const auto& entry : section(*fixture_, "judge")) {
    if (prompt.user.find(entry.at("prompt_contains").get<std::string>()) != std::string::npos) {
      return entry.at("output").get<std::string>();
    }
  }
  const auto gold_pos = prompt.user.rfind("\nGround truth: ");
  const auto pred_pos = prompt.user.rfind("\nPrediction: ");
  if (gold_pos == std::string::npos || pred_pos == std::string::npos || pred_pos < gold_pos) return "unsure";
  const auto gold_begin = gold_pos + std::string_view("\nGround truth: ").size();
  const auto gold_text = prompt.user.substr(gold_begin, pred_pos - gold_begin);
  const auto pred_begin = pred_pos + std::string_view("\nPrediction: ").size();
  const auto pred_end = prompt.user.find('\n', pred_begin);
  const auto prediction = normalize_answer(prompt.user.substr(pred_begin, pred_end - pred_begin));
  std::vector<std::string> golds;
  try {
    golds = json::parse(gold_text).get<std::vector<std::string>>();
  } catch (const json::exception&) {
    return "unsure";
  }
  for (const auto& g : golds) {
    if (!prediction.empty() && normalize_answer(g) == prediction) return "correct";
  }
  return "incorrect";
}

// --- Embedding -------------------------------------------------------------

MockEmbed::MockEmbed(std::shared_ptr<const Fixture> fixture, MockKnobs knobs)
    : MockBase(std::move(fixture), "embed", knobs) {
  const json cfg = fixture_->doc.value("embedding", json::object());
  dim_ = cfg.value("dim", std::size_t{64});
  noise_sigma_ = cfg.value("noise_sigma", 0.05);
  std::mt19937_64 rng(cfg.value("direction_seed", std::uint64_t{7}));
  direction_.resize(dim_);
  double norm = 0.0;
  for (auto& x : direction_) {
    x = standard_normal(rng);
    norm += x * x;
  }
  for (auto& x : direction_) x /= std::sqrt(norm);
  for (const auto& entry : cfg.value("latents", json::array())) {
    latents_[pair_key(entry.at("question").get<std::string>(), entry.at("passage").get<std::string>())] =
        entry.at("latent").get<double>();
  }
}

std::vector<double> MockEmbed::embed_pair(const std::string& question, const std::string& passage) {
  CallScope scope(*this);
  const auto key = pair_key(question, passage);
  std::mt19937_64 rng(hash64("embed|" + key));
  std::vector<double> v(dim_);
  if (auto it = latents_.find(key); it != latents_.end()) {
    for (std::size_t k = 0; k < dim_; ++k) v[k] = it->second * direction_[k] + noise_sigma_ * standard_normal(rng);
    return v;
  }
  double norm = 0.0;
  for (auto& x : v) {
    x = standard_normal(rng);
    norm += x * x;
  }
  for (auto& x : v) x /= std::sqrt(norm);
  return v;
}

GatewayServices make_services(std::shared_ptr<const Fixture> fixture, MockKnobs knobs) {
  GatewayServices s;
  s.qa = std::make_shared<MockQa>(fixture, knobs);
  s.nli = std::make_shared<MockNli>(fixture, knobs);
  s.judge = std::make_shared<MockJudge>(fixture, knobs);
  s.embed = std::make_shared<MockEmbed>(fixture, knobs);
  return s;
}

}  // namespace pu::mock

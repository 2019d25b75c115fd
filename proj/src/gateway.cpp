#include "pu/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <thread>

#include <spdlog/spdlog.h>

#include "pu/digest.hpp"
#include "pu/json_io.hpp"

namespace pu {

using nlohmann::json;

// --- DecodeConfig / BackendEndpoint ---------------------------------------

DecodeConfig DecodeConfig::greedy(int max_new_tokens) {
  DecodeConfig c;
  c.mode = Mode::greedy;
  c.temperature = 0.0;
  c.top_p = 1.0;
  c.top_k = 0;
  c.max_new_tokens = max_new_tokens;
  return c;
}

DecodeConfig DecodeConfig::multinomial(std::int64_t seed, int max_new_tokens) {
  DecodeConfig c;
  c.mode = Mode::multinomial;
  c.temperature = 1.0;
  c.top_p = 0.9;
  c.top_k = 50;
  c.max_new_tokens = max_new_tokens;
  c.seed = seed;
  return c;
}

json DecodeConfig::cache_repr() const {
  if (mode == Mode::greedy) return json{{"mode", "greedy"}, {"max_new_tokens", max_new_tokens}};
  return json{{"mode", "multinomial"}, {"temperature", temperature}, {"top_p", top_p},
              {"top_k", top_k},        {"max_new_tokens", max_new_tokens}, {"seed", seed}};
}

void to_json(json& j, const DecodeConfig& v) {
  j = v.cache_repr();
  if (v.mode == DecodeConfig::Mode::greedy) j["seed"] = v.seed;
}

void from_json(const json& j, DecodeConfig& v) {
  const auto mode = j.value("mode", std::string("greedy"));
  if (mode == "greedy") {
    v = DecodeConfig::greedy(j.value("max_new_tokens", 50));
  } else if (mode == "multinomial") {
    v = DecodeConfig::multinomial(j.value("seed", std::int64_t{0}), j.value("max_new_tokens", 50));
    v.temperature = j.value("temperature", 1.0);
    v.top_p = j.value("top_p", 0.9);
    v.top_k = j.value("top_k", 50);
  } else {
    throw Error(ErrorKind::InvalidInput, "unknown decode mode " + mode);
  }
  v.seed = j.value("seed", std::int64_t{0});
  if (v.max_new_tokens < 1) throw Error(ErrorKind::InvalidInput, "max_new_tokens must be positive");
  if (v.mode == DecodeConfig::Mode::multinomial && (v.top_p <= 0.0 || v.top_p > 1.0 || v.top_k < 1)) {
    throw Error(ErrorKind::InvalidInput, "top_p must be in (0,1] and top_k positive");
  }
}

void BackendEndpoint::validate() const {
  if (kind != "http" && kind != "mock") throw Error(ErrorKind::InvalidInput, "endpoint kind must be http or mock");
  if (max_parallel < 1) throw Error(ErrorKind::InvalidInput, "max_parallel must be >= 1");
  if (!(timeout_s > 0.0)) throw Error(ErrorKind::InvalidInput, "timeout must be > 0");
  if (retry_limit < 1) throw Error(ErrorKind::InvalidInput, "retry_limit must be >= 1");
  if (kind == "http" && base_url.empty()) throw Error(ErrorKind::InvalidInput, "http endpoint needs base_url");
}

void to_json(json& j, const BackendEndpoint& v) {
  j = json{{"kind", v.kind},
           {"base_url", v.base_url},
           {"model_name", v.model_name},
           {"mock_fixture", v.mock_fixture},
           {"timeout_s", v.timeout_s},
           {"max_parallel", v.max_parallel},
           {"retry_limit", v.retry_limit},
           {"backoff_ms", v.backoff_ms}};
  // api_key is never serialized.
}

void from_json(const json& j, BackendEndpoint& v) {
  v.kind = j.value("kind", std::string("mock"));
  v.base_url = j.value("base_url", std::string{});
  v.model_name = j.value("model_name", std::string{});
  v.api_key = j.value("api_key", std::string{});
  v.mock_fixture = j.value("mock_fixture", std::string{});
  v.timeout_s = j.value("timeout_s", 60.0);
  v.max_parallel = j.value("max_parallel", 4);
  v.retry_limit = j.value("retry_limit", 3);
  v.backoff_ms = j.value("backoff_ms", 250);
  v.validate();
}

// --- CallCache -------------------------------------------------------------

CallCache::CallCache(const std::filesystem::path& file) : file_(file) {
  if (std::filesystem::exists(file)) {
    for (auto& line : read_jsonl_values(file)) {
      entries_[line.at("key").get<std::string>()] = std::move(line.at("value"));
    }
  } else if (file.has_parent_path()) {
    std::filesystem::create_directories(file.parent_path());
  }
  out_.open(file, std::ios::app | std::ios::binary);
  if (!out_) throw Error(ErrorKind::Io, "cannot open cache " + file.string());
}

std::optional<json> CallCache::get(const std::string& key) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return std::optional<json>(std::in_place, it->second);
}

void CallCache::put(const std::string& key, const std::string& op, const json& value) {
  std::unique_lock lock(mu_);
  entries_[key] = value;
  if (file_) {
    out_ << dump_line(json{{"key", key}, {"op", op}, {"value", value}}) << '\n';
    out_.flush();
  }
}

std::size_t CallCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

// --- CallTrace -------------------------------------------------------------

std::string_view to_string(Role role) {
  switch (role) {
    case Role::qa: return "qa";
    case Role::nli: return "nli";
    case Role::judge: return "judge";
    case Role::embed: return "embed";
  }
  return "?";
}

CallTrace& CallTrace::operator+=(const CallTrace& o) {
  generations += o.generations;
  sequence_scores += o.sequence_scores;
  evaluations += o.evaluations;
  judgments += o.judgments;
  scorer_passes += o.scorer_passes;
  return *this;
}

void to_json(json& j, const CallTrace& v) {
  j = json{{"G", v.generations}, {"S", v.sequence_scores}, {"E", v.evaluations},
           {"J", v.judgments},   {"F", v.scorer_passes}};
}

void from_json(const json& j, CallTrace& v) {
  v.generations = j.value("G", 0L);
  v.sequence_scores = j.value("S", 0L);
  v.evaluations = j.value("E", 0L);
  v.judgments = j.value("J", 0L);
  v.scorer_passes = j.value("F", 0L);
}

// --- Gateway ---------------------------------------------------------------

Gateway::Gateway(GatewayServices services, GatewayOptions options, std::shared_ptr<CallCache> cache)
    : services_(std::move(services)), options_(std::move(options)), cache_(std::move(cache)) {
  if (!cache_) cache_ = std::make_shared<CallCache>();
  for (std::size_t r = 0; r < kRoleCount; ++r) {
    const int permits = std::clamp(options_.endpoints[r].max_parallel, 1, 1024);
    slots_[r].gate = std::make_unique<std::counting_semaphore<1024>>(permits);
  }
}

bool Gateway::has(Role role) const {
  switch (role) {
    case Role::qa: return services_.qa != nullptr;
    case Role::nli: return services_.nli != nullptr;
    case Role::judge: return services_.judge != nullptr;
    case Role::embed: return services_.embed != nullptr;
  }
  return false;
}

namespace {

template <typename T>
T& require(const std::shared_ptr<T>& p, Role role) {
  if (!p) throw Error(ErrorKind::BackendUnsupported, "no backend configured for role " + std::string(to_string(role)));
  return *p;
}

struct Permit {
  std::counting_semaphore<1024>& sem;
  explicit Permit(std::counting_semaphore<1024>& s) : sem(s) { sem.acquire(); }
  ~Permit() { sem.release(); }
  Permit(const Permit&) = delete;
  Permit& operator=(const Permit&) = delete;
};

}  // namespace

template <typename Fn>
auto Gateway::with_retries(Role role, Fn&& call) {
  const auto& ep = options_.endpoints[static_cast<std::size_t>(role)];
  auto& slot = slots_[static_cast<std::size_t>(role)];
  for (int attempt = 1;; ++attempt) {
    try {
      Permit permit(*slot.gate);
      slot.network_calls.fetch_add(1);
      return call();
    } catch (const Error& e) {
      if (!is_transient(e.kind()) || attempt >= ep.retry_limit) throw;
      const auto delay = std::chrono::milliseconds(static_cast<long>(ep.backoff_ms) << (attempt - 1));
      spdlog::warn("{} call failed ({}), retry {}/{} in {} ms", to_string(role), e.what(), attempt,
                   ep.retry_limit - 1, delay.count());
      std::this_thread::sleep_for(delay);
    }
  }
}

template <typename Fn>
json Gateway::cached_call(Role role, const Service& service, const std::string& key, const std::string& op,
                          Fn&& call) {
  auto& slot = slots_[static_cast<std::size_t>(role)];
  if (options_.cache_reads) {
    if (auto hit = cache_->get(key)) {
      slot.cache_hits.fetch_add(1);
      return *hit;
    }
  }
  if (options_.offline && service.is_network()) {
    throw Error(ErrorKind::OfflineViolation, op + " not in cache and --offline forbids network calls");
  }
  json value = with_retries(role, std::forward<Fn>(call));
  cache_->put(key, op, value);
  return value;
}

GeneratedAnswer Gateway::generate(const Prompt& prompt, const DecodeConfig& cfg, CallTrace* trace) {
  auto& svc = require(services_.qa, Role::qa);
  if (trace) ++trace->generations;
  const auto key = digest_fields({svc.identity(), "generate", prompt.user, cfg.cache_repr().dump()});
  json value = cached_call(Role::qa, svc, key, "generate", [&] {
    GeneratedAnswer ans = svc.generate(prompt, cfg);
    ans.decode_kind = cfg.mode == DecodeConfig::Mode::greedy ? DecodeKind::greedy : DecodeKind::sampled;
    if (cfg.mode == DecodeConfig::Mode::multinomial) ans.seed = cfg.seed;
    validate(ans);
    return json(ans);
  });
  return value.get<GeneratedAnswer>();
}

std::vector<double> Gateway::score_sequence(const Prompt& prompt, const std::string& forced_text,
                                            CallTrace* trace) {
  auto& svc = require(services_.qa, Role::qa);
  if (trace) ++trace->sequence_scores;
  const auto key = digest_fields({svc.identity(), "score_sequence", prompt.user, forced_text});
  json value = cached_call(Role::qa, svc, key, "score_sequence",
                           [&] { return json(svc.score_sequence(prompt, forced_text)); });
  return value.get<std::vector<double>>();
}

double Gateway::next_token_prob(const Prompt& prompt, const std::string& token, CallTrace* trace) {
  auto& svc = require(services_.qa, Role::qa);
  if (trace) ++trace->evaluations;
  const auto key = digest_fields({svc.identity(), "next_token_prob", prompt.user, token});
  json value = cached_call(Role::qa, svc, key, "next_token_prob", [&] {
    const auto tp = svc.next_token_prob(prompt, token);
    if (!(tp.prob >= 0.0 && tp.prob <= 1.0)) {
      throw Error(ErrorKind::MalformedResponse, "token probability outside [0,1]");
    }
    if (tp.approximate) spdlog::warn("next_token_prob for '{}' is approximate (multi-token target)", token);
    return json{{"prob", tp.prob}, {"approximate", tp.approximate}};
  });
  return value.at("prob").get<double>();
}

double Gateway::entail_prob(const std::string& premise, const std::string& hypothesis, CallTrace* trace) {
  auto& svc = require(services_.nli, Role::nli);
  if (trace) ++trace->evaluations;
  const auto key = digest_fields({svc.identity(), "entail", premise, hypothesis});
  json value = cached_call(Role::nli, svc, key, "entail", [&] {
    const TextPair pair{premise, hypothesis};
    const auto probs = svc.entail_probs(std::span<const TextPair>(&pair, 1));
    if (probs.size() != 1 || !(probs[0] >= 0.0 && probs[0] <= 1.0)) {
      throw Error(ErrorKind::MalformedResponse, "entailment service returned an invalid probability");
    }
    return json(probs[0]);
  });
  return value.get<double>();
}

std::pair<double, double> Gateway::entail_bidirectional(const std::string& a, const std::string& b,
                                                        CallTrace* trace) {
  auto& svc = require(services_.nli, Role::nli);
  if (trace) ++trace->evaluations;
  const auto key = digest_fields({svc.identity(), "entail_bidirectional", a, b});
  json value = cached_call(Role::nli, svc, key, "entail_bidirectional", [&] {
    const std::array<TextPair, 2> pairs{TextPair{a, b}, TextPair{b, a}};
    const auto probs = svc.entail_probs(pairs);
    if (probs.size() != 2) throw Error(ErrorKind::MalformedResponse, "expected two entailment probabilities");
    for (double p : probs) {
      if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::MalformedResponse, "entailment probability outside [0,1]");
    }
    return json(probs);
  });
  const auto probs = value.get<std::vector<double>>();
  return {probs.at(0), probs.at(1)};
}

std::optional<int> parse_judgment(const std::string& output) {
  std::size_t i = 0;
  while (i < output.size() && !std::isalpha(static_cast<unsigned char>(output[i]))) ++i;
  std::string word;
  while (i < output.size() && std::isalpha(static_cast<unsigned char>(output[i]))) {
    word += static_cast<char>(std::tolower(static_cast<unsigned char>(output[i])));
    ++i;
  }
  if (word == "correct") return 1;
  if (word == "incorrect") return 0;
  return std::nullopt;
}

int Gateway::judge_accuracy(const std::string& question, std::span<const std::string> gold_answers,
                            const std::string& prediction, CallTrace* trace) {
  if (gold_answers.empty()) {
    throw Error(ErrorKind::InvalidInput, "judge_accuracy requires gold answers");
  }
  auto& svc = require(services_.judge, Role::judge);
  if (trace) ++trace->judgments;
  const Prompt prompt = judge_prompt(question, gold_answers, prediction);
  const auto key = digest_fields({svc.identity(), "judge", prompt.user});
  auto& slot = slots_[static_cast<std::size_t>(Role::judge)];
  if (options_.cache_reads) {
    if (auto hit = cache_->get(key)) {
      slot.cache_hits.fetch_add(1);
      return hit->get<int>();
    }
  }
  if (options_.offline && svc.is_network()) {
    throw Error(ErrorKind::OfflineViolation, "judge not in cache and --offline forbids network calls");
  }
  // One retry on unparseable output, then the record is invalid.
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::string output = with_retries(Role::judge, [&] { return svc.complete(prompt); });
    if (auto label = parse_judgment(output)) {
      cache_->put(key, "judge", json(*label));
      return *label;
    }
    spdlog::warn("judge output unparseable: '{}'", output.substr(0, 40));
  }
  throw Error(ErrorKind::JudgeUnparseable, "judge output neither 'correct' nor 'incorrect'");
}

std::vector<double> Gateway::embed_pair(const std::string& question, const std::string& passage,
                                        CallTrace* trace) {
  auto& svc = require(services_.embed, Role::embed);
  if (trace) ++trace->scorer_passes;
  if (question.empty() || passage.empty()) throw Error(ErrorKind::InvalidInput, "embed_pair needs non-empty inputs");
  const auto key = digest_fields({svc.identity(), "embed_pair", question, passage});
  json value = cached_call(Role::embed, svc, key, "embed_pair", [&] {
    auto v = svc.embed_pair(question, passage);
    if (v.empty()) throw Error(ErrorKind::MalformedResponse, "empty embedding");
    return json(v);
  });
  auto v = value.get<std::vector<double>>();
  std::size_t expected = 0;
  if (!embed_dim_.compare_exchange_strong(expected, v.size()) && expected != v.size()) {
    throw Error(ErrorKind::DimensionMismatch, "embedding dimension changed from " + std::to_string(expected) +
                                                  " to " + std::to_string(v.size()));
  }
  return v;
}

RoleCounts Gateway::counts(Role role) const {
  const auto& s = slots_[static_cast<std::size_t>(role)];
  return RoleCounts{s.network_calls.load(), s.cache_hits.load()};
}

json Gateway::counts_json() const {
  json j = json::object();
  for (std::size_t r = 0; r < kRoleCount; ++r) {
    const auto c = counts(static_cast<Role>(r));
    j[std::string(to_string(static_cast<Role>(r)))] = json{{"network_calls", c.network_calls},
                                                           {"cache_hits", c.cache_hits}};
  }
  return j;
}

void Gateway::reset_counts() {
  for (auto& s : slots_) {
    s.network_calls.store(0);
    s.cache_hits.store(0);
  }
}

// --- accuracy labelling ------------------------------------------------------

const std::vector<std::string>& default_refusal_phrases() {
  static const std::vector<std::string> phrases{
      "i don't know", "i do not know", "unanswerable", "cannot be answered", "no information",
      "not enough information", "does not exist", "doesn't exist", "i cannot answer", "unknown"};
  return phrases;
}

int label_accuracy(Gateway& gw, const QAExample& ex, const std::string& prediction,
                   std::span<const std::string> refusal_phrases, CallTrace* trace) {
  if (!ex.is_unanswerable()) return gw.judge_accuracy(ex.question, ex.gold_answers, prediction, trace);
  std::string lowered = prediction;
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const auto& phrase : refusal_phrases) {
    std::string p = phrase;
    std::transform(p.begin(), p.end(), p.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (!p.empty() && lowered.find(p) != std::string::npos) return 1;
  }
  return 0;
}

}  // namespace pu

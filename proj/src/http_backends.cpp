#include "pu/http_backends.hpp"

#include <cmath>

#include <httplib.h>

namespace pu::http {

using nlohmann::json;

namespace {

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\n\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\n\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T field(const json& j, const json::json_pointer& ptr, const char* what) {
  try {
    return j.at(ptr).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::MalformedResponse, std::string("response missing ") + what);
  }
}

}  // namespace

struct JsonClient::Impl {
  explicit Impl(const std::string& scheme_host_port) : client(scheme_host_port) {}
  httplib::Client client;
};

JsonClient::JsonClient(BackendEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  const auto& url = endpoint_.base_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorKind::InvalidInput, "base_url needs a scheme: " + url);
  const auto path_begin = url.find('/', scheme_end + 3);
  const auto origin = path_begin == std::string::npos ? url : url.substr(0, path_begin);
  prefix_ = path_begin == std::string::npos ? "" : url.substr(path_begin);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  impl_ = std::make_unique<Impl>(origin);
  const auto secs = static_cast<time_t>(endpoint_.timeout_s);
  const auto usecs = static_cast<time_t>((endpoint_.timeout_s - static_cast<double>(secs)) * 1e6);
  impl_->client.set_connection_timeout(secs, usecs);
  impl_->client.set_read_timeout(secs, usecs);
  impl_->client.set_write_timeout(secs, usecs);
  if (!endpoint_.api_key.empty()) impl_->client.set_bearer_token_auth(endpoint_.api_key);
}

JsonClient::~JsonClient() = default;

std::string JsonClient::identity(const std::string& role) const {
  return "http:" + role + ":" + endpoint_.base_url + ":" + endpoint_.model_name;
}

json JsonClient::post(const std::string& path, const json& body) {
  auto res = impl_->client.Post(prefix_ + path, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorKind::Timeout, endpoint_.base_url + path + ": " + httplib::to_string(res.error()));
  }
  const int status = res->status;
  if (status == 429 || status == 503) throw Error(ErrorKind::RateLimited, path + ": HTTP " + std::to_string(status));
  if (status == 404 || status == 405 || status == 501) {
    throw Error(ErrorKind::BackendUnsupported, path + ": HTTP " + std::to_string(status));
  }
  if (status < 200 || status >= 300) {
    throw Error(ErrorKind::MalformedResponse, path + ": HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200));
  }
  try {
    return json::parse(res->body);
  } catch (const json::parse_error&) {
    throw Error(ErrorKind::MalformedResponse, path + ": body is not JSON");
  }
}

// --- QA --------------------------------------------------------------------

GeneratedAnswer HttpQa::generate(const Prompt& prompt, const DecodeConfig& cfg) {
  json body{{"model", client_.endpoint().model_name},
            {"messages", json::array({json{{"role", "user"}, {"content", prompt.user}}})},
            {"max_tokens", cfg.max_new_tokens},
            {"logprobs", true},
            {"n", 1}};
  if (cfg.mode == DecodeConfig::Mode::greedy) {
    body["temperature"] = 0.0;
  } else {
    body["temperature"] = cfg.temperature;
    body["top_p"] = cfg.top_p;
    body["top_k"] = cfg.top_k;
    body["seed"] = cfg.seed;
  }
  const json res = client_.post("/chat/completions", body);
  GeneratedAnswer ans;
  const auto content = field<json>(res, json::json_pointer("/choices/0/message/content"), "message content");
  ans.text = content.is_null() ? std::string{} : content.get<std::string>();
  const auto tokens = field<json>(res, json::json_pointer("/choices/0/logprobs/content"), "logprobs");
  if (!tokens.is_array()) throw Error(ErrorKind::MalformedResponse, "logprobs.content is not an array");
  for (const auto& t : tokens) ans.token_logprobs.push_back(field<double>(t, json::json_pointer("/logprob"), "logprob"));
  return ans;
}

std::vector<double> HttpQa::score_sequence(const Prompt& prompt, const std::string& forced_text) {
  const std::string full = prompt.user + forced_text;
  const json body{{"model", client_.endpoint().model_name},
                  {"prompt", full},
                  {"max_tokens", 1},
                  {"temperature", 0.0},
                  {"echo", true},
                  {"logprobs", 0}};
  const json res = client_.post("/completions", body);
  const auto lp = res.find("choices");
  if (lp == res.end() || lp->empty() || !(*lp)[0].contains("logprobs") || (*lp)[0]["logprobs"].is_null()) {
    throw Error(ErrorKind::BackendUnsupported, "server did not echo prompt logprobs");
  }
  const json& logprobs = (*lp)[0]["logprobs"];
  const auto offsets = field<std::vector<long>>(logprobs, json::json_pointer("/text_offset"), "text_offset");
  const auto& values = logprobs.at("token_logprobs");
  if (!values.is_array() || values.size() != offsets.size()) {
    throw Error(ErrorKind::MalformedResponse, "token_logprobs/text_offset length mismatch");
  }
  const auto begin = static_cast<long>(prompt.user.size());
  const auto end = static_cast<long>(full.size());
  std::vector<double> out;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (offsets[i] < begin || offsets[i] >= end) continue;
    if (values[i].is_null()) throw Error(ErrorKind::BackendUnsupported, "first-token logprob unavailable");
    out.push_back(values[i].get<double>());
  }
  if (out.empty()) throw Error(ErrorKind::MalformedResponse, "no echoed tokens for forced text");
  return out;
}

TokenProbability HttpQa::next_token_prob(const Prompt& prompt, const std::string& token) {
  const json body{{"model", client_.endpoint().model_name},
                  {"messages", json::array({json{{"role", "user"}, {"content", prompt.user}}})},
                  {"max_tokens", 1},
                  {"temperature", 0.0},
                  {"logprobs", true},
                  {"top_logprobs", kTopLogprobs}};
  const json res = client_.post("/chat/completions", body);
  const auto top = field<json>(res, json::json_pointer("/choices/0/logprobs/content/0/top_logprobs"), "top_logprobs");
  const std::string target = strip(token);
  double exact = 0.0;
  double prefix_mass = 0.0;
  bool found_exact = false;
  for (const auto& entry : top) {
    const auto text = strip(field<std::string>(entry, json::json_pointer("/token"), "token"));
    const double p = std::exp(field<double>(entry, json::json_pointer("/logprob"), "logprob"));
    if (text == target) {
      exact += p;
      found_exact = true;
    } else if (!text.empty() && target.starts_with(text)) {
      prefix_mass += p;
    }
  }
  if (found_exact) return TokenProbability{std::min(exact, 1.0), false};
  // Target is not a single backend token: sum the continuations that begin it.
  if (prefix_mass > 0.0) return TokenProbability{std::min(prefix_mass, 1.0), true};
  return TokenProbability{0.0, false};
}

// --- NLI -------------------------------------------------------------------

std::vector<double> HttpNli::entail_probs(std::span<const TextPair> pairs) {
  json items = json::array();
  for (const auto& p : pairs) items.push_back(json{{"premise", p.premise}, {"hypothesis", p.hypothesis}});
  const json res = client_.post("/entailment", json{{"model", client_.endpoint().model_name}, {"pairs", items}});
  auto probs = field<std::vector<double>>(res, json::json_pointer("/entailment"), "entailment");
  if (probs.size() != pairs.size()) throw Error(ErrorKind::MalformedResponse, "entailment count mismatch");
  return probs;
}

// --- Judge -----------------------------------------------------------------

std::string HttpJudge::complete(const Prompt& prompt) {
  const json body{{"model", client_.endpoint().model_name},
                  {"messages", json::array({json{{"role", "user"}, {"content", prompt.user}}})},
                  {"max_tokens", 5},
                  {"temperature", 0.0}};
  const json res = client_.post("/chat/completions", body);
  const auto content = field<json>(res, json::json_pointer("/choices/0/message/content"), "message content");
  return content.is_null() ? std::string{} : content.get<std::string>();
}

// --- Embedding -------------------------------------------------------------

std::vector<double> HttpEmbed::embed_pair(const std::string& question, const std::string& passage) {
  const json body{{"model", client_.endpoint().model_name},
                  {"input", json::array({question + "\n\n" + passage})}};
  const json res = client_.post("/embeddings", body);
  return field<std::vector<double>>(res, json::json_pointer("/data/0/embedding"), "embedding");
}

}  // namespace pu::http

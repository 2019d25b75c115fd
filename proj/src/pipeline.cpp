#include "pu/pipeline.hpp"

#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <regex>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pu/digest.hpp"
#include "pu/evaluation.hpp"
#include "pu/http_backends.hpp"
#include "pu/json_io.hpp"
#include "pu/mock_backends.hpp"
#include "pu/parallel.hpp"

#ifndef PU_CODE_VERSION
#define PU_CODE_VERSION "0.0.0"
#endif

namespace pu {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view code_version() { return PU_CODE_VERSION; }

std::string interpolate_env(const std::string& text) {
  static const std::regex var(R"(\$\{([A-Za-z_][A-Za-z0-9_]*)\})");
  std::string out;
  auto begin = std::sregex_iterator(text.begin(), text.end(), var);
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    const std::string name = m[1].str();
    const char* value = std::getenv(name.c_str());
    if (value == nullptr) throw Error(ErrorKind::InvalidInput, "environment variable " + name + " is not set");
    out.append(text, last, static_cast<std::size_t>(m.position(0)) - last);
    out += value;
    last = static_cast<std::size_t>(m.position(0) + m.length(0));
  }
  out.append(text, last, std::string::npos);
  return out;
}

namespace {

constexpr std::array<const char*, kRoleCount> kRoleNames = {"qa", "nli", "judge", "embed"};

json interpolate_tree(const json& j) {
  if (j.is_string()) return interpolate_env(j.get<std::string>());
  if (j.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : j.items()) out[k] = interpolate_tree(v);
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& v : j) out.push_back(interpolate_tree(v));
    return out;
  }
  return j;
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return base / p;
}

fs::path path_field(const json& j, const char* key, const fs::path& base) {
  if (!j.contains(key) || j.at(key).is_null()) return {};
  return resolve(base, j.at(key).get<std::string>());
}

}  // namespace

void RunConfig::validate() const {
  if (n_samples < 1) throw Error(ErrorKind::InvalidInput, "n_samples must be >= 1");
  if (passages < 2) throw Error(ErrorKind::InvalidInput, "passages must be >= 2");
  if (max_new_tokens < 1) throw Error(ErrorKind::InvalidInput, "max_new_tokens must be >= 1");
  for (const auto& ep : backends) ep.validate();
  curation.validate();
  train.validate();
  for (std::size_t k : rerank_cutoffs) {
    if (k == 0 || k > rerank_pool) throw Error(ErrorKind::InvalidInput, "rerank cutoffs must lie in 1..pool");
  }
  (void)canonical_estimator(delong_baseline);
}

RunConfig run_config_from_json(const json& raw, const fs::path& base_dir) {
  const json j = interpolate_tree(raw);
  RunConfig c;
  try {
    if (j.contains("datasets")) {
      const auto& d = j.at("datasets");
      c.train_dataset = path_field(d, "train", base_dir);
      c.val_dataset = path_field(d, "val", base_dir);
      c.test_dataset = path_field(d, "test", base_dir);
    }
    c.few_shot = path_field(j, "few_shot", base_dir);
    if (j.contains("backends")) {
      const auto& b = j.at("backends");
      for (std::size_t r = 0; r < kRoleCount; ++r) {
        if (!b.contains(kRoleNames[r])) continue;
        b.at(kRoleNames[r]).get_to(c.backends[r]);
        if (!c.backends[r].mock_fixture.empty()) {
          c.backends[r].mock_fixture = resolve(base_dir, c.backends[r].mock_fixture).string();
        }
      }
    }
    if (j.contains("decode")) c.max_new_tokens = j.at("decode").value("max_new_tokens", c.max_new_tokens);
    if (j.contains("estimators")) {
      c.estimators.clear();
      for (const auto& e : j.at("estimators")) {
        const auto name = canonical_estimator(e.get<std::string>());
        if (std::find(c.estimators.begin(), c.estimators.end(), name) == c.estimators.end()) {
          c.estimators.push_back(name);
        }
      }
    }
    c.n_samples = j.value("n_samples", c.n_samples);
    c.passages = j.value("passages", c.passages);
    c.seed = j.value("seed", c.seed);
    c.offline = j.value("offline", c.offline);
    if (j.contains("cache_dir")) c.cache_dir = resolve(base_dir, j.at("cache_dir").get<std::string>());
    else c.cache_dir = resolve(base_dir, c.cache_dir);
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    else c.output_dir = resolve(base_dir, c.output_dir);
    if (j.contains("curation")) c.curation = j.at("curation").get<CurationConfig>();
    c.curation.passages_per_question = c.passages;
    json train = j.value("train", json::object());
    if (!train.contains("seed")) train["seed"] = c.seed;
    c.train = train.get<TrainConfig>();
    c.sweep = j.value("sweep", c.sweep);
    if (j.contains("clustering")) {
      c.clustering.prefix_question = j.at("clustering").value("prefix_question", c.clustering.prefix_question);
      c.clustering.threshold = j.at("clustering").value("threshold", c.clustering.threshold);
    }
    if (j.contains("p_true")) {
      c.choices.true_label = j.at("p_true").value("true_label", c.choices.true_label);
      c.choices.false_label = j.at("p_true").value("false_label", c.choices.false_label);
    }
    c.dataset_tag = j.value("dataset_tag", c.dataset_tag);
    c.model_tag = j.value("model_tag", c.model_tag);
    c.delong_baseline = canonical_estimator(j.value("delong_baseline", c.delong_baseline));
    c.workers = j.value("workers", c.workers);
    c.curation.workers = c.workers;
    if (j.contains("rerank")) {
      c.rerank_pool = j.at("rerank").value("pool", c.rerank_pool);
      c.rerank_cutoffs = j.at("rerank").value("cutoffs", c.rerank_cutoffs);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidInput, std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  return run_config_from_json(read_json_file(path), fs::absolute(path).parent_path());
}

json run_config_json(const RunConfig& c) {
  json backends = json::object();
  for (std::size_t r = 0; r < kRoleCount; ++r) backends[kRoleNames[r]] = c.backends[r];
  return json{{"datasets", {{"train", c.train_dataset}, {"val", c.val_dataset}, {"test", c.test_dataset}}},
              {"few_shot", c.few_shot},
              {"backends", backends},
              {"decode", {{"max_new_tokens", c.max_new_tokens}}},
              {"estimators", c.estimators},
              {"n_samples", c.n_samples},
              {"passages", c.passages},
              {"seed", c.seed},
              {"offline", c.offline},
              {"cache_dir", c.cache_dir},
              {"output_dir", c.output_dir},
              {"curation", c.curation},
              {"train", c.train},
              {"sweep", c.sweep},
              {"clustering", {{"prefix_question", c.clustering.prefix_question}, {"threshold", c.clustering.threshold}}},
              {"p_true", {{"true_label", c.choices.true_label}, {"false_label", c.choices.false_label}}},
              {"dataset_tag", c.dataset_tag},
              {"model_tag", c.model_tag},
              {"delong_baseline", c.delong_baseline},
              {"workers", c.workers},
              {"rerank", {{"pool", c.rerank_pool}, {"cutoffs", c.rerank_cutoffs}}}};
}

GatewayServices make_gateway_services(const std::array<BackendEndpoint, kRoleCount>& endpoints) {
  std::map<std::string, std::shared_ptr<const mock::Fixture>> fixtures;
  auto fixture_for = [&](const BackendEndpoint& ep) {
    auto& slot = fixtures[ep.mock_fixture];
    if (!slot) {
      slot = std::make_shared<const mock::Fixture>(ep.mock_fixture.empty() ? mock::Fixture::from_json(json::object())
                                                                           : mock::Fixture::load(ep.mock_fixture));
    }
    return slot;
  };
  GatewayServices s;
  const auto& qa = endpoints[static_cast<std::size_t>(Role::qa)];
  const auto& nli = endpoints[static_cast<std::size_t>(Role::nli)];
  const auto& judge = endpoints[static_cast<std::size_t>(Role::judge)];
  const auto& embed = endpoints[static_cast<std::size_t>(Role::embed)];
  if (qa.kind == "http") s.qa = std::make_shared<http::HttpQa>(qa);
  else s.qa = std::make_shared<mock::MockQa>(fixture_for(qa));
  if (nli.kind == "http") s.nli = std::make_shared<http::HttpNli>(nli);
  else s.nli = std::make_shared<mock::MockNli>(fixture_for(nli));
  if (judge.kind == "http") s.judge = std::make_shared<http::HttpJudge>(judge);
  else s.judge = std::make_shared<mock::MockJudge>(fixture_for(judge));
  if (embed.kind == "http") s.embed = std::make_shared<http::HttpEmbed>(embed);
  else s.embed = std::make_shared<mock::MockEmbed>(fixture_for(embed));
  return s;
}

void to_json(json& j, const RerankSummary& v) {
  json acc = json::object();
  for (const auto& [mode, by_k] : v.accuracy) {
    json m = json::object();
    for (const auto& [k, a] : by_k) m[std::to_string(k)] = a;
    acc[mode] = m;
  }
  j = json{{"n", v.n}, {"accuracy", acc}};
}

Pipeline::Pipeline(RunConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  fs::create_directories(cfg_.output_dir);
  fs::create_directories(cfg_.cache_dir);
  lock_path_ = cfg_.output_dir / ".lock";
  std::FILE* lock = std::fopen(lock_path_.c_str(), "wx");
  if (lock == nullptr) {
    throw Error(ErrorKind::Io, "output directory " + cfg_.output_dir.string() + " is locked by another run (" +
                                   lock_path_.string() + ")");
  }
  std::fclose(lock);
  try {
    cache_ = std::make_shared<CallCache>(cfg_.cache_dir / "calls.jsonl");
    GatewayOptions opts;
    opts.endpoints = cfg_.backends;
    opts.offline = cfg_.offline;
    gateway_ = std::make_unique<Gateway>(make_gateway_services(cfg_.backends), opts, cache_);
    if (fs::exists(manifest_path())) manifest_ = read_json_file(manifest_path());
  } catch (...) {
    std::error_code ec;
    fs::remove(lock_path_, ec);
    throw;
  }
  if (!manifest_.is_object()) manifest_ = json::object();
  manifest_["config_digest"] = sha256_hex(run_config_json(cfg_).dump());
  manifest_["code_version"] = code_version();
  if (!manifest_.contains("stages")) manifest_["stages"] = json::object();
}

Pipeline::~Pipeline() {
  std::error_code ec;
  fs::remove(lock_path_, ec);
}

fs::path Pipeline::records_path(const std::string& split) const {
  return cfg_.output_dir / "curate" / (split + ".records.jsonl");
}

fs::path Pipeline::pairs_path(const std::string& split) const {
  if (split == "train" && !cfg_.train_pairs.empty()) return cfg_.train_pairs;
  if (split == "val" && !cfg_.val_pairs.empty()) return cfg_.val_pairs;
  return cfg_.output_dir / "curate" / (split + ".pairs.jsonl");
}

fs::path Pipeline::checkpoint_path() const {
  return cfg_.checkpoint.empty() ? cfg_.output_dir / "train" / "checkpoint.json" : cfg_.checkpoint;
}

fs::path Pipeline::rows_path() const {
  return cfg_.rows.empty() ? cfg_.output_dir / "estimate" / "rows.jsonl" : cfg_.rows;
}

fs::path Pipeline::costs_path() const { return rows_path().parent_path() / "costs.jsonl"; }

fs::path Pipeline::report_dir() const {
  return cfg_.report_dir.empty() ? cfg_.output_dir / "evaluate" : cfg_.report_dir;
}

fs::path Pipeline::manifest_path() const { return cfg_.output_dir / "manifest.json"; }

void Pipeline::write_manifest() const { write_json_file(manifest_path(), manifest_); }

std::vector<fs::path> Pipeline::fixture_inputs(std::initializer_list<Role> roles) const {
  std::set<fs::path> out;
  for (Role r : roles) {
    const auto& ep = cfg_.backends[static_cast<std::size_t>(r)];
    if (ep.kind == "mock" && !ep.mock_fixture.empty()) out.insert(ep.mock_fixture);
  }
  return {out.begin(), out.end()};
}

template <typename Fn>
StageReport Pipeline::run_stage(const std::string& name, const json& stage_config, const std::vector<fs::path>& inputs,
                                const std::vector<fs::path>& outputs, Fn&& body) {
  json input_digests = json::object();
  std::string joined;
  for (const auto& p : inputs) {
    if (!fs::exists(p)) throw Error(ErrorKind::Io, name + ": missing input " + p.string());
    const auto d = file_digest(p);
    input_digests[p.string()] = d;
    joined += p.string() + "=" + d + ";";
  }
  const std::string key = digest_fields({name, code_version(), stage_config.dump(), joined});

  json& rec = manifest_["stages"][name];
  if (rec.is_object() && rec.value("key", std::string{}) == key && rec.value("status", std::string{}) != "failed") {
    bool fresh = true;
    const json recorded = rec.value("outputs", json::object());
    for (const auto& p : outputs) {
      if (!fs::exists(p) || !recorded.contains(p.string()) || recorded.at(p.string()) != file_digest(p)) {
        fresh = false;
        break;
      }
    }
    if (fresh) {
      spdlog::info("{}: up to date, skipped", name);
      rec["status"] = "skipped";
      rec["calls"] = json::object();
      rec["wall_clock_s"] = 0.0;
      write_manifest();
      return StageReport{name, StageStatus::skipped, rec.value("record_failures", std::size_t{0})};
    }
  }

  gateway_->reset_counts();
  const auto t0 = std::chrono::steady_clock::now();
  rec = json{{"key", key}, {"inputs", input_digests}, {"status", "failed"}};
  std::size_t failures = 0;
  try {
    failures = body();
  } catch (...) {
    rec["calls"] = gateway_->counts_json();
    write_manifest();
    throw;
  }
  json output_digests = json::object();
  for (const auto& p : outputs) output_digests[p.string()] = file_digest(p);
  rec["outputs"] = output_digests;
  rec["calls"] = gateway_->counts_json();
  rec["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rec["record_failures"] = failures;
  rec["status"] = "ran";
  write_manifest();
  return StageReport{name, StageStatus::ran, failures};
}

namespace {

json endpoint_slice(const RunConfig& c, std::initializer_list<Role> roles) {
  json out = json::object();
  for (Role r : roles) out[kRoleNames[static_cast<std::size_t>(r)]] = c.backends[static_cast<std::size_t>(r)];
  return out;
}

std::vector<QAExample> load_dataset(const fs::path& path, const char* what) {
  if (path.empty()) throw Error(ErrorKind::InvalidInput, std::string("no ") + what + " dataset configured");
  auto examples = read_jsonl<QAExample>(path);
  for (const auto& ex : examples) validate(ex);
  return examples;
}

std::string embedding_source(const BackendEndpoint& ep) {
  if (ep.kind == "mock") return "mock:" + fs::path(ep.mock_fixture).filename().string();
  return "http:" + ep.base_url + ":" + ep.model_name;
}

}  // namespace

StageReport Pipeline::curate() {
  const json slice = {{"curation", cfg_.curation},
                      {"max_new_tokens", cfg_.max_new_tokens},
                      {"backends", endpoint_slice(cfg_, {Role::qa, Role::nli, Role::judge})}};
  std::vector<fs::path> inputs = {cfg_.train_dataset, cfg_.val_dataset};
  for (const auto& p : fixture_inputs({Role::qa, Role::nli, Role::judge})) inputs.push_back(p);
  const fs::path dir = cfg_.output_dir / "curate";
  const std::vector<fs::path> outputs = {records_path("train"), pairs_path("train"), records_path("val"),
                                         pairs_path("val"),     dir / "errors.jsonl", dir / "stats.json"};
  return run_stage("curate", slice, inputs, outputs, [&]() -> std::size_t {
    CurationConfig cc = cfg_.curation;
    cc.max_new_tokens = cfg_.max_new_tokens;
    std::vector<json> errors;
    json stats = json::object();
    for (const char* split : {"train", "val"}) {
      const auto examples = load_dataset(split == std::string("train") ? cfg_.train_dataset : cfg_.val_dataset, split);
      const auto curated = curate_dataset(*gateway_, examples, cc);
      std::vector<UtilityRecord> records;
      std::vector<PairwiseInstance> pairs;
      for (const auto& q : curated) {
        for (const auto& r : q.records) records.push_back(r);
        for (auto& p : build_pairwise(q.records)) pairs.push_back(std::move(p));
        for (const auto& f : q.failures) errors.emplace_back(f);
      }
      if (records.empty() && !examples.empty()) {
        throw Error(ErrorKind::InvalidInput,
                    fmt::format("curate: every {} record failed; first error: {}", split,
                                errors.empty() ? std::string("none") : errors.front().at("error").get<std::string>()));
      }
      write_jsonl(records_path(split), records);
      write_jsonl(pairs_path(split), pairs);
      stats[split] = dataset_stats(curated);
      spdlog::info("curate {}: {} records, {} pairs", split, records.size(), pairs.size());
    }
    write_jsonl_values(dir / "errors.jsonl", errors);
    write_json_file(dir / "stats.json", stats);
    return errors.size();
  });
}

StageReport Pipeline::train() {
  const json slice = {{"train", cfg_.train},
                      {"sweep", cfg_.sweep},
                      {"backends", endpoint_slice(cfg_, {Role::embed})}};
  std::vector<fs::path> inputs = {pairs_path("train"), pairs_path("val"), cfg_.train_dataset, cfg_.val_dataset};
  for (const auto& p : fixture_inputs({Role::embed})) inputs.push_back(p);
  const fs::path log_path = checkpoint_path().parent_path() / "train_log.json";
  return run_stage("train", slice, inputs, {checkpoint_path(), log_path}, [&]() -> std::size_t {
    const auto train_pairs = read_jsonl<PairwiseInstance>(pairs_path("train"));
    const auto val_pairs = read_jsonl<PairwiseInstance>(pairs_path("val"));
    std::map<std::pair<std::string, std::string>, std::pair<std::string, std::string>> texts;
    for (const auto& path : {cfg_.train_dataset, cfg_.val_dataset}) {
      for (const auto& ex : load_dataset(path, "train/val")) {
        for (const auto& p : ex.passages) texts[{ex.id, p.pid}] = {ex.question, p.text};
      }
    }
    std::set<std::pair<std::string, std::string>> wanted;
    for (const auto* store : {&train_pairs, &val_pairs}) {
      for (const auto& p : *store) {
        wanted.insert({p.question_id, p.pid_i});
        wanted.insert({p.question_id, p.pid_j});
      }
    }
    const std::vector<std::pair<std::string, std::string>> keys(wanted.begin(), wanted.end());
    std::vector<std::vector<double>> vectors(keys.size());
    parallel_for(keys.size(), cfg_.workers, [&](std::size_t i) {
      const auto it = texts.find(keys[i]);
      if (it == texts.end()) {
        throw Error(ErrorKind::InvalidInput, "pair references unknown passage " + keys[i].first + "/" + keys[i].second);
      }
      vectors[i] = gateway_->embed_pair(it->second.first, it->second.second);
    });
    EmbeddingTable table;
    for (std::size_t i = 0; i < keys.size(); ++i) table.put(keys[i].first, keys[i].second, std::move(vectors[i]));

    json log = json::object();
    Checkpoint best;
    try {
      if (cfg_.sweep) {
        auto result = sweep(train_pairs, val_pairs, table, cfg_.train);
        log["sweep"] = result.rows;
        best = std::move(result.best);
      } else {
        auto result = pu::train(train_pairs, val_pairs, table, cfg_.train);
        log["history"] = result.history;
        best = std::move(result.best);
      }
    } catch (const TrainingDiverged& e) {
      Checkpoint last = e.last_finite();
      last.embedding_source = embedding_source(cfg_.backends[static_cast<std::size_t>(Role::embed)]);
      save_checkpoint(checkpoint_path(), last);
      throw;
    }
    best.embedding_source = embedding_source(cfg_.backends[static_cast<std::size_t>(Role::embed)]);
    log["selected_epoch"] = best.epoch;
    log["selection_metric_value"] = best.selection_metric_value;
    save_checkpoint(checkpoint_path(), best);
    write_json_file(log_path, log);
    return 0;
  });
}

EstimatorConfig Pipeline::estimator_config() const {
  EstimatorConfig ec;
  ec.estimators = cfg_.estimators;
  ec.n_samples = cfg_.n_samples;
  ec.seed = cfg_.seed;
  ec.passages = cfg_.passages;
  ec.max_new_tokens = cfg_.max_new_tokens;
  ec.cluster = cfg_.clustering;
  ec.choices = cfg_.choices;
  ec.refusal_phrases = cfg_.curation.refusal_phrases;
  ec.workers = cfg_.workers;
  return ec;
}

StageReport Pipeline::estimate() {
  EstimatorConfig ec = estimator_config();
  const bool want_pu = std::find(ec.estimators.begin(), ec.estimators.end(), "pu") != ec.estimators.end();
  const bool want_ptrue = std::find(ec.estimators.begin(), ec.estimators.end(), "ptrue") != ec.estimators.end();
  const json slice = {{"estimators", ec.estimators},
                      {"n_samples", ec.n_samples},
                      {"seed", ec.seed},
                      {"passages", ec.passages},
                      {"max_new_tokens", ec.max_new_tokens},
                      {"clustering", {{"prefix_question", ec.cluster.prefix_question}, {"threshold", ec.cluster.threshold}}},
                      {"p_true", {{"true_label", ec.choices.true_label}, {"false_label", ec.choices.false_label}}},
                      {"refusal_phrases", ec.refusal_phrases},
                      {"backends", endpoint_slice(cfg_, {Role::qa, Role::nli, Role::judge, Role::embed})}};
  std::vector<fs::path> inputs = {cfg_.test_dataset};
  if (want_pu) inputs.push_back(checkpoint_path());
  if (want_ptrue) {
    if (cfg_.few_shot.empty()) throw Error(ErrorKind::InvalidInput, "ptrue requested but no few_shot bank configured");
    inputs.push_back(cfg_.few_shot);
  }
  for (const auto& p : fixture_inputs({Role::qa, Role::nli, Role::judge, Role::embed})) inputs.push_back(p);
  const fs::path errors_path = rows_path().parent_path() / "errors.jsonl";
  return run_stage("estimate", slice, inputs, {rows_path(), costs_path(), errors_path}, [&]() -> std::size_t {
    const auto examples = load_dataset(cfg_.test_dataset, "test");
    if (want_ptrue) ec.few_shot = read_json_file(cfg_.few_shot).get<std::vector<FewShotBlock>>();
    std::optional<Checkpoint> ckpt;
    if (want_pu) ckpt = load_checkpoint(checkpoint_path());
    const auto batch = estimate_dataset(*gateway_, examples, ckpt ? &*ckpt : nullptr, ec);
    if (batch.rows.empty() && !examples.empty()) {
      throw Error(ErrorKind::InvalidInput,
                  "estimate: every question failed; first error: " + batch.failures.front().error);
    }
    write_jsonl(rows_path(), batch.rows);
    write_jsonl(costs_path(), batch.costs);
    write_jsonl(errors_path, batch.failures);
    spdlog::info("estimate: {} rows, {} failures", batch.rows.size(), batch.failures.size());
    return batch.failures.size();
  });
}

StageReport Pipeline::evaluate() {
  const std::string baseline = canonical_estimator(cfg_.delong_baseline);
  const json slice = {{"delong_baseline", baseline}, {"dataset_tag", cfg_.dataset_tag}, {"model_tag", cfg_.model_tag}};
  std::vector<fs::path> inputs = {rows_path()};
  std::vector<fs::path> outputs = {report_dir() / "report.json", report_dir() / "report.csv"};
  if (!cfg_.records.empty()) {
    inputs.push_back(cfg_.records);
    outputs.push_back(report_dir() / "agreement.json");
  }
  return run_stage("evaluate", slice, inputs, outputs, [&]() -> std::size_t {
    const auto rows = read_jsonl<EstimateRow>(rows_path());
    const auto report = build_report(rows, baseline, cfg_.dataset_tag, cfg_.model_tag);
    fs::create_directories(report_dir());
    write_json_file(report_dir() / "report.json", json(report));
    write_text_file(report_dir() / "report.csv", report_csv(report));
    if (!cfg_.records.empty()) {
      const auto records = read_jsonl<UtilityRecord>(cfg_.records);
      write_json_file(report_dir() / "agreement.json", json(aggregation_agreement(records, rows)));
    }
    return 0;
  });
}

StageReport Pipeline::rerank() {
  const json slice = {{"pool", cfg_.rerank_pool},
                      {"cutoffs", cfg_.rerank_cutoffs},
                      {"max_new_tokens", cfg_.max_new_tokens},
                      {"backends", endpoint_slice(cfg_, {Role::qa, Role::judge, Role::embed})}};
  std::vector<fs::path> inputs = {cfg_.test_dataset, checkpoint_path()};
  for (const auto& p : fixture_inputs({Role::qa, Role::judge, Role::embed})) inputs.push_back(p);
  const fs::path out = cfg_.output_dir / "rerank" / "rerank.json";
  return run_stage("rerank", slice, inputs, {out}, [&]() -> std::size_t {
    const auto examples = load_dataset(cfg_.test_dataset, "test");
    const auto ckpt = load_checkpoint(checkpoint_path());
    const auto decode = DecodeConfig::greedy(cfg_.max_new_tokens);
    const std::array<std::pair<const char*, RerankMode>, 3> modes = {
        {{"utility", RerankMode::utility}, {"ppl", RerankMode::ppl}, {"retriever", RerankMode::retriever}}};
    // correct[i][mode][cutoff]
    std::vector<std::array<std::vector<int>, 3>> correct(examples.size());
    std::vector<std::string> errors(examples.size());
    parallel_for(examples.size(), cfg_.workers, [&](std::size_t i) {
      const auto& ex = examples[i];
      try {
        const auto pool = std::span<const Passage>(ex.passages).first(std::min(cfg_.rerank_pool, ex.passages.size()));
        const auto utilities = predict_utilities(ckpt, *gateway_, ex.question, pool);
        std::vector<double> ppls;
        for (const auto& p : pool) {
          ppls.push_back(ppl(gateway_->generate(qa_prompt(ex.question, std::span<const Passage>(&p, 1)), decode)));
        }
        for (std::size_t m = 0; m < modes.size(); ++m) {
          const auto& scores = modes[m].second == RerankMode::ppl ? ppls : utilities;
          for (std::size_t k : cfg_.rerank_cutoffs) {
            const auto top = rerank_topk(pool, scores, std::min(k, pool.size()), modes[m].second);
            const auto ans = gateway_->generate(qa_prompt(ex.question, top), decode);
            correct[i][m].push_back(label_accuracy(*gateway_, ex, ans.text, cfg_.curation.refusal_phrases));
          }
        }
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::OfflineViolation) throw;
        errors[i] = e.what();
      }
    });
    RerankSummary summary;
    std::size_t failures = 0;
    std::array<std::vector<long>, 3> sums;
    for (auto& s : sums) s.assign(cfg_.rerank_cutoffs.size(), 0);
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (!errors[i].empty()) {
        spdlog::warn("rerank {}: {}", examples[i].id, errors[i]);
        ++failures;
        continue;
      }
      ++summary.n;
      for (std::size_t m = 0; m < modes.size(); ++m) {
        for (std::size_t c = 0; c < cfg_.rerank_cutoffs.size(); ++c) sums[m][c] += correct[i][m][c];
      }
    }
    if (summary.n == 0 && !examples.empty()) throw Error(ErrorKind::InvalidInput, "rerank: every question failed");
    for (std::size_t m = 0; m < modes.size(); ++m) {
      for (std::size_t c = 0; c < cfg_.rerank_cutoffs.size(); ++c) {
        summary.accuracy[modes[m].first][cfg_.rerank_cutoffs[c]] =
            summary.n == 0 ? 0.0 : static_cast<double>(sums[m][c]) / static_cast<double>(summary.n);
      }
    }
    write_json_file(out, json(summary));
    return failures;
  });
}

StageReport Pipeline::cost_report() {
  const json slice = {{"n_samples", cfg_.n_samples}, {"passages", cfg_.passages}};
  const fs::path out = cfg_.output_dir / "cost_report.json";
  return run_stage("cost-report", slice, {costs_path()}, {out}, [&]() -> std::size_t {
    const auto costs = read_jsonl<EstimateCosts>(costs_path());
    const auto rows = check_costs(costs, cfg_.n_samples, cfg_.passages);
    bool ok = true;
    for (const auto& r : rows) ok = ok && r.within_bound;
    write_json_file(out, json{{"n_samples", cfg_.n_samples},
                              {"passages", cfg_.passages},
                              {"rows", rows},
                              {"within_bounds", ok}});
    if (!ok) {
      std::string bad;
      for (const auto& r : rows) {
        if (!r.within_bound) bad += (bad.empty() ? "" : ", ") + r.estimator;
      }
      throw Error(ErrorKind::CostMismatch, "observed calls exceed the cost formula for: " + bad);
    }
    return 0;
  });
}

std::vector<StageReport> Pipeline::end_to_end() {
  std::vector<StageReport> reports;
  reports.push_back(curate());
  reports.push_back(train());
  reports.push_back(estimate());
  reports.push_back(evaluate());
  reports.push_back(cost_report());
  return reports;
}

fs::path write_synthetic_bundle(const fs::path& dir, const SyntheticOptions& opts) {
  const auto world = make_synthetic_world(opts);
  fs::create_directories(dir);
  write_jsonl(dir / "train.jsonl", world.train);
  write_jsonl(dir / "val.jsonl", world.val);
  write_jsonl(dir / "test.jsonl", world.test);
  write_json_file(dir / "fixture.json", world.fixture);
  write_json_file(dir / "few_shot.json", json(world.few_shot));
  json backend = {{"kind", "mock"}, {"mock_fixture", "fixture.json"}};
  CurationConfig cc;
  cc.entailment_premise = opts.entailment;
  cc.passages_per_question = opts.passages;
  const json config = {{"datasets", {{"train", "train.jsonl"}, {"val", "val.jsonl"}, {"test", "test.jsonl"}}},
                       {"few_shot", "few_shot.json"},
                       {"backends", {{"qa", backend}, {"nli", backend}, {"judge", backend}, {"embed", backend}}},
                       {"n_samples", opts.n_samples},
                       {"passages", opts.passages},
                       {"seed", opts.sample_seed},
                       {"offline", true},
                       {"cache_dir", "cache"},
                       {"output_dir", "run"},
                       {"curation", cc},
                       // A few hundred questions give only ~60 steps per epoch.
                       {"train", {{"learning_rate", 0.05}}},
                       {"dataset_tag", opts.dataset_tag},
                       {"model_tag", "mock-qa"},
                       {"delong_baseline", "pu"}};
  write_json_file(dir / "config.json", config);
  return dir / "config.json";
}

}  // namespace pu

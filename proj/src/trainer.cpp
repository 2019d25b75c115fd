#include "pu/trainer.hpp"

#include <cmath>
#include <random>
#include <set>

#include <spdlog/spdlog.h>

#include "pu/digest.hpp"
#include "pu/evaluation.hpp"
#include "pu/json_io.hpp"

namespace pu {

using nlohmann::json;

NLOHMANN_JSON_SERIALIZE_ENUM(Selection, {{Selection::rank_only, "R"}, {Selection::combined, "C"}})

namespace {
constexpr const char* kCheckpointFormat = "pu-utility-head";
constexpr int kCheckpointVersion = 1;
}  // namespace

void TrainConfig::validate() const {
  if (!(margin > 0.0)) throw Error(ErrorKind::InvalidInput, "margin must be positive");
  if (!(lambda >= 0.0)) throw Error(ErrorKind::InvalidInput, "lambda must be non-negative");
  if (epochs < 1) throw Error(ErrorKind::InvalidInput, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::InvalidInput, "batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidInput, "learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw Error(ErrorKind::InvalidInput, "weight_decay must be non-negative");
  if (hidden_dim < 1) throw Error(ErrorKind::InvalidInput, "hidden_dim must be >= 1");
}

void to_json(json& j, const TrainConfig& v) {
  j = json{{"margin", v.margin},           {"lambda", v.lambda},
           {"epochs", v.epochs},           {"batch_size", v.batch_size},
           {"learning_rate", v.learning_rate}, {"weight_decay", v.weight_decay},
           {"selection", v.selection},     {"seed", v.seed},
           {"hidden_dim", v.hidden_dim}};
}

void from_json(const json& j, TrainConfig& v) {
  v = TrainConfig{};
  v.margin = j.value("margin", v.margin);
  v.lambda = j.value("lambda", v.lambda);
  v.epochs = j.value("epochs", v.epochs);
  v.batch_size = j.value("batch_size", v.batch_size);
  v.learning_rate = j.value("learning_rate", v.learning_rate);
  v.weight_decay = j.value("weight_decay", v.weight_decay);
  v.selection = j.value("selection", v.selection);
  v.seed = j.value("seed", v.seed);
  v.hidden_dim = j.value("hidden_dim", v.hidden_dim);
  v.validate();
}

void EmbeddingTable::put(const std::string& question_id, const std::string& pid, std::vector<double> embedding) {
  if (embedding.empty()) throw Error(ErrorKind::InvalidInput, "empty embedding");
  if (dim_ == 0) dim_ = embedding.size();
  if (embedding.size() != dim_) {
    throw Error(ErrorKind::DimensionMismatch, "embedding for " + question_id + "/" + pid + " has " +
                                                  std::to_string(embedding.size()) + " dims, table has " +
                                                  std::to_string(dim_));
  }
  rows_[{question_id, pid}] = std::move(embedding);
}

std::span<const double> EmbeddingTable::get(const std::string& question_id, const std::string& pid) const {
  const auto it = rows_.find({question_id, pid});
  if (it == rows_.end()) throw Error(ErrorKind::InvalidInput, "no embedding for " + question_id + "/" + pid);
  return it->second;
}

bool EmbeddingTable::contains(const std::string& question_id, const std::string& pid) const {
  return rows_.contains({question_id, pid});
}

std::string EmbeddingTable::digest() const {
  json rows = json::array();
  for (const auto& [key, emb] : rows_) rows.push_back({key.first, key.second, emb});
  return sha256_hex(rows.dump());
}

double ValidationMetrics::criterion(Selection selection) const {
  if (selection == Selection::rank_only || !accuracy_auroc) return pairwise_accuracy;
  return 0.5 * (pairwise_accuracy + *accuracy_auroc);
}

void to_json(json& j, const ValidationMetrics& v) {
  j = json{{"pairwise_accuracy", v.pairwise_accuracy},
           {"accuracy_auroc", v.accuracy_auroc ? json(*v.accuracy_auroc) : json(nullptr)}};
}

void to_json(json& j, const Checkpoint& v) {
  j = v.head;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["train_config"] = v.train_config;
  j["selection_metric_value"] = v.selection_metric_value;
  j["epoch"] = v.epoch;
  j["data_digest"] = v.data_digest;
  j["embedding_source"] = v.embedding_source;
}

void from_json(const json& j, Checkpoint& v) {
  if (j.value("format", std::string{}) != kCheckpointFormat) {
    throw Error(ErrorKind::InvalidInput, "not a utility-head checkpoint");
  }
  if (j.value("version", 0) != kCheckpointVersion) {
    throw Error(ErrorKind::InvalidInput, "unsupported checkpoint version");
  }
  v.head = j.get<UtilityHead>();
  j.at("train_config").get_to(v.train_config);
  j.at("selection_metric_value").get_to(v.selection_metric_value);
  j.at("epoch").get_to(v.epoch);
  j.at("data_digest").get_to(v.data_digest);
  v.embedding_source = j.value("embedding_source", std::string{});
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_json_file(path, json(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    return j.get<Checkpoint>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidInput, path.string() + ": " + e.what());
  }
}

void to_json(json& j, const EpochLog& v) {
  j = json{{"epoch", v.epoch}, {"train_loss", v.train_loss}, {"validation", v.validation}, {"selected", v.selected}};
}

void to_json(json& j, const SweepRow& v) {
  j = json{{"lambda", v.lambda},
           {"margin", v.margin},
           {"selection_metric_value", v.selection_metric_value},
           {"epoch", v.epoch}};
}

ValidationMetrics validate_head(const UtilityHead& head, std::span<const PairwiseInstance> pairs,
                                const EmbeddingTable& embeddings) {
  if (pairs.empty()) throw Error(ErrorKind::InvalidInput, "validation split is empty");
  ValidationMetrics m;
  std::map<std::pair<std::string, std::string>, std::pair<double, int>> members;
  std::size_t ordered = 0;
  for (const auto& p : pairs) {
    const double si = head.score(embeddings.get(p.question_id, p.pid_i));
    const double sj = head.score(embeddings.get(p.question_id, p.pid_j));
    if (static_cast<double>(p.z) * (si - sj) > 0.0) ++ordered;
    members.emplace(std::make_pair(p.question_id, p.pid_i), std::make_pair(si, p.a_i));
    members.emplace(std::make_pair(p.question_id, p.pid_j), std::make_pair(sj, p.a_j));
  }
  m.pairwise_accuracy = static_cast<double>(ordered) / static_cast<double>(pairs.size());

  std::vector<double> probs;
  std::vector<int> labels;
  for (const auto& [key, value] : members) {
    probs.push_back(sigmoid(value.first));
    labels.push_back(value.second);
  }
  try {
    m.accuracy_auroc = auroc(probs, labels);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::SingleClass) throw;
  }
  return m;
}

namespace {

std::string data_digest(std::span<const PairwiseInstance> train_pairs, std::span<const PairwiseInstance> val_pairs,
                        const EmbeddingTable& embeddings) {
  json tr = json::array();
  for (const auto& p : train_pairs) tr.push_back(p);
  json va = json::array();
  for (const auto& p : val_pairs) va.push_back(p);
  return digest_fields({sha256_hex(tr.dump()), sha256_hex(va.dump()), embeddings.digest()});
}

void apply_update(std::vector<double>& params, const std::vector<double>& grad, double scale, double lr, double wd) {
  for (std::size_t k = 0; k < params.size(); ++k) params[k] -= lr * (grad[k] * scale + wd * params[k]);
}

}  // namespace

TrainResult train(std::span<const PairwiseInstance> train_pairs, std::span<const PairwiseInstance> val_pairs,
                  const EmbeddingTable& embeddings, const TrainConfig& cfg) {
  cfg.validate();
  if (train_pairs.empty()) throw Error(ErrorKind::InvalidInput, "training pair store is empty");
  if (val_pairs.empty()) throw Error(ErrorKind::InvalidInput, "validation split is empty");
  if (embeddings.dim() == 0) throw Error(ErrorKind::InvalidInput, "embedding table is empty");

  std::vector<PairExample> examples;
  examples.reserve(train_pairs.size());
  for (const auto& p : train_pairs) {
    examples.push_back(PairExample{embeddings.get(p.question_id, p.pid_i), embeddings.get(p.question_id, p.pid_j),
                                   p.z, p.a_i, p.a_j});
  }

  TrainResult result;
  UtilityHead head = UtilityHead::initialize(embeddings.dim(), cfg.hidden_dim, cfg.seed);
  const std::string digest = data_digest(train_pairs, val_pairs, embeddings);

  auto snapshot = [&](int epoch, double metric) {
    Checkpoint c;
    c.head = head;
    c.train_config = cfg;
    c.selection_metric_value = metric;
    c.epoch = epoch;
    c.data_digest = digest;
    return c;
  };

  const auto initial = validate_head(head, val_pairs, embeddings);
  result.best = snapshot(0, initial.criterion(cfg.selection));
  result.history.push_back(EpochLog{0, 0.0, initial, true});

  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995u);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<PairExample> batch;
  batch.reserve(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(examples[order[k]]);
      const auto lg = combined_loss(head, batch, cfg.margin, cfg.lambda);
      if (!std::isfinite(lg.loss.total) || !lg.grad.all_finite()) {
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch), result.best);
      }
      epoch_loss += lg.loss.total;
      const double scale = 1.0 / static_cast<double>(batch.size());
      const double lr = cfg.learning_rate;
      const double wd = cfg.weight_decay;
      // Decoupled weight decay applies to weights, not biases.
      apply_update(head.w1, lg.grad.w1, scale, lr, wd);
      apply_update(head.w2, lg.grad.w2, scale, lr, wd);
      apply_update(head.w_o, lg.grad.w_o, scale, lr, wd);
      apply_update(head.b1, lg.grad.b1, scale, lr, 0.0);
      apply_update(head.b2, lg.grad.b2, scale, lr, 0.0);
      head.b_o -= lr * lg.grad.b_o * scale;
    }
    if (!head.all_finite()) throw TrainingDiverged("non-finite parameters at epoch " + std::to_string(epoch), result.best);

    const auto metrics = validate_head(head, val_pairs, embeddings);
    const double value = metrics.criterion(cfg.selection);
    EpochLog log{epoch, epoch_loss / static_cast<double>(examples.size()), metrics, false};
    if (value > result.best.selection_metric_value) {
      result.best = snapshot(epoch, value);
      log.selected = true;
      for (auto& h : result.history) h.selected = false;
    }
    spdlog::info("epoch {}: loss {:.6f} val pairwise {:.4f} criterion {:.4f}", epoch, log.train_loss,
                 metrics.pairwise_accuracy, value);
    result.history.push_back(log);
  }
  return result;
}

SweepResult sweep(std::span<const PairwiseInstance> train_pairs, std::span<const PairwiseInstance> val_pairs,
                  const EmbeddingTable& embeddings, const TrainConfig& base) {
  SweepResult out;
  bool have = false;
  for (double lambda : {0.25, 1.0}) {
    for (double margin : {0.05, 0.1, 0.5}) {
      TrainConfig cfg = base;
      cfg.lambda = lambda;
      cfg.margin = margin;
      auto r = train(train_pairs, val_pairs, embeddings, cfg);
      out.rows.push_back(SweepRow{lambda, margin, r.best.selection_metric_value, r.best.epoch});
      if (!have || r.best.selection_metric_value > out.best.selection_metric_value) {
        out.best = std::move(r.best);
        have = true;
      }
    }
  }
  return out;
}

std::vector<double> predict_utilities(const Checkpoint& ckpt, Gateway& gw, const std::string& question,
                                      std::span<const Passage> passages, CallTrace* trace) {
  std::vector<double> out;
  out.reserve(passages.size());
  for (const auto& p : passages) {
    const auto emb = gw.embed_pair(question, p.text, trace);
    if (emb.size() != ckpt.head.input_dim) {
      throw Error(ErrorKind::DimensionMismatch, "embedding backend returns " + std::to_string(emb.size()) +
                                                    " dims, checkpoint expects " +
                                                    std::to_string(ckpt.head.input_dim));
    }
    out.push_back(ckpt.head.score(emb));
  }
  return out;
}

}  // namespace pu

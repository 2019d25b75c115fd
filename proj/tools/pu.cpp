#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "pu/error.hpp"
#include "pu/estimators.hpp"
#include "pu/pipeline.hpp"
#include "pu/synthetic.hpp"

namespace {

struct Overrides {
  std::string config;
  bool offline = false;
  std::optional<std::int64_t> seed;
  std::string cache_dir;
  std::string output_dir;
  bool verbose = false;

  // train
  std::string pairs, val;
  std::optional<double> lambda, margin, learning_rate;
  std::optional<std::string> selection;
  std::optional<std::uint64_t> train_seed;
  std::optional<int> epochs;
  bool sweep = false;

  // estimate / rerank
  std::string dataset, checkpoint, estimators, rows;
  std::optional<int> n_samples;
  std::optional<std::int64_t> estimate_seed;

  // evaluate
  std::string report, records, delong_baseline;
};

pu::RunConfig build_config(const Overrides& o) {
  pu::RunConfig cfg = o.config.empty()
                          ? pu::run_config_from_json(nlohmann::json::object(), std::filesystem::current_path())
                          : pu::load_run_config(o.config);
  if (o.offline) cfg.offline = true;
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.train.seed = static_cast<std::uint64_t>(*o.seed);
  }
  if (!o.cache_dir.empty()) cfg.cache_dir = o.cache_dir;
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;

  if (!o.pairs.empty()) cfg.train_pairs = o.pairs;
  if (!o.val.empty()) cfg.val_pairs = o.val;
  if (o.lambda) cfg.train.lambda = *o.lambda;
  if (o.margin) cfg.train.margin = *o.margin;
  if (o.learning_rate) cfg.train.learning_rate = *o.learning_rate;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.train_seed) cfg.train.seed = *o.train_seed;
  if (o.selection) {
    if (*o.selection == "R") cfg.train.selection = pu::Selection::rank_only;
    else if (*o.selection == "C") cfg.train.selection = pu::Selection::combined;
    else throw pu::Error(pu::ErrorKind::InvalidInput, "--selection must be R or C");
  }
  if (o.sweep) cfg.sweep = true;

  if (!o.dataset.empty()) cfg.test_dataset = o.dataset;
  if (!o.checkpoint.empty()) cfg.checkpoint = o.checkpoint;
  if (!o.estimators.empty()) cfg.estimators = pu::parse_estimator_list(o.estimators);
  if (!o.rows.empty()) cfg.rows = o.rows;
  if (o.n_samples) cfg.n_samples = *o.n_samples;
  if (o.estimate_seed) cfg.seed = *o.estimate_seed;

  if (!o.report.empty()) cfg.report_dir = o.report;
  if (!o.records.empty()) cfg.records = o.records;
  if (!o.delong_baseline.empty()) cfg.delong_baseline = pu::canonical_estimator(o.delong_baseline);
  cfg.validate();
  return cfg;
}

int exit_code(const std::vector<pu::StageReport>& reports) {
  for (const auto& r : reports) {
    if (r.record_failures > 0) return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Passage-utility uncertainty toolkit for retrieval-augmented QA"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "Run configuration (JSON)");
  app.add_flag("--offline", o.offline, "Fail on any backend call not answered from cache or fixtures");
  app.add_option("--seed", o.seed, "Seed for training and sampling");
  app.add_option("--cache-dir", o.cache_dir, "Backend response cache directory");
  app.add_option("--output-dir", o.output_dir, "Artifact directory");
  app.add_flag("-v,--verbose", o.verbose, "Debug logging");

  auto* curate = app.add_subcommand("curate", "Label per-passage utilities and derive ranking pairs");

  auto* train = app.add_subcommand("train", "Train the utility head");
  train->add_option("--pairs", o.pairs, "Training pairs (JSONL)");
  train->add_option("--val", o.val, "Validation pairs (JSONL)");
  train->add_option("--lambda", o.lambda, "Weight of the accuracy term");
  train->add_option("--margin", o.margin, "Ranking margin");
  train->add_option("--selection", o.selection, "Checkpoint selection: R or C");
  train->add_option("--seed", o.train_seed, "Initialization and shuffle seed");
  train->add_option("--epochs", o.epochs, "Training epochs");
  train->add_option("--learning-rate", o.learning_rate, "Step size");
  train->add_flag("--sweep", o.sweep, "Grid over lambda and margin");

  auto* estimate = app.add_subcommand("estimate", "Score every test question with the configured estimators");
  estimate->add_option("--dataset", o.dataset, "Questions (JSONL)");
  estimate->add_option("--checkpoint", o.checkpoint, "Utility head checkpoint");
  estimate->add_option("--estimators", o.estimators, "Comma-separated estimator keys");
  estimate->add_option("--n-samples", o.n_samples, "Sampled answers per question");
  estimate->add_option("--seed", o.estimate_seed, "Base sampling seed");
  estimate->add_option("--rows", o.rows, "Output rows (JSONL)");

  auto* evaluate = app.add_subcommand("evaluate", "AUROC, AURAC, selective accuracy and DeLong tests");
  evaluate->add_option("--rows", o.rows, "Estimate rows (JSONL)");
  evaluate->add_option("--report", o.report, "Report directory");
  evaluate->add_option("--delong-baseline", o.delong_baseline, "Estimator the others are tested against");
  evaluate->add_option("--records", o.records, "Per-passage records for the agreement study");

  auto* rerank = app.add_subcommand("rerank", "Top-k passage selection by utility, perplexity or retriever");
  rerank->add_option("--dataset", o.dataset, "Questions (JSONL)");
  rerank->add_option("--checkpoint", o.checkpoint, "Utility head checkpoint");

  auto* cost = app.add_subcommand("cost-report", "Check observed inference calls against the cost formulas");
  cost->add_option("--rows", o.rows, "Estimate rows (JSONL); costs are read beside them");

  auto* e2e = app.add_subcommand("end-to-end", "curate, train, estimate, evaluate and cost-report");

  pu::SyntheticOptions synth;
  std::string bundle_dir;
  auto* fixture = app.add_subcommand("make-fixture", "Write a synthetic offline bundle");
  fixture->add_option("--out", bundle_dir, "Bundle directory")->required();
  fixture->add_option("--n-train", synth.n_train, "Training questions");
  fixture->add_option("--n-val", synth.n_val, "Validation questions");
  fixture->add_option("--n-test", synth.n_test, "Test questions");
  fixture->add_option("--noise", synth.noise_sigma, "Embedding noise sigma");
  fixture->add_option("--world-seed", synth.seed, "Generator seed");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(o.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (fixture->parsed()) {
      const auto path = pu::write_synthetic_bundle(bundle_dir, synth);
      std::cout << path.string() << "\n";
      return 0;
    }
    pu::Pipeline pipeline(build_config(o));
    std::vector<pu::StageReport> reports;
    if (curate->parsed()) reports.push_back(pipeline.curate());
    else if (train->parsed()) reports.push_back(pipeline.train());
    else if (estimate->parsed()) reports.push_back(pipeline.estimate());
    else if (evaluate->parsed()) reports.push_back(pipeline.evaluate());
    else if (rerank->parsed()) reports.push_back(pipeline.rerank());
    else if (cost->parsed()) reports.push_back(pipeline.cost_report());
    else if (e2e->parsed()) reports = pipeline.end_to_end();
    for (const auto& r : reports) {
      std::cout << r.name << ": " << (r.status == pu::StageStatus::skipped ? "skipped" : "ran");
      if (r.record_failures > 0) std::cout << " (" << r.record_failures << " record failures)";
      std::cout << "\n";
    }
    return exit_code(reports);
  } catch (const pu::Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}

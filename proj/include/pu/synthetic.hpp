#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "pu/core_types.hpp"
#include "pu/curation.hpp"
#include "pu/prompts.hpp"

namespace pu {

// A scripted world for the mock backends. Every passage has a fixed accuracy
// label and entailment value, so its gold utility sits on one of four levels
// (0.01, 0.25, 0.75, 0.99). The pair embedding encodes that utility along a
// fixed direction plus Gaussian noise. The full-set answer is correct iff some
// passage alone yields a correct answer.
struct SyntheticOptions {
  std::size_t n_train = 300;
  std::size_t n_val = 60;
  std::size_t n_test = 200;
  std::size_t passages = 5;
  int n_samples = 10;
  std::int64_t sample_seed = 0;  // samples use sample_seed + k, k = 1..n_samples
  std::uint64_t seed = 1;
  double noise_sigma = 0.05;
  std::size_t embedding_dim = 64;
  CurationConfig::EntailmentInput entailment = CurationConfig::EntailmentInput::passage_plus_question;
  std::string dataset_tag = "synthetic";
};

struct SyntheticWorld {
  std::vector<QAExample> train;
  std::vector<QAExample> val;
  std::vector<QAExample> test;
  std::vector<FewShotBlock> few_shot;
  nlohmann::json fixture;  // mock fixture document
};

[[nodiscard]] SyntheticWorld make_synthetic_world(const SyntheticOptions& opts);

}  // namespace pu

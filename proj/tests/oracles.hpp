#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace pu::oracle {

// O(n^2) pair counting: P(pos > neg) + 0.5 P(tie) with label 1 positive.
inline double auroc_pairs(std::span<const double> scores, std::span<const int> labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Paired stratified bootstrap of the AUROC difference; p from the normal
// approximation with the bootstrap standard error.
inline double bootstrap_p(std::span<const double> a, std::span<const double> b, std::span<const int> labels,
                          int resamples, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  const double observed = auroc_pairs(a, labels) - auroc_pairs(b, labels);
  std::mt19937_64 rng(seed);
  std::vector<double> ra, rb;
  std::vector<int> rl;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int r = 0; r < resamples; ++r) {
    ra.clear();
    rb.clear();
    rl.clear();
    for (const auto* group : {&pos, &neg}) {
      std::uniform_int_distribution<std::size_t> pick(0, group->size() - 1);
      for (std::size_t k = 0; k < group->size(); ++k) {
        const std::size_t i = (*group)[pick(rng)];
        ra.push_back(a[i]);
        rb.push_back(b[i]);
        rl.push_back(labels[i]);
      }
    }
    const double d = auroc_pairs(ra, rl) - auroc_pairs(rb, rl);
    sum += d;
    sum_sq += d * d;
  }
  const double mean = sum / resamples;
  const double var = (sum_sq - resamples * mean * mean) / (resamples - 1);
  if (var <= 0.0) return observed == 0.0 ? 1.0 : 0.0;
  return std::erfc(std::abs(observed) / std::sqrt(var) / std::sqrt(2.0));
}

// Every C(n,2) pair (i < j) with distinct utilities, z = sign(u_i - u_j).
struct PairTriple {
  std::size_t i, j;
  int z;
};

inline std::vector<PairTriple> enumerate_pairs(std::span<const double> u) {
  std::vector<PairTriple> out;
  for (std::size_t i = 0; i < u.size(); ++i) {
    for (std::size_t j = i + 1; j < u.size(); ++j) {
      if (u[i] != u[j]) out.push_back({i, j, u[i] > u[j] ? 1 : -1});
    }
  }
  return out;
}

}  // namespace pu::oracle

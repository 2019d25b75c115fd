#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace pu {

enum class Activation { relu };

// Two hidden layers over a frozen pair embedding, then a linear read-out:
//   h1 = relu(x W1 + b1), h2 = relu(h1 W2 + b2), score = w_o . h2 + b_o
// Matrices are row-major with shape (fan_in, fan_out).
struct UtilityHead {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::vector<double> w1;  // input_dim x hidden_dim
  std::vector<double> b1;  // hidden_dim
  std::vector<double> w2;  // hidden_dim x hidden_dim
  std::vector<double> b2;  // hidden_dim
  std::vector<double> w_o;  // hidden_dim
  double b_o = 0.0;
  Activation activation = Activation::relu;

  [[nodiscard]] static UtilityHead zeros(std::size_t input_dim, std::size_t hidden_dim);
  // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  [[nodiscard]] static UtilityHead initialize(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed);

  [[nodiscard]] double score(std::span<const double> embedding) const;

  // Flat view over every parameter in declaration order (w1, b1, w2, b2, w_o, b_o).
  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

  [[nodiscard]] bool all_finite() const;
  void validate() const;

  friend bool operator==(const UtilityHead&, const UtilityHead&) = default;
};

void to_json(nlohmann::json& j, const UtilityHead& v);
void from_json(const nlohmann::json& j, UtilityHead& v);

struct ForwardCache {
  std::vector<double> z1, h1, z2, h2;
  double score = 0.0;
};

double forward(const UtilityHead& head, std::span<const double> embedding, ForwardCache& cache);

// Accumulates d(score)/d(params) * upstream into grad (same shape as head).
void backward(const UtilityHead& head, std::span<const double> embedding, const ForwardCache& cache,
              double upstream, UtilityHead& grad);

struct HingeTerms {
  double loss = 0.0;
  double d_si = 0.0;
  double d_sj = 0.0;
};

// max(0, m - z (s_i - s_j)); zero gradient at the kink.
[[nodiscard]] HingeTerms rank_loss(double s_i, double s_j, int z, double margin);

struct BceTerms {
  double loss = 0.0;
  double d_s = 0.0;
};

// Negative log-likelihood of label a under sigmoid(s), in logits form.
[[nodiscard]] BceTerms bce_loss(double s, int a);

[[nodiscard]] double sigmoid(double s);

struct PairExample {
  std::span<const double> emb_i;
  std::span<const double> emb_j;
  int z = 1;
  int a_i = 0;
  int a_j = 0;
};

struct LossBreakdown {
  double total = 0.0;
  double rank = 0.0;
  double bce = 0.0;
};

struct LossAndGradient {
  LossBreakdown loss;
  UtilityHead grad;
};

// Sum over pairs of rank_loss + lambda * (bce_i + bce_j), with the exact
// parameter gradient of that sum.
[[nodiscard]] LossAndGradient combined_loss(const UtilityHead& head, std::span<const PairExample> batch,
                                            double margin, double lambda);

// Loss value only.
[[nodiscard]] LossBreakdown combined_loss_value(const UtilityHead& head, std::span<const PairExample> batch,
                                                double margin, double lambda);

}  // namespace pu

#include "pu/utility_head.hpp"

#include <cmath>
#include <random>

#include "pu/error.hpp"

namespace pu {

using nlohmann::json;

NLOHMANN_JSON_SERIALIZE_ENUM(Activation, {{Activation::relu, "relu"}})

UtilityHead UtilityHead::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  UtilityHead h;
  h.input_dim = input_dim;
  h.hidden_dim = hidden_dim;
  h.w1.assign(input_dim * hidden_dim, 0.0);
  h.b1.assign(hidden_dim, 0.0);
  h.w2.assign(hidden_dim * hidden_dim, 0.0);
  h.b2.assign(hidden_dim, 0.0);
  h.w_o.assign(hidden_dim, 0.0);
  h.b_o = 0.0;
  return h;
}

UtilityHead UtilityHead::initialize(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed) {
  if (input_dim == 0 || hidden_dim == 0) throw Error(ErrorKind::InvalidInput, "head dimensions must be positive");
  UtilityHead h = zeros(input_dim, hidden_dim);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](std::vector<double>& w, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : w) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      x = (2.0 * u - 1.0) * bound;
    }
  };
  fill(h.w1, input_dim);
  fill(h.w2, hidden_dim);
  fill(h.w_o, hidden_dim);
  return h;
}

double UtilityHead::score(std::span<const double> embedding) const {
  ForwardCache cache;
  return forward(*this, embedding, cache);
}

std::size_t UtilityHead::parameter_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size() + w_o.size() + 1;
}

std::vector<double> UtilityHead::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto* v : {&w1, &b1, &w2, &b2, &w_o}) flat.insert(flat.end(), v->begin(), v->end());
  flat.push_back(b_o);
  return flat;
}

void UtilityHead::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw Error(ErrorKind::DimensionMismatch, "flat parameter size mismatch");
  std::size_t k = 0;
  for (auto* v : {&w1, &b1, &w2, &b2, &w_o}) {
    for (auto& x : *v) x = flat[k++];
  }
  b_o = flat[k];
}

bool UtilityHead::all_finite() const {
  for (const auto* v : {&w1, &b1, &w2, &b2, &w_o}) {
    for (double x : *v) {
      if (!std::isfinite(x)) return false;
    }
  }
  return std::isfinite(b_o);
}

void UtilityHead::validate() const {
  const std::size_t d = input_dim;
  const std::size_t h = hidden_dim;
  if (d == 0 || h == 0 || w1.size() != d * h || b1.size() != h || w2.size() != h * h || b2.size() != h ||
      w_o.size() != h) {
    throw Error(ErrorKind::DimensionMismatch, "head parameter shapes are inconsistent");
  }
  if (!all_finite()) throw Error(ErrorKind::InvalidInput, "head has non-finite parameters");
}

void to_json(json& j, const UtilityHead& v) {
  j = json{{"shapes",
            {{"w1", {v.input_dim, v.hidden_dim}},
             {"b1", {v.hidden_dim}},
             {"w2", {v.hidden_dim, v.hidden_dim}},
             {"b2", {v.hidden_dim}},
             {"w_o", {v.hidden_dim}},
             {"b_o", json::array()}}},
           {"activation", v.activation},
           {"parameters",
            {{"w1", v.w1}, {"b1", v.b1}, {"w2", v.w2}, {"b2", v.b2}, {"w_o", v.w_o}, {"b_o", v.b_o}}}};
}

void from_json(const json& j, UtilityHead& v) {
  const auto& shapes = j.at("shapes");
  v.input_dim = shapes.at("w1").at(0).get<std::size_t>();
  v.hidden_dim = shapes.at("w1").at(1).get<std::size_t>();
  v.activation = j.value("activation", Activation::relu);
  const auto& p = j.at("parameters");
  p.at("w1").get_to(v.w1);
  p.at("b1").get_to(v.b1);
  p.at("w2").get_to(v.w2);
  p.at("b2").get_to(v.b2);
  p.at("w_o").get_to(v.w_o);
  p.at("b_o").get_to(v.b_o);
  v.validate();
}

double forward(const UtilityHead& head, std::span<const double> x, ForwardCache& cache) {
  const std::size_t d = head.input_dim;
  const std::size_t h = head.hidden_dim;
  if (x.size() != d) {
    throw Error(ErrorKind::DimensionMismatch,
                "embedding has " + std::to_string(x.size()) + " dims, head expects " + std::to_string(d));
  }
  cache.z1.assign(head.b1.begin(), head.b1.end());
  for (std::size_t i = 0; i < d; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* row = &head.w1[i * h];
    for (std::size_t k = 0; k < h; ++k) cache.z1[k] += xi * row[k];
  }
  cache.h1.resize(h);
  for (std::size_t k = 0; k < h; ++k) cache.h1[k] = cache.z1[k] > 0.0 ? cache.z1[k] : 0.0;

  cache.z2.assign(head.b2.begin(), head.b2.end());
  for (std::size_t i = 0; i < h; ++i) {
    const double hi = cache.h1[i];
    if (hi == 0.0) continue;
    const double* row = &head.w2[i * h];
    for (std::size_t k = 0; k < h; ++k) cache.z2[k] += hi * row[k];
  }
  cache.h2.resize(h);
  for (std::size_t k = 0; k < h; ++k) cache.h2[k] = cache.z2[k] > 0.0 ? cache.z2[k] : 0.0;

  double s = head.b_o;
  for (std::size_t k = 0; k < h; ++k) s += head.w_o[k] * cache.h2[k];
  cache.score = s;
  return s;
}

void backward(const UtilityHead& head, std::span<const double> x, const ForwardCache& cache, double upstream,
              UtilityHead& grad) {
  const std::size_t d = head.input_dim;
  const std::size_t h = head.hidden_dim;
  if (upstream == 0.0) return;

  grad.b_o += upstream;
  std::vector<double> dz2(h);
  for (std::size_t k = 0; k < h; ++k) {
    grad.w_o[k] += upstream * cache.h2[k];
    dz2[k] = cache.z2[k] > 0.0 ? upstream * head.w_o[k] : 0.0;
  }

  std::vector<double> dz1(h, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    const double hi = cache.h1[i];
    const double* wrow = &head.w2[i * h];
    double* grow = &grad.w2[i * h];
    double back = 0.0;
    for (std::size_t k = 0; k < h; ++k) {
      grow[k] += hi * dz2[k];
      back += wrow[k] * dz2[k];
    }
    dz1[i] = cache.z1[i] > 0.0 ? back : 0.0;
  }
  for (std::size_t k = 0; k < h; ++k) {
    grad.b2[k] += dz2[k];
    grad.b1[k] += dz1[k];
  }

  for (std::size_t i = 0; i < d; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    double* grow = &grad.w1[i * h];
    for (std::size_t k = 0; k < h; ++k) grow[k] += xi * dz1[k];
  }
}

HingeTerms rank_loss(double s_i, double s_j, int z, double margin) {
  const double zf = static_cast<double>(z);
  const double slack = margin - zf * (s_i - s_j);
  if (slack <= 0.0) return HingeTerms{0.0, 0.0, 0.0};
  return HingeTerms{slack, -zf, zf};
}

double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

BceTerms bce_loss(double s, int a) {
  // softplus(s) - a * s, written to avoid overflow for large |s|.
  const double softplus = std::max(s, 0.0) + std::log1p(std::exp(-std::abs(s)));
  return BceTerms{softplus - static_cast<double>(a) * s, sigmoid(s) - static_cast<double>(a)};
}

namespace {

template <bool WithGradient>
LossAndGradient evaluate(const UtilityHead& head, std::span<const PairExample> batch, double margin, double lambda) {
  LossAndGradient out;
  if constexpr (WithGradient) out.grad = UtilityHead::zeros(head.input_dim, head.hidden_dim);
  ForwardCache ci;
  ForwardCache cj;
  for (const auto& ex : batch) {
    const double si = forward(head, ex.emb_i, ci);
    const double sj = forward(head, ex.emb_j, cj);
    const auto hinge = rank_loss(si, sj, ex.z, margin);
    const auto bi = bce_loss(si, ex.a_i);
    const auto bj = bce_loss(sj, ex.a_j);
    out.loss.rank += hinge.loss;
    out.loss.bce += bi.loss + bj.loss;
    if constexpr (WithGradient) {
      backward(head, ex.emb_i, ci, hinge.d_si + lambda * bi.d_s, out.grad);
      backward(head, ex.emb_j, cj, hinge.d_sj + lambda * bj.d_s, out.grad);
    }
  }
  out.loss.total = out.loss.rank + lambda * out.loss.bce;
  return out;
}

}  // namespace

LossAndGradient combined_loss(const UtilityHead& head, std::span<const PairExample> batch, double margin,
                              double lambda) {
  return evaluate<true>(head, batch, margin, lambda);
}

LossBreakdown combined_loss_value(const UtilityHead& head, std::span<const PairExample> batch, double margin,
                                  double lambda) {
  return evaluate<false>(head, batch, margin, lambda).loss;
}

}  // namespace pu

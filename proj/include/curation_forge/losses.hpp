#pragma once

// Scalar and distributional losses for quality prediction, each with an
// analytic gradient with respect to the prediction.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "curation_forge/error.hpp"

namespace curation_forge {

inline constexpr std::size_t kAcrBins = 5;
inline constexpr double kHuberDelta = 1.0 / 9.0;
inline constexpr double kNormTolerance = 1e-9;

struct ScoreDistribution {
  std::vector<double> p;

  explicit ScoreDistribution(std::vector<double> mass) : p(std::move(mass)) {
    require(!p.empty(), ErrorCode::invalid_argument, "distribution needs at least one bin");
    double total = 0.0;
    for (double v : p) {
      require(std::isfinite(v) && v >= 0.0, ErrorCode::invalid_argument, "distribution mass must be finite and >= 0");
      total += v;
    }
    require(total > 0.0, ErrorCode::invalid_argument, "distribution has zero total mass");
  }

  std::size_t size() const { return p.size(); }
  double total() const { return std::accumulate(p.begin(), p.end(), 0.0); }

  std::vector<double> normalized() const {
    const double t = total();
    std::vector<double> out(p);
    for (double& v : out) v /= t;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Scalar losses; gradients are d/d(q_hat).

inline double mae(double q, double q_hat) { return std::abs(q - q_hat); }
inline double mse(double q, double q_hat) { return (q - q_hat) * (q - q_hat); }

inline double mae_grad(double q, double q_hat) {
  if (q_hat > q) return 1.0;
  if (q_hat < q) return -1.0;
  return 0.0;  // subgradient at the kink
}

inline double mse_grad(double q, double q_hat) { return 2.0 * (q_hat - q); }

// ---------------------------------------------------------------------------
// Distribution helpers

namespace detail {

inline void check_pair(std::span<const double> p, std::span<const double> p_hat) {
  require(!p.empty() && p.size() == p_hat.size(), ErrorCode::invalid_argument,
          "distributions must be non-empty and of equal length");
}

inline void check_normalized(std::span<const double> d, const char* which) {
  double total = 0.0;
  for (double v : d) {
    require(std::isfinite(v) && v >= 0.0, ErrorCode::invalid_argument,
            std::string(which) + " has a negative or non-finite entry");
    total += v;
  }
  require(std::abs(total - 1.0) <= kNormTolerance, ErrorCode::invalid_argument,
          std::string(which) + " is not normalized (sum " + std::to_string(total) + ")");
}

}  // namespace detail

// sum_n n * p_n / sum_n p_n with bins numbered from 1. Extended-precision
// sums keep one-hot and uniform inputs exact, and scaling by a power of two
// leaves the result bit-identical.
inline double mos_of_distribution(std::span<const double> p_hat) {
  long double mass = 0.0L, moment = 0.0L;
  for (std::size_t n = 0; n < p_hat.size(); ++n) {
    require(std::isfinite(p_hat[n]) && p_hat[n] >= 0.0, ErrorCode::invalid_argument,
            "distribution mass must be finite and >= 0");
    mass += p_hat[n];
    moment += static_cast<long double>(n + 1) * p_hat[n];
  }
  require(mass > 0.0L, ErrorCode::invalid_argument, "distribution has zero total mass");
  return static_cast<double>(moment / mass);
}

inline std::vector<double> mos_of_distribution_grad(std::span<const double> p_hat) {
  const double mos = mos_of_distribution(p_hat);
  const double mass = std::accumulate(p_hat.begin(), p_hat.end(), 0.0);
  std::vector<double> g(p_hat.size());
  for (std::size_t n = 0; n < g.size(); ++n) g[n] = (static_cast<double>(n + 1) - mos) / mass;
  return g;
}

// ---------------------------------------------------------------------------
// Cross-entropy

// -sum p_n log p_hat_n with 0 log 0 = 0; no normalization check.
inline double cross_entropy_unchecked(std::span<const double> p, std::span<const double> p_hat) {
  detail::check_pair(p, p_hat);
  double loss = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    if (p[n] == 0.0) continue;
    if (!(p_hat[n] > 0.0))
      fail(ErrorCode::infinite_loss, "cross-entropy is infinite: predicted mass 0 in bin " + std::to_string(n + 1) +
                                         " where the target has mass");
    loss -= p[n] * std::log(p_hat[n]);
  }
  return loss;
}

inline double cross_entropy(std::span<const double> p, std::span<const double> p_hat) {
  detail::check_pair(p, p_hat);
  detail::check_normalized(p, "p");
  detail::check_normalized(p_hat, "p_hat");
  return cross_entropy_unchecked(p, p_hat);
}

inline std::vector<double> cross_entropy_grad(std::span<const double> p, std::span<const double> p_hat) {
  (void)cross_entropy_unchecked(p, p_hat);
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t n = 0; n < p.size(); ++n)
    if (p[n] != 0.0) g[n] = -p[n] / p_hat[n];
  return g;
}

inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// ---------------------------------------------------------------------------
// Huber on distributions

inline double huber(double x, double delta = kHuberDelta) {
  const double a = std::abs(x);
  return a <= delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}

inline double huber_derivative(double x, double delta = kHuberDelta) {
  if (std::abs(x) <= delta) return x;
  return x > 0.0 ? delta : -delta;
}

inline double huber_distribution(std::span<const double> p, std::span<const double> p_hat,
                                 double delta = kHuberDelta) {
  detail::check_pair(p, p_hat);
  require(delta > 0.0, ErrorCode::invalid_argument, "huber delta must be > 0");
  double loss = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) loss += huber(p[n] - p_hat[n], delta);
  return loss;
}

inline std::vector<double> huber_distribution_grad(std::span<const double> p, std::span<const double> p_hat,
                                                   double delta = kHuberDelta) {
  detail::check_pair(p, p_hat);
  require(delta > 0.0, ErrorCode::invalid_argument, "huber delta must be > 0");
  std::vector<double> g(p.size());
  for (std::size_t n = 0; n < p.size(); ++n) g[n] = -huber_derivative(p[n] - p_hat[n], delta);
  return g;
}

// ---------------------------------------------------------------------------
// EMD: sqrt((1/N) sum_n (c_p,n - c_p_hat,n)^2) over cumulative sums.

inline double emd_unchecked(std::span<const double> p, std::span<const double> p_hat) {
  detail::check_pair(p, p_hat);
  double cp = 0.0, cq = 0.0, ss = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    cp += p[n];
    cq += p_hat[n];
    ss += (cp - cq) * (cp - cq);
  }
  return std::sqrt(ss / static_cast<double>(p.size()));
}

inline double emd(std::span<const double> p, std::span<const double> p_hat) {
  detail::check_pair(p, p_hat);
  detail::check_normalized(p, "p");
  detail::check_normalized(p_hat, "p_hat");
  return emd_unchecked(p, p_hat);
}

// dL/dp_hat_k = -(1 / (N L)) sum_{n >= k} (c_p,n - c_p_hat,n); zero where L = 0.
inline std::vector<double> emd_grad(std::span<const double> p, std::span<const double> p_hat) {
  const double loss = emd_unchecked(p, p_hat);
  const std::size_t n = p.size();
  std::vector<double> diff(n), g(n, 0.0);
  double cp = 0.0, cq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cp += p[i];
    cq += p_hat[i];
    diff[i] = cp - cq;
  }
  if (loss == 0.0) return g;
  double tail = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    tail += diff[k];
    g[k] = -tail / (static_cast<double>(n) * loss);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Name-based dispatch for the command line.

enum class LossKind { mae, mse, cross_entropy, huber, emd };

inline LossKind parse_loss(std::string_view name) {
  if (name == "mae") return LossKind::mae;
  if (name == "mse") return LossKind::mse;
  if (name == "cross_entropy" || name == "cross-entropy" || name == "ce") return LossKind::cross_entropy;
  if (name == "huber") return LossKind::huber;
  if (name == "emd") return LossKind::emd;
  fail(ErrorCode::invalid_argument, "unknown loss '" + std::string(name) + "'");
}

// Scalar losses take single-element inputs.
inline double evaluate_loss(LossKind kind, std::span<const double> p, std::span<const double> p_hat,
                            double delta = kHuberDelta) {
  switch (kind) {
    case LossKind::mae:
    case LossKind::mse:
      require(p.size() == 1 && p_hat.size() == 1, ErrorCode::invalid_argument, "scalar losses take one value each");
      return kind == LossKind::mae ? mae(p[0], p_hat[0]) : mse(p[0], p_hat[0]);
    case LossKind::cross_entropy: return cross_entropy(p, p_hat);
    case LossKind::huber: return huber_distribution(p, p_hat, delta);
    case LossKind::emd: return emd(p, p_hat);
  }
  fail(ErrorCode::invalid_argument, "unknown loss");
}

}  // namespace curation_forge

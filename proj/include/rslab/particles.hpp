#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rslab/errors.hpp"

namespace rslab {

/// Particle states, one row per particle.
using StateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

// Neumaier's variant of compensated summation.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace detail

inline void check_weights(std::span<const double> raw) {
  if (raw.empty()) throw Error(ErrorCode::InvalidArgument, "weight vector is empty");
  bool any_positive = false;
  for (std::size_t n = 0; n < raw.size(); ++n) {
    if (!std::isfinite(raw[n])) throw Error(ErrorCode::NonFinite, "weight " + std::to_string(n) + " is not finite");
    if (raw[n] < 0.0) throw Error(ErrorCode::NegativeWeight, "weight " + std::to_string(n) + " is negative");
    any_positive = any_positive || raw[n] > 0.0;
  }
  if (!any_positive) throw Error(ErrorCode::AllZeroWeights, "every weight is zero");
}

/// Rescales nonnegative weights so they sum to one.
inline std::vector<double> normalize_weights(std::span<const double> raw) {
  check_weights(raw);
  detail::CompensatedSum total;
  for (double w : raw) total.add(w);
  const double s = total.value();
  std::vector<double> out(raw.size());
  std::transform(raw.begin(), raw.end(), out.begin(), [s](double w) { return w / s; });
  return out;
}

/// Normalized weights from log-weights, subtracting the maximum before
/// exponentiation. Entries equal to -inf get weight zero.
inline std::vector<double> normalize_log_weights(std::span<const double> log_w) {
  if (log_w.empty()) throw Error(ErrorCode::InvalidArgument, "weight vector is empty");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < log_w.size(); ++n) {
    const double lw = log_w[n];
    if (std::isnan(lw) || lw == std::numeric_limits<double>::infinity())
      throw Error(ErrorCode::NonFinite, "log-weight " + std::to_string(n) + " is not finite");
    mx = std::max(mx, lw);
  }
  if (mx == -std::numeric_limits<double>::infinity())
    throw Error(ErrorCode::AllZeroWeights, "every weight is zero");
  std::vector<double> w(log_w.size());
  for (std::size_t n = 0; n < w.size(); ++n) w[n] = std::exp(log_w[n] - mx);
  return normalize_weights(w);
}

/// Cumulative weights F_N with the last entry pinned to exactly 1.
class CumulativeWeights {
 public:
  CumulativeWeights() = default;

  /// `weights` must already be normalized.
  explicit CumulativeWeights(std::span<const double> weights) : cumsum_(weights.size()) {
    detail::CompensatedSum acc;
    for (std::size_t n = 0; n < weights.size(); ++n) {
      acc.add(weights[n]);
      cumsum_[n] = std::min(acc.value(), 1.0);
    }
    if (!cumsum_.empty()) cumsum_.back() = 1.0;
    // Rounding in the clamp can only ever flatten, never reverse, the order.
    for (std::size_t n = 1; n < cumsum_.size(); ++n) cumsum_[n] = std::max(cumsum_[n], cumsum_[n - 1]);
  }

  std::size_t size() const noexcept { return cumsum_.size(); }
  double operator[](std::size_t n) const { return cumsum_[n]; }
  std::span<const double> values() const noexcept { return cumsum_; }

  /// Generalized inverse: smallest (0-based) n with cumsum[n] >= u.
  std::size_t inverse(double u) const noexcept {
    const auto it = std::lower_bound(cumsum_.begin(), cumsum_.end(), u);
    if (it == cumsum_.end()) return cumsum_.size() - 1;
    return static_cast<std::size_t>(it - cumsum_.begin());
  }

 private:
  std::vector<double> cumsum_;
};

inline std::size_t inverse_cdf(const CumulativeWeights& cw, double u) { return cw.inverse(u); }

/// N states in R^d with normalized weights; immutable once built.
class WeightedParticleSystem {
 public:
  WeightedParticleSystem(StateMatrix states, std::span<const double> raw_weights)
      : states_(std::move(states)), weights_(normalize_weights(raw_weights)), cumulative_(weights_) {
    if (static_cast<std::size_t>(states_.rows()) != weights_.size())
      throw Error(ErrorCode::InvalidArgument, "state rows (" + std::to_string(states_.rows()) +
                                                  ") differ from weight count (" + std::to_string(weights_.size()) + ")");
    if (states_.cols() < 1) throw Error(ErrorCode::InvalidArgument, "state dimension must be >= 1");
  }

  static WeightedParticleSystem from_log_weights(StateMatrix states, std::span<const double> log_w) {
    const auto w = normalize_log_weights(log_w);
    return WeightedParticleSystem(std::move(states), w);
  }

  /// One-dimensional system whose states are the indices 0..N-1, for
  /// callers that only care about weights.
  static WeightedParticleSystem weights_only(std::span<const double> raw_weights) {
    StateMatrix states(static_cast<Eigen::Index>(raw_weights.size()), 1);
    for (Eigen::Index n = 0; n < states.rows(); ++n) states(n, 0) = static_cast<double>(n);
    return WeightedParticleSystem(std::move(states), raw_weights);
  }

  std::size_t size() const noexcept { return weights_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(states_.cols()); }
  const StateMatrix& states() const noexcept { return states_; }
  std::span<const double> weights() const noexcept { return weights_; }
  double weight(std::size_t n) const { return weights_[n]; }
  const CumulativeWeights& cumulative() const noexcept { return cumulative_; }

  /// System reindexed so that entry n is the original entry perm[n].
  WeightedParticleSystem permuted(std::span<const std::size_t> perm) const {
    StateMatrix s(states_.rows(), states_.cols());
    std::vector<double> w(perm.size());
    for (std::size_t n = 0; n < perm.size(); ++n) {
      s.row(static_cast<Eigen::Index>(n)) = states_.row(static_cast<Eigen::Index>(perm[n]));
      w[n] = weights_[perm[n]];
    }
    return WeightedParticleSystem(std::move(s), w);
  }

 private:
  StateMatrix states_;
  std::vector<double> weights_;
  CumulativeWeights cumulative_;
};

/// Expands counts into ancestors in ascending contiguous blocks. When
/// `expected_total` is given the counts must add up to it.
inline std::vector<std::size_t> counts_to_ancestors(std::span<const std::size_t> counts,
                                                    std::optional<std::size_t> expected_total = std::nullopt) {
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (expected_total && total != *expected_total)
    throw Error(ErrorCode::CountMismatch,
                "counts sum to " + std::to_string(total) + ", expected " + std::to_string(*expected_total));
  std::vector<std::size_t> ancestors;
  ancestors.reserve(total);
  for (std::size_t n = 0; n < counts.size(); ++n) ancestors.insert(ancestors.end(), counts[n], n);
  return ancestors;
}

inline std::vector<std::size_t> ancestors_to_counts(std::span<const std::size_t> ancestors, std::size_t n_particles) {
  std::vector<std::size_t> counts(n_particles, 0);
  for (std::size_t a : ancestors) {
    if (a >= n_particles)
      throw Error(ErrorCode::IndexOutOfRange,
                  "ancestor " + std::to_string(a) + " outside 0.." + std::to_string(n_particles - 1));
    ++counts[a];
  }
  return counts;
}

/// Ancestor indices (0-based) with offspring counts and deviations
/// count[n] - N*W[n].
struct ResampleResult {
  std::vector<std::size_t> ancestors;
  std::vector<std::size_t> counts;
  std::vector<double> deviations;

  static ResampleResult from_ancestors(std::vector<std::size_t> ancestors, std::span<const double> weights) {
    ResampleResult r;
    r.counts = ancestors_to_counts(ancestors, weights.size());
    r.ancestors = std::move(ancestors);
    r.fill_deviations(weights);
    return r;
  }

  static ResampleResult from_counts(std::vector<std::size_t> counts, std::span<const double> weights) {
    ResampleResult r;
    r.ancestors = counts_to_ancestors(counts, weights.size());
    r.counts = std::move(counts);
    r.fill_deviations(weights);
    return r;
  }

  double max_abs_deviation() const {
    double m = 0.0;
    for (double d : deviations) m = std::max(m, std::abs(d));
    return m;
  }

 private:
  void fill_deviations(std::span<const double> weights) {
    const double n = static_cast<double>(weights.size());
    deviations.resize(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i)
      deviations[i] = static_cast<double>(counts[i]) - n * weights[i];
  }
};

}  // namespace rslab

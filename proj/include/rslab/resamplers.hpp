#pragma once

// Resampling schemes as pure functions of (weights, uniforms).
//
// Uniform consumption per call, for a system of size N:
//   multinomial            N
//   stratified             N
//   systematic             1
//   residual (either)      R = N - sum floor(N W^n); zero when R = 0
//   ssp                    at most N - 1
//   deterministic_alpha    0

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rslab/errors.hpp"
#include "rslab/particles.hpp"
#include "rslab/random.hpp"

namespace rslab {

/// Values within this distance of an integer are treated as that integer.
inline constexpr double kIntegerTolerance = 1e-9;

enum class ResidualInner { multinomial, stratified };

namespace detail {

// Inverse-CDF lookups at (n + offset_n) / N.
template <typename OffsetFn>
std::vector<std::size_t> stratified_lookup(const CumulativeWeights& cw, std::size_t n_draws, OffsetFn&& offset) {
  std::vector<std::size_t> ancestors(n_draws);
  const double inv_n = 1.0 / static_cast<double>(n_draws);
  for (std::size_t n = 0; n < n_draws; ++n)
    ancestors[n] = cw.inverse((static_cast<double>(n) + offset(n)) * inv_n);
  return ancestors;
}

inline double snapped_floor(double x) { return std::floor(x + kIntegerTolerance); }

}  // namespace detail

template <UniformSource S>
ResampleResult multinomial(const WeightedParticleSystem& sys, S& stream) {
  std::vector<std::size_t> ancestors(sys.size());
  for (auto& a : ancestors) a = sys.cumulative().inverse(stream.next());
  return ResampleResult::from_ancestors(std::move(ancestors), sys.weights());
}

template <UniformSource S>
ResampleResult stratified(const WeightedParticleSystem& sys, S& stream) {
  auto ancestors = detail::stratified_lookup(sys.cumulative(), sys.size(), [&](std::size_t) { return stream.next(); });
  return ResampleResult::from_ancestors(std::move(ancestors), sys.weights());
}

template <UniformSource S>
ResampleResult systematic(const WeightedParticleSystem& sys, S& stream) {
  const double u = stream.next();
  auto ancestors = detail::stratified_lookup(sys.cumulative(), sys.size(), [u](std::size_t) { return u; });
  return ResampleResult::from_ancestors(std::move(ancestors), sys.weights());
}

/// Kitagawa's deterministic scheme: every stratum uses the same point alpha.
/// Expects a system already placed in the desired order.
inline ResampleResult deterministic_alpha(const WeightedParticleSystem& sys, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw Error(ErrorCode::AlphaOutOfRange, "alpha must lie in (0,1), got " + std::to_string(alpha));
  auto ancestors = detail::stratified_lookup(sys.cumulative(), sys.size(), [alpha](std::size_t) { return alpha; });
  return ResampleResult::from_ancestors(std::move(ancestors), sys.weights());
}

/// floor(N W^n) copies of each particle, then the remaining R slots drawn by
/// `inner` from weights proportional to the fractional parts.
template <UniformSource S>
ResampleResult residual(const WeightedParticleSystem& sys, S& stream, ResidualInner inner) {
  const std::size_t n_particles = sys.size();
  const double n_real = static_cast<double>(n_particles);
  std::vector<std::size_t> counts(n_particles);
  std::vector<double> remainder(n_particles);
  std::size_t deterministic = 0;
  for (std::size_t n = 0; n < n_particles; ++n) {
    const double expected = n_real * sys.weight(n);
    const double fl = detail::snapped_floor(expected);
    counts[n] = static_cast<std::size_t>(fl);
    remainder[n] = std::max(expected - fl, 0.0);
    deterministic += counts[n];
  }
  const std::size_t rest = n_particles - std::min(deterministic, n_particles);
  if (rest > 0) {
    const CumulativeWeights cw(normalize_weights(remainder));
    if (inner == ResidualInner::multinomial) {
      for (std::size_t i = 0; i < rest; ++i) ++counts[cw.inverse(stream.next())];
    } else {
      for (auto a : detail::stratified_lookup(cw, rest, [&](std::size_t) { return stream.next(); })) ++counts[a];
    }
  }
  return ResampleResult::from_counts(std::move(counts), sys.weights());
}

namespace detail {

template <UniformSource S>
std::vector<std::size_t> ssp_round_impl(std::span<const double> xi, S& stream, bool check_total) {
  const std::size_t size = xi.size();
  std::vector<double> base(size);
  std::vector<double> frac(size);
  double total = 0.0;
  for (std::size_t n = 0; n < size; ++n) {
    if (!std::isfinite(xi[n])) throw Error(ErrorCode::NonFinite, "xi[" + std::to_string(n) + "] is not finite");
    if (xi[n] < 0.0) throw Error(ErrorCode::NegativeWeight, "xi[" + std::to_string(n) + "] is negative");
    total += xi[n];
    base[n] = std::floor(xi[n]);
    frac[n] = xi[n] - base[n];
  }
  if (check_total && std::abs(total - std::round(total)) > kIntegerTolerance)
    throw Error(ErrorCode::NonIntegerTotal, "sum of xi is " + std::to_string(total));

  auto snap = [&](std::size_t n) {
    if (frac[n] <= kIntegerTolerance) {
      frac[n] = 0.0;
    } else if (frac[n] >= 1.0 - kIntegerTolerance) {
      base[n] += 1.0;
      frac[n] = 0.0;
    }
  };
  auto is_integer = [&](std::size_t n) { return frac[n] == 0.0; };

  std::vector<std::size_t> open;
  for (std::size_t n = 0; n < size; ++n) {
    snap(n);
    if (!is_integer(n)) open.push_back(n);
  }

  std::size_t i = 0;  // position of n in `open`
  std::size_t j = 1;  // position of m in `open`
  while (j < open.size()) {
    const std::size_t n = open[i];
    const std::size_t m = open[j];
    const double delta = std::min(1.0 - frac[n], frac[m]);
    const double eps = std::min(frac[n], 1.0 - frac[m]);
    if (stream.next() <= eps / (delta + eps)) {
      frac[n] += delta;
      frac[m] -= delta;
    } else {
      frac[n] -= eps;
      frac[m] += eps;
    }
    snap(n);
    snap(m);
    if (is_integer(n) && is_integer(m)) {
      i = j + 1;
      j = j + 2;
    } else if (is_integer(n)) {
      i = j;
      j = j + 1;
    } else {
      j = j + 1;
    }
  }
  // With an integral total at most one entry can be left open, and only by
  // rounding error.
  if (i < open.size()) {
    const std::size_t n = open[i];
    base[n] += std::round(frac[n]);
    frac[n] = 0.0;
  }

  std::vector<std::size_t> out(size);
  for (std::size_t n = 0; n < size; ++n) out[n] = static_cast<std::size_t>(base[n]);
  return out;
}

}  // namespace detail

/// Srinivasan's randomized rounding of a nonnegative vector with integral
/// total. Each output entry is floor(xi_n) or floor(xi_n)+1, the total is
/// preserved and E[Y_n] = xi_n.
///
/// Entries are paired left to right. At each step the pair (n, m) moves mass
/// by +delta/-delta or -eps/+eps until one of them hits an integer, taking the
/// first move when u <= eps/(delta+eps). Entries that are already integral
/// never enter a pair.
template <UniformSource S>
std::vector<std::size_t> ssp_round(std::span<const double> xi, S& stream) {
  return detail::ssp_round_impl(xi, stream, true);
}

/// Randomized rounding of N W^n, turned into ancestors.
template <UniformSource S>
ResampleResult ssp(const WeightedParticleSystem& sys, S& stream) {
  std::vector<double> expected(sys.size());
  const double n_real = static_cast<double>(sys.size());
  for (std::size_t n = 0; n < sys.size(); ++n) expected[n] = n_real * sys.weight(n);
  // The total is N up to summation error, which can exceed the integrality
  // tolerance for large N; the final open entry absorbs it.
  auto counts = detail::ssp_round_impl(expected, stream, false);
  return ResampleResult::from_counts(std::move(counts), sys.weights());
}

}  // namespace rslab

#pragma once

// Feynman-Kac models and particle filters. Every filter resamples at every
// step t >= 1; weights are carried in log space.
//
// Streams of a run with seed s:
//   propagation at step t   -> substream(s, kMovePurpose, t)
//   resampling at step t    -> substream(s, kResamplePurpose, t)
// so runs with different schemes share their random numbers.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rslab/errors.hpp"
#include "rslab/lgssm.hpp"
#include "rslab/particles.hpp"
#include "rslab/random.hpp"
#include "rslab/schemes.hpp"

namespace rslab {

inline constexpr std::uint64_t kMovePurpose = 1;
inline constexpr std::uint64_t kResamplePurpose = 2;

using Normals = NormalSampler<UniformStream>;

/// Batch callbacks over all N particles (one row each).
struct FeynmanKacModel {
  std::size_t dim = 1;
  std::size_t horizon = 0;
  /// Fills x (N x d) with draws from the initial law.
  std::function<void(StateMatrix& x, Normals& rng)> sample_initial;
  /// x_t^n ~ M_t(prev.row(n), .) for t >= 1.
  std::function<void(std::size_t t, const StateMatrix& prev, StateMatrix& next, Normals& rng)> propagate;
  /// log G_t(prev.row(n), cur.row(n)) for t >= 1.
  std::function<void(std::size_t t, const StateMatrix& prev, const StateMatrix& cur, std::span<double> out)>
      log_potential;
  /// log G_0(x); absent means G_0 = 1.
  std::function<void(const StateMatrix& x, std::span<double> out)> log_initial_potential;
  /// log eta_t(x) for the auxiliary filter.
  std::function<void(std::size_t t, const StateMatrix& x, std::span<double> out)> log_aux;
};

namespace detail {

inline void fill_standard_normal(StateMatrix& x, Normals& rng) {
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.next();
}

// out[n] = log N(y; mean.row(n), variance * I)
inline void log_isotropic_normal_rows(const Eigen::Ref<const Eigen::RowVectorXd>& y, const StateMatrix& mean,
                                      double variance, std::span<double> out) {
  const double c = -0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi * variance);
  for (Eigen::Index n = 0; n < mean.rows(); ++n)
    out[static_cast<std::size_t>(n)] = c - 0.5 * (mean.row(n) - y).squaredNorm() / variance;
}

inline void check_lgssm_data(const LgssmParams& params, const StateMatrix& y) {
  params.validate();
  if (static_cast<std::size_t>(y.rows()) != params.horizon)
    throw Error(ErrorCode::InvalidArgument, "expected " + std::to_string(params.horizon) + " observations, got " +
                                                std::to_string(y.rows()));
  if (y.rows() > 0 && static_cast<std::size_t>(y.cols()) != params.dim)
    throw Error(ErrorCode::InvalidArgument, "observation dimension differs from the model");
}

}  // namespace detail

/// M_t(x, .) = N(F x, I), G_t(x_{t-1}, x_t) = N(y_t; x_t, I).
inline FeynmanKacModel make_bootstrap_fk(const LgssmParams& params, StateMatrix y) {
  detail::check_lgssm_data(params, y);
  const Eigen::MatrixXd f = params.transition();
  FeynmanKacModel fk;
  fk.dim = params.dim;
  fk.horizon = params.horizon;
  fk.sample_initial = detail::fill_standard_normal;
  fk.propagate = [f](std::size_t, const StateMatrix& prev, StateMatrix& next, Normals& rng) {
    detail::fill_standard_normal(next, rng);
    next += prev * f.transpose();
  };
  fk.log_potential = [y = std::move(y)](std::size_t t, const StateMatrix&, const StateMatrix& cur,
                                        std::span<double> out) {
    detail::log_isotropic_normal_rows(y.row(static_cast<Eigen::Index>(t - 1)), cur, 1.0, out);
  };
  return fk;
}

/// M_t(x, .) = N((y_t + F x)/2, I/2), G_t(x_{t-1}, x_t) = N(y_t; F x_{t-1}, 2I).
inline FeynmanKacModel make_guided_fk(const LgssmParams& params, StateMatrix y) {
  detail::check_lgssm_data(params, y);
  const Eigen::MatrixXd f = params.transition();
  FeynmanKacModel fk;
  fk.dim = params.dim;
  fk.horizon = params.horizon;
  fk.sample_initial = detail::fill_standard_normal;
  fk.propagate = [f, y](std::size_t t, const StateMatrix& prev, StateMatrix& next, Normals& rng) {
    detail::fill_standard_normal(next, rng);
    next *= std::sqrt(0.5);
    const Eigen::RowVectorXd obs = y.row(static_cast<Eigen::Index>(t - 1));
    next += 0.5 * ((prev * f.transpose()).rowwise() + obs);
  };
  fk.log_potential = [f, y](std::size_t t, const StateMatrix& prev, const StateMatrix&, std::span<double> out) {
    const StateMatrix mean = prev * f.transpose();
    detail::log_isotropic_normal_rows(y.row(static_cast<Eigen::Index>(t - 1)), mean, 2.0, out);
  };
  return fk;
}

/// eta_t(x) = N(y_{t+1}; F x, 2I), the predictive density of the next
/// observation; eta_T = 1.
inline std::function<void(std::size_t, const StateMatrix&, std::span<double>)> lgssm_predictive_aux(
    const LgssmParams& params, StateMatrix y) {
  detail::check_lgssm_data(params, y);
  const Eigen::MatrixXd f = params.transition();
  return [f, y = std::move(y)](std::size_t t, const StateMatrix& x, std::span<double> out) {
    if (t >= static_cast<std::size_t>(y.rows())) {
      std::fill(out.begin(), out.end(), 0.0);
      return;
    }
    const StateMatrix mean = x * f.transpose();
    detail::log_isotropic_normal_rows(y.row(static_cast<Eigen::Index>(t)), mean, 2.0, out);
  };
}

using StateFunction = std::function<double(Eigen::Ref<const Eigen::RowVectorXd>)>;

struct NamedFunction {
  std::string name;
  StateFunction fn;
};

/// Per-step outputs, indexed t = 0..T.
struct FilterOutput {
  std::vector<double> log_increments;  // log l_t^N; 0 at t = 0 when G_0 = 1
  std::vector<double> log_likelihood;  // log L_t^N
  std::vector<double> ess;
  std::vector<std::vector<double>> means;  // means[k][t] = sum_n W_t^n phi_k(X_t^n)

  double final_log_likelihood() const { return log_likelihood.back(); }
  bool operator==(const FilterOutput&) const = default;
};

struct FilterOptions {
  std::vector<NamedFunction> functions;
  /// Ordering for the ordered schemes; psi_tilde on every axis when empty.
  std::optional<Ordering> ordering;
};

namespace detail {

inline double log_sum_exp(std::span<const double> lw) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : lw) mx = std::max(mx, v);
  if (mx == -std::numeric_limits<double>::infinity()) return mx;
  CompensatedSum acc;
  for (double v : lw) acc.add(std::exp(v - mx));
  return mx + std::log(acc.value());
}

struct StepSummary {
  double log_increment;
  double ess;
};

inline StepSummary summarize_step(std::size_t t, const StateMatrix& x, std::span<const double> log_w,
                                  const FilterOptions& options, FilterOutput& out) {
  for (double v : log_w)
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw Error(ErrorCode::NonFinite, "non-finite log-weight at step " + std::to_string(t));
  const double lse = log_sum_exp(log_w);
  if (lse == -std::numeric_limits<double>::infinity())
    throw Error(ErrorCode::AllZeroWeights, "every weight is zero at step " + std::to_string(t));
  const auto w = normalize_log_weights(log_w);
  double sum_sq = 0.0;
  for (double v : w) sum_sq += v * v;
  for (std::size_t k = 0; k < options.functions.size(); ++k) {
    CompensatedSum acc;
    for (std::size_t n = 0; n < w.size(); ++n)
      if (w[n] > 0.0) acc.add(w[n] * options.functions[k].fn(x.row(static_cast<Eigen::Index>(n))));
    out.means[k].push_back(acc.value());
  }
  return {lse - std::log(static_cast<double>(log_w.size())), 1.0 / sum_sq};
}

inline FilterOutput run_filter(const FeynmanKacModel& fk, std::size_t n_particles, const Scheme& scheme,
                               std::uint64_t seed, const FilterOptions& options, bool twisted) {
  if (n_particles < 1) throw Error(ErrorCode::InvalidArgument, "N must be >= 1");
  if (!fk.sample_initial || !fk.propagate || !fk.log_potential)
    throw Error(ErrorCode::InvalidArgument, "Feynman-Kac model is missing a callback");
  if (twisted && !fk.log_aux) throw Error(ErrorCode::InvalidArgument, "auxiliary filter needs log_aux");
  const Ordering ordering = options.ordering ? *options.ordering : Ordering::real_line(fk.dim);
  const auto n_rows = static_cast<Eigen::Index>(n_particles);
  const auto d = static_cast<Eigen::Index>(fk.dim);

  FilterOutput out;
  out.means.resize(options.functions.size());
  auto record = [&](std::size_t t, const StateMatrix& x, std::span<const double> log_w) {
    const auto s = summarize_step(t, x, log_w, options, out);
    out.log_increments.push_back(s.log_increment);
    out.log_likelihood.push_back((out.log_likelihood.empty() ? 0.0 : out.log_likelihood.back()) + s.log_increment);
    out.ess.push_back(s.ess);
  };

  StateMatrix x(n_rows, d);
  std::vector<double> log_w(n_particles, 0.0);
  {
    Normals rng(UniformStream::substream(seed, kMovePurpose, 0));
    fk.sample_initial(x, rng);
    if (fk.log_initial_potential) fk.log_initial_potential(x, log_w);
    record(0, x, log_w);
  }

  StateMatrix prev(n_rows, d);
  StateMatrix next(n_rows, d);
  std::vector<double> log_g(n_particles);
  std::vector<double> log_eta(n_particles, 0.0);
  std::vector<double> log_resample_w(n_particles);
  for (std::size_t t = 1; t <= fk.horizon; ++t) {
    if (twisted) {
      fk.log_aux(t - 1, x, log_eta);
      for (std::size_t n = 0; n < n_particles; ++n) {
        if (std::isnan(log_eta[n]) || log_eta[n] == std::numeric_limits<double>::infinity())
          throw Error(ErrorCode::NonFinite, "auxiliary weight at step " + std::to_string(t - 1));
        if (log_eta[n] == -std::numeric_limits<double>::infinity() &&
            log_w[n] != -std::numeric_limits<double>::infinity())
          throw Error(ErrorCode::ZeroAuxiliaryWeight,
                      "eta is zero at particle " + std::to_string(n) + ", step " + std::to_string(t - 1));
      }
    }
    for (std::size_t n = 0; n < n_particles; ++n) log_resample_w[n] = log_w[n] + log_eta[n];

    const auto sys = WeightedParticleSystem::from_log_weights(x, log_resample_w);
    auto resample_stream = UniformStream::substream(seed, kResamplePurpose, t);
    const auto res = resample(scheme, sys, resample_stream, &ordering);

    for (std::size_t n = 0; n < n_particles; ++n)
      prev.row(static_cast<Eigen::Index>(n)) = x.row(static_cast<Eigen::Index>(res.ancestors[n]));
    Normals rng(UniformStream::substream(seed, kMovePurpose, t));
    fk.propagate(t, prev, next, rng);
    fk.log_potential(t, prev, next, log_g);

    if (twisted) {
      // log(W / W~) at the ancestor, with both normalizing constants.
      const double shift = log_sum_exp(log_resample_w) - log_sum_exp(log_w);
      for (std::size_t n = 0; n < n_particles; ++n) {
        const std::size_t a = res.ancestors[n];
        log_g[n] += (log_w[a] - log_resample_w[a]) + shift;
      }
    }
    log_w = log_g;
    std::swap(x, next);
    record(t, x, log_w);
  }
  return out;
}

}  // namespace detail

/// Standard particle filter with resampling at every step.
inline FilterOutput particle_filter(const FeynmanKacModel& fk, std::size_t n_particles, const Scheme& scheme,
                                    std::uint64_t seed, const FilterOptions& options = {}) {
  return detail::run_filter(fk, n_particles, scheme, seed, options, false);
}

/// Auxiliary particle filter: step t resamples with W_{t-1} * eta_{t-1} and
/// reweights by G_t * W_{t-1} / W~_{t-1} at the ancestor.
inline FilterOutput auxiliary_particle_filter(const FeynmanKacModel& fk, std::size_t n_particles,
                                              const Scheme& scheme, std::uint64_t seed,
                                              const FilterOptions& options = {}) {
  return detail::run_filter(fk, n_particles, scheme, seed, options, true);
}

}  // namespace rslab

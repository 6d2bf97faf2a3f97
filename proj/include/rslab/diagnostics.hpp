#pragma once

// Statistical checks on resampling schemes: offspring moments, count
// covariances, discrepancy metrics and variance-rate fits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rslab/errors.hpp"
#include "rslab/parallel.hpp"
#include "rslab/particles.hpp"
#include "rslab/random.hpp"
#include "rslab/schemes.hpp"

namespace rslab {

namespace detail {

inline constexpr std::uint64_t kReplicateTag = 0x7265706cULL;  // "repl"
inline constexpr std::uint64_t kRateTag = 0x72617465ULL;       // "rate"

}  // namespace detail

/// Offspring counts of R independent resampling draws, one row per replicate.
/// Replicate r draws from substream (seed, r), so rows do not depend on `jobs`.
struct ReplicateCounts {
  std::size_t replicates = 0;
  std::size_t particles = 0;
  std::vector<std::uint32_t> counts;  // row-major R x N

  std::uint32_t at(std::size_t r, std::size_t n) const { return counts[r * particles + n]; }
};

inline ReplicateCounts replicate_counts(const Scheme& scheme, const WeightedParticleSystem& sys, std::size_t replicates,
                                        std::uint64_t seed, unsigned jobs = 1, const Ordering* ordering = nullptr) {
  ReplicateCounts out{replicates, sys.size(), std::vector<std::uint32_t>(replicates * sys.size())};
  const PreparedResampler draw(scheme, sys, ordering);
  parallel_for(replicates, jobs, [&](std::size_t r) {
    auto stream = UniformStream::substream(seed, detail::kReplicateTag, r);
    const auto res = draw(stream);
    std::copy(res.counts.begin(), res.counts.end(), out.counts.begin() + static_cast<std::ptrdiff_t>(r * sys.size()));
  });
  return out;
}

/// Per-index moments of offspring counts and deviations over R replicates.
struct MomentReport {
  std::size_t replicates = 0;
  std::vector<double> expected;  // N W^n
  std::vector<double> mean_counts;
  std::vector<double> var_counts;
  std::vector<double> se_counts;  // sample sd / sqrt(R)
  std::vector<double> mean_deviation;
  std::vector<double> mean_sq_deviation;
  double max_abs_deviation = 0.0;
  /// Draws with some count outside {floor(N W^n), floor(N W^n) + 1}.
  std::size_t draws_outside_floor_ceil = 0;
};

inline MomentReport moments_from_counts(const ReplicateCounts& rc, const WeightedParticleSystem& sys) {
  const std::size_t n_part = rc.particles;
  const std::size_t reps = rc.replicates;
  if (reps < 2) throw Error(ErrorCode::InvalidArgument, "moments need at least 2 replicates");
  MomentReport m;
  m.replicates = reps;
  m.expected.resize(n_part);
  for (std::size_t n = 0; n < n_part; ++n) m.expected[n] = static_cast<double>(n_part) * sys.weight(n);
  m.mean_counts.assign(n_part, 0.0);
  m.var_counts.assign(n_part, 0.0);
  m.se_counts.assign(n_part, 0.0);
  m.mean_deviation.assign(n_part, 0.0);
  m.mean_sq_deviation.assign(n_part, 0.0);

  for (std::size_t r = 0; r < reps; ++r) {
    bool outside = false;
    for (std::size_t n = 0; n < n_part; ++n) {
      const double c = rc.at(r, n);
      const double dev = c - m.expected[n];
      m.mean_counts[n] += c;
      m.mean_sq_deviation[n] += dev * dev;
      m.max_abs_deviation = std::max(m.max_abs_deviation, std::abs(dev));
      const double fl = std::floor(m.expected[n] + kIntegerTolerance);
      outside = outside || c < fl || c > fl + 1.0;
    }
    m.draws_outside_floor_ceil += outside;
  }
  const double rr = static_cast<double>(reps);
  for (std::size_t n = 0; n < n_part; ++n) {
    m.mean_counts[n] /= rr;
    m.mean_deviation[n] = m.mean_counts[n] - m.expected[n];
    m.mean_sq_deviation[n] /= rr;
  }
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t n = 0; n < n_part; ++n) {
      const double d = rc.at(r, n) - m.mean_counts[n];
      m.var_counts[n] += d * d;
    }
  for (std::size_t n = 0; n < n_part; ++n) {
    m.var_counts[n] /= rr - 1.0;
    m.se_counts[n] = std::sqrt(m.var_counts[n] / rr);
  }
  return m;
}

inline MomentReport offspring_moments(const Scheme& scheme, const WeightedParticleSystem& sys, std::size_t replicates,
                                      std::uint64_t seed, unsigned jobs = 1, const Ordering* ordering = nullptr) {
  if (replicates < 2) throw Error(ErrorCode::InvalidArgument, "offspring_moments needs R >= 2");
  return moments_from_counts(replicate_counts(scheme, sys, replicates, seed, jobs, ordering), sys);
}

/// Sample covariance matrix of offspring counts with a standard error for
/// every entry (sd of the centred products over sqrt(R)).
struct CovarianceReport {
  std::size_t replicates = 0;
  std::size_t particles = 0;
  std::vector<double> mean;
  std::vector<double> cov;  // row-major N x N
  std::vector<double> se;   // row-major N x N

  double covariance(std::size_t i, std::size_t j) const { return cov[i * particles + j]; }
  double standard_error(std::size_t i, std::size_t j) const { return se[i * particles + j]; }
};

inline CovarianceReport covariance_from_counts(const ReplicateCounts& rc) {
  const std::size_t n_part = rc.particles;
  const std::size_t reps = rc.replicates;
  if (reps < 2) throw Error(ErrorCode::InvalidArgument, "covariance needs at least 2 replicates");
  CovarianceReport out{reps, n_part, std::vector<double>(n_part, 0.0), std::vector<double>(n_part * n_part, 0.0),
                       std::vector<double>(n_part * n_part, 0.0)};
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t n = 0; n < n_part; ++n) out.mean[n] += rc.at(r, n);
  const double rr = static_cast<double>(reps);
  for (auto& m : out.mean) m /= rr;

  std::vector<double> centred(n_part);
  std::vector<double> sum_sq(n_part * n_part, 0.0);
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t n = 0; n < n_part; ++n) centred[n] = rc.at(r, n) - out.mean[n];
    for (std::size_t i = 0; i < n_part; ++i)
      for (std::size_t j = i; j < n_part; ++j) {
        const double p = centred[i] * centred[j];
        out.cov[i * n_part + j] += p;
        sum_sq[i * n_part + j] += p * p;
      }
  }
  for (std::size_t i = 0; i < n_part; ++i)
    for (std::size_t j = i; j < n_part; ++j) {
      const double sum = out.cov[i * n_part + j];
      const double mean_p = sum / rr;
      const double var_p = std::max(sum_sq[i * n_part + j] / rr - mean_p * mean_p, 0.0) * rr / (rr - 1.0);
      const double c = sum / (rr - 1.0);
      const double s = std::sqrt(var_p / rr);
      out.cov[i * n_part + j] = out.cov[j * n_part + i] = c;
      out.se[i * n_part + j] = out.se[j * n_part + i] = s;
    }
  return out;
}

inline CovarianceReport pairwise_count_cov(const Scheme& scheme, const WeightedParticleSystem& sys,
                                           std::size_t replicates, std::uint64_t seed, unsigned jobs = 1,
                                           const Ordering* ordering = nullptr) {
  return covariance_from_counts(replicate_counts(scheme, sys, replicates, seed, jobs, ordering));
}

/// Exact star discrepancy of points in [0,1]:
/// max_i max(i/N - u_(i), u_(i) - (i-1)/N) over the sorted sample.
inline double star_discrepancy_1d(std::span<const double> points) {
  if (points.empty()) throw Error(ErrorCode::InvalidArgument, "star discrepancy of an empty point set");
  std::vector<double> u(points.begin(), points.end());
  for (double x : u)
    if (!(x >= 0.0 && x <= 1.0)) throw Error(ErrorCode::OutOfUnitInterval, "point " + std::to_string(x));
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double k = static_cast<double>(i);
    d = std::max({d, (k + 1.0) / n - u[i], u[i] - k / n});
  }
  return d;
}

/// Lower-bound estimate of the star discrepancy of points in [0,1]^d:
/// the largest local discrepancy over anchored boxes whose upper corners are
/// the sample points and a uniform grid with `grid` steps per axis. Boxes are
/// taken both closed and open so the supremum is approached from both sides.
inline double star_discrepancy_lower_bound(const StateMatrix& points, std::size_t grid = 16) {
  const auto n = static_cast<std::size_t>(points.rows());
  const auto d = static_cast<std::size_t>(points.cols());
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "star discrepancy of an empty point set");
  if ((points.array() < 0.0).any() || (points.array() > 1.0).any())
    throw Error(ErrorCode::OutOfUnitInterval, "points must lie in [0,1]^d");

  auto local = [&](const std::vector<double>& corner) {
    double volume = 1.0;
    for (double c : corner) volume *= c;
    std::size_t closed = 0;
    std::size_t open = 0;
    for (std::size_t i = 0; i < n; ++i) {
      bool in_closed = true;
      bool in_open = true;
      for (std::size_t j = 0; j < d; ++j) {
        const double x = points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        in_closed = in_closed && x <= corner[j];
        in_open = in_open && x < corner[j];
      }
      closed += in_closed;
      open += in_open;
    }
    const double nn = static_cast<double>(n);
    return std::max(static_cast<double>(closed) / nn - volume, volume - static_cast<double>(open) / nn);
  };

  double best = 0.0;
  std::vector<double> corner(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) corner[j] = points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    best = std::max(best, local(corner));
  }
  if (grid > 0) {
    std::vector<std::size_t> idx(d, 1);
    while (true) {
      for (std::size_t j = 0; j < d; ++j) corner[j] = static_cast<double>(idx[j]) / static_cast<double>(grid);
      best = std::max(best, local(corner));
      std::size_t j = 0;
      while (j < d && ++idx[j] > grid) idx[j++] = 1;
      if (j == d) break;
    }
  }
  return best;
}

/// Finite weighted atoms on the real line.
struct AtomicMeasure {
  std::vector<double> values;
  std::vector<double> weights;

  static AtomicMeasure uniform(std::span<const double> values) {
    return {std::vector<double>(values.begin(), values.end()),
            std::vector<double>(values.size(), 1.0 / static_cast<double>(values.size()))};
  }
};

/// Kolmogorov distance sup_x |F_P(x) - F_Q(x)| between two normalized
/// atomic measures, by sweeping the merged sorted support.
inline double kolmogorov_weighted(const AtomicMeasure& p, const AtomicMeasure& q) {
  if (p.values.size() != p.weights.size() || q.values.size() != q.weights.size())
    throw Error(ErrorCode::InvalidArgument, "atom values and weights differ in length");
  struct Atom {
    double x;
    double signed_mass;
  };
  std::vector<Atom> atoms;
  atoms.reserve(p.values.size() + q.values.size());
  for (std::size_t i = 0; i < p.values.size(); ++i) atoms.push_back({p.values[i], p.weights[i]});
  for (std::size_t i = 0; i < q.values.size(); ++i) atoms.push_back({q.values[i], -q.weights[i]});
  std::sort(atoms.begin(), atoms.end(), [](const Atom& a, const Atom& b) { return a.x < b.x; });
  detail::CompensatedSum diff;
  double sup = 0.0;
  for (std::size_t i = 0; i < atoms.size();) {
    const double x = atoms[i].x;
    for (; i < atoms.size() && atoms[i].x == x; ++i) diff.add(atoms[i].signed_mass);
    sup = std::max(sup, std::abs(diff.value()));
  }
  return sup;
}

/// Ordinary least squares of y on x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = std::numeric_limits<double>::quiet_NaN();
};

inline LineFit least_squares(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorCode::InvalidArgument, "line fit needs >= 2 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw Error(ErrorCode::InvalidArgument, "line fit needs distinct x values");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (x.size() > 2) {
    double ssr = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = y[i] - fit.intercept - fit.slope * x[i];
      ssr += r * r;
    }
    fit.slope_se = std::sqrt(ssr / (n - 2.0) / sxx);
  }
  return fit;
}

/// Conditional variance of rho(zeta^N)(phi) across a grid of N, and the
/// log-log slope fitted through it.
struct RateFit {
  std::vector<std::size_t> n_grid;
  std::vector<double> variance;
  std::vector<double> variance_se;
  std::vector<std::size_t> degenerate;  // grid entries with zero variance, left out of the fit
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
};

using SystemFamily = std::function<WeightedParticleSystem(std::size_t)>;
using TestFunction = std::function<double(Eigen::Ref<const Eigen::RowVectorXd>)>;

/// Fits log Var against log N from already estimated variances; zero
/// variances are recorded as degenerate and excluded.
inline RateFit fit_rate(std::vector<std::size_t> n_grid, std::vector<double> variance, std::vector<double> variance_se) {
  RateFit fit{std::move(n_grid), std::move(variance), std::move(variance_se), {}, 0.0, 0.0, 0.0};
  std::vector<double> lx;
  std::vector<double> ly;
  for (std::size_t i = 0; i < fit.n_grid.size(); ++i) {
    if (!(fit.variance[i] > 0.0)) {
      fit.degenerate.push_back(fit.n_grid[i]);
      continue;
    }
    lx.push_back(std::log(static_cast<double>(fit.n_grid[i])));
    ly.push_back(std::log(fit.variance[i]));
  }
  if (lx.size() < 2)
    throw Error(ErrorCode::DegenerateVariance, "fewer than two grid points with nonzero variance");
  const auto line = least_squares(lx, ly);
  fit.slope = line.slope;
  fit.intercept = line.intercept;
  fit.slope_se = line.slope_se;
  return fit;
}

/// For each N in the grid: build zeta^N = family(N), draw R resamples from
/// substreams (seed, N, r), and estimate Var[(1/N) sum_n phi(X^{A^n}) | zeta^N].
inline RateFit variance_rate_fit(const Scheme& scheme, const SystemFamily& family, const TestFunction& phi,
                                 std::span<const std::size_t> n_grid, std::size_t replicates, std::uint64_t seed,
                                 unsigned jobs = 1, const Ordering* ordering = nullptr) {
  if (n_grid.size() < 4) throw Error(ErrorCode::InvalidArgument, "rate fit needs at least 4 grid points");
  for (std::size_t i = 1; i < n_grid.size(); ++i)
    if (n_grid[i] <= n_grid[i - 1]) throw Error(ErrorCode::InvalidArgument, "N grid must be strictly increasing");
  if (replicates < 2) throw Error(ErrorCode::InvalidArgument, "rate fit needs R >= 2");

  std::vector<double> variance;
  std::vector<double> variance_se;
  for (std::size_t n : n_grid) {
    const auto sys = family(n);
    const PreparedResampler draw(scheme, sys, ordering);
    std::vector<double> phi_values(sys.size());
    for (std::size_t i = 0; i < sys.size(); ++i) phi_values[i] = phi(sys.states().row(static_cast<Eigen::Index>(i)));

    std::vector<double> estimates(replicates);
    parallel_for(replicates, jobs, [&](std::size_t r) {
      auto stream = UniformStream::substream(seed, (detail::kRateTag << 32) | n, r);
      detail::CompensatedSum acc;
      for (auto a : draw.ancestors(stream)) acc.add(phi_values[a]);
      estimates[r] = acc.value() / static_cast<double>(sys.size());
    });
    const double rr = static_cast<double>(replicates);
    const double mean = std::accumulate(estimates.begin(), estimates.end(), 0.0) / rr;
    double ss = 0.0;
    for (double e : estimates) ss += (e - mean) * (e - mean);
    const double var = ss / (rr - 1.0);
    variance.push_back(var);
    variance_se.push_back(var * std::sqrt(2.0 / (rr - 1.0)));
  }
  return fit_rate(std::vector<std::size_t>(n_grid.begin(), n_grid.end()), std::move(variance), std::move(variance_se));
}

}  // namespace rslab

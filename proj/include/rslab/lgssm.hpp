#pragma once

// Linear-Gaussian state-space model
//   X_0 ~ N(0, I),  X_t = F X_{t-1} + V_t,  Y_t = X_t + W_t,  t = 1..T,
// with V_t, W_t ~ N(0, I) and F_ij = alpha^{|i-j|+1}; plus the exact Kalman
// likelihood used as an oracle.

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "rslab/errors.hpp"
#include "rslab/particles.hpp"
#include "rslab/random.hpp"

namespace rslab {

struct LgssmParams {
  std::size_t dim = 1;
  std::size_t horizon = 0;
  double alpha = 0.0;

  static LgssmParams make(std::size_t dim, std::size_t horizon, double alpha) {
    LgssmParams p{dim, horizon, alpha};
    p.validate();
    return p;
  }

  Eigen::MatrixXd transition() const {
    const auto d = static_cast<Eigen::Index>(dim);
    Eigen::MatrixXd f(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) f(i, j) = std::pow(alpha, static_cast<double>(std::abs(i - j) + 1));
    return f;
  }

  double spectral_radius() const {
    // F is symmetric.
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(transition(), Eigen::EigenvaluesOnly);
    return eig.eigenvalues().cwiseAbs().maxCoeff();
  }

  void validate() const {
    if (dim < 1) throw Error(ErrorCode::InvalidArgument, "LGSSM dimension must be >= 1");
    if (!(alpha >= 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0, 1)");
    if (!(spectral_radius() < 1.0))
      throw Error(ErrorCode::InvalidArgument, "transition matrix has spectral radius >= 1");
  }
};

/// Row t of `states` is x_t (t = 0..T); row t-1 of `observations` is y_t.
struct LgssmData {
  StateMatrix states;
  StateMatrix observations;
};

template <UniformSource S>
LgssmData simulate_lgssm(const LgssmParams& params, S stream) {
  params.validate();
  const auto d = static_cast<Eigen::Index>(params.dim);
  const auto horizon = static_cast<Eigen::Index>(params.horizon);
  const Eigen::MatrixXd f = params.transition();
  NormalSampler<S> normals(std::move(stream));
  auto draw = [&] {
    Eigen::VectorXd z(d);
    for (Eigen::Index i = 0; i < d; ++i) z(i) = normals.next();
    return z;
  };

  LgssmData out{StateMatrix(horizon + 1, d), StateMatrix(horizon, d)};
  Eigen::VectorXd x = draw();
  out.states.row(0) = x.transpose();
  for (Eigen::Index t = 1; t <= horizon; ++t) {
    x = f * x + draw();
    out.states.row(t) = x.transpose();
    out.observations.row(t - 1) = (x + draw()).transpose();
  }
  return out;
}

inline LgssmData simulate_lgssm(const LgssmParams& params, std::uint64_t seed) {
  return simulate_lgssm(params, UniformStream(seed));
}

/// log N(y; mean, variance * I).
inline double log_isotropic_normal(const Eigen::Ref<const Eigen::VectorXd>& y,
                                   const Eigen::Ref<const Eigen::VectorXd>& mean, double variance) {
  const double d = static_cast<double>(y.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi * variance) - 0.5 * (y - mean).squaredNorm() / variance;
}

struct KalmanOutput {
  double log_likelihood = 0.0;
  std::vector<double> log_increments;  // log p(y_t | y_{1:t-1}), t = 1..T
  std::vector<Eigen::VectorXd> means;  // filtering means, t = 1..T
  std::vector<Eigen::MatrixXd> covariances;
};

inline KalmanOutput kalman_loglik(const LgssmParams& params, const StateMatrix& observations) {
  params.validate();
  const auto d = static_cast<Eigen::Index>(params.dim);
  if (observations.rows() > 0 && observations.cols() != d)
    throw Error(ErrorCode::InvalidArgument, "observations have " + std::to_string(observations.cols()) +
                                                " columns, expected " + std::to_string(d));
  const Eigen::MatrixXd f = params.transition();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd p = eye;

  KalmanOutput out;
  for (Eigen::Index t = 0; t < observations.rows(); ++t) {
    m = f * m;
    p = f * p * f.transpose() + eye;
    const Eigen::MatrixXd s = p + eye;
    const Eigen::LLT<Eigen::MatrixXd> chol(s);
    if (chol.info() != Eigen::Success)
      throw Error(ErrorCode::NonPosDefCovariance, "innovation covariance at step " + std::to_string(t + 1));
    const Eigen::VectorXd y = observations.row(t).transpose();
    const Eigen::VectorXd innov = y - m;
    const Eigen::MatrixXd l = chol.matrixL();
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    const double quad = innov.dot(chol.solve(innov));
    const double inc =
        -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det + quad);
    out.log_increments.push_back(inc);
    out.log_likelihood += inc;

    const Eigen::MatrixXd gain = chol.solve(p).transpose();  // P S^{-1}, both symmetric
    m += gain * innov;
    p = (eye - gain) * p;
    p = 0.5 * (p + p.transpose()).eval();
    out.means.push_back(m);
    out.covariances.push_back(p);
  }
  return out;
}

/// Reads a matrix with one row per line and comma-separated columns. A first
/// line that does not parse as numbers is treated as a header.
inline StateMatrix load_observations_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        numeric = numeric && cell.find_first_not_of(" \t", used) == std::string::npos;
      } catch (const std::exception&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (line_no == 1) continue;
      throw Error(ErrorCode::InvalidArgument, path + ":" + std::to_string(line_no) + ": not numeric");
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorCode::InvalidArgument, path + ":" + std::to_string(line_no) + ": ragged row");
    rows.push_back(std::move(row));
  }
  StateMatrix out(static_cast<Eigen::Index>(rows.size()),
                  rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return out;
}

}  // namespace rslab

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <vector>

#include "rslab/smc.hpp"

namespace rslab {
namespace {

// Joint Gaussian density of y_{1:T} assembled from the state covariances,
// evaluated with a dense Cholesky factorization.
double dense_loglik(const LgssmParams& params, const StateMatrix& y) {
  const Eigen::Index d = static_cast<Eigen::Index>(params.dim);
  const Eigen::Index horizon = y.rows();
  const Eigen::MatrixXd f = params.transition();
  std::vector<Eigen::MatrixXd> var(static_cast<std::size_t>(horizon) + 1);
  var[0] = Eigen::MatrixXd::Identity(d, d);
  for (Eigen::Index t = 1; t <= horizon; ++t)
    var[static_cast<std::size_t>(t)] = f * var[static_cast<std::size_t>(t - 1)] * f.transpose() +
                                       Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd big = Eigen::MatrixXd::Zero(d * horizon, d * horizon);
  for (Eigen::Index s = 1; s <= horizon; ++s) {
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(d, d);
    for (Eigen::Index t = s; t <= horizon; ++t) {
      const Eigen::MatrixXd c = power * var[static_cast<std::size_t>(s)];  // Cov(x_t, x_s)
      big.block((t - 1) * d, (s - 1) * d, d, d) = c;
      big.block((s - 1) * d, (t - 1) * d, d, d) = c.transpose();
      power = f * power;
    }
  }
  big += Eigen::MatrixXd::Identity(d * horizon, d * horizon);
  Eigen::VectorXd flat(d * horizon);
  for (Eigen::Index t = 0; t < horizon; ++t) flat.segment(t * d, d) = y.row(t).transpose();
  const Eigen::LLT<Eigen::MatrixXd> chol(big);
  const Eigen::MatrixXd l = chol.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(d * horizon) * std::log(2.0 * std::numbers::pi) + log_det +
                 flat.dot(chol.solve(flat)));
}

double log_normal_1d(double y, double mean, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (y - mean) * (y - mean) / var;
}

struct RatioStats {
  double mean;
  double se;
};

RatioStats likelihood_ratio(const FeynmanKacModel& fk, double exact, std::size_t n, std::size_t runs,
                            const Scheme& scheme, std::uint64_t seed) {
  std::vector<double> r(runs);
  for (std::size_t i = 0; i < runs; ++i)
    r[i] = std::exp(particle_filter(fk, n, scheme, derive_key(seed, i)).final_log_likelihood() - exact);
  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= static_cast<double>(runs);
  double ss = 0.0;
  for (double v : r) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(runs - 1) / static_cast<double>(runs))};
}

TEST(LgssmParamsTest, TransitionMatrix) {
  const auto p = LgssmParams::make(3, 5, 0.5);
  const Eigen::MatrixXd f = p.transition();
  EXPECT_DOUBLE_EQ(f(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(f(0, 1), 0.25);
  EXPECT_DOUBLE_EQ(f(2, 0), 0.125);
  EXPECT_LT(LgssmParams::make(5, 1, 0.4).spectral_radius(), 1.0);
  EXPECT_TRUE(LgssmParams::make(2, 1, 0.0).transition().isZero());
  EXPECT_THROW(LgssmParams::make(5, 1, 0.9), Error);
  EXPECT_THROW(LgssmParams::make(1, 1, 1.0), Error);
  EXPECT_THROW(LgssmParams::make(0, 1, 0.5), Error);
}

TEST(SimulateLgssm, ZeroAlphaGivesIndependentStates) {
  const auto data = simulate_lgssm(LgssmParams::make(1, 50000, 0.0), 3);
  double sum_sq = 0.0;
  double lag = 0.0;
  for (Eigen::Index t = 1; t <= 50000; ++t) {
    sum_sq += data.states(t, 0) * data.states(t, 0);
    if (t > 1) lag += data.states(t, 0) * data.states(t - 1, 0);
  }
  EXPECT_NEAR(sum_sq / 50000.0, 1.0, 4.0 * std::sqrt(2.0 / 50000.0));
  EXPECT_NEAR(lag / 49999.0, 0.0, 4.0 / std::sqrt(49999.0));
}

TEST(SimulateLgssm, ScalarStationaryVariance) {
  const double a = 0.8;
  const auto data = simulate_lgssm(LgssmParams::make(1, 200000, a), 4);
  double sum_sq = 0.0;
  for (Eigen::Index t = 1000; t <= 200000; ++t) sum_sq += data.states(t, 0) * data.states(t, 0);
  const double stationary = 1.0 / (1.0 - a * a);
  EXPECT_NEAR(sum_sq / 199001.0, stationary, 0.05 * stationary);
}

TEST(SimulateLgssm, Deterministic) {
  const auto p = LgssmParams::make(3, 20, 0.4);
  const auto a = simulate_lgssm(p, 9);
  const auto b = simulate_lgssm(p, 9);
  const auto c = simulate_lgssm(p, 10);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.observations, b.observations);
  EXPECT_NE(a.observations, c.observations);
}

TEST(Kalman, Examples) {
  EXPECT_EQ(kalman_loglik(LgssmParams::make(2, 0, 0.4), StateMatrix(0, 2)).log_likelihood, 0.0);

  const double a = 0.6;
  StateMatrix y1(1, 1);
  y1 << 1.3;
  EXPECT_NEAR(kalman_loglik(LgssmParams::make(1, 1, a), y1).log_likelihood, log_normal_1d(1.3, 0.0, a * a + 2.0),
              1e-13);

  StateMatrix y(4, 1);
  y << 0.5, -1.0, 2.0, 0.1;
  double expected = 0.0;
  for (Eigen::Index t = 0; t < 4; ++t) expected += log_normal_1d(y(t, 0), 0.0, 2.0);
  EXPECT_NEAR(kalman_loglik(LgssmParams::make(1, 4, 0.0), y).log_likelihood, expected, 1e-12);
}

TEST(Kalman, MatchesDenseJointDensity) {
  for (auto [d, alpha] : {std::pair<std::size_t, double>{1, 0.7}, {2, 0.4}, {3, 0.3}, {5, 0.4}}) {
    const auto p = LgssmParams::make(d, 8, alpha);
    const auto data = simulate_lgssm(p, 100 + d);
    const auto k = kalman_loglik(p, data.observations);
    EXPECT_NEAR(k.log_likelihood, dense_loglik(p, data.observations), 1e-9);
    EXPECT_EQ(k.means.size(), 8u);
    for (const auto& cov : k.covariances) EXPECT_TRUE(cov.isApprox(cov.transpose()));
  }
}

TEST(Kalman, RejectsMismatchedObservations) {
  EXPECT_THROW(kalman_loglik(LgssmParams::make(2, 3, 0.4), StateMatrix::Zero(3, 3)), Error);
}

TEST(ParticleFilter, SingleParticleFollowsOneTrajectory) {
  const auto p = LgssmParams::make(1, 6, 0.5);
  const auto data = simulate_lgssm(p, 1);
  const auto fk = make_bootstrap_fk(p, data.observations);
  FilterOptions options;
  options.functions.push_back({"x", [](Eigen::Ref<const Eigen::RowVectorXd> x) { return x(0); }});
  const auto out = particle_filter(fk, 1, Scheme{SchemeKind::multinomial}, 5, options);
  ASSERT_EQ(out.log_increments.size(), 7u);
  EXPECT_EQ(out.log_increments[0], 0.0);
  double total = 0.0;
  for (std::size_t t = 1; t <= 6; ++t) {
    const double g = log_normal_1d(data.observations(static_cast<Eigen::Index>(t - 1), 0), out.means[0][t], 1.0);
    EXPECT_NEAR(out.log_increments[t], g, 1e-12);
    EXPECT_EQ(out.ess[t], 1.0);
    total += g;
  }
  EXPECT_NEAR(out.final_log_likelihood(), total, 1e-12);
}

TEST(ParticleFilter, BootstrapIsUnbiasedAgainstKalman) {
  const auto p = LgssmParams::make(1, 10, 0.5);
  const auto data = simulate_lgssm(p, 21);
  const double exact = kalman_loglik(p, data.observations).log_likelihood;
  const auto fk = make_bootstrap_fk(p, data.observations);
  const auto r = likelihood_ratio(fk, exact, 1u << 14, 200, Scheme{SchemeKind::multinomial}, 77);
  EXPECT_NEAR(r.mean, 1.0, 4.0 * r.se);
}

TEST(ParticleFilter, GuidedIsUnbiasedAgainstKalman) {
  const auto p = LgssmParams::make(2, 10, 0.4);
  const auto data = simulate_lgssm(p, 22);
  const double exact = kalman_loglik(p, data.observations).log_likelihood;
  const auto fk = make_guided_fk(p, data.observations);
  const auto r = likelihood_ratio(fk, exact, 1u << 10, 200, Scheme{SchemeKind::stratified}, 78);
  EXPECT_NEAR(r.mean, 1.0, 4.0 * r.se);
}

TEST(ParticleFilter, GuidedWeightsAreLessDispersed) {
  const auto p = LgssmParams::make(2, 20, 0.4);
  const auto data = simulate_lgssm(p, 23);
  const auto boot = particle_filter(make_bootstrap_fk(p, data.observations), 512, Scheme{SchemeKind::multinomial}, 1);
  const auto guided = particle_filter(make_guided_fk(p, data.observations), 512, Scheme{SchemeKind::multinomial}, 1);
  double ess_boot = 0.0;
  double ess_guided = 0.0;
  for (std::size_t t = 1; t <= 20; ++t) {
    ess_boot += boot.ess[t];
    ess_guided += guided.ess[t];
    EXPECT_GE(guided.ess[t], 1.0);
    EXPECT_LE(guided.ess[t], 512.0 + 1e-9);
  }
  EXPECT_GT(ess_guided, ess_boot);
}

TEST(ParticleFilter, SchemesAgreeOnTheTarget) {
  const auto p = LgssmParams::make(2, 10, 0.4);
  const auto data = simulate_lgssm(p, 24);
  const auto fk = make_bootstrap_fk(p, data.observations);
  const std::size_t runs = 100;
  std::vector<std::pair<double, double>> stats;
  for (auto kind : {SchemeKind::multinomial, SchemeKind::stratified, SchemeKind::ssp, SchemeKind::ordered_stratified}) {
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < runs; ++i) {
      const double v = particle_filter(fk, 256, Scheme{kind}, derive_key(31, i)).final_log_likelihood();
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / runs;
    const double var = (sum_sq - runs * mean * mean) / (runs - 1);
    stats.push_back({mean, std::sqrt(var / runs)});
  }
  for (std::size_t i = 1; i < stats.size(); ++i)
    EXPECT_NEAR(stats[i].first, stats[0].first, 4.0 * std::hypot(stats[i].second, stats[0].second));
}

TEST(ParticleFilter, Deterministic) {
  const auto p = LgssmParams::make(2, 10, 0.4);
  const auto data = simulate_lgssm(p, 25);
  const auto fk = make_guided_fk(p, data.observations);
  const Scheme s{SchemeKind::ordered_stratified};
  EXPECT_EQ(particle_filter(fk, 128, s, 3), particle_filter(fk, 128, s, 3));
  EXPECT_NE(particle_filter(fk, 128, s, 3), particle_filter(fk, 128, s, 4));
}

TEST(ParticleFilter, AllZeroWeightsReportsStep) {
  const auto p = LgssmParams::make(1, 3, 0.5);
  auto fk = make_bootstrap_fk(p, StateMatrix::Zero(3, 1));
  fk.log_potential = [](std::size_t t, const StateMatrix&, const StateMatrix&, std::span<double> out) {
    std::fill(out.begin(), out.end(), t == 2 ? -HUGE_VAL : 0.0);
  };
  try {
    particle_filter(fk, 16, Scheme{SchemeKind::systematic}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllZeroWeights);
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos);
  }
}

TEST(AuxiliaryFilter, ConstantEtaReproducesStandardFilterBitwise) {
  const auto p = LgssmParams::make(3, 15, 0.4);
  const auto data = simulate_lgssm(p, 26);
  auto fk = make_bootstrap_fk(p, data.observations);
  fk.log_aux = [](std::size_t, const StateMatrix&, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
  FilterOptions options;
  options.functions.push_back({"x1", [](Eigen::Ref<const Eigen::RowVectorXd> x) { return x(0); }});
  for (auto kind : {SchemeKind::multinomial, SchemeKind::residual_stratified, SchemeKind::ssp,
                    SchemeKind::ordered_stratified, SchemeKind::ordered_systematic}) {
    const auto pf = particle_filter(fk, 200, Scheme{kind}, 8, options);
    const auto apf = auxiliary_particle_filter(fk, 200, Scheme{kind}, 8, options);
    EXPECT_EQ(pf, apf) << Scheme{kind}.name();
  }
}

TEST(AuxiliaryFilter, PerfectlyAdaptedWeightsAreConstant) {
  const auto p = LgssmParams::make(2, 10, 0.4);
  const auto data = simulate_lgssm(p, 27);
  auto fk = make_guided_fk(p, data.observations);
  fk.log_aux = lgssm_predictive_aux(p, data.observations);
  const auto out = auxiliary_particle_filter(fk, 300, Scheme{SchemeKind::stratified}, 2);
  for (std::size_t t = 1; t <= 10; ++t) EXPECT_NEAR(out.ess[t], 300.0, 1e-8);
}

TEST(AuxiliaryFilter, PredictiveEtaStaysUnbiased) {
  const auto p = LgssmParams::make(1, 8, 0.5);
  const auto data = simulate_lgssm(p, 28);
  const double exact = kalman_loglik(p, data.observations).log_likelihood;
  auto fk = make_bootstrap_fk(p, data.observations);
  fk.log_aux = lgssm_predictive_aux(p, data.observations);
  std::vector<double> r(200);
  for (std::size_t i = 0; i < r.size(); ++i)
    r[i] = std::exp(auxiliary_particle_filter(fk, 512, Scheme{SchemeKind::multinomial}, derive_key(5, i))
                        .final_log_likelihood() -
                    exact);
  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= 200.0;
  double ss = 0.0;
  for (double v : r) ss += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 1.0, 4.0 * std::sqrt(ss / 199.0 / 200.0));
}

TEST(AuxiliaryFilter, ZeroEtaIsRejected) {
  const auto p = LgssmParams::make(1, 3, 0.5);
  auto fk = make_bootstrap_fk(p, StateMatrix::Zero(3, 1));
  fk.log_aux = [](std::size_t, const StateMatrix&, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    out[0] = -HUGE_VAL;
  };
  try {
    auxiliary_particle_filter(fk, 8, Scheme{SchemeKind::multinomial}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroAuxiliaryWeight);
  }
  fk.log_aux = nullptr;
  EXPECT_THROW(auxiliary_particle_filter(fk, 8, Scheme{SchemeKind::multinomial}, 1), Error);
}

TEST(ObservationCsv, ReadsWithAndWithoutHeader) {
  const std::string path = testing::TempDir() + "obs.csv";
  {
    std::ofstream out(path);
    out << "y1,y2\n0.5,-1\n2.25,3e-2\r\n";
  }
  const auto y = load_observations_csv(path);
  ASSERT_EQ(y.rows(), 2);
  ASSERT_EQ(y.cols(), 2);
  EXPECT_EQ(y(1, 0), 2.25);
  EXPECT_EQ(y(1, 1), 0.03);
  {
    std::ofstream out(path);
    out << "1,2\n3\n";
  }
  EXPECT_THROW(load_observations_csv(path), Error);
  std::remove(path.c_str());
}

}  // namespace
}  // namespace rslab

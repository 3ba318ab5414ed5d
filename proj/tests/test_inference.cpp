#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mspllar/inference.hpp"
#include "mspllar/simulation.hpp"

using namespace mspllar;

namespace {

Matrix sym_gamma(double p) {
  Matrix g(2, 2);
  g << p, 1 - p, 1 - p, p;
  return g;
}

ParameterSet two_regime(double d1, double d2, double a1, double a2, double b1, double b2, const Matrix& g) {
  Vector d(2), a(2), b(2);
  d << d1, d2;
  a << a1, a2;
  b << b1, b2;
  return ParameterSet::make(d, a, b, g);
}

ParameterSet single(double d, double a, double b, Matrix beta = Matrix()) {
  Vector dv(1), av(1), bv(1);
  dv << d;
  av << a;
  bv << b;
  return ParameterSet::make(dv, av, bv, Matrix::Identity(1, 1), beta);
}

FilterTrace trace_with_prior(const ParameterSet& p, const std::vector<int>& y, const Vector& prior) {
  const ExpandedChain chain = build_expanded_chain(p.gamma);
  FilterTrace tr;
  tr.init.lambda0 = Vector::Constant(chain.size(), 1.0);
  tr.init.y0 = std::exp(1.0);
  tr.init.prior = prior;
  FilterStep prev = make_initial_step(tr.init);
  for (int v : y) {
    FilterStep s = ehg_step(prev, v, Vector(), p, chain);
    tr.qll += s.log_mix;
    tr.steps.push_back(s);
    prev = s;
  }
  return tr;
}

}  // namespace

TEST(MarginalProbs, Examples) {
  const ExpandedChain chain = build_expanded_chain(TransitionMatrix(sym_gamma(0.95)));
  Matrix e(3, 4);
  e << 0.475, 0.025, 0.025, 0.475,
       0, 0, 1, 0,
       0.25, 0.25, 0.25, 0.25;
  const StateProbabilities sp = marginal_state_probs(e, chain, ProbabilityKind::smoothing);
  EXPECT_EQ(sp.kind, ProbabilityKind::smoothing);
  EXPECT_NEAR(sp.probs(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(sp.probs(0, 1), 0.5, 1e-15);
  EXPECT_EQ(sp.probs(1, 0), 1.0);
  EXPECT_EQ(sp.probs(1, 1), 0.0);
  EXPECT_EQ(sp.probs(2, 0), 0.5);
  EXPECT_EQ(sp.probs(2, 1), 0.5);
}

TEST(KimSmoother, MatchesEnumeration) {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> cnt(0, 9);
  for (int rep = 0; rep < 25; ++rep) {
    Matrix g(2, 2);
    const double p = 0.5 + 0.45 * u(gen), q = 0.5 + 0.45 * u(gen);
    g << p, 1 - p, 1 - q, q;
    const ParameterSet par = two_regime(1.5 * u(gen), 1.5 * u(gen), 0.0, 0.0, u(gen) - 0.5, 0.8 * u(gen), g);
    std::vector<int> y(4 + rep % 5);
    for (int& v : y) v = cnt(gen);
    const ExpandedChain chain = build_expanded_chain(par.gamma);
    const FilterTrace tr = quasi_log_likelihood(par, y);
    const Matrix smooth = kim_smoother(tr, chain);
    const StateProbabilities sp = marginal_state_probs(smooth, chain, ProbabilityKind::smoothing);
    const ExactPosterior exact = brute_force_posterior(par, y);
    EXPECT_LT((sp.probs - exact.marginals).cwiseAbs().maxCoeff(), 1e-10);
    const int T = static_cast<int>(y.size());
    EXPECT_EQ(Vector(smooth.row(T - 1).transpose()), tr.steps[T - 1].filter_probs);
    for (int t = 0; t < T; ++t) EXPECT_NEAR(smooth.row(t).sum(), 1.0, 1e-12);
  }
}

TEST(KimSmoother, FrozenChain) {
  const ParameterSet p = two_regime(0.2, 1.4, 0.3, 0.1, 0.2, 0.3, Matrix::Identity(2, 2));
  Vector prior(4);
  prior << 0.5, 0, 0, 0.5;
  const std::vector<int> y = {1, 0, 6, 2, 3, 9, 1};
  const FilterTrace tr = trace_with_prior(p, y, prior);
  const ExpandedChain chain = build_expanded_chain(p.gamma);
  const StateProbabilities sp =
      marginal_state_probs(kim_smoother(tr, chain), chain, ProbabilityKind::smoothing);
  for (int t = 1; t < sp.probs.rows(); ++t) {
    EXPECT_NEAR(sp.probs(t, 0), sp.probs(0, 0), 1e-12);
  }
}

TEST(KimSmoother, NonzeroOverZeroIsFatal) {
  const ParameterSet p = case2_parameters();
  const std::vector<int> y = {2, 3};
  FilterTrace tr = quasi_log_likelihood(p, y);
  tr.steps[0].pred_probs_next(1) = 0.0;
  EXPECT_THROW(kim_smoother(tr, build_expanded_chain(p.gamma)), NumericalError);
}

TEST(Prediction, MixtureArithmetic) {
  FilterTrace tr;
  FilterStep s;
  s.lambda_vec = (Vector(2) << 0.0, std::log(3.0)).finished();
  s.pred_probs = (Vector(2) << 0.25, 0.75).finished();
  s.filter_probs = s.pred_probs;
  tr.steps = {s};
  EXPECT_NEAR(predict_one_step(tr).values(0), 2.5, 1e-15);
  Matrix w(1, 2);
  w << 0.5, 0.5;
  EXPECT_NEAR(predict_smoothed_insample(tr, w).values(0), 2.0, 1e-15);
  tr.steps[0].pred_probs = (Vector(2) << 0.0, 1.0).finished();
  EXPECT_NEAR(predict_one_step(tr).values(0), 3.0, 1e-15);
}

TEST(Prediction, SingleRegimeAndEquality) {
  const std::vector<int> y = {3, 1, 4, 1, 5, 9, 2, 6};
  const ParameterSet p = single(0.3, 0.4, 0.2);
  const FilterTrace tr = quasi_log_likelihood(p, y);
  const PredictionSeries one = predict_one_step(tr);
  for (int t = 0; t < 8; ++t) EXPECT_DOUBLE_EQ(one.values(t), std::exp(tr.steps[t].lambda_vec(0)));

  const ParameterSet q = case1_parameters();
  const FilterTrace tq = quasi_log_likelihood(q, y);
  Matrix pred_rows(8, 4);
  for (int t = 0; t < 8; ++t) pred_rows.row(t) = tq.steps[t].pred_probs.transpose();
  EXPECT_EQ(predict_smoothed_insample(tq, pred_rows).values, predict_one_step(tq).values);

  const Matrix smooth = kim_smoother(tq, build_expanded_chain(q.gamma));
  const PredictionSeries sm = predict_smoothed_insample(tq, smooth);
  double base = 0.0;
  for (int j = 0; j < 4; ++j) base += std::exp(tq.steps[7].lambda_vec(j)) * tq.steps[7].filter_probs(j);
  EXPECT_DOUBLE_EQ(sm.values(7), base);
}

TEST(Forecast, ConstantIntensity) {
  const std::vector<int> y = {3, 0, 2};
  const ParameterSet p = single(0.7, 0.0, 0.0);
  const PredictionSeries f = forecast(p, quasi_log_likelihood(p, y), 5);
  for (int h = 0; h < 5; ++h) EXPECT_NEAR(f.values(h), std::exp(0.7), 1e-14);
}

TEST(Forecast, FirstStepIsOneStepPrediction) {
  const ParameterSet p = case1_parameters();
  const SimulationOutput sim = simulate_ms_pllar(p, 60, 3);
  const FilterTrace tr = quasi_log_likelihood(p, sim.y);
  // Extend the series by one observation: the new step's one-step prediction
  // uses the same quantities as the k = 1 forecast.
  std::vector<int> y = sim.y;
  y.push_back(0);
  const FilterTrace longer = quasi_log_likelihood(p, y);
  EXPECT_EQ(forecast(p, tr, 1).values(0), predict_one_step(longer).values(60));
}

// m = 2, a = (0, 0), k = 2 written out with scalars.
TEST(Forecast, HandUnrolledTwoSteps) {
  const double d[2] = {0.5, 1.2}, b[2] = {-0.2, 0.4};
  const ParameterSet p = two_regime(0.5, 1.2, 0.0, 0.0, -0.2, 0.4, sym_gamma(0.8));
  const std::vector<int> y = {2, 5, 4};
  const FilterTrace tr = quasi_log_likelihood(p, y);
  const int cur_of[4] = {0, 1, 0, 1}, prev_of[4] = {0, 0, 1, 1};
  const double G[2][2] = {{0.8, 0.2}, {0.2, 0.8}};
  const Vector& filt = tr.steps.back().filter_probs;

  double pred1[4] = {0, 0, 0, 0};
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 4; ++i)
      if (prev_of[j] == cur_of[i]) pred1[j] += filt(i) * G[cur_of[i]][cur_of[j]];
  double lam1 = 0.0;
  for (int j = 0; j < 4; ++j) lam1 += pred1[j] * std::exp(d[cur_of[j]] + b[cur_of[j]] * std::log(5.0));

  double pred2[4] = {0, 0, 0, 0};
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 4; ++i)
      if (prev_of[j] == cur_of[i]) pred2[j] += pred1[i] * G[cur_of[i]][cur_of[j]];
  double lam2 = 0.0;
  for (int j = 0; j < 4; ++j) lam2 += pred2[j] * std::exp(d[cur_of[j]] + b[cur_of[j]] * std::log1p(lam1));

  const PredictionSeries f = forecast(p, tr, 2);
  EXPECT_NEAR(f.values(0), lam1, 1e-13);
  EXPECT_NEAR(f.values(1), lam2, 1e-13);
}

TEST(Forecast, MissingCovariatesRejected) {
  const ParameterSet p = single(0.3, 0.2, 0.2, Matrix::Constant(1, 1, 0.1));
  const std::vector<int> y = {1, 2};
  const FilterTrace tr = quasi_log_likelihood(p, y, Matrix::Zero(2, 1));
  EXPECT_THROW(forecast(p, tr, 3, Matrix::Zero(2, 1)), DataError);
  EXPECT_NO_THROW(forecast(p, tr, 2, Matrix::Zero(2, 1)));
}

TEST(Diagnostics, Arithmetic) {
  const std::vector<int> y = {0, 2};
  PredictionSeries pr;
  pr.values = Vector::Ones(2);
  const DiagnosticsReport rep = diagnostics(y, pr, -3.0, 0);
  EXPECT_EQ(rep.pearson_residuals(0), -1.0);
  EXPECT_EQ(rep.pearson_residuals(1), 1.0);
  EXPECT_EQ(rep.residual_mse, 1.0);
  EXPECT_EQ(rep.aic, 6.0);
  EXPECT_EQ(rep.poisson_check_pairs[1], std::make_pair(1.0, 1.0));

  const DiagnosticsReport r2 = diagnostics(y, pr, -3.0, 1);
  EXPECT_EQ(r2.residual_mse, 2.0);
  EXPECT_EQ(r2.aic, 8.0);
  EXPECT_DOUBLE_EQ(r2.bic, 6.0 + std::log(2.0));
  const DiagnosticsReport r3 = diagnostics(y, pr, -3.0, 2);
  EXPECT_FALSE(r3.mse_defined);
  EXPECT_TRUE(std::isnan(r3.residual_mse));
}

TEST(Diagnostics, PerfectFit) {
  const std::vector<int> y = {1, 4, 2, 7};
  PredictionSeries pr;
  pr.values = (Vector(4) << 1, 4, 2, 7).finished();
  const DiagnosticsReport rep = diagnostics(y, pr, 0.0, 1);
  EXPECT_EQ(rep.pearson_residuals, Vector::Zero(4));
  EXPECT_EQ(rep.residual_mse, 0.0);
}

TEST(Diagnostics, AcfAgainstDirectFormula) {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n01;
  const Vector x = Vector::NullaryExpr(37, [&] { return n01(gen); });
  const Vector acf = sample_acf(x, 5);
  const double mean = x.mean();
  double c0 = 0.0;
  for (int t = 0; t < 37; ++t) c0 += (x(t) - mean) * (x(t) - mean);
  for (int l = 1; l <= 5; ++l) {
    double cl = 0.0;
    for (int t = l; t < 37; ++t) cl += (x(t) - mean) * (x(t - l) - mean);
    EXPECT_NEAR(acf(l - 1), cl / c0, 1e-14);
  }
  EXPECT_EQ(default_acf_lags(1000), 40);
  EXPECT_EQ(default_acf_lags(100), 25);
}

TEST(Diagnostics, WhiteResidualsUnderTrueModel) {
  const ParameterSet p = case2_parameters();
  const SimulationOutput sim = simulate_ms_pllar(p, 2000, 77);
  const FilterTrace tr = quasi_log_likelihood(p, sim.y);
  const DiagnosticsReport rep = diagnostics(sim.y, predict_one_step(tr), tr.qll, 8);
  const double band = 2.0 / std::sqrt(2000.0);
  int inside = 0;
  for (Eigen::Index l = 0; l < rep.acf.size(); ++l) inside += std::abs(rep.acf(l)) < band;
  EXPECT_GE(inside, static_cast<int>(0.85 * rep.acf.size()));
}

TEST(CovariateTrajectory, Examples) {
  Matrix beta(2, 1);
  beta << 1.0, -1.0;
  Matrix w(3, 2);
  w << 0.25, 0.75, 0.0, 1.0, 0.6, 0.4;
  const Matrix traj = covariate_effect_trajectory(beta, w);
  EXPECT_DOUBLE_EQ(traj(0, 0), -0.5);
  EXPECT_DOUBLE_EQ(traj(1, 0), -1.0);
  const Matrix flat = covariate_effect_trajectory(Matrix::Constant(2, 1, 0.3), w);
  for (int t = 0; t < 3; ++t) EXPECT_NEAR(flat(t, 0), 0.3, 1e-15);
}

TEST(IntensityDecomposition, NoFeedback) {
  Matrix beta(1, 1);
  beta << 0.5;
  const ParameterSet p = single(0.4, 0.0, 0.3, beta);
  const std::vector<int> y = {2, 0, 5};
  const Matrix X = (Matrix(3, 1) << 1.0, -2.0, 0.5).finished();
  const IntensityDecomposition dec = intensity_decomposition(p, y, X, 0.7, 4.0);
  const double ylag[3] = {4.0, 2.0, 0.0};
  for (int t = 0; t < 3; ++t) {
    EXPECT_DOUBLE_EQ(dec.intercept(t), 0.4);
    EXPECT_DOUBLE_EQ(dec.initial_condition(t), 0.0);
    EXPECT_DOUBLE_EQ(dec.contagion(t), 0.3 * std::log1p(ylag[t]));
    EXPECT_DOUBLE_EQ(dec.systematic(t), 0.5 * X(t, 0));
  }
}

TEST(IntensityDecomposition, DeterministicRecursion) {
  const ParameterSet p = single(0.4, 0.6, 0.0);
  const std::vector<int> y = {2, 0, 5, 1};
  const IntensityDecomposition dec = intensity_decomposition(p, y, Matrix(), 1.5, 1.0);
  for (int t = 1; t <= 4; ++t) {
    const double want = 0.4 * (1 - std::pow(0.6, t)) / 0.4 + std::pow(0.6, t) * 1.5;
    EXPECT_NEAR(dec.total()(t - 1), want, 1e-14);
  }
}

TEST(IntensityDecomposition, SumsToRecursion) {
  std::mt19937_64 gen(12);
  std::normal_distribution<double> n01;
  Matrix beta(1, 2);
  beta << 0.3, -0.2;
  const ParameterSet p = single(0.2, 0.5, 0.3, beta);
  Matrix X(50, 2);
  for (int t = 0; t < 50; ++t) X.row(t) << n01(gen), n01(gen);
  const SimulationOutput sim = simulate_ms_pllar(p, 50, X, 6);
  const IntensityDecomposition dec = intensity_decomposition(p, sim.y, X, 0.9, 3.0);
  double eta = 0.9, y_prev = 3.0;
  for (int t = 0; t < 50; ++t) {
    eta = 0.2 + 0.5 * eta + 0.3 * std::log1p(y_prev) + X.row(t).dot(beta.row(0));
    EXPECT_NEAR(dec.total()(t), eta, 1e-10);
    EXPECT_NEAR(dec.eta(t), eta, 1e-10);
    y_prev = sim.y[t];
  }
  EXPECT_THROW(intensity_decomposition(single(0.2, 1.0, 0.0), sim.y, Matrix(), 0.0, 1.0), UsageError);
}

TEST(MostLikelyPath, SingleRegimeMatchesOneStep) {
  const ParameterSet p = single(0.3, 0.4, 0.2);
  const std::vector<int> y = {3, 1, 4, 1, 5};
  const FilterTrace tr = quasi_log_likelihood(p, y);
  StateProbabilities sp;
  sp.probs = Matrix::Ones(5, 1);
  const PredictionSeries ml = predict_most_likely_path(p, tr, sp);
  const PredictionSeries one = predict_one_step(tr);
  for (int t = 0; t < 5; ++t) EXPECT_NEAR(ml.values(t), one.values(t), 1e-13);
}

#pragma once

// Regime inference, in-sample and out-of-sample prediction, residual
// diagnostics and covariate-effect trajectories built on a filter trace.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mspllar/core_model.hpp"
#include "mspllar/ehg_filter.hpp"
#include "mspllar/error.hpp"

namespace mspllar {

enum class ProbabilityKind { filter, one_step_ahead, smoothing };

inline std::string to_string(ProbabilityKind kind) {
  switch (kind) {
    case ProbabilityKind::filter: return "filter";
    case ProbabilityKind::one_step_ahead: return "one_step_ahead";
    case ProbabilityKind::smoothing: return "smoothing";
  }
  return "unknown";
}

/// Row t (0-based) holds P(S_{t+1} = j | Omega_tau) for the regime chain:
/// tau = t+1 for filter, tau = t for one_step_ahead, tau = T for smoothing.
struct StateProbabilities {
  ProbabilityKind kind = ProbabilityKind::filter;
  Matrix probs;
};

enum class PredictionKind { one_step, smoothed_insample, forecast, most_likely_path };

inline std::string to_string(PredictionKind kind) {
  switch (kind) {
    case PredictionKind::one_step: return "one_step";
    case PredictionKind::smoothed_insample: return "smoothed_insample";
    case PredictionKind::forecast: return "forecast";
    case PredictionKind::most_likely_path: return "most_likely_path";
  }
  return "unknown";
}

struct PredictionSeries {
  PredictionKind kind = PredictionKind::one_step;
  Vector values;
};

struct DiagnosticsReport {
  Vector pearson_residuals;
  /// NaN when T <= p.
  double residual_mse = std::numeric_limits<double>::quiet_NaN();
  bool mse_defined = false;
  Vector acf;
  double aic = 0.0;
  double bic = 0.0;
  std::vector<std::pair<double, double>> poisson_check_pairs;
};

/// Stacks per-step expanded probabilities into a T x m^2 matrix.
inline Matrix expanded_probabilities(const FilterTrace& trace, ProbabilityKind kind) {
  if (trace.steps.empty()) throw UsageError("empty filter trace");
  const int T = trace.length();
  const auto n = trace.steps.front().filter_probs.size();
  Matrix out(T, n);
  for (int t = 0; t < T; ++t) {
    const FilterStep& s = trace.steps[t];
    switch (kind) {
      case ProbabilityKind::filter: out.row(t) = s.filter_probs.transpose(); break;
      case ProbabilityKind::one_step_ahead: out.row(t) = s.pred_probs.transpose(); break;
      case ProbabilityKind::smoothing:
        throw UsageError("smoothing probabilities come from kim_smoother");
    }
  }
  return out;
}

/// Collapses pair-state probabilities onto the current regime.
inline StateProbabilities marginal_state_probs(const Matrix& expanded_probs,
                                               const ExpandedChain& chain,
                                               ProbabilityKind kind = ProbabilityKind::filter) {
  if (expanded_probs.cols() != chain.size()) {
    throw UsageError("expanded probabilities must have m^2 columns");
  }
  StateProbabilities out;
  out.kind = kind;
  out.probs = Matrix::Zero(expanded_probs.rows(), chain.m);
  for (Eigen::Index t = 0; t < expanded_probs.rows(); ++t) {
    for (int i = 0; i < chain.size(); ++i) {
      out.probs(t, chain.current_state_of(i)) += expanded_probs(t, i);
    }
  }
  return out;
}

/// Backward recursion for P(S*_t = i | Omega_T), returned as T x m^2.
inline Matrix kim_smoother(const FilterTrace& trace, const ExpandedChain& chain) {
  if (trace.steps.empty()) throw UsageError("empty filter trace");
  const int T = trace.length();
  const int n = chain.size();
  Matrix smooth(T, n);
  smooth.row(T - 1) = trace.steps[T - 1].filter_probs.transpose();

  Vector ratio(n);
  for (int t = T - 2; t >= 0; --t) {
    const FilterStep& s = trace.steps[t];
    for (int j = 0; j < n; ++j) {
      const double num = smooth(t + 1, j);
      const double den = s.pred_probs_next(j);
      if (den > 0.0) {
        ratio(j) = num / den;
      } else if (num == 0.0) {
        ratio(j) = 0.0;
      } else {
        throw NumericalError("smoother found mass on an unreachable pair state at t = " +
                             std::to_string(t + 2));
      }
    }
    Vector row = s.filter_probs.cwiseProduct(chain.gamma_star * ratio);
    const double total = row.sum();
    if (!(total > 0.0)) throw NumericalError("smoothing probabilities vanished");
    smooth.row(t) = (row / total).transpose();
  }
  return smooth;
}

namespace detail {

inline double clamped_intensity(double eta) { return std::exp(std::min(eta, kMaxLinearPredictor)); }

inline double mixture_mean(const Vector& eta, const Eigen::Ref<const Vector>& weights) {
  double out = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) out += clamped_intensity(eta(i)) * weights(i);
  return out;
}

}  // namespace detail

/// lambda_hat_{t | Omega_{t-1}}, t = 1..T.
inline PredictionSeries predict_one_step(const FilterTrace& trace) {
  PredictionSeries out;
  out.kind = PredictionKind::one_step;
  out.values.resize(trace.length());
  for (int t = 0; t < trace.length(); ++t) {
    const FilterStep& s = trace.steps[t];
    out.values(t) = detail::mixture_mean(s.lambda_vec, s.pred_probs);
  }
  return out;
}

/// In-sample prediction reweighting the pair-state intensities with the
/// smoothing probabilities. Not E(Y_t | Omega_T) in general.
inline PredictionSeries predict_smoothed_insample(const FilterTrace& trace, const Matrix& smoothing) {
  if (smoothing.rows() != trace.length()) throw UsageError("smoothing matrix must have T rows");
  PredictionSeries out;
  out.kind = PredictionKind::smoothed_insample;
  out.values.resize(trace.length());
  for (int t = 0; t < trace.length(); ++t) {
    out.values(t) =
        detail::mixture_mean(trace.steps[t].lambda_vec, smoothing.row(t).transpose());
  }
  return out;
}

/// exp(eta_t) along the regime path that maximises the smoothing marginals.
/// Kept for comparison only; the weighted predictors are preferred.
inline PredictionSeries predict_most_likely_path(const ParameterSet& params,
                                                 const FilterTrace& trace,
                                                 const StateProbabilities& smoothing_marginals,
                                                 const Matrix& X = Matrix(),
                                                 const FilterOptions& options = {}) {
  const int T = trace.length();
  PredictionSeries out;
  out.kind = PredictionKind::most_likely_path;
  out.values.resize(T);
  double eta_prev = trace.init.lambda0.size() > 0 ? trace.init.lambda0(0) : 0.0;
  double y_prev = trace.init.y0;
  for (int t = 0; t < T; ++t) {
    Eigen::Index k = 0;
    smoothing_marginals.probs.row(t).maxCoeff(&k);
    const double feedback = detail::lagged_feedback(y_prev, options);
    double eta = params.d(k) + params.a(k) * eta_prev + params.b(k) * feedback;
    if (params.covariates() > 0) eta += params.beta.row(k).dot(X.row(t));
    out.values(t) = detail::clamped_intensity(eta);
    eta_prev = eta;
    y_prev = trace.steps[t].y;
  }
  return out;
}

/// k-step forecast beyond the end of the trace.
///
/// Unobserved counts are replaced by their forecasts (as real numbers inside
/// log(. + 1)); without an observation the pair-state probabilities are
/// propagated through the transition matrix only. X_future row h holds the
/// covariates for T + h + 1.
inline PredictionSeries forecast(const ParameterSet& params, const FilterTrace& trace, int horizon,
                                 const Matrix& X_future = Matrix(),
                                 const FilterOptions& options = {}) {
  if (trace.steps.empty()) throw UsageError("forecast needs a non-empty filter trace");
  if (horizon < 1) throw UsageError("forecast horizon must be at least 1");
  const int r = params.covariates();
  if (r > 0 && (X_future.rows() < horizon || X_future.cols() != r)) {
    throw DataError("future covariates must supply " + std::to_string(horizon) + " rows of " +
                    std::to_string(r) + " columns");
  }
  const ExpandedChain chain = build_expanded_chain(params.gamma);
  PredictionSeries out;
  out.kind = PredictionKind::forecast;
  out.values.resize(horizon);

  FilterStep prev = trace.steps.back();
  for (int h = 0; h < horizon; ++h) {
    const Vector pred = prev.pred_probs_next;
    const Vector eta_cond = bayes_update_eta(prev.lambda_vec, prev.filter_probs, pred, chain);
    const Vector x = r > 0 ? Vector(X_future.row(h).transpose()) : Vector();
    const Vector lambda = forward_eta(eta_cond, prev.y, x, params, chain, options);
    const double lambda_hat = detail::mixture_mean(lambda, pred);
    out.values(h) = lambda_hat;

    FilterStep next;
    next.t = prev.t + 1;
    next.y = lambda_hat;
    next.lambda_vec = lambda;
    next.pred_probs = pred;
    next.filter_probs = pred;
    next.pred_probs_next = chain.gamma_star.transpose() * pred;
    next.pred_probs_next /= next.pred_probs_next.sum();
    prev = std::move(next);
  }
  return out;
}

/// Sample autocorrelation with the biased 1/T normalisation, lags 1..max_lag.
inline Vector sample_acf(const Vector& x, int max_lag) {
  const auto T = x.size();
  if (max_lag < 0) throw UsageError("max lag must be non-negative");
  Vector out = Vector::Zero(max_lag);
  if (T == 0) return out;
  const Vector c = x.array() - x.mean();
  const double c0 = c.squaredNorm() / static_cast<double>(T);
  for (int l = 1; l <= max_lag; ++l) {
    if (l >= T || c0 == 0.0) {
      out(l - 1) = 0.0;
      continue;
    }
    const double cl = c.head(T - l).dot(c.tail(T - l)) / static_cast<double>(T);
    out(l - 1) = cl / c0;
  }
  return out;
}

inline int default_acf_lags(int T) { return std::max(1, std::min(40, T / 4)); }

/// Pearson residuals, residual MSE, ACF, information criteria and the
/// (lambda_hat, squared raw residual) pairs for the Poisson variance check.
///
/// AIC = -2 qll + 2p, BIC = -2 qll + p log T.
inline DiagnosticsReport diagnostics(std::span<const int> y, const PredictionSeries& predictions,
                                     double qll, int p, int max_lag = -1) {
  const int T = static_cast<int>(y.size());
  if (predictions.values.size() != T) throw UsageError("prediction length differs from series");
  if (p < 0) throw UsageError("parameter count must be non-negative");
  DiagnosticsReport rep;
  rep.pearson_residuals.resize(T);
  rep.poisson_check_pairs.reserve(T);
  for (int t = 0; t < T; ++t) {
    const double lam = predictions.values(t);
    if (!(lam > 0.0)) throw NumericalError("prediction is not positive at t = " + std::to_string(t + 1));
    const double raw = y[t] - lam;
    rep.pearson_residuals(t) = raw / std::sqrt(lam);
    rep.poisson_check_pairs.emplace_back(lam, raw * raw);
  }
  if (T > p) {
    rep.mse_defined = true;
    rep.residual_mse = rep.pearson_residuals.squaredNorm() / static_cast<double>(T - p);
  }
  rep.acf = sample_acf(rep.pearson_residuals, max_lag < 0 ? default_acf_lags(T) : max_lag);
  rep.aic = -2.0 * qll + 2.0 * p;
  rep.bic = -2.0 * qll + p * std::log(static_cast<double>(T));
  return rep;
}

/// beta_hat(t) = sum_j beta_hat_j P(S_t = j | Omega_T); returns T x r.
inline Matrix covariate_effect_trajectory(const Matrix& beta_hat, const Matrix& smoothing_marginals) {
  if (smoothing_marginals.cols() != beta_hat.rows()) {
    throw UsageError("smoothing marginals must have one column per regime");
  }
  return smoothing_marginals * beta_hat;
}

/// Split of the single-regime linear predictor into its four sources.
struct IntensityDecomposition {
  Vector intercept;          // d (1 - a^t) / (1 - a)
  Vector initial_condition;  // a^t eta_0
  Vector contagion;          // b sum_i a^i log(1 + Y_{t-i-1})
  Vector systematic;         // sum_i a^i beta' X_{t-i}
  Vector eta;                // recursive linear predictor

  Vector total() const { return intercept + initial_condition + contagion + systematic; }
};

/// Requires m = 1 and a != 1. y0 is the pre-sample count entering eta_1.
inline IntensityDecomposition intensity_decomposition(const ParameterSet& params,
                                                      std::span<const int> y,
                                                      const Matrix& X, double eta0, double y0) {
  if (params.regimes() != 1) throw UsageError("intensity decomposition needs a single regime");
  const double a = params.a(0);
  const double b = params.b(0);
  const double d = params.d(0);
  if (a == 1.0) throw UsageError("intensity decomposition is undefined for a = 1");
  const int T = static_cast<int>(y.size());
  const int r = params.covariates();
  if (r > 0 && (X.rows() != T || X.cols() != r)) throw UsageError("covariate matrix must be T x r");

  IntensityDecomposition dec;
  dec.intercept.resize(T);
  dec.initial_condition.resize(T);
  dec.contagion.resize(T);
  dec.systematic.resize(T);
  dec.eta.resize(T);

  double contagion = 0.0;   // sum_{i<t} a^i log(1 + Y_{t-1-i})
  double systematic = 0.0;  // sum_{i<t} a^i beta' X_{t-i}
  double a_pow = 1.0;
  double eta_prev = eta0;
  for (int t = 1; t <= T; ++t) {
    const double y_prev = t == 1 ? y0 : static_cast<double>(y[t - 2]);
    const double x_effect = r > 0 ? params.beta.row(0).dot(X.row(t - 1)) : 0.0;
    contagion = a * contagion + std::log1p(y_prev);
    systematic = a * systematic + x_effect;
    a_pow *= a;
    dec.intercept(t - 1) = d * (1.0 - a_pow) / (1.0 - a);
    dec.initial_condition(t - 1) = a_pow * eta0;
    dec.contagion(t - 1) = b * contagion;
    dec.systematic(t - 1) = systematic;

    eta_prev = d + a * eta_prev + b * std::log1p(y_prev) + x_effect;
    dec.eta(t - 1) = eta_prev;
  }
  return dec;
}

}  // namespace mspllar

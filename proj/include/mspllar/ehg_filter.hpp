#pragma once

// Extended Hamilton-Gray recursion for the MS Poisson log-linear model.
//
// Per time step t the filter carries, for every pair state j of the
// expanded chain, the conditional expectation of the linear predictor
// (Lambda_t), the Poisson log-pmf of y_t under that expectation, the
// filtering probabilities P(S*_t | Omega_t) and the one-step-ahead
// probabilities P(S*_{t+1} | Omega_t). Everything that touches
// probabilities is carried in log space until normalisation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mspllar/core_model.hpp"
#include "mspllar/error.hpp"

namespace mspllar {

/// Upper clamp on a linear predictor before exponentiation.
inline constexpr double kMaxLinearPredictor = 700.0;
/// Below this |1 - a_k - b_k| the marginal-mean initialisation is abandoned.
inline constexpr double kUnitRootGuard = 1e-6;
/// Predictive probabilities below this mark a pair state as unreachable.
inline constexpr double kUnreachableProbability = 1e-300;

struct FilterOptions {
  /// Regress on the raw lagged count b * Y_{t-1} instead of b * log(Y_{t-1} + 1).
  /// Off by default; exists only to compare against the literal forwarding rule.
  bool raw_count_feedback = false;
};

/// Starting values of the recursion.
struct FilterInit {
  double y0 = 1.0;
  Vector lambda0;
  Vector prior;
  bool fallback = false;
};

struct FilterStep {
  int t = 0;
  /// Observation consumed at this step (Y_0 for the initial pseudo step).
  double y = 0.0;
  /// Lambda_t: E(eta_t | S*_t = j, Omega_{t-1}).
  Vector lambda_vec;
  Vector log_cond_pmf;
  /// P(S*_t = j | Omega_{t-1}).
  Vector pred_probs;
  /// P(S*_t = j | Omega_t).
  Vector filter_probs;
  /// P(S*_{t+1} = j | Omega_t).
  Vector pred_probs_next;
  double log_mix = 0.0;
};

struct FilterTrace {
  std::vector<FilterStep> steps;
  double qll = 0.0;
  FilterInit init;
  bool feasible = true;
  std::vector<std::string> warnings;

  int length() const { return static_cast<int>(steps.size()); }
};

namespace detail {

inline double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  const double hi = v.maxCoeff();
  if (!std::isfinite(hi)) return hi;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) sum += std::exp(v(i) - hi);
  return hi + std::log(sum);
}

inline double lagged_feedback(double y_prev, const FilterOptions& options) {
  return options.raw_count_feedback ? y_prev : std::log1p(y_prev);
}

inline void check_dimensions(const ParameterSet& params, std::size_t T, const Matrix& X) {
  params.validate();
  if (T == 0) throw UsageError("series must contain at least one observation");
  const int r = params.covariates();
  if (r > 0 && (X.rows() != static_cast<Eigen::Index>(T) || X.cols() != r)) {
    throw UsageError("covariate matrix must be T x r");
  }
}

}  // namespace detail

/// Marginal-mean starting values: every element of Lambda_0 equals
/// sum_i delta_i d_i / (1 - a_i - b_i), Y_0 is its exponential and the prior
/// over S*_1 is the stationary distribution of the pair chain.
inline FilterInit initialize_filter(const ParameterSet& params) {
  const ExpandedChain chain = build_expanded_chain(params.gamma);
  const Vector delta = stationary_distribution(params.gamma);
  FilterInit init;
  init.prior = stationary_distribution_expanded(chain);

  double mean = 0.0;
  for (int i = 0; i < params.regimes(); ++i) {
    const double denom = 1.0 - params.a(i) - params.b(i);
    if (std::abs(denom) < kUnitRootGuard) {
      init.fallback = true;
      break;
    }
    mean += delta(i) * params.d(i) / denom;
  }
  if (init.fallback || !std::isfinite(mean) || mean > kMaxLinearPredictor) {
    init.fallback = true;
    mean = 0.0;
  }
  init.lambda0 = Vector::Constant(chain.size(), mean);
  init.y0 = std::exp(mean);
  return init;
}

/// E(eta_{t-1} | S*_t = j, Omega_{t-1}) as the posterior average of Lambda_{t-1}.
inline Vector bayes_update_eta(const Vector& lambda_prev, const Vector& filter_probs_prev,
                               const Vector& pred_probs, const ExpandedChain& chain) {
  const int n = chain.size();
  Vector out(n);
  const double fallback = filter_probs_prev.dot(lambda_prev);
  for (int j = 0; j < n; ++j) {
    if (pred_probs(j) < kUnreachableProbability) {
      out(j) = fallback;
      continue;
    }
    double num = 0.0;
    double den = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = chain.gamma_star(i, j) * filter_probs_prev(i);
      num += w * lambda_prev(i);
      den += w;
    }
    // den is pred_probs(j) by the one-step identity; dividing by the local
    // sum keeps the result inside the convex hull of lambda_prev.
    out(j) = den > 0.0 ? num / den : fallback;
  }
  return out;
}

/// Forwards the Bayes-updated expectations along the path of each pair state.
inline Vector forward_eta(const Vector& eta_cond, double y_prev,
                          const Eigen::Ref<const Vector>& x_t, const ParameterSet& params,
                          const ExpandedChain& chain, const FilterOptions& options = {}) {
  const double feedback = detail::lagged_feedback(y_prev, options);
  Vector out(chain.size());
  for (int j = 0; j < chain.size(); ++j) {
    const int k = chain.current_state_of(j);
    double eta = params.d(k) + params.a(k) * eta_cond(j) + params.b(k) * feedback;
    if (params.covariates() > 0) eta += params.beta.row(k).dot(x_t);
    out(j) = eta;
  }
  return out;
}

/// log Poisson(y | exp(eta_j)) per component, with eta clamped at 700.
inline Vector conditional_log_pmf(const Vector& lambda_vec, double y_t, bool* clamped = nullptr) {
  const double log_fact = std::lgamma(y_t + 1.0);
  Vector out(lambda_vec.size());
  for (Eigen::Index j = 0; j < lambda_vec.size(); ++j) {
    double eta = lambda_vec(j);
    if (eta > kMaxLinearPredictor) {
      eta = kMaxLinearPredictor;
      if (clamped) *clamped = true;
    }
    // 0 * (-inf) would poison the sum when exp(eta) underflows.
    const double linear = y_t == 0.0 ? 0.0 : y_t * eta;
    out(j) = linear - std::exp(eta) - log_fact;
  }
  return out;
}

/// Pseudo step at t = 0 holding the starting values.
inline FilterStep make_initial_step(const FilterInit& init) {
  FilterStep s;
  s.t = 0;
  s.y = init.y0;
  s.lambda_vec = init.lambda0;
  s.log_cond_pmf = Vector::Zero(init.prior.size());
  s.pred_probs = init.prior;
  s.filter_probs = init.prior;
  s.pred_probs_next = init.prior;
  s.log_mix = 0.0;
  return s;
}

/// One full filter step for observation y_t.
///
/// Throws NumericalError when every mixture component has zero probability
/// or the linear predictor is no longer finite.
inline FilterStep ehg_step(const FilterStep& prev, double y_t, const Eigen::Ref<const Vector>& x_t,
                           const ParameterSet& params, const ExpandedChain& chain,
                           const FilterOptions& options = {}, bool* clamped = nullptr) {
  FilterStep s;
  s.t = prev.t + 1;
  s.y = y_t;
  s.pred_probs = prev.pred_probs_next;
  // At t = 1 the starting values already are the conditional expectations.
  const Vector eta_cond =
      prev.t == 0 ? prev.lambda_vec
                  : bayes_update_eta(prev.lambda_vec, prev.filter_probs, s.pred_probs, chain);
  s.lambda_vec = forward_eta(eta_cond, prev.y, x_t, params, chain, options);
  if (!s.lambda_vec.allFinite()) {
    throw NumericalError("linear predictor diverged at t = " + std::to_string(s.t));
  }
  s.log_cond_pmf = conditional_log_pmf(s.lambda_vec, y_t, clamped);

  const int n = chain.size();
  Vector joint(n);
  for (int j = 0; j < n; ++j) {
    joint(j) = s.pred_probs(j) > 0.0 ? std::log(s.pred_probs(j)) + s.log_cond_pmf(j)
                                     : -std::numeric_limits<double>::infinity();
  }
  s.log_mix = detail::log_sum_exp(joint);
  if (!std::isfinite(s.log_mix)) {
    throw NumericalError("mixture probability underflowed at t = " + std::to_string(s.t));
  }
  // Scalar exp: Eigen's packet exp maps -inf to a denormal, not zero.
  s.filter_probs.resize(n);
  for (int j = 0; j < n; ++j) s.filter_probs(j) = std::exp(joint(j) - s.log_mix);
  s.filter_probs /= s.filter_probs.sum();
  s.pred_probs_next = chain.gamma_star.transpose() * s.filter_probs;
  s.pred_probs_next /= s.pred_probs_next.sum();
  return s;
}

namespace detail {

inline Vector covariate_row(const Matrix& X, int t) {
  return X.cols() > 0 ? Vector(X.row(t).transpose()) : Vector();
}

}  // namespace detail

/// Runs the recursion over the whole series and returns the full trace.
///
/// Infeasible parameter points do not throw: the trace comes back with
/// qll = -inf, feasible = false and a diagnostic in warnings.
inline FilterTrace quasi_log_likelihood(const ParameterSet& params, std::span<const int> y,
                                        const Matrix& X = Matrix(),
                                        const FilterOptions& options = {}) {
  detail::check_dimensions(params, y.size(), X);
  const ExpandedChain chain = build_expanded_chain(params.gamma);
  FilterTrace trace;
  try {
    trace.init = initialize_filter(params);
  } catch (const NumericalError& e) {
    trace.feasible = false;
    trace.qll = -std::numeric_limits<double>::infinity();
    trace.warnings.emplace_back(e.what());
    return trace;
  }
  if (trace.init.fallback) {
    trace.warnings.emplace_back(
        "1 - a - b is numerically zero in some regime; starting from Lambda_0 = 0, Y_0 = 1");
  }

  trace.steps.reserve(y.size());
  FilterStep prev = make_initial_step(trace.init);
  bool clamped = false;
  double qll = 0.0;
  try {
    for (std::size_t t = 0; t < y.size(); ++t) {
      if (y[t] < 0) throw DataError("negative count at t = " + std::to_string(t + 1));
      FilterStep step = ehg_step(prev, static_cast<double>(y[t]),
                                 detail::covariate_row(X, static_cast<int>(t)), params, chain,
                                 options, &clamped);
      qll += step.log_mix;
      trace.steps.push_back(step);
      prev = std::move(step);
    }
  } catch (const NumericalError& e) {
    trace.feasible = false;
    trace.qll = -std::numeric_limits<double>::infinity();
    trace.warnings.emplace_back(e.what());
    return trace;
  }
  if (clamped) trace.warnings.emplace_back("linear predictor clamped at 700 before exp()");
  trace.qll = qll;
  return trace;
}

/// Value-only evaluation for optimisers: same arithmetic, no stored trace.
inline double quasi_log_likelihood_value(const ParameterSet& params, std::span<const int> y,
                                         const Matrix& X = Matrix(),
                                         const FilterOptions& options = {}) {
  detail::check_dimensions(params, y.size(), X);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const ExpandedChain chain = build_expanded_chain(params.gamma);
  FilterInit init;
  try {
    init = initialize_filter(params);
  } catch (const NumericalError&) {
    return kNegInf;
  }
  FilterStep prev = make_initial_step(init);
  double qll = 0.0;
  try {
    for (std::size_t t = 0; t < y.size(); ++t) {
      FilterStep step = ehg_step(prev, static_cast<double>(y[t]),
                                 detail::covariate_row(X, static_cast<int>(t)), params, chain,
                                 options);
      qll += step.log_mix;
      prev = std::move(step);
    }
  } catch (const NumericalError&) {
    return kNegInf;
  }
  return qll;
}

}  // namespace mspllar

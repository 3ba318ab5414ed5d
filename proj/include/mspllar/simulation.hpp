#pragma once

// Simulation of MS Poisson log-linear paths, the exact path-enumeration
// likelihood used as an oracle for the filter, and the Monte-Carlo study
// harness (simulate -> fit -> aggregate bias / SE / mean reported SE).

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mspllar/core_model.hpp"
#include "mspllar/ehg_filter.hpp"
#include "mspllar/error.hpp"
#include "mspllar/estimation.hpp"
#include "mspllar/random.hpp"

namespace mspllar {

/// Case 1 of the reference study: well separated regimes.
inline ParameterSet case1_parameters() {
  Matrix g(2, 2);
  g << 0.95, 0.05, 0.05, 0.95;
  return ParameterSet::make(Vector{{0.50, 0.30}}, Vector{{-0.50, 0.40}}, Vector{{-0.35, 0.50}}, g);
}

/// Case 2 of the reference study: subtler differences between regimes.
inline ParameterSet case2_parameters() {
  Matrix g(2, 2);
  g << 0.90, 0.10, 0.10, 0.90;
  return ParameterSet::make(Vector{{1.00, 0.30}}, Vector{{0.20, 0.40}}, Vector{{0.30, 0.50}}, g);
}

inline ParameterSet case_parameters(int which) {
  switch (which) {
    case 1: return case1_parameters();
    case 2: return case2_parameters();
    default: throw UsageError("unknown study case " + std::to_string(which) + " (expected 1 or 2)");
  }
}

namespace detail {

// Stationary distribution, or uniform when it is not unique (reducible chain).
inline Vector initial_distribution(const TransitionMatrix& gamma) {
  try {
    return stationary_distribution(gamma);
  } catch (const NumericalError&) {
    return Vector::Constant(gamma.size(), 1.0 / gamma.size());
  }
}

// sum_i delta_i d_i / (1 - a_i - b_i), or 0 near a unit root.
inline double marginal_mean(const ParameterSet& params, const Vector& delta) {
  double mean = 0.0;
  for (int i = 0; i < params.regimes(); ++i) {
    const double denom = 1.0 - params.a(i) - params.b(i);
    if (std::abs(denom) < kUnitRootGuard) return 0.0;
    mean += delta(i) * params.d(i) / denom;
  }
  return std::isfinite(mean) && mean <= kMaxLinearPredictor ? mean : 0.0;
}

inline std::vector<int> simulate_chain(const TransitionMatrix& gamma, int T, Rng& rng) {
  std::vector<int> path(std::max(T, 0));
  if (T <= 0) return path;
  const Vector delta = initial_distribution(gamma);
  path[0] = rng.categorical(delta);
  for (int t = 1; t < T; ++t) path[t] = rng.categorical(gamma.matrix().row(path[t - 1]));
  return path;
}

}  // namespace detail

/// Regime path: S_1 from the stationary distribution (uniform when it is
/// not unique), then row-wise transitions. 0-based regimes.
inline std::vector<int> simulate_chain(const TransitionMatrix& gamma, int T, std::uint64_t seed) {
  Rng rng(seed);
  return detail::simulate_chain(gamma, T, rng);
}

struct SimulationOptions {
  /// Steps simulated and discarded before the retained series (covariates
  /// are zero during burn-in).
  int burn_in = 100;
};

struct SimulationOutput {
  std::vector<int> y;
  std::vector<int> states;
  Vector eta;
  std::uint64_t seed = 0;
  /// Pre-sample values entering eta_1.
  double eta0 = 0.0;
  double y0 = 1.0;
};

/// Simulates T observations. The recursion starts from the marginal-mean
/// linear predictor and its exponential as the previous count.
inline SimulationOutput simulate_ms_pllar(const ParameterSet& params, int T, const Matrix& X,
                                          std::uint64_t seed, const SimulationOptions& options = {}) {
  params.validate();
  if (T < 1) throw UsageError("simulation length must be at least 1");
  if (options.burn_in < 0) throw UsageError("burn-in must be non-negative");
  const int r = params.covariates();
  if (r > 0 && (X.rows() != T || X.cols() != r)) throw UsageError("covariate matrix must be T x r");

  Rng rng(seed);
  const int total = T + options.burn_in;
  const std::vector<int> path = detail::simulate_chain(params.gamma, total, rng);
  const double mean = detail::marginal_mean(params, detail::initial_distribution(params.gamma));

  SimulationOutput out;
  out.seed = seed;
  out.y.resize(T);
  out.states.resize(T);
  out.eta.resize(T);
  double eta_prev = mean;
  double y_prev = std::exp(mean);
  const Vector zero = Vector::Zero(r);
  for (int s = 0; s < total; ++s) {
    const int t = s - options.burn_in;
    if (t == 0) {
      out.eta0 = eta_prev;
      out.y0 = y_prev;
    }
    const Vector x = t >= 0 && r > 0 ? Vector(X.row(t).transpose()) : zero;
    const double eta = linear_predictor_step(params, path[s], eta_prev, y_prev, x);
    if (!std::isfinite(eta)) throw NumericalError("simulated linear predictor diverged");
    const long count = rng.poisson(std::exp(std::min(eta, kMaxLinearPredictor)));
    if (count > std::numeric_limits<int>::max()) throw NumericalError("simulated count overflows");
    if (t >= 0) {
      out.y[t] = static_cast<int>(count);
      out.states[t] = path[s];
      out.eta(t) = eta;
    }
    eta_prev = eta;
    y_prev = static_cast<double>(count);
  }
  return out;
}

inline SimulationOutput simulate_ms_pllar(const ParameterSet& params, int T, std::uint64_t seed,
                                          const SimulationOptions& options = {}) {
  return simulate_ms_pllar(params, T, Matrix(), seed, options);
}

/// Average count over the time points spent in each regime (NaN if never visited).
inline Vector regime_conditional_means(const SimulationOutput& sim, int m) {
  Vector sum = Vector::Zero(m);
  Vector n = Vector::Zero(m);
  for (std::size_t t = 0; t < sim.y.size(); ++t) {
    sum(sim.states[t]) += sim.y[t];
    n(sim.states[t]) += 1.0;
  }
  Vector out(m);
  for (int k = 0; k < m; ++k) out(k) = n(k) > 0 ? sum(k) / n(k) : std::numeric_limits<double>::quiet_NaN();
  return out;
}

// ---------------------------------------------------------------------------
// Exact likelihood by path enumeration.

inline constexpr double kMaxEnumeratedPaths = 1e6;

struct ExactPosterior {
  double log_likelihood = 0.0;
  /// T x m matrix of P(S_t = j | Y_1..Y_T) under the exact model.
  Matrix marginals;
};

/// Sums over all m^T regime paths, recomputing the linear predictor along
/// each path. Uses the same starting values as the filter (marginal mean,
/// its exponential as Y_0, S_1 from the stationary distribution).
inline ExactPosterior brute_force_posterior(const ParameterSet& params, std::span<const int> y,
                                            const Matrix& X = Matrix()) {
  detail::check_dimensions(params, y.size(), X);
  const int m = params.regimes();
  const int T = static_cast<int>(y.size());
  const double n_paths = std::pow(static_cast<double>(m), T);
  if (n_paths > kMaxEnumeratedPaths) {
    throw UsageError("path enumeration needs m^T <= 1e6 paths (requested " + std::to_string(n_paths) + ")");
  }
  const Vector delta = stationary_distribution(params.gamma);
  const double eta0 = detail::marginal_mean(params, delta);
  const double y0 = std::exp(eta0);
  const int r = params.covariates();

  const auto count = static_cast<std::size_t>(n_paths);
  std::vector<double> log_w(count);
  std::vector<int> path(T, 0);
  for (std::size_t p = 0; p < count; ++p) {
    std::size_t code = p;
    for (int t = T - 1; t >= 0; --t) {
      path[t] = static_cast<int>(code % m);
      code /= m;
    }
    double lw = std::log(delta(path[0]));
    double eta_prev = eta0;
    double y_prev = y0;
    for (int t = 0; t < T; ++t) {
      if (t > 0) lw += std::log(params.gamma(path[t - 1], path[t]));
      const Vector x = r > 0 ? Vector(X.row(t).transpose()) : Vector();
      const double eta = linear_predictor_step(params, path[t], eta_prev, y_prev, x);
      const double lambda = std::exp(eta);
      lw += y[t] * eta - lambda - std::lgamma(y[t] + 1.0);
      eta_prev = eta;
      y_prev = y[t];
    }
    log_w[p] = lw;
  }
  const double hi = *std::max_element(log_w.begin(), log_w.end());
  if (!std::isfinite(hi)) throw NumericalError("every regime path has zero probability");
  double total = 0.0;
  for (double lw : log_w) total += std::exp(lw - hi);
  ExactPosterior out;
  out.log_likelihood = hi + std::log(total);
  out.marginals = Matrix::Zero(T, m);
  for (std::size_t p = 0; p < count; ++p) {
    const double w = std::exp(log_w[p] - out.log_likelihood);
    std::size_t code = p;
    for (int t = T - 1; t >= 0; --t) {
      out.marginals(t, static_cast<int>(code % m)) += w;
      code /= m;
    }
  }
  return out;
}

inline double brute_force_likelihood(const ParameterSet& params, std::span<const int> y,
                                     const Matrix& X = Matrix()) {
  return brute_force_posterior(params, y, X).log_likelihood;
}

// ---------------------------------------------------------------------------
// Monte-Carlo study.

struct StudyOptions {
  SimulationOptions simulation;
  FitOptions fit;
  /// Fit from the true parameters; otherwise from the heuristic start.
  bool init_at_truth = true;
  int n_starts = 1;
  double dispersion = 0.5;
  int threads = 1;
  /// Covariates for custom studies with r > 0 are i.i.d. N(0, 1).
  std::vector<std::string> covariate_names;
};

struct StudyRow {
  std::string parameter;
  double value = 0.0;
  double bias = 0.0;
  double se = 0.0;
  double se_hat = 0.0;
  /// Share of replicates whose 95% interval covers the true value.
  double coverage = 0.0;
};

struct StudyReport {
  int T = 0;
  int R = 0;
  int failures = 0;
  bool valid = true;
  std::vector<StudyRow> rows;
  /// Successful replicates x reported quantities.
  Matrix estimates;
  Matrix standard_errors;
  /// (estimate - truth) / reported se per successful replicate.
  Matrix standardized;
  std::vector<int> replicate_index;

  const StudyRow& row(const std::string& name) const {
    for (const auto& r : rows) {
      if (r.parameter == name) return r;
    }
    throw UsageError("unknown study parameter: " + name);
  }
};

struct ReplicateOutcome {
  bool ok = false;
  Vector estimates;
  Vector standard_errors;
  std::string error;
};

/// One simulate -> fit cycle on stream derive_seed(seed, index).
inline ReplicateOutcome run_replicate(const ParameterSet& truth, int T, std::uint64_t seed, int index,
                                      const StudyOptions& options) {
  ReplicateOutcome out;
  const std::uint64_t stream = derive_seed(seed, static_cast<std::uint64_t>(index));
  try {
    const int r = truth.covariates();
    Matrix X;
    if (r > 0) {
      Rng xr(derive_seed(stream, 0xC0FFEE));
      X.resize(T, r);
      for (int t = 0; t < T; ++t) {
        for (int c = 0; c < r; ++c) X(t, c) = xr.normal();
      }
    }
    const SimulationOutput sim = simulate_ms_pllar(truth, T, X, stream, options.simulation);
    const ParameterSet center =
        options.init_at_truth ? truth : heuristic_start(sim.y, truth.regimes(), r);
    const FitResult f = multi_start(sim.y, X, center, options.n_starts, stream, options.dispersion,
                                    options.fit, options.covariate_names);
    if (!f.converged()) {
      out.error = "not converged: " + to_string(f.convergence.status);
    } else if (!f.has_covariance || f.negative_variance || !f.standard_errors.allFinite()) {
      out.error = "no usable standard errors";
    } else {
      out.ok = true;
      out.estimates = f.estimates;
      out.standard_errors = f.standard_errors;
    }
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

/// R independent replicates aggregated into bias, sample SD of estimates
/// and mean reported standard error per reported quantity. Results do not
/// depend on the number of threads.
inline StudyReport monte_carlo_study(const ParameterSet& truth, int T, int R, std::uint64_t seed,
                                     const StudyOptions& options = {}) {
  truth.validate();
  if (T < 1 || R < 1) throw UsageError("Monte-Carlo study needs T >= 1 and R >= 1");
  std::vector<ReplicateOutcome> outcomes(R);
  std::atomic<int> next{0};
  const auto worker = [&] {
    for (int i = next++; i < R; i = next++) outcomes[i] = run_replicate(truth, T, seed, i, options);
  };
  const int n_threads = std::clamp(options.threads, 1, R);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int k = 0; k < n_threads; ++k) pool.emplace_back(worker);
  }

  StudyReport rep;
  rep.T = T;
  rep.R = R;
  std::vector<std::string> cov_names = options.covariate_names;
  if (cov_names.empty()) {
    for (int c = 0; c < truth.covariates(); ++c) cov_names.push_back("x" + std::to_string(c + 1));
  }
  const std::vector<std::string> names = reported_names(truth.regimes(), cov_names);
  const Vector true_values = reported_values(truth);
  const auto n_q = static_cast<Eigen::Index>(names.size());

  int ok = 0;
  for (const auto& o : outcomes) ok += o.ok ? 1 : 0;
  rep.failures = R - ok;
  rep.valid = rep.failures * 10 <= R;
  rep.estimates.resize(ok, n_q);
  rep.standard_errors.resize(ok, n_q);
  rep.standardized.resize(ok, n_q);
  int row = 0;
  for (int i = 0; i < R; ++i) {
    if (!outcomes[i].ok) continue;
    rep.replicate_index.push_back(i);
    rep.estimates.row(row) = outcomes[i].estimates.transpose();
    rep.standard_errors.row(row) = outcomes[i].standard_errors.transpose();
    for (Eigen::Index q = 0; q < n_q; ++q) {
      const double se = outcomes[i].standard_errors(q);
      rep.standardized(row, q) = se > 0.0 ? (outcomes[i].estimates(q) - true_values(q)) / se
                                          : std::numeric_limits<double>::quiet_NaN();
    }
    ++row;
  }
  for (Eigen::Index q = 0; q < n_q; ++q) {
    StudyRow sr;
    sr.parameter = names[q];
    sr.value = true_values(q);
    if (ok == 0) {
      sr.bias = sr.se = sr.se_hat = sr.coverage = std::numeric_limits<double>::quiet_NaN();
    } else {
      const double mean = rep.estimates.col(q).mean();
      sr.bias = mean - true_values(q);
      sr.se = ok > 1 ? std::sqrt((rep.estimates.col(q).array() - mean).square().sum() / (ok - 1))
                     : std::numeric_limits<double>::quiet_NaN();
      sr.se_hat = rep.standard_errors.col(q).mean();
      int covered = 0;
      for (int k = 0; k < ok; ++k) covered += std::abs(rep.standardized(k, q)) <= 1.96 ? 1 : 0;
      sr.coverage = static_cast<double>(covered) / ok;
    }
    rep.rows.push_back(sr);
  }
  return rep;
}

}  // namespace mspllar

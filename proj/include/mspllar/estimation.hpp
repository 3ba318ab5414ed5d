#pragma once

// Quasi-maximum-likelihood estimation of the MS Poisson log-linear model.
//
// The optimiser works on an unconstrained vector psi: per regime
// (d_k, a_k, b_k, beta_k) unchanged, followed by the m - 1 multinomial
// logits of every transition-matrix row (last column is the reference).
// Gradients and Hessians are central finite differences; standard errors
// of the reported quantities (theta and the stationary distribution)
// follow from the delta method.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mspllar/core_model.hpp"
#include "mspllar/ehg_filter.hpp"
#include "mspllar/error.hpp"
#include "mspllar/random.hpp"

namespace mspllar {

/// Transition entries are pulled into [kLogitClamp, 1 - kLogitClamp] before the logit.
inline constexpr double kLogitClamp = 1e-8;

struct UnconstrainedParams {
  Vector psi;
  int m = 1;
  int r = 0;
  /// Set when boundary transition entries had to be clamped.
  bool clamped = false;
};

inline UnconstrainedParams to_unconstrained(const ParameterSet& theta) {
  theta.validate();
  const int m = theta.regimes();
  const int r = theta.covariates();
  UnconstrainedParams out;
  out.m = m;
  out.r = r;
  out.psi.resize(count_free_parameters(m, r));
  int pos = 0;
  for (int k = 0; k < m; ++k) {
    out.psi(pos++) = theta.d(k);
    out.psi(pos++) = theta.a(k);
    out.psi(pos++) = theta.b(k);
    for (int c = 0; c < r; ++c) out.psi(pos++) = theta.beta(k, c);
  }
  const auto clamp = [&](double g) {
    if (g < kLogitClamp || g > 1.0 - kLogitClamp) out.clamped = true;
    return std::clamp(g, kLogitClamp, 1.0 - kLogitClamp);
  };
  for (int i = 0; i < m; ++i) {
    const double ref = std::log(clamp(theta.gamma(i, m - 1)));
    for (int j = 0; j < m - 1; ++j) out.psi(pos++) = std::log(clamp(theta.gamma(i, j))) - ref;
  }
  return out;
}

/// Always yields a valid parameter set for finite psi.
inline ParameterSet to_constrained(const Vector& psi, int m, int r) {
  if (psi.size() != count_free_parameters(m, r)) {
    throw UsageError("unconstrained vector has the wrong length");
  }
  ParameterSet theta;
  theta.d.resize(m);
  theta.a.resize(m);
  theta.b.resize(m);
  theta.beta.resize(m, r);
  int pos = 0;
  for (int k = 0; k < m; ++k) {
    theta.d(k) = psi(pos++);
    theta.a(k) = psi(pos++);
    theta.b(k) = psi(pos++);
    for (int c = 0; c < r; ++c) theta.beta(k, c) = psi(pos++);
  }
  Matrix gamma(m, m);
  for (int i = 0; i < m; ++i) {
    double hi = 0.0;  // logit of the reference column
    for (int j = 0; j < m - 1; ++j) hi = std::max(hi, psi(pos + j));
    double total = std::exp(-hi);
    for (int j = 0; j < m - 1; ++j) total += std::exp(psi(pos + j) - hi);
    for (int j = 0; j < m - 1; ++j) gamma(i, j) = std::exp(psi(pos + j) - hi) / total;
    gamma(i, m - 1) = std::exp(-hi) / total;
    pos += m - 1;
  }
  theta.gamma = TransitionMatrix(gamma);
  return theta;
}

inline ParameterSet to_constrained(const UnconstrainedParams& u) {
  return to_constrained(u.psi, u.m, u.r);
}

// ---------------------------------------------------------------------------
// Reported quantities: a, b, d, beta (by covariate, then regime), the
// transition matrix column by column, and the stationary distribution.

inline int reported_count(int m, int r) { return 3 * m + r * m + m * m + m; }

namespace report_index {
inline int a(int m, int k) { return k + 0 * m; }
inline int b(int m, int k) { return k + 1 * m; }
inline int d(int m, int k) { return k + 2 * m; }
inline int beta(int m, int c, int k) { return 3 * m + c * m + k; }
inline int gamma(int m, int r, int i, int j) { return 3 * m + r * m + j * m + i; }
inline int delta(int m, int r, int k) { return 3 * m + r * m + m * m + k; }
}  // namespace report_index

inline std::vector<std::string> reported_names(int m, const std::vector<std::string>& covariates) {
  const int r = static_cast<int>(covariates.size());
  std::vector<std::string> names(reported_count(m, r));
  const auto idx = [](int k) { return std::to_string(k + 1); };
  for (int k = 0; k < m; ++k) {
    names[report_index::a(m, k)] = "a" + idx(k);
    names[report_index::b(m, k)] = "b" + idx(k);
    names[report_index::d(m, k)] = "d" + idx(k);
    for (int c = 0; c < r; ++c) names[report_index::beta(m, c, k)] = "beta_" + covariates[c] + "_" + idx(k);
    names[report_index::delta(m, r, k)] = "delta" + idx(k);
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      names[report_index::gamma(m, r, i, j)] =
          m < 10 ? "gamma" + idx(i) + idx(j) : "gamma" + idx(i) + "_" + idx(j);
    }
  }
  return names;
}

inline Vector reported_values(const ParameterSet& theta) {
  const int m = theta.regimes();
  const int r = theta.covariates();
  const Vector delta = stationary_distribution(theta.gamma);
  Vector out(reported_count(m, r));
  for (int k = 0; k < m; ++k) {
    out(report_index::a(m, k)) = theta.a(k);
    out(report_index::b(m, k)) = theta.b(k);
    out(report_index::d(m, k)) = theta.d(k);
    for (int c = 0; c < r; ++c) out(report_index::beta(m, c, k)) = theta.beta(k, c);
    out(report_index::delta(m, r, k)) = delta(k);
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) out(report_index::gamma(m, r, i, j)) = theta.gamma(i, j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences.

inline double fd_gradient_step() { return std::cbrt(std::numeric_limits<double>::epsilon()); }
inline double fd_hessian_step() { return std::pow(std::numeric_limits<double>::epsilon(), 0.25); }

/// Central-difference gradient with h_i = eps^(1/3) max(1, |x_i|) * scale.
/// Falls back to a one-sided difference when one side is not finite.
template <typename Func>
Vector numerical_gradient(const Func& f, const Vector& x, double step_scale = 1.0,
                          std::optional<double> fx = std::nullopt) {
  const auto n = x.size();
  Vector g(n);
  Vector xp = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = fd_gradient_step() * std::max(1.0, std::abs(x(i))) * step_scale;
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    if (std::isfinite(fp) && std::isfinite(fm)) {
      g(i) = (fp - fm) / (2.0 * h);
    } else {
      const double f0 = fx ? *fx : f(x);
      if (std::isfinite(fp)) {
        g(i) = (fp - f0) / h;
      } else if (std::isfinite(fm)) {
        g(i) = (f0 - fm) / h;
      } else {
        g(i) = std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  return g;
}

/// Central second differences with h_i = eps^(1/4) max(1, |x_i|) * scale;
/// the result is symmetrised.
template <typename Func>
Matrix numerical_hessian(const Func& f, const Vector& x, double step_scale = 1.0) {
  const auto n = x.size();
  Vector h(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    h(i) = fd_hessian_step() * std::max(1.0, std::abs(x(i))) * step_scale;
  }
  Matrix H(n, n);
  const double f0 = f(x);
  Vector xp = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    xp(i) = x(i) + h(i);
    const double fp = f(xp);
    xp(i) = x(i) - h(i);
    const double fm = f(xp);
    xp(i) = x(i);
    H(i, i) = (fp - 2.0 * f0 + fm) / (h(i) * h(i));
    for (Eigen::Index j = 0; j < i; ++j) {
      const auto eval = [&](double si, double sj) {
        xp(i) = x(i) + si * h(i);
        xp(j) = x(j) + sj * h(j);
        const double v = f(xp);
        xp(i) = x(i);
        xp(j) = x(j);
        return v;
      };
      const double v = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * h(i) * h(j));
      H(i, j) = v;
      H(j, i) = v;
    }
  }
  return 0.5 * (H + H.transpose());
}

/// Central-difference Jacobian of a vector map.
template <typename Map>
Matrix numerical_jacobian(const Map& g, const Vector& x) {
  const Vector g0 = g(x);
  Matrix J(g0.size(), x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = fd_gradient_step() * std::max(1.0, std::abs(x(i)));
    xp(i) = x(i) + h;
    const Vector gp = g(xp);
    xp(i) = x(i) - h;
    const Vector gm = g(xp);
    xp(i) = x(i);
    J.col(i) = (gp - gm) / (2.0 * h);
  }
  return J;
}

// ---------------------------------------------------------------------------
// Delta method.

struct DeltaMethodResult {
  Matrix covariance;
  Vector standard_errors;
  bool pseudo_inverse = false;
  bool negative_variance = false;
};

/// Sigma = J (-H)^{-1} J' for the Hessian H of the log-likelihood and the
/// Jacobian J of the report map. A singular -H is pseudo-inverted.
inline DeltaMethodResult delta_method_covariance(const Matrix& hessian, const Matrix& jacobian) {
  if (hessian.rows() != hessian.cols() || jacobian.cols() != hessian.rows()) {
    throw UsageError("delta method: Hessian and Jacobian dimensions disagree");
  }
  DeltaMethodResult out;
  const Matrix info = -0.5 * (hessian + hessian.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(info);
  const Vector& ev = eig.eigenvalues();
  const double scale = ev.cwiseAbs().maxCoeff();
  const double cutoff = 1e-10 * std::max(scale, std::numeric_limits<double>::min());
  Vector inv_ev(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (std::abs(ev(i)) <= cutoff) {
      inv_ev(i) = 0.0;
      out.pseudo_inverse = true;
    } else {
      inv_ev(i) = 1.0 / ev(i);
    }
  }
  const Matrix inv = eig.eigenvectors() * inv_ev.asDiagonal() * eig.eigenvectors().transpose();
  out.covariance = jacobian * inv * jacobian.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  out.standard_errors.resize(out.covariance.rows());
  for (Eigen::Index i = 0; i < out.covariance.rows(); ++i) {
    const double v = out.covariance(i, i);
    if (v < 0.0) {
      out.negative_variance = true;
      out.standard_errors(i) = std::numeric_limits<double>::quiet_NaN();
    } else {
      out.standard_errors(i) = std::sqrt(v);
    }
  }
  return out;
}

template <typename Map>
DeltaMethodResult delta_method_se(const Matrix& hessian, const Vector& psi_hat, const Map& report_map) {
  return delta_method_covariance(hessian, numerical_jacobian(report_map, psi_hat));
}

// ---------------------------------------------------------------------------
// Optimiser.

enum class FitStatus { converged_gradient, converged_objective, max_iterations, line_search_failed };

inline std::string to_string(FitStatus s) {
  switch (s) {
    case FitStatus::converged_gradient: return "converged_gradient";
    case FitStatus::converged_objective: return "converged_objective";
    case FitStatus::max_iterations: return "max_iterations";
    case FitStatus::line_search_failed: return "line_search_failed";
  }
  return "unknown";
}

inline bool is_converged(FitStatus s) {
  return s == FitStatus::converged_gradient || s == FitStatus::converged_objective;
}

struct OptimizerOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;
  double relative_tolerance = 1e-10;
  /// Largest coordinate change attempted by a single line search.
  double max_step = 2.0;
};

struct OptimizerResult {
  Vector x;
  double value = 0.0;
  Vector gradient;
  int iterations = 0;
  int evaluations = 0;
  FitStatus status = FitStatus::max_iterations;
};

/// BFGS minimisation with a backtracking Armijo line search and
/// finite-difference gradients. The objective may return +inf for
/// infeasible points; the line search retreats from them.
template <typename Func>
OptimizerResult minimize_bfgs(const Func& objective, Vector x0, const OptimizerOptions& opt = {}) {
  OptimizerResult res;
  const auto f = [&](const Vector& x) {
    ++res.evaluations;
    const double v = objective(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };
  const auto n = x0.size();
  Vector x = std::move(x0);
  double fx = f(x);
  if (!std::isfinite(fx)) throw NumericalError("objective is not finite at the starting point");
  Vector g = numerical_gradient(f, x, 1.0, fx);
  Matrix Hinv = Matrix::Identity(n, n);
  bool fresh = true;

  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    if (!g.allFinite()) {
      res.status = FitStatus::line_search_failed;
      break;
    }
    if (g.cwiseAbs().maxCoeff() < opt.gradient_tolerance) {
      res.status = FitStatus::converged_gradient;
      break;
    }
    Vector p = -Hinv * g;
    if (g.dot(p) >= 0.0) {
      Hinv.setIdentity();
      fresh = true;
      p = -g;
    }
    const double slope = g.dot(p);
    double alpha = std::min(1.0, opt.max_step / p.cwiseAbs().maxCoeff());

    Vector x_new;
    double f_new = fx;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      x_new = x + alpha * p;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (!fresh) {
        Hinv.setIdentity();
        fresh = true;
        continue;
      }
      // No descent is resolvable at finite-difference precision.
      res.status = g.cwiseAbs().maxCoeff() < 1e-3 ? FitStatus::converged_objective
                                                   : FitStatus::line_search_failed;
      break;
    }

    const Vector g_new = numerical_gradient(f, x_new, 1.0, f_new);
    const Vector s = x_new - x;
    const Vector yv = g_new - g;
    const double rel_change = std::abs(fx - f_new) / std::max(1.0, std::abs(fx));
    x = x_new;
    fx = f_new;
    g = g_new;
    if (rel_change < opt.relative_tolerance) {
      res.status = g.cwiseAbs().maxCoeff() < opt.gradient_tolerance ? FitStatus::converged_gradient
                                                                    : FitStatus::converged_objective;
      ++res.iterations;
      break;
    }
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      if (fresh) {
        Hinv *= sy / yv.squaredNorm();
        fresh = false;
      }
      const double rho = 1.0 / sy;
      const Vector Hy = Hinv * yv;
      Hinv += ((sy + yv.dot(Hy)) * rho * rho) * (s * s.transpose()) -
              rho * (Hy * s.transpose() + s * Hy.transpose());
    }
  }
  res.x = x;
  res.value = fx;
  res.gradient = g;
  return res;
}

// ---------------------------------------------------------------------------
// Fit.

struct FitOptions {
  OptimizerOptions optimizer;
  FilterOptions filter;
  bool compute_covariance = true;
  bool order_states = true;
};

struct StartSummary {
  int index = 0;
  double qll = -std::numeric_limits<double>::infinity();
  FitStatus status = FitStatus::line_search_failed;
  int iterations = 0;
  std::string error;
};

struct ConvergenceInfo {
  int iterations = 0;
  int evaluations = 0;
  double gradient_norm = 0.0;
  FitStatus status = FitStatus::max_iterations;
};

struct FitResult {
  ParameterSet theta_hat;
  Vector delta;
  double qll = 0.0;
  int T = 0;
  std::vector<std::string> covariate_names;
  std::vector<std::string> names;
  Vector estimates;
  Matrix covariance;
  Vector standard_errors;
  ConvergenceInfo convergence;
  bool has_covariance = false;
  bool pseudo_inverse = false;
  bool negative_variance = false;
  bool hessian_not_negative_definite = false;
  Vector psi_hat;
  std::vector<StartSummary> restarts;
  std::vector<std::string> warnings;

  int regimes() const { return theta_hat.regimes(); }
  int free_parameters() const { return count_free_parameters(regimes(), theta_hat.covariates()); }
  bool converged() const { return is_converged(convergence.status); }

  int index_of(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw UsageError("unknown reported quantity: " + name);
    return static_cast<int>(it - names.begin());
  }
  double estimate(const std::string& name) const { return estimates(index_of(name)); }
  double standard_error(const std::string& name) const { return standard_errors(index_of(name)); }
};

/// Heuristic starting point: a = b = 0.3 in every regime, regime long-run
/// means spread over quantiles of log(y + 1), sticky transitions, beta = 0.
inline ParameterSet heuristic_start(std::span<const int> y, int m, int r) {
  if (y.empty()) throw UsageError("cannot build a starting point from an empty series");
  std::vector<double> ly(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) ly[t] = std::log1p(static_cast<double>(y[t]));
  std::sort(ly.begin(), ly.end());
  const double mean = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
  ParameterSet p;
  p.a = Vector::Constant(m, 0.3);
  p.b = Vector::Constant(m, 0.3);
  p.d.resize(m);
  for (int k = 0; k < m; ++k) {
    double level = mean;
    if (m > 1) {
      const double q = (k + 0.5) / m;
      const auto pos = static_cast<std::size_t>(q * static_cast<double>(ly.size() - 1));
      level = ly[pos] + 0.1 * (k - 0.5 * (m - 1));
    }
    p.d(k) = level * (1.0 - 0.3 - 0.3);
  }
  p.beta = Matrix::Zero(m, r);
  Matrix g = Matrix::Constant(m, m, m > 1 ? 0.1 / (m - 1) : 1.0);
  if (m > 1) g.diagonal().setConstant(0.9);
  p.gamma = TransitionMatrix(g);
  return p;
}

/// Regime permutation sorting by long-run mean d_k / (1 - a_k - b_k),
/// or by d_k when some denominator is numerically zero.
inline std::vector<int> regime_order(const ParameterSet& theta) {
  const int m = theta.regimes();
  std::vector<double> key(m);
  bool degenerate = false;
  for (int k = 0; k < m; ++k) {
    const double denom = 1.0 - theta.a(k) - theta.b(k);
    if (std::abs(denom) < kUnitRootGuard) degenerate = true;
    key[k] = theta.d(k) / denom;
  }
  if (degenerate) {
    for (int k = 0; k < m; ++k) key[k] = theta.d(k);
  }
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](int i, int j) { return key[i] < key[j]; });
  return perm;
}

/// New regime k is old regime perm[k].
inline ParameterSet permute_regimes(const ParameterSet& theta, const std::vector<int>& perm) {
  const int m = theta.regimes();
  ParameterSet out;
  out.d.resize(m);
  out.a.resize(m);
  out.b.resize(m);
  out.beta.resize(m, theta.covariates());
  Matrix g(m, m);
  for (int k = 0; k < m; ++k) {
    out.d(k) = theta.d(perm[k]);
    out.a(k) = theta.a(perm[k]);
    out.b(k) = theta.b(perm[k]);
    out.beta.row(k) = theta.beta.row(perm[k]);
    for (int l = 0; l < m; ++l) g(k, l) = theta.gamma(perm[k], perm[l]);
  }
  out.gamma = TransitionMatrix(g);
  return out;
}

/// Relabels regimes in ascending long-run-mean order; every block, the
/// covariance over reported quantities and the per-start summary stay
/// consistent. The objective value is untouched.
inline FitResult order_states(FitResult fit) {
  const int m = fit.regimes();
  const int r = fit.theta_hat.covariates();
  const std::vector<int> perm = regime_order(fit.theta_hat);
  bool identity = true;
  for (int k = 0; k < m; ++k) identity = identity && perm[k] == k;
  if (identity) return fit;

  // source[new reported index] = old reported index
  std::vector<int> source(reported_count(m, r));
  for (int k = 0; k < m; ++k) {
    source[report_index::a(m, k)] = report_index::a(m, perm[k]);
    source[report_index::b(m, k)] = report_index::b(m, perm[k]);
    source[report_index::d(m, k)] = report_index::d(m, perm[k]);
    for (int c = 0; c < r; ++c) source[report_index::beta(m, c, k)] = report_index::beta(m, c, perm[k]);
    source[report_index::delta(m, r, k)] = report_index::delta(m, r, perm[k]);
    for (int l = 0; l < m; ++l) {
      source[report_index::gamma(m, r, k, l)] = report_index::gamma(m, r, perm[k], perm[l]);
    }
  }
  const auto n = static_cast<Eigen::Index>(source.size());
  const auto permute_vec = [&](const Vector& v) {
    Vector out(n);
    for (Eigen::Index i = 0; i < n; ++i) out(i) = v(source[i]);
    return out;
  };
  fit.theta_hat = permute_regimes(fit.theta_hat, perm);
  Vector delta(m);
  for (int k = 0; k < m; ++k) delta(k) = fit.delta(perm[k]);
  fit.delta = delta;
  if (fit.estimates.size() == n) fit.estimates = permute_vec(fit.estimates);
  if (fit.standard_errors.size() == n) fit.standard_errors = permute_vec(fit.standard_errors);
  if (fit.covariance.rows() == n) {
    Matrix cov(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) cov(i, j) = fit.covariance(source[i], source[j]);
    }
    fit.covariance = cov;
  }
  fit.psi_hat = to_unconstrained(fit.theta_hat).psi;
  return fit;
}

namespace detail {

struct Objective {
  std::span<const int> y;
  const Matrix* X;
  int m;
  int r;
  FilterOptions filter;

  double qll(const Vector& psi) const {
    if (!psi.allFinite()) return -std::numeric_limits<double>::infinity();
    return quasi_log_likelihood_value(to_constrained(psi, m, r), y, *X, filter);
  }
};

}  // namespace detail

/// Local QMLE from a given starting point.
inline FitResult fit(std::span<const int> y, const Matrix& X, const ParameterSet& init,
                     const FitOptions& options = {},
                     std::vector<std::string> covariate_names = {}) {
  init.validate();
  const int m = init.regimes();
  const int r = init.covariates();
  const int T = static_cast<int>(y.size());
  detail::check_dimensions(init, y.size(), X);
  if (covariate_names.empty()) {
    for (int c = 0; c < r; ++c) covariate_names.push_back("x" + std::to_string(c + 1));
  }
  if (static_cast<int>(covariate_names.size()) != r) throw UsageError("covariate name count differs from r");

  FitResult out;
  out.T = T;
  out.covariate_names = covariate_names;
  if (T <= count_free_parameters(m, r)) {
    out.warnings.push_back("series length does not exceed the number of free parameters");
  }
  const UnconstrainedParams start = to_unconstrained(init);
  if (start.clamped) out.warnings.push_back("boundary transition probabilities clamped for the start");

  const detail::Objective obj{y, &X, m, r, options.filter};
  const auto negative_qll = [&](const Vector& psi) { return -obj.qll(psi); };
  const OptimizerResult opt = minimize_bfgs(negative_qll, start.psi, options.optimizer);

  out.psi_hat = opt.x;
  out.theta_hat = to_constrained(opt.x, m, r);
  out.delta = stationary_distribution(out.theta_hat.gamma);
  out.qll = -opt.value;
  out.convergence = {opt.iterations, opt.evaluations, opt.gradient.cwiseAbs().maxCoeff(), opt.status};
  out.names = reported_names(m, covariate_names);
  out.estimates = reported_values(out.theta_hat);
  if (!is_converged(opt.status)) {
    out.warnings.push_back("optimizer stopped without convergence: " + to_string(opt.status));
  }

  if (options.compute_covariance) {
    const auto qll_at = [&](const Vector& psi) { return obj.qll(psi); };
    const Matrix H = numerical_hessian(qll_at, opt.x);
    if (H.allFinite()) {
      Eigen::SelfAdjointEigenSolver<Matrix> eig(H);
      const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
      if (eig.eigenvalues().maxCoeff() > 1e-6 * std::max(1.0, top)) {
        out.hessian_not_negative_definite = true;
        out.warnings.push_back("Hessian is not negative semi-definite at the estimate");
      }
      const auto report = [&](const Vector& psi) { return reported_values(to_constrained(psi, m, r)); };
      const DeltaMethodResult dm = delta_method_se(H, opt.x, report);
      out.covariance = dm.covariance;
      out.standard_errors = dm.standard_errors;
      out.pseudo_inverse = dm.pseudo_inverse;
      out.negative_variance = dm.negative_variance;
      out.has_covariance = true;
      if (dm.pseudo_inverse) out.warnings.push_back("singular Hessian; covariance uses a pseudo-inverse");
      if (dm.negative_variance) out.warnings.push_back("negative variance in the delta-method covariance");
    } else {
      out.warnings.push_back("Hessian is not finite at the estimate; no standard errors");
    }
  }
  if (!out.has_covariance) {
    out.standard_errors = Vector::Constant(out.estimates.size(), std::numeric_limits<double>::quiet_NaN());
  }
  if (options.order_states) out = order_states(std::move(out));
  return out;
}

/// Fit from the heuristic starting point.
inline FitResult fit(std::span<const int> y, const Matrix& X, int m, const FitOptions& options = {},
                     std::vector<std::string> covariate_names = {}) {
  return fit(y, X, heuristic_start(y, m, static_cast<int>(X.cols())), options,
             std::move(covariate_names));
}

/// Runs `n_starts` fits from perturbed versions of `center` (start 0 is the
/// center itself) and keeps the best converged one. Start i > 0 adds
/// Uniform(-dispersion, dispersion) noise to every unconstrained coordinate,
/// drawn from the stream derive_seed(seed, i).
inline FitResult multi_start(std::span<const int> y, const Matrix& X, const ParameterSet& center,
                             int n_starts, std::uint64_t seed, double dispersion = 0.5,
                             const FitOptions& options = {},
                             std::vector<std::string> covariate_names = {}) {
  if (n_starts < 1) throw UsageError("multi_start needs at least one start");
  const UnconstrainedParams base = to_unconstrained(center);
  std::vector<StartSummary> summary;
  std::optional<FitResult> best;
  std::optional<FitResult> best_unconverged;
  for (int s = 0; s < n_starts; ++s) {
    StartSummary row;
    row.index = s;
    ParameterSet start = center;
    if (s > 0) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
      Vector psi = base.psi;
      for (Eigen::Index i = 0; i < psi.size(); ++i) psi(i) += rng.uniform(-dispersion, dispersion);
      start = to_constrained(psi, base.m, base.r);
    }
    try {
      FitResult f = fit(y, X, start, options, covariate_names);
      row.qll = f.qll;
      row.status = f.convergence.status;
      row.iterations = f.convergence.iterations;
      if (!std::isfinite(f.qll)) {
        row.error = "non-finite quasi-log-likelihood";
      } else if (f.converged()) {
        if (!best || f.qll > best->qll) best = std::move(f);
      } else if (!best_unconverged || f.qll > best_unconverged->qll) {
        best_unconverged = std::move(f);
      }
    } catch (const Error& e) {
      row.error = e.what();
    }
    summary.push_back(row);
  }
  if (!best) best = std::move(best_unconverged);
  if (!best) {
    std::ostringstream msg;
    msg << "all " << n_starts << " starts failed:";
    for (const auto& row : summary) msg << " [start " << row.index << ": " << row.error << "]";
    throw NumericalError(msg.str());
  }
  best->restarts = std::move(summary);
  return std::move(*best);
}

// ---------------------------------------------------------------------------
// Tests of single-parameter restrictions.

struct WaldResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool reject_at_5pct = false;
};

/// z = estimate / se with a two-sided standard-normal p-value.
inline WaldResult wald_test(double estimate, double se) {
  if (!(se > 0.0) || !std::isfinite(se)) throw NumericalError("Wald test needs a positive standard error");
  WaldResult w;
  w.statistic = estimate / se;
  w.p_value = std::erfc(std::abs(w.statistic) / std::sqrt(2.0));
  w.reject_at_5pct = w.p_value < 0.05;
  return w;
}

/// H0: the named reported quantity equals zero.
inline WaldResult wald_test(const FitResult& fit, const std::string& name) {
  return wald_test(fit.estimate(name), fit.standard_error(name));
}

}  // namespace mspllar

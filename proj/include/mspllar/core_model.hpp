#pragma once

// Domain types of the Markov-switching Poisson log-linear autoregressive
// model: parameter blocks, the transition matrix, the m^2-state pair chain,
// and stationary distributions.
//
// Regimes are 0-based in code and 1-based in every report the tools write.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mspllar/error.hpp"

namespace mspllar {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Row-sum tolerance used when validating user supplied transition matrices.
inline constexpr double kStochasticTolerance = 1e-8;

/// Row-stochastic m x m matrix; entry (i, j) = P(S_t = j | S_{t-1} = i).
class TransitionMatrix {
 public:
  TransitionMatrix() = default;

  explicit TransitionMatrix(Matrix entries) : entries_(std::move(entries)) {
    if (entries_.rows() == 0 || entries_.rows() != entries_.cols()) {
      throw UsageError("transition matrix must be square and non-empty");
    }
    for (Eigen::Index i = 0; i < entries_.rows(); ++i) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < entries_.cols(); ++j) {
        const double v = entries_(i, j);
        if (!std::isfinite(v) || v < -kStochasticTolerance || v > 1.0 + kStochasticTolerance) {
          throw UsageError("transition matrix entry (" + std::to_string(i + 1) + "," +
                           std::to_string(j + 1) + ") is not a probability");
        }
        sum += v;
      }
      if (std::abs(sum - 1.0) > kStochasticTolerance) {
        throw UsageError("transition matrix row " + std::to_string(i + 1) +
                         " does not sum to one");
      }
    }
  }

  static TransitionMatrix identity(int m) { return TransitionMatrix(Matrix::Identity(m, m)); }

  int size() const { return static_cast<int>(entries_.rows()); }
  double operator()(int i, int j) const { return entries_(i, j); }
  const Matrix& matrix() const { return entries_; }

 private:
  Matrix entries_;
};

/// Model dimensions: m regimes and r covariates.
struct ModelSpec {
  int m = 1;
  int r = 0;
  std::vector<std::string> covariate_names;

  ModelSpec() = default;
  ModelSpec(int regimes, int covariates, std::vector<std::string> names = {})
      : m(regimes), r(covariates), covariate_names(std::move(names)) {
    if (m < 1) throw UsageError("number of regimes must be at least 1");
    if (r < 0) throw UsageError("covariate dimension must be non-negative");
    if (covariate_names.empty()) {
      for (int k = 0; k < r; ++k) covariate_names.push_back("x" + std::to_string(k + 1));
    }
    if (static_cast<int>(covariate_names.size()) != r) {
      throw UsageError("covariate_names must have length r");
    }
  }

  int free_parameter_count() const;
};

/// 3m + rm + m(m-1): per-regime (d, a, b, beta) plus the free transition entries.
inline int count_free_parameters(int m, int r) {
  if (m < 1 || r < 0) throw UsageError("count_free_parameters: need m >= 1 and r >= 0");
  return 3 * m + r * m + m * (m - 1);
}

inline int ModelSpec::free_parameter_count() const { return count_free_parameters(m, r); }

/// Full parameter vector of the model. beta is m x r (row k = regime k).
struct ParameterSet {
  Vector d;
  Vector a;
  Vector b;
  Matrix beta;
  TransitionMatrix gamma;

  int regimes() const { return static_cast<int>(d.size()); }
  int covariates() const { return static_cast<int>(beta.cols()); }

  /// Checks that all blocks agree on m and hold finite values.
  void validate() const {
    const auto m = d.size();
    if (m < 1) throw UsageError("parameter set has no regimes");
    if (a.size() != m || b.size() != m || beta.rows() != m || gamma.size() != m) {
      throw UsageError("parameter blocks disagree on the number of regimes");
    }
    if (!d.allFinite() || !a.allFinite() || !b.allFinite() || !beta.allFinite()) {
      throw UsageError("parameter set contains non-finite values");
    }
  }

  /// Builds a covariate-free parameter set from per-regime vectors.
  static ParameterSet make(const Vector& d, const Vector& a, const Vector& b,
                           const Matrix& gamma, Matrix beta = Matrix()) {
    ParameterSet p;
    p.d = d;
    p.a = a;
    p.b = b;
    p.beta = beta.size() == 0 ? Matrix::Zero(d.size(), 0) : std::move(beta);
    p.gamma = TransitionMatrix(gamma);
    p.validate();
    return p;
  }
};

/// d_k + a_k * eta_prev + b_k * log(y_prev + 1) + beta_k' x_t.
///
/// y_prev is real valued so that fed-back forecasts can be used in place of
/// unobserved counts.
inline double linear_predictor_step(const ParameterSet& params, int k, double eta_prev,
                                    double y_prev, const Eigen::Ref<const Vector>& x_t) {
  double eta = params.d(k) + params.a(k) * eta_prev + params.b(k) * std::log1p(y_prev);
  if (params.beta.cols() > 0) eta += params.beta.row(k).dot(x_t);
  return eta;
}

/// The chain S*_t of consecutive regime pairs (S_{t-1}, S_t).
///
/// Expanded index j = prev * m + cur, so the current regime varies fastest:
/// 0 <-> (1,1), 1 <-> (1,2), ..., m^2 - 1 <-> (m,m) in 1-based pair notation.
struct ExpandedChain {
  int m = 0;
  Matrix gamma_star;

  int size() const { return m * m; }
  int previous_state_of(int j) const { return j / m; }
  int current_state_of(int j) const { return j % m; }
  std::pair<int, int> pair_of(int j) const { return {previous_state_of(j), current_state_of(j)}; }
  int index_of(int prev, int cur) const { return prev * m + cur; }
};

inline ExpandedChain build_expanded_chain(const TransitionMatrix& gamma) {
  ExpandedChain chain;
  chain.m = gamma.size();
  const int n = chain.size();
  chain.gamma_star = Matrix::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    const int cur = chain.current_state_of(k);
    // From pair (., cur) the chain can only move to pairs (cur, next).
    for (int next = 0; next < chain.m; ++next) {
      chain.gamma_star(k, chain.index_of(cur, next)) = gamma(cur, next);
    }
  }
  return chain;
}

namespace detail {

// delta = 1' (I - P + U)^{-1}, i.e. solve (I - P + U)' delta' = 1.
inline Vector solve_stationary(const Matrix& transition) {
  const auto n = transition.rows();
  const Matrix system =
      Matrix::Identity(n, n) - transition + Matrix::Ones(n, n);
  Eigen::FullPivLU<Matrix> lu(system.transpose());
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) {
    throw NumericalError("stationary distribution is not unique: (I - P + U) is singular");
  }
  Vector delta = lu.solve(Vector::Ones(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (delta(i) < 0.0) {
      if (delta(i) < -1e-10) {
        throw NumericalError("stationary distribution has a negative component");
      }
      delta(i) = 0.0;
    }
  }
  return delta / delta.sum();
}

}  // namespace detail

/// Stationary distribution of the regime chain via the direct linear solve.
inline Vector stationary_distribution(const TransitionMatrix& gamma) {
  return detail::solve_stationary(gamma.matrix());
}

/// Stationary distribution of the pair chain; component j equals
/// delta_{prev(j)} * gamma_{prev(j), cur(j)}.
inline Vector stationary_distribution_expanded(const ExpandedChain& chain) {
  return detail::solve_stationary(chain.gamma_star);
}

/// Collapses an m^2 probability vector onto the current regime.
inline Vector marginalize_to_current(const ExpandedChain& chain, const Vector& expanded) {
  Vector out = Vector::Zero(chain.m);
  for (int j = 0; j < chain.size(); ++j) out(chain.current_state_of(j)) += expanded(j);
  return out;
}

/// Long-run mean of the linear predictor in regime k without covariates.
inline double regime_long_run_mean(const ParameterSet& params, int k) {
  return params.d(k) / (1.0 - params.a(k) - params.b(k));
}

}  // namespace mspllar

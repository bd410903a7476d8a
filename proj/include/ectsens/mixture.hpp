#pragma once

// Finite Gaussian mixtures of linear regressions,
//   Y | X ~ sum_k w_k N(beta_k^T [1, X], sigma_k^2),
// fitted by EM with random restarts and selected over K by BIC.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ectsens/error.hpp"
#include "ectsens/random.hpp"

namespace ectsens {

struct MixtureConfig {
  int restarts = 5;
  int max_iter = 500;
  double tol = 1e-6;            // relative log-likelihood improvement
  double var_floor_rel = 1e-6;  // variance floor as a fraction of var(Y)
  std::uint64_t seed = 20240601;
};

/// Outcome mixture evaluated at one covariate vector.
struct ConditionalMixture {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> sigmas;

  double mean() const {
    double m = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) m += weights[k] * means[k];
    return m;
  }
  /// Law of total variance within the mixture.
  double variance() const {
    const double m = mean();
    double v = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k)
      v += weights[k] * (sigmas[k] * sigmas[k] + (means[k] - m) * (means[k] - m));
    return v;
  }
};

struct MixtureOutcomeModel {
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> betas;  // intercept first
  std::vector<double> sigmas;
  double loglik = -std::numeric_limits<double>::infinity();
  double bic = std::numeric_limits<double>::infinity();
  std::size_t n_obs = 0;

  // Fit diagnostics. `trace` holds the observed-data log-likelihood after each
  // EM iteration of the winning restart; a prune restarts the monotone segment
  // at the recorded index.
  int n_iter = 0;
  std::vector<double> trace;
  std::vector<std::size_t> prune_points;
  std::vector<Warning> warnings;

  std::size_t components() const noexcept { return weights.size(); }

  double component_mean(std::size_t k, std::span<const double> features) const {
    const Eigen::VectorXd& b = betas[k];
    double m = b[0];
    for (std::size_t j = 0; j < features.size(); ++j) m += b[static_cast<Eigen::Index>(j + 1)] * features[j];
    return m;
  }

  ConditionalMixture at(std::span<const double> features) const {
    ConditionalMixture cm;
    cm.weights = weights;
    cm.sigmas = sigmas;
    cm.means.resize(weights.size());
    for (std::size_t k = 0; k < weights.size(); ++k) cm.means[k] = component_mean(k, features);
    return cm;
  }

  /// sum_k w_k beta_k^T [1, x]
  double mixture_mean(std::span<const double> features) const {
    double m = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) m += weights[k] * component_mean(k, features);
    return m;
  }

  /// Number of free parameters: (K-1) weights + K(p+1) slopes + K scales.
  std::size_t free_parameters() const {
    if (weights.empty()) return 0;
    const std::size_t k = weights.size();
    return (k - 1) + k * static_cast<std::size_t>(betas.front().size()) + k;
  }
};

namespace detail {

inline double log_normal_pdf(double y, double mean, double sigma) {
  const double z = (y - mean) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double a : v) m = std::max(m, a);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

/// E-step: fills `resp` (n x K) and returns the observed-data log-likelihood.
inline double e_step(const MixtureOutcomeModel& m, const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                     Eigen::MatrixXd& resp) {
  const Eigen::Index n = design.rows();
  const auto k = static_cast<Eigen::Index>(m.components());
  resp.resize(n, k);
  Eigen::MatrixXd means(n, k);
  for (Eigen::Index c = 0; c < k; ++c) means.col(c) = design * m.betas[static_cast<std::size_t>(c)];
  std::vector<double> terms(static_cast<std::size_t>(k));
  double ll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < k; ++c) {
      const auto cc = static_cast<std::size_t>(c);
      terms[cc] = std::log(m.weights[cc]) + log_normal_pdf(y[i], means(i, c), m.sigmas[cc]);
    }
    const double lse = log_sum_exp(terms);
    ll += lse;
    for (Eigen::Index c = 0; c < k; ++c) resp(i, c) = std::exp(terms[static_cast<std::size_t>(c)] - lse);
  }
  return ll;
}

inline Eigen::VectorXd weighted_least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                              const Eigen::VectorXd& w) {
  Eigen::MatrixXd gram = design.transpose() * w.asDiagonal() * design;
  Eigen::VectorXd rhs = design.transpose() * w.cwiseProduct(y);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  Eigen::VectorXd beta = ldlt.solve(rhs);
  if (ldlt.info() != Eigen::Success || !beta.allFinite() || !ldlt.isPositive()) {
    const double jitter = 1e-10 * std::max(1.0, gram.trace() / static_cast<double>(gram.rows()));
    gram.diagonal().array() += jitter;
    beta = gram.ldlt().solve(rhs);
  }
  return beta;
}

/// M-step from responsibilities; prunes degenerate components. Returns true
/// when anything was pruned.
inline bool m_step(MixtureOutcomeModel& m, const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                   Eigen::MatrixXd& resp, double var_floor) {
  const Eigen::Index n = design.rows();
  const double min_count = static_cast<double>(design.cols());
  // Drop components that carry (almost) no mass or too few points to pin down
  // their regression coefficients.
  std::vector<Eigen::Index> keep;
  for (Eigen::Index c = 0; c < resp.cols(); ++c) {
    const double mass = resp.col(c).sum();
    if (mass / static_cast<double>(n) >= 1e-6 && mass >= min_count) keep.push_back(c);
  }
  if (keep.empty()) keep.push_back(0);
  const bool pruned = static_cast<Eigen::Index>(keep.size()) < resp.cols();
  if (pruned) {
    Eigen::MatrixXd r(n, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) r.col(static_cast<Eigen::Index>(c)) = resp.col(keep[c]);
    Eigen::VectorXd rows = r.rowwise().sum();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (rows[i] > 0) r.row(i) /= rows[i];
      else r.row(i).setConstant(1.0 / static_cast<double>(r.cols()));
    }
    resp = std::move(r);
  }
  const auto k = static_cast<std::size_t>(resp.cols());
  m.weights.assign(k, 0.0);
  m.betas.assign(k, Eigen::VectorXd());
  m.sigmas.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    const Eigen::VectorXd w = resp.col(static_cast<Eigen::Index>(c));
    const double mass = w.sum();
    m.weights[c] = mass / static_cast<double>(n);
    m.betas[c] = weighted_least_squares(design, y, w);
    const Eigen::VectorXd resid = y - design * m.betas[c];
    const double var = w.dot(resid.cwiseProduct(resid)) / mass;
    m.sigmas[c] = std::sqrt(std::max(var, var_floor));
  }
  return pruned;
}

inline double sample_variance(const Eigen::VectorXd& y) {
  const double mean = y.mean();
  return (y.array() - mean).square().sum() / static_cast<double>(y.size());
}

/// k-means++ seeding on OLS residuals, then a random perturbation of the hard
/// assignment.
inline Eigen::MatrixXd initial_responsibilities(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                                std::size_t k, Rng& rng) {
  const Eigen::Index n = design.rows();
  Eigen::MatrixXd resp(n, static_cast<Eigen::Index>(k));
  if (k == 1) {
    resp.setOnes();
    return resp;
  }
  const Eigen::VectorXd beta = weighted_least_squares(design, y, Eigen::VectorXd::Ones(n));
  const Eigen::VectorXd e = y - design * beta;
  std::vector<double> centers;
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.push_back(e[pick(rng)]);
  std::vector<double> d2(static_cast<std::size_t>(n));
  while (centers.size() < k) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (e[i] - c) * (e[i] - c));
      d2[static_cast<std::size_t>(i)] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(e[pick(rng)]);
      continue;
    }
    std::discrete_distribution<std::size_t> draw(d2.begin(), d2.end());
    centers.push_back(e[static_cast<Eigen::Index>(draw(rng))]);
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (std::abs(e[i] - centers[c]) < std::abs(e[i] - centers[best])) best = c;
    double row = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double v = 0.2 * unif(rng) + (c == best ? 0.8 : 0.0);
      resp(i, static_cast<Eigen::Index>(c)) = v;
      row += v;
    }
    resp.row(i) /= row;
  }
  return resp;
}

inline MixtureOutcomeModel run_em(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, std::size_t k,
                                  const MixtureConfig& cfg, double var_floor, Rng& rng) {
  MixtureOutcomeModel m;
  Eigen::MatrixXd resp = initial_responsibilities(design, y, k, rng);
  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 1; it <= cfg.max_iter; ++it) {
    if (m_step(m, design, y, resp, var_floor)) {
      m.warnings.push_back(Warning::kComponentPruned);
      m.prune_points.push_back(m.trace.size());
      prev = -std::numeric_limits<double>::infinity();
    }
    const double ll = e_step(m, design, y, resp);
    m.trace.push_back(ll);
    m.loglik = ll;
    m.n_iter = it;
    if (m.components() == 1) break;  // closed form: one M-step is the MLE
    if (std::isfinite(prev) && ll - prev < cfg.tol * std::abs(prev)) break;
    prev = ll;
  }
  return m;
}

}  // namespace detail

/// Posterior component probabilities for each observation (n x K).
inline Eigen::MatrixXd responsibilities(const MixtureOutcomeModel& m, const Eigen::MatrixXd& features,
                                        const Eigen::VectorXd& y) {
  Eigen::MatrixXd design(features.rows(), features.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(features.cols()) = features;
  Eigen::MatrixXd resp;
  detail::e_step(m, design, y, resp);
  return resp;
}

/// EM fit with `cfg.restarts` random initializations; the restart with the
/// highest final log-likelihood wins (lowest index on ties).
inline MixtureOutcomeModel fit_mixture(const Eigen::MatrixXd& features, const Eigen::VectorXd& y, std::size_t k,
                                       const MixtureConfig& cfg = {}) {
  const auto n = static_cast<std::size_t>(features.rows());
  const auto p = static_cast<std::size_t>(features.cols());
  if (k == 0) throw ContractError("fit_mixture: K must be positive");
  if (static_cast<std::size_t>(y.size()) != n) throw ContractError("fit_mixture: outcome length mismatch");
  if (k * (p + 2) > n) throw ContractError("insufficient data for K components");

  Eigen::MatrixXd design(features.rows(), features.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(features.cols()) = features;

  const double var_y = detail::sample_variance(y);
  // A constant outcome has var(Y)=0; fall back to an absolute floor so the
  // likelihood stays finite.
  const double var_floor = var_y > 0 ? cfg.var_floor_rel * var_y : 1e-12;

  const int restarts = k == 1 ? 1 : std::max(1, cfg.restarts);
  MixtureOutcomeModel best;
  for (int r = 0; r < restarts; ++r) {
    Rng rng = make_stream(cfg.seed, static_cast<std::uint64_t>(r), stream::kMixtureRestart);
    MixtureOutcomeModel m = detail::run_em(design, y, k, cfg, var_floor, rng);
    if (m.loglik > best.loglik) best = std::move(m);
  }
  best.n_obs = n;
  best.bic = -2.0 * best.loglik + static_cast<double>(best.free_parameters()) * std::log(static_cast<double>(n));
  return best;
}

/// Fits every feasible K in `k_grid` and keeps the minimum-BIC model.
inline MixtureOutcomeModel select_mixture(const Eigen::MatrixXd& features, const Eigen::VectorXd& y,
                                          std::span<const std::size_t> k_grid, const MixtureConfig& cfg = {}) {
  if (k_grid.empty()) throw ContractError("select_mixture: empty K grid");
  const auto n = static_cast<std::size_t>(features.rows());
  const auto p = static_cast<std::size_t>(features.cols());
  std::optional<MixtureOutcomeModel> best;
  std::string last_error = "no feasible K";
  for (std::size_t k : k_grid) {
    if (k == 0 || k * (p + 2) > n) continue;
    try {
      MixtureOutcomeModel m = fit_mixture(features, y, k, cfg);
      if (!best || m.bic < best->bic) best = std::move(m);
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  if (!best) throw NumericalError("select_mixture: every K failed (" + last_error + ")");
  return std::move(*best);
}

}  // namespace ectsens

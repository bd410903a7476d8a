#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "ectsens/error.hpp"

namespace ectsens {

inline double expit(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

struct LogisticConfig {
  int max_iter = 100;
  double tol = 1e-8;    // sup-norm of the penalized score
  double ridge = 1e-6;  // applied to slopes only
};

struct ClipBounds {
  double lo = 0.01;
  double hi = 0.99;
};

struct LogisticModel {
  Eigen::VectorXd coefficients;  // intercept first
  bool converged = false;
  int n_iter = 0;
  ClipBounds clip;
  std::vector<Warning> warnings;

  double linear_predictor(std::span<const double> features) const {
    double eta = coefficients[0];
    for (std::size_t j = 0; j < features.size(); ++j)
      eta += coefficients[static_cast<Eigen::Index>(j + 1)] * features[j];
    return eta;
  }
};

/// logit^-1 of the linear predictor, clipped to the model's bounds.
inline double predict_propensity(const LogisticModel& m, std::span<const double> features) {
  return std::clamp(expit(m.linear_predictor(features)), m.clip.lo, m.clip.hi);
}

enum class RatioKind {
  kParticipation,  // q_S = pi / (1 - pi)
  kIntercurrent    // q_R = (1 - pi) / pi
};

inline double density_ratio(double propensity, RatioKind kind) {
  return kind == RatioKind::kParticipation ? propensity / (1.0 - propensity)
                                           : (1.0 - propensity) / propensity;
}

inline double density_ratio_q(const LogisticModel& m, std::span<const double> features, RatioKind kind) {
  return density_ratio(predict_propensity(m, features), kind);
}

/// Ridge-penalized score X^T(y - p) - lambda * D beta (D zeroes the intercept).
inline Eigen::VectorXd penalized_score(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                                       const Eigen::VectorXd& beta, double ridge) {
  Eigen::VectorXd eta = design * beta;
  Eigen::VectorXd mu = eta.unaryExpr([](double t) { return expit(t); });
  Eigen::VectorXd score = design.transpose() * (labels - mu);
  score.tail(score.size() - 1) -= ridge * beta.tail(beta.size() - 1);
  return score;
}

inline double penalized_loglik(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                               const Eigen::VectorXd& beta, double ridge) {
  Eigen::VectorXd eta = design * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log(1 + e^eta) computed stably
    const double t = eta[i];
    const double softplus = t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
    ll += labels[i] * t - softplus;
  }
  return ll - 0.5 * ridge * beta.tail(beta.size() - 1).squaredNorm();
}

/// Newton/IRLS fit. `design` carries the intercept column first.
/// Separation (every fitted probability saturating at its label) stops the
/// iteration with converged=false and a kSeparation warning.
inline LogisticModel fit_logistic(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                                  const LogisticConfig& cfg = {}, ClipBounds clip = {}) {
  const Eigen::Index n = design.rows();
  const Eigen::Index k = design.cols();
  if (labels.size() != n) throw ContractError("fit_logistic: label count does not match design rows");
  if (n < k + 1) throw ContractError("fit_logistic: need n >= p + 2 observations");
  const double ones = labels.sum();
  if (ones == 0.0 || ones == static_cast<double>(n))
    throw ContractError("fit_logistic: labels are all equal");
  if (!(clip.lo > 0.0 && clip.lo <= clip.hi && clip.hi < 1.0))
    throw ContractError("fit_logistic: clip bounds must satisfy 0 < lo <= hi < 1");

  LogisticModel model;
  model.clip = clip;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  beta[0] = logit(ones / static_cast<double>(n));

  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(k, cfg.ridge);
  penalty[0] = 0.0;

  double ll = penalized_loglik(design, labels, beta, cfg.ridge);
  for (int it = 1; it <= cfg.max_iter; ++it) {
    model.n_iter = it;
    Eigen::VectorXd eta = design * beta;
    Eigen::VectorXd mu = eta.unaryExpr([](double t) { return expit(t); });
    Eigen::VectorXd w = mu.array() * (1.0 - mu.array());
    Eigen::VectorXd score = design.transpose() * (labels - mu);
    score -= penalty.cwiseProduct(beta);
    if (score.lpNorm<Eigen::Infinity>() <= cfg.tol) {
      model.converged = true;
      model.n_iter = it - 1;
      break;
    }
    // Perfect classification with saturated probabilities: the MLE runs off to
    // infinity and only the ridge term holds it.
    if (((labels - mu).array().abs() < 1e-6).all()) {
      model.warnings.push_back(Warning::kSeparation);
      break;
    }
    Eigen::MatrixXd info = design.transpose() * w.asDiagonal() * design;
    info.diagonal() += penalty;
    Eigen::VectorXd step = info.ldlt().solve(score);
    if (!step.allFinite()) {
      model.warnings.push_back(Warning::kSeparation);
      break;
    }
    // Step halving keeps the penalized likelihood nondecreasing.
    double scale = 1.0;
    Eigen::VectorXd trial = beta + step;
    double ll_trial = penalized_loglik(design, labels, trial, cfg.ridge);
    while (ll_trial < ll - 1e-12 * std::abs(ll) && scale > 1e-8) {
      scale *= 0.5;
      trial = beta + scale * step;
      ll_trial = penalized_loglik(design, labels, trial, cfg.ridge);
    }
    beta = trial;
    ll = ll_trial;
  }
  if (!model.converged && model.warnings.empty()) {
    if (penalized_score(design, labels, beta, cfg.ridge).lpNorm<Eigen::Infinity>() <= cfg.tol)
      model.converged = true;
    else
      model.warnings.push_back(Warning::kNotConverged);
  }
  model.coefficients = beta;
  return model;
}

/// Prepends the intercept column.
inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& features) {
  Eigen::MatrixXd d(features.rows(), features.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(features.cols()) = features;
  return d;
}

}  // namespace ectsens

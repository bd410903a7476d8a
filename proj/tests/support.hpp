#pragma once

// Shared fixtures and oracles for the test suites.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "ectsens/logistic.hpp"
#include "ectsens/mixture.hpp"
#include "ectsens/nuisance.hpp"
#include "ectsens/random.hpp"

namespace testing {

using namespace ectsens;

/// E{ Y^power e^{gamma Y} } for a Gaussian mixture, by adaptive
/// Gauss-Kronrod quadrature, one component at a time over a window centred
/// on the tilted component mean.
inline double quadrature_moment(const ConditionalMixture& m, double gamma, int power) {
  double total = 0.0;
  for (std::size_t k = 0; k < m.weights.size(); ++k) {
    const double mu = m.means[k], sd = m.sigmas[k];
    auto f = [&](double y) {
      const double z = (y - mu) / sd;
      const double dens = std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
      return (power == 0 ? 1.0 : y) * std::exp(gamma * y) * dens;
    };
    const double centre = mu + gamma * sd * sd;
    total += m.weights[k] * boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
                                f, centre - 40.0 * sd, centre + 40.0 * sd, 20, 1e-14);
  }
  return total;
}

inline ConditionalMixture random_mixture(Rng& rng, std::size_t max_k = 3, double sd_lo = 0.2, double sd_hi = 3.0) {
  std::uniform_int_distribution<std::size_t> kk(1, max_k);
  std::uniform_real_distribution<double> mean(-2.0, 2.0), sd(sd_lo, sd_hi), w(0.1, 1.0);
  ConditionalMixture m;
  const std::size_t k = kk(rng);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    m.weights.push_back(w(rng));
    total += m.weights.back();
    m.means.push_back(mean(rng));
    m.sigmas.push_back(sd(rng));
  }
  for (auto& v : m.weights) v /= total;
  return m;
}

/// Logistic model whose propensity is `p` everywhere.
inline LogisticModel constant_logistic(double p, std::size_t dim, ClipBounds clip = {}) {
  LogisticModel m;
  m.coefficients = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim + 1));
  m.coefficients[0] = logit(p);
  m.converged = true;
  m.clip = clip;
  return m;
}

/// Mixture whose component means are intercept + slope . x.
inline MixtureOutcomeModel mixture_model(std::vector<double> weights, std::vector<std::vector<double>> betas,
                                         std::vector<double> sigmas) {
  MixtureOutcomeModel m;
  m.weights = std::move(weights);
  m.sigmas = std::move(sigmas);
  for (const auto& b : betas)
    m.betas.emplace_back(Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size())));
  return m;
}

inline FeatureMap identity_map(std::size_t p) {
  FeatureMap f;
  f.transform.assign(p, false);
  f.center.assign(p, 0.0);
  f.scale.assign(p, 1.0);
  return f;
}

/// Hand-specified nuisances on p raw covariates.
inline NuisanceSet hand_nuisance(std::size_t p, LogisticModel pi_s, LogisticModel pi_r1, LogisticModel pi_r0,
                                 MixtureOutcomeModel om1, MixtureOutcomeModel om0, double p_s1 = 0.5) {
  NuisanceSet nu;
  nu.ps_map = identity_map(p);
  nu.om_map = identity_map(p);
  nu.pi_s = std::move(pi_s);
  nu.pi_r1 = std::move(pi_r1);
  nu.pi_r0 = std::move(pi_r0);
  nu.outcome_1 = std::move(om1);
  nu.outcome_0 = std::move(om0);
  nu.p_s1 = p_s1;
  return nu;
}

/// One-dimensional nuisance fixture with covariate-dependent propensities and
/// single-component outcome models.
inline NuisanceSet random_nuisance(Rng& rng) {
  std::uniform_real_distribution<double> coef(-0.8, 0.8), sd(0.5, 1.5), w(0.2, 0.8);
  auto logistic = [&] {
    LogisticModel m;
    m.coefficients = Eigen::Vector2d(coef(rng), coef(rng));
    m.clip = {0.01, 0.99};
    return m;
  };
  const double w1 = w(rng), w0 = w(rng);
  return hand_nuisance(1, logistic(), logistic(), logistic(),
                       mixture_model({w1, 1.0 - w1}, {{coef(rng), coef(rng)}, {coef(rng) + 1.0, coef(rng)}},
                                     {sd(rng), sd(rng)}),
                       mixture_model({w0, 1.0 - w0}, {{coef(rng), coef(rng)}, {coef(rng) - 1.0, coef(rng)}},
                                     {sd(rng), sd(rng)}));
}

inline double mixture_draw(const ConditionalMixture& m, Rng& rng) {
  std::discrete_distribution<std::size_t> pick(m.weights.begin(), m.weights.end());
  const std::size_t k = pick(rng);
  return std::normal_distribution<double>(m.means[k], m.sigmas[k])(rng);
}

}  // namespace testing

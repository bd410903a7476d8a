#pragma once

// Benchmarking sensitivity-parameter magnitudes against observed covariates
// on the latent logistic scale ("implicit R^2").

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ectsens/data.hpp"
#include "ectsens/error.hpp"
#include "ectsens/logistic.hpp"
#include "ectsens/nuisance.hpp"

namespace ectsens {

inline constexpr double kLogisticVariance = std::numbers::pi * std::numbers::pi / 3.0;

enum class Indicator {
  kS,       // participation, all units
  kRInS0,   // intercurrent events among external controls
  kRInS1    // intercurrent events in the trial
};

inline std::string to_string(Indicator ind) {
  switch (ind) {
    case Indicator::kS: return "S";
    case Indicator::kRInS0: return "R0";
    case Indicator::kRInS1: return "R1";
  }
  return "?";
}

struct CalibrationReport {
  Indicator indicator = Indicator::kS;
  std::vector<double> per_covariate_rho2;
  double rho_star_sq = 0.0;
  double sigma_y_sq = 0.0;
  double var_ms = 0.0;
  double gamma_star_abs = 0.0;
  std::vector<Warning> warnings;
};

namespace detail {

struct IndicatorData {
  Eigen::MatrixXd features;
  Eigen::VectorXd labels;
};

inline IndicatorData indicator_data(const Dataset& ds, Indicator ind, const FeatureMap& map) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ind == Indicator::kS || (ind == Indicator::kRInS0 && ds.s(i) == 0) ||
        (ind == Indicator::kRInS1 && ds.s(i) == 1))
      rows.push_back(i);
  }
  IndicatorData out{map.matrix(ds, rows), Eigen::VectorXd(static_cast<Eigen::Index>(rows.size()))};
  for (std::size_t k = 0; k < rows.size(); ++k)
    out.labels[static_cast<Eigen::Index>(k)] = ind == Indicator::kS ? ds.s(rows[k]) : ds.r(rows[k]);
  return out;
}

inline double variance(const Eigen::VectorXd& v) {
  if (v.size() == 0) return 0.0;
  return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size());
}

inline double linear_predictor_variance(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels) {
  const Eigen::MatrixXd design = with_intercept(features);
  const LogisticModel m = fit_logistic(design, labels);
  return variance(design * m.coefficients);
}

inline Eigen::MatrixXd drop_column(const Eigen::MatrixXd& m, Eigen::Index j) {
  Eigen::MatrixXd out(m.rows(), m.cols() - 1);
  out.leftCols(j) = m.leftCols(j);
  out.rightCols(m.cols() - j - 1) = m.rightCols(m.cols() - j - 1);
  return out;
}

inline std::vector<double> partial_rho2_all(const IndicatorData& data, std::vector<Warning>* warnings) {
  const Eigen::Index p = data.features.cols();
  const double var_full = linear_predictor_variance(data.features, data.labels);
  std::vector<double> out(static_cast<std::size_t>(p), 0.0);
  for (Eigen::Index j = 0; j < p; ++j) {
    if (variance(data.features.col(j)) == 0.0) {
      if (warnings) warnings->push_back(Warning::kDegenerateCovariate);
      continue;
    }
    const double var_red = linear_predictor_variance(drop_column(data.features, j), data.labels);
    out[static_cast<std::size_t>(j)] = std::max(0.0, (var_full - var_red) / (var_full + kLogisticVariance));
  }
  return out;
}

}  // namespace detail

/// Latent-scale partial variance explained by covariate j given the others:
/// max(0, [var m_full - var m_without_j] / [var m_full + pi^2/3]).
inline double partial_rho2(const Dataset& ds, Indicator ind, std::size_t j, FeatureSet features = FeatureSet::kRaw,
                           std::vector<Warning>* warnings = nullptr) {
  if (j >= ds.p()) throw ContractError("partial_rho2: covariate index out of range");
  const FeatureMap map = FeatureMap::fit(ds, features, false);
  const detail::IndicatorData data = detail::indicator_data(ds, ind, map);
  const auto jj = static_cast<Eigen::Index>(j);
  if (detail::variance(data.features.col(jj)) == 0.0) {
    if (warnings) warnings->push_back(Warning::kDegenerateCovariate);
    return 0.0;
  }
  const double var_full = detail::linear_predictor_variance(data.features, data.labels);
  const double var_red = detail::linear_predictor_variance(detail::drop_column(data.features, jj), data.labels);
  return std::max(0.0, (var_full - var_red) / (var_full + kLogisticVariance));
}

/// (rho*)^2 = m / (1 - m) with m the largest per-covariate value.
inline double rho_star(const std::vector<double>& rho2) {
  if (rho2.empty()) throw ContractError("rho_star: empty input");
  const double m = *std::max_element(rho2.begin(), rho2.end());
  if (m < 0.0 || m >= 1.0) throw ContractError("rho_star: partial variances must lie in [0, 1)");
  return m / (1.0 - m);
}

/// |gamma*| = sqrt( r/(1-r) * (var_ms + pi^2/3) ) / sigma_y
inline double calibrate_gamma(double rho_star_sq, double sigma_y_sq, double var_ms) {
  if (!(rho_star_sq >= 0.0 && rho_star_sq < 1.0)) throw ContractError("calibrate_gamma: (rho*)^2 must lie in [0, 1)");
  if (!(sigma_y_sq > 0.0)) throw ContractError("calibrate_gamma: sigma_Y^2 must be positive");
  if (var_ms < 0.0) throw ContractError("calibrate_gamma: var{m(X)} must be nonnegative");
  return std::sqrt(rho_star_sq / (1.0 - rho_star_sq) * (var_ms + kLogisticVariance) / sigma_y_sq);
}

/// Share of latent variance attributed to the outcome at a given |gamma|.
inline double implied_rho2(double gamma, double sigma_y_sq, double var_ms) {
  const double t = sigma_y_sq * gamma * gamma;
  return t / (var_ms + kLogisticVariance + t);
}

/// Full report for one indicator. The outcome variance comes from the
/// outcome mixture of the matching arm, averaged over that arm's observed
/// units; var{m(X)} uses the fitted propensity model's linear predictor.
inline CalibrationReport calibrate(const Dataset& ds, const NuisanceSet& nu, Indicator ind) {
  CalibrationReport rep;
  rep.indicator = ind;
  const detail::IndicatorData data = detail::indicator_data(ds, ind, nu.ps_map);
  rep.per_covariate_rho2 = detail::partial_rho2_all(data, &rep.warnings);
  rep.rho_star_sq = rho_star(rep.per_covariate_rho2);

  const LogisticModel& ps = ind == Indicator::kS ? nu.pi_s : ind == Indicator::kRInS0 ? nu.pi_r0 : nu.pi_r1;
  rep.var_ms = detail::variance(with_intercept(data.features) * ps.coefficients);

  const int arm = ind == Indicator::kRInS1 ? 1 : 0;
  const MixtureOutcomeModel& om = arm == 1 ? nu.outcome_1 : nu.outcome_0;
  const StratumView obs = stratify(ds, arm, 1);
  double sum = 0.0;
  for (std::size_t k = 0; k < obs.size(); ++k) sum += om.at(nu.om_map.apply(ds.x(obs.rows()[k]))).variance();
  rep.sigma_y_sq = sum / static_cast<double>(obs.size());

  if (rep.rho_star_sq < 1.0) rep.gamma_star_abs = calibrate_gamma(rep.rho_star_sq, rep.sigma_y_sq, rep.var_ms);
  else rep.gamma_star_abs = std::numeric_limits<double>::infinity();
  return rep;
}

inline nlohmann::json to_json(const CalibrationReport& r) {
  std::vector<std::string> warn;
  for (auto w : r.warnings) warn.emplace_back(to_string(w));
  return {{"indicator", to_string(r.indicator)},   {"per_covariate_rho2", r.per_covariate_rho2},
          {"rho_star_sq", r.rho_star_sq},          {"sigma_y_sq", r.sigma_y_sq},
          {"var_ms", r.var_ms},                    {"gamma_star_abs", r.gamma_star_abs},
          {"warnings", warn}};
}

}  // namespace ectsens

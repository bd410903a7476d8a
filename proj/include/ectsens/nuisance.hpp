#pragma once

// Nuisance models for the ECT estimators:
//   pi_S(X)  = P(S=1 | X)           logistic, all units
//   pi_R1(X) = P(R=1 | X, S=1)      logistic, trial units
//   pi_R0(X) = P(R=1 | X, S=0)      logistic, external controls
//   outcome_s                       Gaussian mixture of regressions on (S=s, R=1)

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ectsens/data.hpp"
#include "ectsens/error.hpp"
#include "ectsens/logistic.hpp"
#include "ectsens/mixture.hpp"

namespace ectsens {

/// Nonlinear covariate transform of the benchmark design:
/// (x^2 + 2 sin x - 1.5) / sqrt(2).
inline double nonlinear_feature(double x) {
  return (x * x + 2.0 * std::sin(x) - 1.5) / std::numbers::sqrt2;
}

enum class FeatureSet {
  kRaw,         // covariates as stored
  kTransformed  // nonlinear_feature() on every non-binary covariate
};

inline std::string to_string(FeatureSet f) { return f == FeatureSet::kRaw ? "raw" : "transformed"; }

inline FeatureSet feature_set_from_string(const std::string& s) {
  if (s == "raw" || s == "x") return FeatureSet::kRaw;
  if (s == "transformed" || s == "z") return FeatureSet::kTransformed;
  throw ContractError("unknown feature set '" + s + "' (expected raw|transformed)");
}

/// Maps stored covariates to model features. The transform mask and the
/// optional z-scoring parameters are frozen at fit time so that evaluation on
/// new rows matches the fit.
struct FeatureMap {
  FeatureSet kind = FeatureSet::kRaw;
  std::vector<bool> transform;  // per covariate
  bool standardize = false;
  std::vector<double> center;
  std::vector<double> scale;

  static FeatureMap fit(const Dataset& ds, FeatureSet kind, bool standardize) {
    FeatureMap f;
    f.kind = kind;
    f.standardize = standardize;
    f.transform.assign(ds.p(), false);
    if (kind == FeatureSet::kTransformed) {
      for (std::size_t j = 0; j < ds.p(); ++j) {
        bool binary = true;
        for (std::size_t i = 0; i < ds.size() && binary; ++i) {
          const double v = ds.x(i)[j];
          binary = v == 0.0 || v == 1.0;
        }
        f.transform[j] = !binary;
      }
    }
    f.center.assign(ds.p(), 0.0);
    f.scale.assign(ds.p(), 1.0);
    if (standardize) {
      std::vector<double> buf(ds.p());
      std::vector<double> sum(ds.p(), 0.0), sq(ds.p(), 0.0);
      for (std::size_t i = 0; i < ds.size(); ++i) {
        f.raw_apply(ds.x(i), buf);
        for (std::size_t j = 0; j < ds.p(); ++j) {
          sum[j] += buf[j];
          sq[j] += buf[j] * buf[j];
        }
      }
      const auto n = static_cast<double>(ds.size());
      for (std::size_t j = 0; j < ds.p(); ++j) {
        f.center[j] = sum[j] / n;
        const double var = sq[j] / n - f.center[j] * f.center[j];
        f.scale[j] = var > 0 ? std::sqrt(var) : 1.0;
      }
    }
    return f;
  }

  std::size_t dim() const noexcept { return transform.size(); }

  void apply(std::span<const double> x, std::span<double> out) const {
    raw_apply(x, out);
    if (standardize)
      for (std::size_t j = 0; j < out.size(); ++j) out[j] = (out[j] - center[j]) / scale[j];
  }

  std::vector<double> apply(std::span<const double> x) const {
    std::vector<double> out(x.size());
    apply(x, out);
    return out;
  }

  Eigen::MatrixXd matrix(const Dataset& ds, std::span<const std::size_t> rows) const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim()));
    std::vector<double> buf(dim());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      apply(ds.x(rows[k]), buf);
      for (std::size_t j = 0; j < dim(); ++j) m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = buf[j];
    }
    return m;
  }

 private:
  void raw_apply(std::span<const double> x, std::span<double> out) const {
    if (x.size() != transform.size()) throw ContractError("feature map: covariate dimension mismatch");
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = transform[j] ? nonlinear_feature(x[j]) : x[j];
  }
};

struct NuisanceConfig {
  FeatureSet ps_features = FeatureSet::kRaw;  // pi_S, pi_R1, pi_R0
  FeatureSet om_features = FeatureSet::kRaw;  // outcome mixtures
  bool standardize = false;
  LogisticConfig logistic;
  ClipBounds clip;
  MixtureConfig mixture;
  std::vector<std::size_t> k_grid{1, 2, 3};
};

/// Nuisance values at one covariate vector.
struct UnitNuisance {
  double pi_s;
  double pi_r1;
  double pi_r0;
  ConditionalMixture outcome_1;
  ConditionalMixture outcome_0;

  double q_s() const { return density_ratio(pi_s, RatioKind::kParticipation); }
  double q_r1() const { return density_ratio(pi_r1, RatioKind::kIntercurrent); }
  double q_r0() const { return density_ratio(pi_r0, RatioKind::kIntercurrent); }
  double mu1() const { return outcome_1.mean(); }
  double mu0() const { return outcome_0.mean(); }
};

struct NuisanceSet {
  FeatureMap ps_map;
  FeatureMap om_map;
  LogisticModel pi_s;
  LogisticModel pi_r1;
  LogisticModel pi_r0;
  MixtureOutcomeModel outcome_1;
  MixtureOutcomeModel outcome_0;
  double p_s1 = 0.5;

  UnitNuisance at(std::span<const double> x) const {
    const std::vector<double> fp = ps_map.apply(x);
    const std::vector<double> fo = om_map.apply(x);
    return {predict_propensity(pi_s, fp), predict_propensity(pi_r1, fp), predict_propensity(pi_r0, fp),
            outcome_1.at(fo), outcome_0.at(fo)};
  }

  std::vector<UnitNuisance> evaluate(const Dataset& ds) const {
    std::vector<UnitNuisance> out;
    out.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(at(ds.x(i)));
    return out;
  }
};

namespace detail {

/// Logistic fit that tolerates a single-class stratum (e.g. no intercurrent
/// events in one arm): the propensity is then pinned at the clip bound.
inline LogisticModel fit_propensity(const Eigen::MatrixXd& features, const Eigen::VectorXd& labels,
                                    const NuisanceConfig& cfg) {
  const double ones = labels.sum();
  if (ones == 0.0 || ones == static_cast<double>(labels.size())) {
    LogisticModel m;
    m.coefficients = Eigen::VectorXd::Zero(features.cols() + 1);
    m.coefficients[0] = ones == 0.0 ? -40.0 : 40.0;
    m.clip = cfg.clip;
    m.warnings.push_back(Warning::kSeparation);
    return m;
  }
  return fit_logistic(with_intercept(features), labels, cfg.logistic, cfg.clip);
}

inline Eigen::VectorXd labels_of(const Dataset& ds, std::span<const std::size_t> rows, bool use_s) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k)
    v[static_cast<Eigen::Index>(k)] = use_s ? ds.s(rows[k]) : ds.r(rows[k]);
  return v;
}

inline Eigen::VectorXd outcomes_of(const Dataset& ds, std::span<const std::size_t> rows) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) v[static_cast<Eigen::Index>(k)] = ds.y(rows[k]);
  return v;
}

}  // namespace detail

inline NuisanceSet fit_nuisances(const Dataset& ds, const NuisanceConfig& cfg = {}) {
  const StratumView trial = stratify(ds, 1), external = stratify(ds, 0);
  const StratumView trial_obs = stratify(ds, 1, 1), external_obs = stratify(ds, 0, 1);
  if (trial.empty()) throw DataError("empty stratum (S=1)");
  if (external.empty()) throw DataError("empty stratum (S=0)");
  if (trial_obs.empty()) throw DataError("empty stratum (S=1,R=1)");
  if (external_obs.empty()) throw DataError("empty stratum (S=0,R=1)");

  NuisanceSet nu;
  nu.ps_map = FeatureMap::fit(ds, cfg.ps_features, cfg.standardize);
  nu.om_map = FeatureMap::fit(ds, cfg.om_features, cfg.standardize);

  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  nu.pi_s = detail::fit_propensity(nu.ps_map.matrix(ds, all), detail::labels_of(ds, all, true), cfg);
  nu.pi_r1 = detail::fit_propensity(nu.ps_map.matrix(ds, trial.rows()),
                                    detail::labels_of(ds, trial.rows(), false), cfg);
  nu.pi_r0 = detail::fit_propensity(nu.ps_map.matrix(ds, external.rows()),
                                    detail::labels_of(ds, external.rows(), false), cfg);
  nu.outcome_1 = select_mixture(nu.om_map.matrix(ds, trial_obs.rows()),
                                detail::outcomes_of(ds, trial_obs.rows()), cfg.k_grid, cfg.mixture);
  nu.outcome_0 = select_mixture(nu.om_map.matrix(ds, external_obs.rows()),
                                detail::outcomes_of(ds, external_obs.rows()), cfg.k_grid, cfg.mixture);
  nu.p_s1 = static_cast<double>(ds.n_trial()) / static_cast<double>(ds.size());
  return nu;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const FeatureMap& f) {
  j = {{"kind", to_string(f.kind)}, {"transform", f.transform}, {"standardize", f.standardize},
       {"center", f.center}, {"scale", f.scale}};
}

inline void from_json(const nlohmann::json& j, FeatureMap& f) {
  f.kind = feature_set_from_string(j.at("kind").get<std::string>());
  f.transform = j.at("transform").get<std::vector<bool>>();
  f.standardize = j.at("standardize").get<bool>();
  f.center = j.at("center").get<std::vector<double>>();
  f.scale = j.at("scale").get<std::vector<double>>();
}

inline void to_json(nlohmann::json& j, const LogisticModel& m) {
  std::vector<std::string> warn;
  for (auto w : m.warnings) warn.emplace_back(to_string(w));
  j = {{"coefficients", std::vector<double>(m.coefficients.data(), m.coefficients.data() + m.coefficients.size())},
       {"converged", m.converged},
       {"n_iter", m.n_iter},
       {"clip", {m.clip.lo, m.clip.hi}},
       {"warnings", warn}};
}

inline void from_json(const nlohmann::json& j, LogisticModel& m) {
  const auto c = j.at("coefficients").get<std::vector<double>>();
  m.coefficients = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
  m.converged = j.at("converged").get<bool>();
  m.n_iter = j.at("n_iter").get<int>();
  const auto clip = j.at("clip").get<std::vector<double>>();
  m.clip = {clip.at(0), clip.at(1)};
}

inline void to_json(nlohmann::json& j, const MixtureOutcomeModel& m) {
  std::vector<std::vector<double>> betas;
  for (const auto& b : m.betas) betas.emplace_back(b.data(), b.data() + b.size());
  j = {{"K", m.components()}, {"weights", m.weights}, {"betas", betas}, {"sigmas", m.sigmas},
       {"loglik", m.loglik}, {"bic", m.bic}, {"n_obs", m.n_obs}};
}

inline void from_json(const nlohmann::json& j, MixtureOutcomeModel& m) {
  m.weights = j.at("weights").get<std::vector<double>>();
  m.sigmas = j.at("sigmas").get<std::vector<double>>();
  m.betas.clear();
  for (const auto& b : j.at("betas").get<std::vector<std::vector<double>>>())
    m.betas.emplace_back(Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size())));
  m.loglik = j.at("loglik").get<double>();
  m.bic = j.at("bic").get<double>();
  m.n_obs = j.at("n_obs").get<std::size_t>();
  if (m.betas.size() != m.weights.size() || m.sigmas.size() != m.weights.size())
    throw DataError("mixture JSON: component arrays disagree in length");
}

inline void to_json(nlohmann::json& j, const NuisanceSet& nu) {
  j = {{"ps_features", nu.ps_map}, {"om_features", nu.om_map}, {"pi_s", nu.pi_s},
       {"pi_r1", nu.pi_r1},        {"pi_r0", nu.pi_r0},        {"outcome_1", nu.outcome_1},
       {"outcome_0", nu.outcome_0}, {"p_s1", nu.p_s1}};
}

inline void from_json(const nlohmann::json& j, NuisanceSet& nu) {
  j.at("ps_features").get_to(nu.ps_map);
  j.at("om_features").get_to(nu.om_map);
  j.at("pi_s").get_to(nu.pi_s);
  j.at("pi_r1").get_to(nu.pi_r1);
  j.at("pi_r0").get_to(nu.pi_r0);
  j.at("outcome_1").get_to(nu.outcome_1);
  j.at("outcome_0").get_to(nu.outcome_0);
  nu.p_s1 = j.at("p_s1").get<double>();
}

}  // namespace ectsens

#pragma once

// Point estimators of the treatment-policy ATE in an externally controlled
// trial, bootstrap inference, and sensitivity grids.
//
// Every estimator has the form
//   tau = (1/N_R) sum_i a_i
// with a per-unit term a_i; the stored contributions are
//   phi_i = (N/N_R)(a_i - S_i tau)
// whose sample mean is zero at the returned tau.

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ectsens/data.hpp"
#include "ectsens/error.hpp"
#include "ectsens/nuisance.hpp"
#include "ectsens/parallel.hpp"
#include "ectsens/random.hpp"
#include "ectsens/tilting.hpp"

namespace ectsens {

enum class Method { kPrimary, kTilting, kJ2R, kPS, kOM };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kPrimary: return "primary";
    case Method::kTilting: return "tilting";
    case Method::kJ2R: return "j2r";
    case Method::kPS: return "ps";
    case Method::kOM: return "om";
  }
  return "unknown";
}

inline Method method_from_string(const std::string& s) {
  if (s == "primary") return Method::kPrimary;
  if (s == "tilting") return Method::kTilting;
  if (s == "j2r") return Method::kJ2R;
  if (s == "ps") return Method::kPS;
  if (s == "om") return Method::kOM;
  throw ContractError("unknown method '" + s + "' (expected primary|tilting|j2r|ps|om)");
}

inline bool is_eif_method(Method m) { return m == Method::kPrimary || m == Method::kTilting || m == Method::kJ2R; }

struct SensitivitySpec {
  Method method = Method::kTilting;
  GammaTriple gammas;
};

struct Estimate {
  double tau_hat = 0.0;
  std::optional<double> se;
  std::optional<std::pair<double, double>> ci;
  Method method = Method::kPrimary;
  GammaTriple gammas;
  std::vector<double> contributions;
  std::size_t n_r = 0;
  std::size_t n_e = 0;
  std::size_t B = 0;
  std::uint64_t seed = 0;

  /// |mean of the contributions|; zero up to rounding at the returned tau.
  double eif_residual() const {
    if (contributions.empty()) return 0.0;
    double sum = 0.0;
    for (double v : contributions) sum += v;
    return std::abs(sum / static_cast<double>(contributions.size()));
  }
};

namespace detail {

inline void check_estimable(const Dataset& ds) {
  if (ds.count(1) == 0) throw DataError("empty stratum (S=1)");
  if (ds.count(0) == 0) throw DataError("empty stratum (S=0)");
  if (ds.count(1, 1) == 0) throw DataError("empty stratum (S=1,R=1)");
  if (ds.count(0, 1) == 0) throw DataError("empty stratum (S=0,R=1)");
}

/// a_i for one unit.
inline double unit_term(const Dataset& ds, std::size_t i, const UnitNuisance& u, const SensitivitySpec& spec) {
  const int s = ds.s(i), r = ds.r(i);
  const std::optional<double> y = r == 1 ? std::optional<double>(ds.y(i)) : std::nullopt;
  const GammaTriple& g = spec.gammas;
  switch (spec.method) {
    case Method::kPrimary:
      if (s == 1) {
        const double mu1 = u.mu1();
        return r == 1 ? *y + u.q_r1() * (*y - mu1) - u.mu0() : mu1 - u.mu0();
      }
      return r == 1 ? -u.q_s() * (*y - u.mu0()) / u.pi_r0 : 0.0;
    case Method::kTilting:
      if (s == 1) {
        const Composite de = composite_de(u, g.gamma_r0, g.gamma_s);
        if (r == 1) return *y + u.q_r1() * aug_g(u, s, r, y, g.gamma_r1) - de.ratio();
        return tilted_moments(u.outcome_1, g.gamma_r1).mean() - de.ratio();
      }
      return -u.q_s() * aug_h(u, s, r, y, g.gamma_r0, g.gamma_s);
    case Method::kJ2R:
      if (s == 1) return r == 1 ? *y - composite_de(u, g.gamma_r0, g.gamma_s).ratio() : 0.0;
      return -u.q_s() * u.pi_r1 * aug_h(u, s, r, y, g.gamma_r0, g.gamma_s);
    case Method::kPS:
      if (s == 1) return r == 1 ? *y / u.pi_r1 : 0.0;
      return r == 1 ? -u.q_s() * *y / u.pi_r0 : 0.0;
    case Method::kOM:
      return s == 1 ? u.mu1() - u.mu0() : 0.0;
  }
  return 0.0;
}

}  // namespace detail

/// Point estimate from nuisances already evaluated at every unit of `ds`.
inline Estimate estimate_from(const Dataset& ds, const std::vector<UnitNuisance>& nu_at,
                              const SensitivitySpec& spec) {
  detail::check_estimable(ds);
  if (nu_at.size() != ds.size()) throw ContractError("nuisance evaluations do not match the dataset");
  const std::size_t n = ds.size();
  const auto n_r = static_cast<double>(ds.n_trial());
  std::vector<double> a(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = detail::unit_term(ds, i, nu_at[i], spec);
    sum += a[i];
  }
  Estimate est;
  est.method = spec.method;
  est.gammas = spec.method == Method::kPrimary || spec.method == Method::kPS || spec.method == Method::kOM
                   ? GammaTriple{}
                   : spec.gammas;
  if (spec.method == Method::kJ2R) est.gammas.gamma_r1 = 0.0;
  est.tau_hat = sum / n_r;
  est.n_r = ds.n_trial();
  est.n_e = ds.n_external();
  est.contributions.resize(n);
  const double scale = static_cast<double>(n) / n_r;
  for (std::size_t i = 0; i < n; ++i) est.contributions[i] = scale * (a[i] - ds.s(i) * est.tau_hat);
  return est;
}

inline Estimate estimate(const Dataset& ds, const NuisanceSet& nu, const SensitivitySpec& spec) {
  return estimate_from(ds, nu.evaluate(ds), spec);
}

inline Estimate estimate_primary(const Dataset& ds, const NuisanceSet& nu) {
  return estimate(ds, nu, {Method::kPrimary, {}});
}

inline Estimate estimate_tilting(const Dataset& ds, const NuisanceSet& nu, const GammaTriple& g) {
  return estimate(ds, nu, {Method::kTilting, g});
}

inline Estimate estimate_j2r(const Dataset& ds, const NuisanceSet& nu, double gamma_r0, double gamma_s) {
  return estimate(ds, nu, {Method::kJ2R, {gamma_s, gamma_r0, 0.0}});
}

inline Estimate estimate_ps(const Dataset& ds, const NuisanceSet& nu) { return estimate(ds, nu, {Method::kPS, {}}); }

inline Estimate estimate_om(const Dataset& ds, const NuisanceSet& nu) { return estimate(ds, nu, {Method::kOM, {}}); }

// ---------------------------------------------------------------------------
// Bootstrap

struct BootstrapConfig {
  std::size_t B = 50;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  int max_redraws = 10;
};

inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

/// Resample N_R trial and N_E external units with replacement, within arm.
inline std::vector<std::size_t> stratified_resample(const Dataset& ds, Rng& rng) {
  const StratumView trial = stratify(ds, 1), external = stratify(ds, 0);
  std::vector<std::size_t> rows;
  rows.reserve(ds.size());
  for (const StratumView* v : {&trial, &external}) {
    std::uniform_int_distribution<std::size_t> pick(0, v->size() - 1);
    for (std::size_t k = 0; k < v->size(); ++k) rows.push_back(v->rows()[pick(rng)]);
  }
  return rows;
}

/// One bootstrap dataset; redrawn while a required (s, r=1) stratum is empty.
inline Dataset bootstrap_sample(const Dataset& ds, std::uint64_t seed, std::size_t replicate, int max_redraws) {
  Rng rng = make_stream(seed, replicate, stream::kBootstrap);
  for (int attempt = 0; attempt < max_redraws; ++attempt) {
    Dataset b = ds.subset(stratified_resample(ds, rng));
    if (b.estimable()) return b;
  }
  throw NumericalError("bootstrap replicate " + std::to_string(replicate) + ": empty (s,r=1) stratum after " +
                       std::to_string(max_redraws) + " redraws");
}

/// Replicate estimates for several specs, sharing each replicate's nuisance
/// refit across all of them. Entry [b][k] is NaN when spec k failed on
/// replicate b.
inline std::vector<std::vector<double>> bootstrap_replicates(const Dataset& ds, const std::vector<SensitivitySpec>& specs,
                                                             const NuisanceConfig& ncfg, const BootstrapConfig& bcfg) {
  if (bcfg.B < 2) throw ContractError("bootstrap needs B >= 2");
  detail::check_estimable(ds);
  std::vector<std::vector<double>> reps(bcfg.B, std::vector<double>(specs.size()));
  parallel_for(bcfg.B, bcfg.threads, [&](std::size_t b) {
    const Dataset sample = bootstrap_sample(ds, bcfg.seed, b, bcfg.max_redraws);
    const NuisanceSet nu = fit_nuisances(sample, ncfg);
    const std::vector<UnitNuisance> at = nu.evaluate(sample);
    for (std::size_t k = 0; k < specs.size(); ++k) {
      try {
        reps[b][k] = estimate_from(sample, at, specs[k]).tau_hat;
      } catch (const NumericalError&) {
        reps[b][k] = std::numeric_limits<double>::quiet_NaN();
      }
    }
  });
  return reps;
}

/// Sample SD (n-1 denominator).
inline double sample_sd(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline void attach_interval(Estimate& est, const std::vector<double>& replicates, const BootstrapConfig& bcfg) {
  for (double v : replicates)
    if (!std::isfinite(v)) throw NumericalError("bootstrap replicate failed for this sensitivity setting");
  const double se = sample_sd(replicates);
  const double z = normal_quantile(1.0 - bcfg.alpha / 2.0);
  est.se = se;
  est.ci = std::pair{est.tau_hat - z * se, est.tau_hat + z * se};
  est.B = bcfg.B;
  est.seed = bcfg.seed;
}

/// Point estimate on the full data plus bootstrap SE and Wald interval.
inline Estimate bootstrap(const Dataset& ds, const SensitivitySpec& spec, const NuisanceConfig& ncfg,
                          const BootstrapConfig& bcfg) {
  if (!(bcfg.alpha > 0.0 && bcfg.alpha <= 0.5)) throw ContractError("alpha must lie in (0, 0.5]");
  Estimate est = estimate(ds, fit_nuisances(ds, ncfg), spec);
  const auto reps = bootstrap_replicates(ds, {spec}, ncfg, bcfg);
  std::vector<double> col(reps.size());
  for (std::size_t b = 0; b < reps.size(); ++b) col[b] = reps[b][0];
  attach_interval(est, col, bcfg);
  return est;
}

struct GridRow {
  SensitivitySpec spec;
  std::optional<Estimate> estimate;
  std::string error;  // set when the row failed
};

/// One row per grid point. Nuisances are fitted once on `ds` (given as `nu`)
/// and reused across the grid; with B > 0 each bootstrap replicate is refitted
/// once and reused across the grid as well.
inline std::vector<GridRow> sensitivity_grid(const Dataset& ds, const NuisanceSet& nu,
                                             const std::vector<GammaTriple>& grid, Method method,
                                             const NuisanceConfig& ncfg, const BootstrapConfig& bcfg) {
  std::vector<SensitivitySpec> specs;
  specs.reserve(grid.size());
  for (const auto& g : grid) specs.push_back({method, g});
  const std::vector<UnitNuisance> at = nu.evaluate(ds);
  std::vector<GridRow> rows(specs.size());
  for (std::size_t k = 0; k < specs.size(); ++k) {
    rows[k].spec = specs[k];
    try {
      rows[k].estimate = estimate_from(ds, at, specs[k]);
    } catch (const Error& e) {
      rows[k].error = e.what();
    }
  }
  if (bcfg.B == 0) return rows;
  const auto reps = bootstrap_replicates(ds, specs, ncfg, bcfg);
  for (std::size_t k = 0; k < specs.size(); ++k) {
    if (!rows[k].estimate) continue;
    std::vector<double> col(reps.size());
    for (std::size_t b = 0; b < reps.size(); ++b) col[b] = reps[b][k];
    try {
      attach_interval(*rows[k].estimate, col, bcfg);
    } catch (const Error& e) {
      rows[k].error = e.what();
      rows[k].estimate.reset();
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::json to_json_row(const Estimate& e) {
  nlohmann::json j = {{"method", to_string(e.method)},
                      {"gamma_s", e.gammas.gamma_s},
                      {"gamma_r0", e.gammas.gamma_r0},
                      {"gamma_r1", e.gammas.gamma_r1},
                      {"tau_hat", e.tau_hat},
                      {"se", nullptr},
                      {"ci_lo", nullptr},
                      {"ci_hi", nullptr},
                      {"n_r", e.n_r},
                      {"n_e", e.n_e},
                      {"B", e.B},
                      {"seed", e.seed}};
  if (e.se) j["se"] = *e.se;
  if (e.ci) {
    j["ci_lo"] = e.ci->first;
    j["ci_hi"] = e.ci->second;
  }
  return j;
}

inline const char* kEstimateCsvHeader = "method,gamma_s,gamma_r0,gamma_r1,tau_hat,se,ci_lo,ci_hi,n_r,n_e,B,seed";

inline std::string to_csv_row(const Estimate& e) {
  auto num = [](double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
  };
  std::string row = to_string(e.method) + "," + num(e.gammas.gamma_s) + "," + num(e.gammas.gamma_r0) + "," +
                    num(e.gammas.gamma_r1) + "," + num(e.tau_hat) + ",";
  row += e.se ? num(*e.se) : "";
  row += ",";
  row += e.ci ? num(e.ci->first) + "," + num(e.ci->second) : ",";
  row += "," + std::to_string(e.n_r) + "," + std::to_string(e.n_e) + "," + std::to_string(e.B) + "," +
         std::to_string(e.seed);
  return row;
}

}  // namespace ectsens

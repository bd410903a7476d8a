#pragma once

// Benchmark data-generating process for externally controlled trials and a
// Monte Carlo harness summarizing estimator performance.
//
//   X_1..X_4 ~ N(0.25, 1), X_5 ~ Bernoulli(0.5)
//   Z_j = (X_j^2 + 2 sin X_j - 1.5)/sqrt(2) for j <= 4, Z_5 = X_5
//   Y(0) = sum Z / 3 + eps,  Y(1) = sum Z / 2 + eps,  eps ~ N(0, 1)
//   P(S=1 | X, Y(0))        = expit(a_S + 0.1 sum Z + g_S Y(0))
//   P(R=0 | X, Y(s), S=s)   = expit(-a_Rs - sum Z / 6 + g_Rs Y(s))

#include <boost/math/tools/roots.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ectsens/data.hpp"
#include "ectsens/error.hpp"
#include "ectsens/estimators.hpp"
#include "ectsens/logistic.hpp"
#include "ectsens/nuisance.hpp"
#include "ectsens/parallel.hpp"
#include "ectsens/random.hpp"
#include "ectsens/tilting.hpp"

namespace ectsens {

inline constexpr std::size_t kDgpCovariates = 5;

struct DGPConfig {
  std::size_t n_r_target = 200;
  std::size_t n_e_target = 500;
  GammaTriple gammas;  // (0,0,0) is the unconfounded design
  std::uint64_t seed = 1;
  std::size_t oracle_draws = 1'000'000;
  bool j2r_variant = false;      // trial outcomes after an event jump to the control mean
  bool null_covariates = false;  // covariates pinned where every Z_j = 0
};

/// Latent per-unit quantities.
struct LatentUnit {
  double y0;
  double y1;
  double y10;  // outcome on treatment after an intercurrent event (J2R variant)
  int s;
  int r;
};

struct Draw {
  Dataset data;
  std::vector<LatentUnit> latent;
};

inline double z_transform(double x) { return nonlinear_feature(x); }

inline std::array<double, kDgpCovariates> z_transform(std::span<const double> x) {
  if (x.size() != kDgpCovariates) throw ContractError("z_transform expects 5 covariates");
  std::array<double, kDgpCovariates> z{};
  for (std::size_t j = 0; j + 1 < kDgpCovariates; ++j) z[j] = z_transform(x[j]);
  z[kDgpCovariates - 1] = x[kDgpCovariates - 1];
  return z;
}

/// Positive root of x^2 + 2 sin x - 1.5.
inline double null_covariate_value() {
  auto f = [](double x) { return x * x + 2.0 * std::sin(x) - 1.5; };
  const auto r = boost::math::tools::bisect(f, 0.0, 2.0, boost::math::tools::eps_tolerance<double>());
  return 0.5 * (r.first + r.second);
}

inline RowMatrix draw_covariates(std::size_t n, Rng& rng) {
  RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kDgpCovariates));
  std::normal_distribution<double> normal(0.25, 1.0);
  std::bernoulli_distribution coin(0.5);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j + 1 < x.cols(); ++j) x(i, j) = normal(rng);
    x(i, x.cols() - 1) = coin(rng) ? 1.0 : 0.0;
  }
  return x;
}

/// Intercept a with mean_i expit(a + lp_i) = target, by bisection on [-20, 20].
inline double solve_intercept(double target, std::span<const double> lps) {
  if (!(target > 0.0 && target < 1.0)) throw ContractError("solve_intercept: target must lie in (0, 1)");
  if (lps.empty()) throw ContractError("solve_intercept: empty predictor sample");
  auto gap = [&](double a) {
    double sum = 0.0;
    for (double lp : lps) sum += expit(a + lp);
    return sum / static_cast<double>(lps.size()) - target;
  };
  double lo = -20.0, hi = 20.0;
  if (gap(lo) > 0.0 || gap(hi) < 0.0) throw NumericalError("solve_intercept: target not bracketed by [-20, 20]");
  auto tol = [](double a, double b) { return std::abs(b - a) < 1e-10; };
  const auto r = boost::math::tools::bisect(gap, lo, hi, tol);
  return 0.5 * (r.first + r.second);
}

inline Draw generate(const DGPConfig& cfg, std::size_t n, Rng& rng) {
  if (n == 0) throw ContractError("generate: empty sample");
  RowMatrix x = draw_covariates(n, rng);
  if (cfg.null_covariates) {
    const double v = null_covariate_value();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j + 1 < x.cols(); ++j) x(i, j) = v;
      x(i, x.cols() - 1) = 0.0;
    }
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> sz(n);
  std::vector<LatentUnit> lat(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const auto z = z_transform(std::span<const double>(x.row(row).data(), kDgpCovariates));
    sz[i] = cfg.null_covariates ? 0.0 : z[0] + z[1] + z[2] + z[3] + z[4];
    const double eps = noise(rng);
    lat[i].y0 = sz[i] / 3.0 + eps;
    lat[i].y1 = sz[i] / 2.0 + eps;
    lat[i].y10 = sz[i] / 3.0 + eps;
  }

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> lp(n);
  for (std::size_t i = 0; i < n; ++i) lp[i] = 0.1 * sz[i] + cfg.gammas.gamma_s * lat[i].y0;
  const double target_s = static_cast<double>(cfg.n_r_target) / static_cast<double>(cfg.n_r_target + cfg.n_e_target);
  const double a_s = solve_intercept(target_s, lp);
  for (std::size_t i = 0; i < n; ++i) lat[i].s = unif(rng) < expit(a_s + lp[i]) ? 1 : 0;

  for (int arm : {1, 0}) {
    const double g = arm == 1 ? (cfg.j2r_variant ? 0.0 : cfg.gammas.gamma_r1) : cfg.gammas.gamma_r0;
    std::vector<std::size_t> rows;
    std::vector<double> arm_lp;
    for (std::size_t i = 0; i < n; ++i) {
      if (lat[i].s != arm) continue;
      rows.push_back(i);
      arm_lp.push_back(sz[i] / 6.0 - g * (arm == 1 ? lat[i].y1 : lat[i].y0));
    }
    if (rows.empty()) continue;
    const double a_r = solve_intercept(0.5, arm_lp);
    for (std::size_t k = 0; k < rows.size(); ++k) lat[rows[k]].r = unif(rng) < expit(a_r + arm_lp[k]) ? 1 : 0;
  }

  std::vector<int> s(n), r(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = lat[i].s;
    r[i] = lat[i].r;
    y[i] = lat[i].r == 1 ? (lat[i].s == 1 ? lat[i].y1 : lat[i].y0) : std::numeric_limits<double>::quiet_NaN();
  }
  return {Dataset(std::move(x), s, r, y), std::move(lat)};
}

/// One dataset of n_r_target + n_e_target units; bit-for-bit reproducible
/// from (cfg, stream index).
inline Draw generate(const DGPConfig& cfg, std::uint64_t index = 0) {
  Rng rng = make_stream(cfg.seed, index, stream::kMonteCarloRep);
  return generate(cfg, cfg.n_r_target + cfg.n_e_target, rng);
}

enum class Estimand {
  kTreatmentPolicy,  // E{Y(1) - Y(0) | S=1}
  kJumpToReference   // E{R Y(1) + (1-R) Y(1,0) - Y(0) | S=1}
};

struct TrueTau {
  double value;
  double mc_se;
};

/// Monte Carlo truth over one large population drawn from the design.
inline TrueTau true_tau(const DGPConfig& cfg, std::size_t draws, Estimand estimand = Estimand::kTreatmentPolicy) {
  if (draws < 2) throw ContractError("true_tau needs at least two draws");
  Rng rng = make_stream(cfg.seed, 0, stream::kOracle);
  const Draw d = generate(cfg, draws, rng);
  double sum = 0.0, sq = 0.0;
  std::size_t n1 = 0;
  for (const auto& u : d.latent) {
    if (u.s != 1) continue;
    const double effect = estimand == Estimand::kTreatmentPolicy
                              ? u.y1 - u.y0
                              : (u.r == 1 ? u.y1 : u.y10) - u.y0;
    sum += effect;
    sq += effect * effect;
    ++n1;
  }
  if (n1 < 2) throw NumericalError("true_tau: too few trial units in the oracle population");
  const double mean = sum / static_cast<double>(n1);
  const double var = (sq - static_cast<double>(n1) * mean * mean) / static_cast<double>(n1 - 1);
  return {mean, std::sqrt(std::max(var, 0.0) / static_cast<double>(n1))};
}

inline TrueTau true_tau(const DGPConfig& cfg, Estimand estimand = Estimand::kTreatmentPolicy) {
  return true_tau(cfg, cfg.oracle_draws, estimand);
}

// ---------------------------------------------------------------------------
// Monte Carlo harness

struct Scenario {
  std::string label = "scenario";
  DGPConfig dgp;
  NuisanceConfig nuisance;
  std::vector<SensitivitySpec> specs{{Method::kPrimary, {}}};
  std::size_t B = 50;
  double alpha = 0.05;
};

struct MCRow {
  std::string label;
  SensitivitySpec spec;
  double truth = 0.0;
  double truth_se = 0.0;
  double bias = 0.0;
  double se = 0.0;
  double mse = 0.0;
  double coverage = 0.0;
  double width = 0.0;
  std::size_t n_reps = 0;
  std::size_t n_failed = 0;
  double max_eif_residual = 0.0;
};

struct MCTable {
  std::vector<MCRow> rows;
};

inline Estimand estimand_for(Method m) { return m == Method::kJ2R ? Estimand::kJumpToReference : Estimand::kTreatmentPolicy; }

struct RepResult {
  std::vector<double> tau;  // per spec; NaN on failure
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<double> residual;
};

inline RepResult run_replicate(const Scenario& sc, std::uint64_t seed, std::size_t rep) {
  const std::size_t k = sc.specs.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  RepResult out{std::vector<double>(k, nan), std::vector<double>(k, nan), std::vector<double>(k, nan),
                std::vector<double>(k, nan)};
  DGPConfig dgp = sc.dgp;
  dgp.seed = seed;
  try {
    const Draw d = generate(dgp, rep);
    const NuisanceSet nu = fit_nuisances(d.data, sc.nuisance);
    const std::vector<UnitNuisance> at = nu.evaluate(d.data);
    BootstrapConfig bcfg;
    bcfg.B = sc.B;
    bcfg.alpha = sc.alpha;
    bcfg.seed = make_stream(seed, rep, stream::kBootstrapInRep)();
    bcfg.threads = 1;
    const auto reps = bootstrap_replicates(d.data, sc.specs, sc.nuisance, bcfg);
    for (std::size_t j = 0; j < k; ++j) {
      Estimate est = estimate_from(d.data, at, sc.specs[j]);
      std::vector<double> col(reps.size());
      for (std::size_t b = 0; b < reps.size(); ++b) col[b] = reps[b][j];
      attach_interval(est, col, bcfg);
      out.tau[j] = est.tau_hat;
      out.lo[j] = est.ci->first;
      out.hi[j] = est.ci->second;
      out.residual[j] = est.eif_residual();
    }
  } catch (const Error&) {
    // recorded as a failed replicate through the NaN entries
  }
  return out;
}

/// n_reps independent datasets; per-rep point estimate plus bootstrap Wald
/// interval for every spec of the scenario. Replicates failing for a spec
/// are excluded from that spec's row; more than 2% failures is an error.
inline MCTable run_mc_study(const Scenario& sc, std::size_t n_reps, std::uint64_t seed, unsigned threads = 1,
                            std::optional<TrueTau> truth_override = std::nullopt) {
  if (n_reps == 0) throw ContractError("run_mc_study: n_reps must be positive");
  std::vector<RepResult> results(n_reps);
  parallel_for(n_reps, threads, [&](std::size_t rep) { results[rep] = run_replicate(sc, seed, rep); });

  MCTable table;
  for (std::size_t j = 0; j < sc.specs.size(); ++j) {
    MCRow row;
    row.label = sc.label;
    row.spec = sc.specs[j];
    const TrueTau t = truth_override ? *truth_override : true_tau(sc.dgp, estimand_for(sc.specs[j].method));
    row.truth = t.value;
    row.truth_se = t.mc_se;
    std::vector<double> taus;
    std::size_t covered = 0;
    double width = 0.0;
    for (const auto& r : results) {
      if (!std::isfinite(r.tau[j]) || !std::isfinite(r.lo[j])) {
        ++row.n_failed;
        continue;
      }
      taus.push_back(r.tau[j]);
      if (r.lo[j] <= row.truth && row.truth <= r.hi[j]) ++covered;
      width += r.hi[j] - r.lo[j];
      row.max_eif_residual = std::max(row.max_eif_residual, r.residual[j]);
    }
    if (static_cast<double>(row.n_failed) > 0.02 * static_cast<double>(n_reps))
      throw NumericalError("run_mc_study: " + std::to_string(row.n_failed) + " of " + std::to_string(n_reps) +
                           " replicates failed for " + to_string(row.spec.method));
    row.n_reps = taus.size();
    if (taus.empty()) throw NumericalError("run_mc_study: no successful replicates");
    const auto m = static_cast<double>(taus.size());
    double mean = 0.0, mse = 0.0;
    for (double v : taus) {
      mean += v;
      mse += (v - row.truth) * (v - row.truth);
    }
    mean /= m;
    row.bias = mean - row.truth;
    row.mse = mse / m;
    row.se = taus.size() > 1 ? sample_sd(taus) : 0.0;
    row.coverage = static_cast<double>(covered) / m;
    row.width = width / m;
    table.rows.push_back(row);
  }
  return table;
}

inline const char* kMcCsvHeader =
    "label,method,gamma_s,gamma_r0,gamma_r1,truth,bias,se,mse,coverage,ci_width,n_reps,n_failed";

inline std::string to_csv(const MCTable& t) {
  std::ostringstream os;
  os << kMcCsvHeader << '\n' << std::setprecision(8);
  for (const auto& r : t.rows) {
    os << r.label << ',' << to_string(r.spec.method) << ',' << r.spec.gammas.gamma_s << ',' << r.spec.gammas.gamma_r0
       << ',' << r.spec.gammas.gamma_r1 << ',' << r.truth << ',' << r.bias << ',' << r.se << ',' << r.mse << ','
       << r.coverage << ',' << r.width << ',' << r.n_reps << ',' << r.n_failed << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const MCTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"label", r.label},
                    {"method", to_string(r.spec.method)},
                    {"gamma_s", r.spec.gammas.gamma_s},
                    {"gamma_r0", r.spec.gammas.gamma_r0},
                    {"gamma_r1", r.spec.gammas.gamma_r1},
                    {"truth", r.truth},
                    {"truth_se", r.truth_se},
                    {"bias", r.bias},
                    {"se", r.se},
                    {"mse", r.mse},
                    {"coverage", r.coverage},
                    {"ci_width", r.width},
                    {"n_reps", r.n_reps},
                    {"n_failed", r.n_failed}});
  return rows;
}

}  // namespace ectsens

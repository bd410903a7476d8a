// ectsens: sensitivity analysis for externally controlled trials with
// intercurrent events.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ectsens/calibration.hpp"
#include "ectsens/cli.hpp"
#include "ectsens/data.hpp"
#include "ectsens/estimators.hpp"
#include "ectsens/nuisance.hpp"
#include "ectsens/parallel.hpp"
#include "ectsens/simulation.hpp"

using namespace ectsens;
using nlohmann::json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// Input-side problem reported with exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataOptions {
  std::string in;
  std::string schema;
};

struct NuisanceOptions {
  std::string ps_features = "raw";
  std::string om_features = "raw";
  std::vector<std::size_t> k_grid{1, 2, 3};
  double clip_lo = 0.01;
  double clip_hi = 0.99;
  bool standardize = false;
  int restarts = 5;
};

struct BootstrapOptions {
  std::size_t B = 50;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  unsigned threads = default_threads();
};

struct Options {
  DataOptions data;
  NuisanceOptions nuisance;
  BootstrapOptions boot;
  std::string out;
  std::string nuisance_file;
  std::string method = "tilting";
  std::string gamma_s = "0";
  std::string gamma_r0 = "0";
  std::string gamma_r1 = "0";

  // simulate / mc
  std::size_t n_r = 200;
  std::size_t n_e = 500;
  std::uint64_t index = 0;
  bool j2r_variant = false;
  bool null_covariates = false;
  std::size_t oracle_draws = 1'000'000;
  std::vector<std::string> methods{"primary"};
  std::vector<double> confounding;
  std::string label;
  std::size_t reps = 500;
};

void add_data_options(CLI::App* app, DataOptions& d) {
  app->add_option("--in", d.in, "Input CSV (header row; empty cell for missing outcomes)")->required();
  app->add_option("--schema", d.schema, "Column names x1,...,xp,s,r,y (default: every other column is a covariate)");
}

void add_nuisance_options(CLI::App* app, NuisanceOptions& n) {
  app->add_option("--ps-features", n.ps_features, "Propensity features: raw | transformed")
      ->check(CLI::IsMember({"raw", "x", "transformed", "z"}))
      ->capture_default_str();
  app->add_option("--om-features", n.om_features, "Outcome-model features: raw | transformed")
      ->check(CLI::IsMember({"raw", "x", "transformed", "z"}))
      ->capture_default_str();
  app->add_option("--k-grid", n.k_grid, "Mixture component counts searched by BIC")
      ->delimiter(',')
      ->check(CLI::Range(std::size_t{1}, std::size_t{10}))
      ->capture_default_str();
  app->add_option("--clip-lo", n.clip_lo, "Lower propensity clip")->capture_default_str();
  app->add_option("--clip-hi", n.clip_hi, "Upper propensity clip")->capture_default_str();
  app->add_flag("--standardize", n.standardize, "z-score covariates before fitting");
  app->add_option("--restarts", n.restarts, "EM random restarts per component count")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
}

void add_bootstrap_options(CLI::App* app, BootstrapOptions& b) {
  app->add_option("--B", b.B, "Bootstrap replicates (0 disables)")->capture_default_str();
  app->add_option("--alpha", b.alpha, "Wald interval level is 1 - alpha")
      ->check(CLI::Range(1e-12, 0.5))
      ->capture_default_str();
  app->add_option("--seed", b.seed, "Random seed")->capture_default_str();
  app->add_option("--threads", b.threads, "Worker threads (default: available cores)")->check(CLI::PositiveNumber);
}

void add_gamma_options(CLI::App* app, Options& o, bool grid) {
  const char* what = grid ? "(value, list a,b,c or start:stop:step)" : "(single value)";
  app->add_option("--gamma-s", o.gamma_s, std::string("Outcome non-exchangeability tilt ") + what)
      ->capture_default_str();
  app->add_option("--gamma-r0", o.gamma_r0, std::string("External-control event tilt ") + what)->capture_default_str();
  app->add_option("--gamma-r1", o.gamma_r1, std::string("Trial event tilt ") + what)->capture_default_str();
}

NuisanceConfig nuisance_config(const NuisanceOptions& n) {
  if (!(n.clip_lo > 0.0 && n.clip_lo <= n.clip_hi && n.clip_hi < 1.0))
    throw UsageError("clip bounds must satisfy 0 < clip-lo <= clip-hi < 1");
  NuisanceConfig cfg;
  cfg.ps_features = feature_set_from_string(n.ps_features);
  cfg.om_features = feature_set_from_string(n.om_features);
  cfg.k_grid = n.k_grid;
  cfg.clip = {n.clip_lo, n.clip_hi};
  cfg.standardize = n.standardize;
  cfg.mixture.restarts = n.restarts;
  return cfg;
}

BootstrapConfig bootstrap_config(const BootstrapOptions& b) {
  BootstrapConfig cfg;
  cfg.B = b.B;
  cfg.alpha = b.alpha;
  cfg.seed = b.seed;
  cfg.threads = b.threads;
  return cfg;
}

/// Without --schema: s, r, y by name and every other column as a covariate.
Schema resolve_schema(const DataOptions& d) {
  if (!d.schema.empty()) return Schema::parse(d.schema);
  std::ifstream in(d.in);
  if (!in) throw UsageError("cannot open '" + d.in + "'");
  std::string header;
  if (!std::getline(in, header)) throw DataError("missing header row");
  Schema schema;
  for (const auto& name : detail::split_csv_line(header))
    if (name != schema.s && name != schema.r && name != schema.y) schema.covariates.push_back(name);
  return schema;
}

Dataset load(const DataOptions& d) {
  {
    std::ifstream probe(d.in);
    if (!probe) throw UsageError("cannot open '" + d.in + "'");
  }
  return load_dataset(d.in, resolve_schema(d));
}

double single_gamma(const std::string& spec, const char* flag) {
  const auto v = parse_axis(spec);
  if (v.size() != 1) throw GridSpecError(std::string(flag) + " takes a single value here");
  return v.front();
}

/// Writes to --out when given, otherwise to standard output.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out << text;
}

NuisanceSet obtain_nuisances(const Options& o, const Dataset& ds, const NuisanceConfig& cfg) {
  if (o.nuisance_file.empty()) return fit_nuisances(ds, cfg);
  std::ifstream in(o.nuisance_file);
  if (!in) throw UsageError("cannot open '" + o.nuisance_file + "'");
  return json::parse(in).get<NuisanceSet>();
}

// ---------------------------------------------------------------------------

int run_simulate(const Options& o) {
  DGPConfig cfg;
  cfg.n_r_target = o.n_r;
  cfg.n_e_target = o.n_e;
  cfg.seed = o.boot.seed;
  cfg.gammas = {single_gamma(o.gamma_s, "--gamma-s"), single_gamma(o.gamma_r0, "--gamma-r0"),
                single_gamma(o.gamma_r1, "--gamma-r1")};
  cfg.j2r_variant = o.j2r_variant;
  cfg.null_covariates = o.null_covariates;
  const Draw d = generate(cfg, o.index);
  std::ostringstream os;
  write_dataset(os, d.data);
  emit(o.out, os.str());
  if (!o.out.empty())
    std::cout << "simulated " << d.data.size() << " units (" << d.data.n_trial() << " trial, "
              << d.data.size() - d.data.n_trial() << " external) -> " << o.out << '\n';
  return 0;
}

int run_fit(const Options& o) {
  const Dataset ds = load(o.data);
  const NuisanceSet nu = fit_nuisances(ds, nuisance_config(o.nuisance));
  emit(o.out, json(nu).dump(2) + "\n");
  if (!o.out.empty())
    std::cout << "fitted nuisances on " << ds.size() << " units; outcome components K1=" << nu.outcome_1.weights.size()
              << " K0=" << nu.outcome_0.weights.size() << " -> " << o.out << '\n';
  return 0;
}

int run_estimate(const Options& o) {
  const Dataset ds = load(o.data);
  const NuisanceConfig ncfg = nuisance_config(o.nuisance);
  const NuisanceSet nu = obtain_nuisances(o, ds, ncfg);
  const SensitivitySpec spec{method_from_string(o.method),
                             {single_gamma(o.gamma_s, "--gamma-s"), single_gamma(o.gamma_r0, "--gamma-r0"),
                              single_gamma(o.gamma_r1, "--gamma-r1")}};
  Estimate est = estimate(ds, nu, spec);
  if (o.boot.B > 0) {
    const BootstrapConfig bcfg = bootstrap_config(o.boot);
    const auto reps = bootstrap_replicates(ds, {spec}, ncfg, bcfg);
    std::vector<double> col(reps.size());
    for (std::size_t b = 0; b < reps.size(); ++b) col[b] = reps[b][0];
    attach_interval(est, col, bcfg);
  }
  json row = to_json_row(est);
  row["eif_residual"] = est.eif_residual();
  emit(o.out, row.dump(2) + "\n");
  if (!o.out.empty()) {
    std::cout << to_string(est.method) << " tau_hat=" << est.tau_hat;
    if (est.ci) std::cout << " se=" << *est.se << " ci=(" << est.ci->first << ", " << est.ci->second << ")";
    std::cout << " -> " << o.out << '\n';
  }
  return 0;
}

int run_grid(const Options& o) {
  const auto grid = expand_grid(parse_axis(o.gamma_s), parse_axis(o.gamma_r0), parse_axis(o.gamma_r1));
  const Dataset ds = load(o.data);
  const NuisanceConfig ncfg = nuisance_config(o.nuisance);
  const NuisanceSet nu = obtain_nuisances(o, ds, ncfg);
  const auto rows = sensitivity_grid(ds, nu, grid, method_from_string(o.method), ncfg, bootstrap_config(o.boot));
  std::ostringstream os;
  os << kEstimateCsvHeader << ",error\n" << std::setprecision(10);
  std::size_t failed = 0;
  for (const auto& r : rows) {
    if (r.estimate) {
      os << to_csv_row(*r.estimate) << ",\n";
      continue;
    }
    ++failed;
    std::string msg = r.error;
    for (char& c : msg)
      if (c == ',' || c == '\n') c = ';';
    os << to_string(r.spec.method) << ',' << r.spec.gammas.gamma_s << ',' << r.spec.gammas.gamma_r0 << ','
       << r.spec.gammas.gamma_r1 << ",,,,," << ds.n_trial() << ',' << ds.size() - ds.n_trial() << ','
       << o.boot.B << ',' << o.boot.seed << ',' << msg << '\n';
  }
  emit(o.out, os.str());
  if (!o.out.empty())
    std::cout << rows.size() << " grid points (" << failed << " failed) -> " << o.out << '\n';
  return 0;
}

int run_calibrate(const Options& o) {
  const Dataset ds = load(o.data);
  const NuisanceSet nu = obtain_nuisances(o, ds, nuisance_config(o.nuisance));
  json out = json::array();
  for (Indicator ind : {Indicator::kS, Indicator::kRInS0, Indicator::kRInS1}) {
    const CalibrationReport rep = calibrate(ds, nu, ind);
    out.push_back(to_json(rep));
    if (!o.out.empty())
      std::cout << "|gamma_" << to_string(rep.indicator) << "*| = " << rep.gamma_star_abs
                << "  (rho*^2 = " << rep.rho_star_sq << ")\n";
  }
  emit(o.out, out.dump(2) + "\n");
  return 0;
}

int run_mc(const Options& o) {
  std::vector<Method> methods;
  for (const auto& m : o.methods) methods.push_back(method_from_string(m));
  std::vector<GammaTriple> cells;
  if (o.confounding.empty()) {
    cells.push_back({single_gamma(o.gamma_s, "--gamma-s"), single_gamma(o.gamma_r0, "--gamma-r0"),
                     single_gamma(o.gamma_r1, "--gamma-r1")});
  } else {
    for (double g : o.confounding) cells.push_back({g, g, g});
  }
  const NuisanceConfig ncfg = nuisance_config(o.nuisance);
  MCTable all;
  for (const auto& g : cells) {
    Scenario sc;
    std::ostringstream cell;
    cell << "gamma=" << g.gamma_s;
    sc.label = o.label.empty() ? cell.str() : o.label;
    if (!o.confounding.empty() && !o.label.empty()) sc.label = o.label + ":" + cell.str();
    sc.dgp.n_r_target = o.n_r;
    sc.dgp.n_e_target = o.n_e;
    sc.dgp.gammas = g;
    sc.dgp.j2r_variant = o.j2r_variant;
    sc.dgp.null_covariates = o.null_covariates;
    sc.dgp.oracle_draws = o.oracle_draws;
    sc.nuisance = ncfg;
    sc.B = o.boot.B;
    sc.alpha = o.boot.alpha;
    sc.specs.clear();
    for (Method m : methods) {
      GammaTriple used{};
      if (m == Method::kTilting) used = g;
      if (m == Method::kJ2R) used = {g.gamma_s, g.gamma_r0, 0.0};
      sc.specs.push_back({m, used});
    }
    const MCTable t = run_mc_study(sc, o.reps, o.boot.seed, o.boot.threads);
    all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
    if (!o.out.empty()) {
      for (const auto& r : t.rows)
        std::cout << r.label << ' ' << to_string(r.spec.method) << ": bias=" << r.bias << " se=" << r.se
                  << " coverage=" << r.coverage << " width=" << r.width << '\n';
    }
  }
  emit(o.out, to_csv(all));
  return 0;
}

int report_error(const char* kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sensitivity analysis for externally controlled trials with intercurrent events", "ectsens"};
  app.require_subcommand(1);
  Options o;

  auto* simulate = app.add_subcommand("simulate", "Draw one dataset from the simulation design");
  simulate->add_option("--out", o.out, "Output CSV (default: standard output)");
  simulate->add_option("--n-r", o.n_r, "Target trial size")->capture_default_str();
  simulate->add_option("--n-e", o.n_e, "Target external-control size")->capture_default_str();
  simulate->add_option("--index", o.index, "Dataset index within the seed's stream")->capture_default_str();
  simulate->add_option("--seed", o.boot.seed, "Random seed")->capture_default_str();
  add_gamma_options(simulate, o, false);
  simulate->add_flag("--j2r-variant", o.j2r_variant, "Trial events independent of outcomes; post-event outcomes follow control");
  simulate->add_flag("--null-covariates", o.null_covariates, "Covariates pinned so that the true effect is zero");

  auto* fit = app.add_subcommand("fit", "Fit nuisance models and write them as JSON");
  add_data_options(fit, o.data);
  fit->add_option("--out", o.out, "Output JSON (default: standard output)");
  add_nuisance_options(fit, o.nuisance);

  auto* est = app.add_subcommand("estimate", "Point estimate with bootstrap interval");
  add_data_options(est, o.data);
  est->add_option("--out", o.out, "Output JSON (default: standard output)");
  est->add_option("--nuisance", o.nuisance_file, "Fitted nuisances from 'fit' (default: fit on --in)");
  est->add_option("--method", o.method, "tilting | j2r | primary | ps | om")
      ->check(CLI::IsMember({"tilting", "j2r", "primary", "ps", "om"}))
      ->capture_default_str();
  add_gamma_options(est, o, false);
  add_bootstrap_options(est, o.boot);
  add_nuisance_options(est, o.nuisance);

  auto* grid = app.add_subcommand("grid", "Estimates over a grid of sensitivity parameters (CSV)");
  add_data_options(grid, o.data);
  grid->add_option("--out", o.out, "Output CSV (default: standard output)");
  grid->add_option("--nuisance", o.nuisance_file, "Fitted nuisances from 'fit' (default: fit on --in)");
  grid->add_option("--method", o.method, "tilting | j2r")
      ->check(CLI::IsMember({"tilting", "j2r"}))
      ->capture_default_str();
  add_gamma_options(grid, o, true);
  add_bootstrap_options(grid, o.boot);
  add_nuisance_options(grid, o.nuisance);

  auto* cal = app.add_subcommand("calibrate", "Benchmark sensitivity-parameter magnitudes against covariates");
  add_data_options(cal, o.data);
  cal->add_option("--out", o.out, "Output JSON (default: standard output)");
  cal->add_option("--nuisance", o.nuisance_file, "Fitted nuisances from 'fit' (default: fit on --in)");
  add_nuisance_options(cal, o.nuisance);

  auto* mc = app.add_subcommand("mc", "Monte Carlo study over the simulation design (CSV)");
  app.set_config("--scenario", "", "Scenario file for mc: key = value lines under [mc] mirroring its flags");
  mc->fallthrough();
  mc->footer("  --scenario FILE             Scenario file: key = value lines under [mc] mirroring these flags;\n"
             "                              flags given on the command line override the file");
  mc->add_option("--out", o.out, "Output CSV (default: standard output)");
  mc->add_option("--label", o.label, "Row label");
  mc->add_option("--reps", o.reps, "Monte Carlo replicates")->check(CLI::PositiveNumber)->capture_default_str();
  mc->add_option("--methods", o.methods, "Estimators: tilting, j2r, primary, ps, om")
      ->delimiter(',')
      ->check(CLI::IsMember({"tilting", "j2r", "primary", "ps", "om"}))
      ->capture_default_str();
  mc->add_option("--n-r", o.n_r, "Target trial size")->capture_default_str();
  mc->add_option("--n-e", o.n_e, "Target external-control size")->capture_default_str();
  add_gamma_options(mc, o, false);
  mc->add_option("--confounding", o.confounding, "Common gamma values; one cell per value (overrides --gamma-*)")
      ->delimiter(',');
  mc->add_flag("--j2r-variant", o.j2r_variant, "Trial events independent of outcomes; post-event outcomes follow control");
  mc->add_flag("--null-covariates", o.null_covariates, "Covariates pinned so that the true effect is zero");
  mc->add_option("--oracle-draws", o.oracle_draws, "Draws for the true-effect oracle")->capture_default_str();
  add_bootstrap_options(mc, o.boot);
  add_nuisance_options(mc, o.nuisance);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*simulate) return run_simulate(o);
    if (*fit) return run_fit(o);
    if (*est) return run_estimate(o);
    if (*grid) return run_grid(o);
    if (*cal) return run_calibrate(o);
    if (*mc) return run_mc(o);
  } catch (const UsageError& e) {
    return report_error("usage", e.what(), kExitUsage);
  } catch (const GridSpecError& e) {
    return report_error("usage", e.what(), kExitUsage);
  } catch (const DataError& e) {
    return report_error("data", e.what(), kExitUsage);
  } catch (const TiltOverflow& e) {
    return report_error("tilt_overflow", e.what(), kExitFailure);
  } catch (const Error& e) {
    return report_error("numerical", e.what(), kExitFailure);
  } catch (const json::exception& e) {
    return report_error("data", e.what(), kExitUsage);
  }
  return kExitUsage;
}

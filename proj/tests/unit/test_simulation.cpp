#include <catch_amalgamated.hpp>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <map>
#include <numbers>

#include "ectsens/simulation.hpp"

using namespace ectsens;

TEST_CASE("covariate transform examples") {
  CHECK(z_transform(0.0) == Catch::Approx(-1.5 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(z_transform(0.0) == Catch::Approx(-1.06066).epsilon(1e-5));
  for (double b : {0.0, 1.0}) {
    const double x[] = {0.3, -0.2, 1.0, 2.0, b};
    CHECK(z_transform(std::span<const double>(x))[4] == b);
  }
}

TEST_CASE("mean of the transformed covariate matches quadrature") {
  auto f = [](double x) {
    const double z = x - 0.25;
    return z_transform(x) * std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  };
  const double oracle = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, -15.0, 15.0, 15, 1e-14);
  Rng rng = make_stream(61, 0);
  const RowMatrix x = draw_covariates(1'000'000, rng);
  double sum = 0.0, sq = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double z = z_transform(x(i, 0));
    sum += z;
    sq += z * z;
  }
  const double n = static_cast<double>(x.rows()), mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  CHECK(std::abs(mean - oracle) <= 3.0 * se);
}

TEST_CASE("intercept solver examples") {
  const std::vector<double> zeros(50, 0.0);
  CHECK(std::abs(solve_intercept(0.5, zeros)) < 1e-8);
  CHECK(solve_intercept(2.0 / 7.0, zeros) == Catch::Approx(std::log(0.4)).epsilon(1e-8));
  CHECK(solve_intercept(2.0 / 7.0, zeros) == Catch::Approx(-0.9163).epsilon(1e-4));
  CHECK_THROWS_AS(solve_intercept(1.0, zeros), ContractError);
  const std::vector<double> huge(10, 100.0);
  CHECK_THROWS_AS(solve_intercept(0.2, huge), NumericalError);
}

TEST_CASE("participation share over repeated draws") {
  double total = 0.0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const Draw d = generate(DGPConfig{.seed = 62}, k);
    total += static_cast<double>(d.data.n_trial()) / static_cast<double>(d.data.size());
  }
  const double mean = total / 100.0;
  CHECK(mean >= 0.27);
  CHECK(mean <= 0.30);
}

TEST_CASE("intercurrent-event rate is one half in each arm") {
  Rng rng = make_stream(63, 0);
  const Draw d = generate(DGPConfig{}, 100000, rng);
  for (int s : {0, 1}) {
    const double rate = static_cast<double>(d.data.count(s, 1)) / static_cast<double>(d.data.count(s));
    CHECK(rate >= 0.48);
    CHECK(rate <= 0.52);
  }
}

TEST_CASE("positive trial tilt makes high outcomes more likely to stop") {
  DGPConfig cfg;
  cfg.gammas = {0.0, 0.0, 1.5};
  Rng rng = make_stream(64, 0);
  const Draw d = generate(cfg, 50000, rng);
  double sy = 0, se = 0, syy = 0, see = 0, sye = 0, n = 0;
  for (const auto& u : d.latent) {
    if (u.s != 1) continue;
    const double e = 1.0 - u.r;
    sy += u.y1; se += e; syy += u.y1 * u.y1; see += e * e; sye += u.y1 * e; n += 1;
  }
  const double cov = sye / n - (sy / n) * (se / n);
  CHECK(cov > 0.0);
}

TEST_CASE("individual effects are one sixth of the summed transform") {
  Rng rng = make_stream(65, 0);
  const Draw d = generate(DGPConfig{}, 1000, rng);
  for (std::size_t i = 0; i < d.latent.size(); ++i) {
    const auto z = z_transform(d.data.x(i));
    const double sz = z[0] + z[1] + z[2] + z[3] + z[4];
    CHECK(d.latent[i].y1 - d.latent[i].y0 == Catch::Approx(sz / 6.0).margin(1e-12));
  }
}

TEST_CASE("observed outcome is the arm's potential outcome, missing after an event") {
  const Draw d = generate(DGPConfig{.seed = 66});
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    const auto& l = d.latent[i];
    CHECK(d.data.s(i) == l.s);
    CHECK(d.data.r(i) == l.r);
    if (l.r) CHECK(d.data.y(i) == (l.s ? l.y1 : l.y0));
    else CHECK(std::isnan(d.data.y(i)));
  }
}

TEST_CASE("true effect oracle") {
  const TrueTau t = true_tau(DGPConfig{}, 1'000'000);
  CHECK(std::abs(t.value - 0.13) <= 0.01);
  CHECK(t.mc_se < 0.002);
  DGPConfig neg;
  neg.gammas = {-1.0, 0.0, 0.0};
  CHECK(std::abs(true_tau(neg, 1'000'000).value - t.value) > 0.02);
  DGPConfig null_cfg;
  null_cfg.null_covariates = true;
  CHECK(true_tau(null_cfg, 200'000).value == 0.0);
}

TEST_CASE("unconfounded design: control outcome means agree across arms within covariate bins") {
  Rng rng = make_stream(67, 0);
  const Draw d = generate(DGPConfig{}, 400000, rng);
  struct Acc { double n = 0, s = 0, ss = 0; };
  std::map<std::pair<int, int>, Acc> bins;
  for (std::size_t i = 0; i < d.latent.size(); ++i) {
    const auto z = z_transform(d.data.x(i));
    const double sz = z[0] + z[1] + z[2] + z[3] + z[4];
    const int bin = static_cast<int>(std::floor(sz / 0.5));
    if (bin < -6 || bin > 6) continue;
    Acc& a = bins[{bin, d.latent[i].s}];
    a.n += 1; a.s += d.latent[i].y0; a.ss += d.latent[i].y0 * d.latent[i].y0;
  }
  int checked = 0;
  for (int bin = -6; bin <= 6; ++bin) {
    const Acc a = bins[{bin, 1}], b = bins[{bin, 0}];
    if (a.n < 500 || b.n < 500) continue;
    const double ma = a.s / a.n, mb = b.s / b.n;
    const double se = std::sqrt((a.ss / a.n - ma * ma) / a.n + (b.ss / b.n - mb * mb) / b.n);
    CHECK(std::abs(ma - mb) <= 3.0 * se);
    ++checked;
  }
  CHECK(checked >= 5);
}

TEST_CASE("identical seed reproduces the dataset bit for bit") {
  DGPConfig cfg;
  cfg.seed = 68;
  cfg.gammas = {0.3, -0.2, 0.1};
  const Draw a = generate(cfg, 3), b = generate(cfg, 3);
  REQUIRE(a.data.size() == b.data.size());
  CHECK(a.data.covariates() == b.data.covariates());
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    CHECK(a.data.r(i) == b.data.r(i));
    CHECK(a.latent[i].y0 == b.latent[i].y0);
  }
}

TEST_CASE("jump-to-reference variant ignores the trial tilt and post-event outcomes follow control") {
  DGPConfig tilted, flat;
  tilted.j2r_variant = flat.j2r_variant = true;
  tilted.gammas = {0.0, 0.0, 2.0};
  Rng ra = make_stream(69, 0), rb = make_stream(69, 0);
  const Draw a = generate(tilted, 20000, ra), b = generate(flat, 20000, rb);
  double oracle = 0.0, n1 = 0.0;
  for (std::size_t i = 0; i < a.latent.size(); ++i) {
    CHECK(a.latent[i].r == b.latent[i].r);
    CHECK(a.latent[i].y10 == a.latent[i].y0);
  }
  const Draw big = [&] {
    Rng rng = make_stream(tilted.seed, 0, stream::kOracle);
    return generate(tilted, 1'000'000, rng);
  }();
  for (const auto& u : big.latent) {
    if (u.s != 1) continue;
    oracle += u.r * (u.y1 - u.y0);
    n1 += 1;
  }
  CHECK(true_tau(tilted, 1'000'000, Estimand::kJumpToReference).value == Catch::Approx(oracle / n1).epsilon(1e-10));
}

TEST_CASE("Monte Carlo harness smoke run") {
  Scenario sc;
  sc.label = "smoke";
  sc.nuisance.k_grid = {1};
  sc.specs = {{Method::kPrimary, {}}, {Method::kOM, {}}};
  sc.B = 5;
  sc.dgp.oracle_draws = 100000;
  const MCTable t = run_mc_study(sc, 2, 7);
  REQUIRE(t.rows.size() == 2);
  for (const auto& r : t.rows) {
    CHECK(r.n_reps == 2);
    CHECK(r.mse >= r.bias * r.bias - 1e-12);
    CHECK(r.coverage >= 0.0);
    CHECK(r.coverage <= 1.0);
    CHECK(r.max_eif_residual <= 1e-10);
  }
  const std::string csv = to_csv(t);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(to_json(t).size() == 2);
  const MCTable again = run_mc_study(sc, 2, 7, 2);
  CHECK(again.rows[0].bias == t.rows[0].bias);
}

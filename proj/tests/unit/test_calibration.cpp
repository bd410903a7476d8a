#include <catch_amalgamated.hpp>

#include <random>

#include "ectsens/calibration.hpp"
#include "ectsens/simulation.hpp"

using namespace ectsens;

namespace {

// Participation depends on x1 and x2; x3 is pure noise.
Dataset indicator_sample(std::size_t n, std::uint64_t seed, double scale3 = 1.0, double shift3 = 0.0,
                         bool duplicate = false) {
  Rng rng = make_stream(seed, 0);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u;
  std::vector<Unit> units;
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = nd(rng), x2 = nd(rng), x3 = nd(rng);
    const int s = u(rng) < expit(-0.3 + 0.8 * x1 - 0.5 * x2);
    const int r = u(rng) < expit(0.2 + 0.4 * x2);
    std::vector<double> x{x1, x2, shift3 + scale3 * x3};
    if (duplicate) x.push_back(x1);
    units.push_back({x, s, r, r ? std::optional<double>(x1 + nd(rng)) : std::nullopt});
  }
  return Dataset(units);
}

}  // namespace

TEST_CASE("independent covariate explains nothing") {
  const Dataset ds = indicator_sample(10000, 51);
  CHECK(partial_rho2(ds, Indicator::kS, 2) <= 0.01);
  CHECK(partial_rho2(ds, Indicator::kS, 0) > 0.05);
}

TEST_CASE("a duplicated covariate has no partial contribution") {
  const Dataset ds = indicator_sample(5000, 52, 1.0, 0.0, true);
  CHECK(partial_rho2(ds, Indicator::kS, 3) == Catch::Approx(0.0).margin(1e-4));
  CHECK(partial_rho2(ds, Indicator::kS, 0) == Catch::Approx(0.0).margin(1e-4));
}

TEST_CASE("affine rescaling of a covariate does not change its partial variance") {
  const Dataset a = indicator_sample(10000, 53), b = indicator_sample(10000, 53, 7.5, -3.0);
  for (Indicator ind : {Indicator::kS, Indicator::kRInS0, Indicator::kRInS1})
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(std::abs(partial_rho2(a, ind, j) - partial_rho2(b, ind, j)) <= 1e-6);
}

TEST_CASE("zero-variance covariate gives zero with a warning") {
  std::vector<Unit> units;
  Rng rng = make_stream(54, 0);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 200; ++i) units.push_back({{nd(rng), 1.0}, i % 3 == 0, 1, nd(rng)});
  std::vector<Warning> w;
  CHECK(partial_rho2(Dataset(units), Indicator::kS, 1, FeatureSet::kRaw, &w) == 0.0);
  REQUIRE(w.size() == 1);
  CHECK(w[0] == Warning::kDegenerateCovariate);
}

TEST_CASE("rho star transform") {
  CHECK(rho_star({0.0, 0.0}) == 0.0);
  CHECK(rho_star({0.1, 0.5}) == 1.0);
  CHECK(rho_star({0.11}) == Catch::Approx(0.1236).epsilon(1e-3));
  CHECK(rho_star({0.11}) == Catch::Approx(0.11 / 0.89).epsilon(1e-15));
  CHECK_THROWS_AS(rho_star({1.0}), ContractError);
  CHECK_THROWS_AS(rho_star({}), ContractError);
}

TEST_CASE("calibrated gamma examples and errors") {
  CHECK(calibrate_gamma(0.0, 1.0, 0.3) == 0.0);
  CHECK(calibrate_gamma(0.5, 1.0, 0.0) == Catch::Approx(1.8138).epsilon(1e-4));
  CHECK(calibrate_gamma(0.5, 1.0, 0.0) == Catch::Approx(std::numbers::pi / std::sqrt(3.0)).epsilon(1e-14));
  CHECK_THROWS_AS(calibrate_gamma(1.0, 1.0, 0.0), ContractError);
  CHECK_THROWS_AS(calibrate_gamma(0.2, 0.0, 0.0), ContractError);
}

TEST_CASE("calibrated gamma is monotone in each argument") {
  const std::vector<double> rho{0.01, 0.1, 0.3, 0.5, 0.9}, sig{0.25, 0.5, 1.0, 2.0, 4.0}, vm{0.0, 0.1, 0.5, 1.0, 3.0};
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = 0; b < 5; ++b)
      for (std::size_t c = 0; c < 5; ++c) {
        const double g = calibrate_gamma(rho[a], sig[b], vm[c]);
        if (a + 1 < 5) CHECK(calibrate_gamma(rho[a + 1], sig[b], vm[c]) > g);
        if (b + 1 < 5) CHECK(calibrate_gamma(rho[a], sig[b + 1], vm[c]) < g);
        if (c + 1 < 5) CHECK(calibrate_gamma(rho[a], sig[b], vm[c + 1]) > g);
      }
}

TEST_CASE("the implied share of variance inverts the calibration") {
  for (double r : {0.0, 0.02, 0.11, 0.5, 0.95})
    for (double s2 : {0.3, 1.0, 12.0})
      for (double v : {0.0, 0.4, 2.0})
        CHECK(std::abs(implied_rho2(calibrate_gamma(r, s2, v), s2, v) - r) <= 1e-12);
}

TEST_CASE("full report on a benchmark draw") {
  const Dataset ds = generate(DGPConfig{.seed = 55}).data;
  const NuisanceSet nu = fit_nuisances(ds);
  for (Indicator ind : {Indicator::kS, Indicator::kRInS0, Indicator::kRInS1}) {
    const CalibrationReport r = calibrate(ds, nu, ind);
    REQUIRE(r.per_covariate_rho2.size() == 5);
    for (double v : r.per_covariate_rho2) {
      CHECK(v >= 0.0);
      CHECK(v < 1.0);
    }
    CHECK(r.sigma_y_sq > 0.0);
    CHECK(r.var_ms >= 0.0);
    CHECK(std::isfinite(r.gamma_star_abs));
    CHECK(r.gamma_star_abs >= 0.0);
    const auto j = to_json(r);
    CHECK(j.contains("gamma_star_abs"));
  }
}

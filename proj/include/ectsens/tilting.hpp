#pragma once

// Exponentially tilted outcome moments under a Gaussian mixture and the
// augmentation kernels built from them.
//
//   c(x; g) = E{ e^{gY} | x }     = sum_k w_k exp(mu_k g + g^2 s_k^2 / 2)
//   b(x; g) = E{ Y e^{gY} | x }   = sum_k w_k (mu_k + g s_k^2) exp(...)

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "ectsens/error.hpp"
#include "ectsens/mixture.hpp"
#include "ectsens/nuisance.hpp"

namespace ectsens {

struct GammaTriple {
  double gamma_s = 0.0;
  double gamma_r0 = 0.0;
  double gamma_r1 = 0.0;

  bool operator==(const GammaTriple&) const = default;
  bool is_zero() const { return gamma_s == 0.0 && gamma_r0 == 0.0 && gamma_r1 == 0.0; }
};

inline constexpr double kMaxLogValue = 700.0;

struct TiltedMoments {
  double c = 1.0;
  double b = 0.0;

  double mean() const { return b / c; }
};

namespace detail {

inline double checked_exp(double log_value, double gamma) {
  if (!(log_value <= kMaxLogValue)) throw TiltOverflow(gamma);
  return std::exp(log_value);
}

}  // namespace detail

/// c and b in log space. b uses a signed log-sum-exp since mu_k + g s_k^2
/// can take either sign.
inline TiltedMoments tilted_moments(const ConditionalMixture& m, double gamma) {
  if (gamma == 0.0) return {1.0, m.mean()};
  const std::size_t k = m.weights.size();
  double top = -std::numeric_limits<double>::infinity();
  std::vector<double> log_terms(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double s2 = m.sigmas[j] * m.sigmas[j];
    log_terms[j] = std::log(m.weights[j]) + m.means[j] * gamma + 0.5 * gamma * gamma * s2;
    top = std::max(top, log_terms[j]);
  }
  double c_scaled = 0.0, b_scaled = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double w = std::exp(log_terms[j] - top);
    c_scaled += w;
    b_scaled += w * (m.means[j] + gamma * m.sigmas[j] * m.sigmas[j]);
  }
  const double log_c = top + std::log(c_scaled);
  TiltedMoments out;
  out.c = detail::checked_exp(log_c, gamma);
  if (b_scaled != 0.0) {
    const double log_abs_b = top + std::log(std::abs(b_scaled));
    out.b = std::copysign(detail::checked_exp(log_abs_b, gamma), b_scaled);
  } else {
    out.b = 0.0;
  }
  return out;
}

inline double tilted_c(const ConditionalMixture& m, double gamma) { return tilted_moments(m, gamma).c; }
inline double tilted_b(const ConditionalMixture& m, double gamma) { return tilted_moments(m, gamma).b; }

inline double tilted_c(const MixtureOutcomeModel& model, std::span<const double> x, double gamma) {
  return tilted_c(model.at(x), gamma);
}
inline double tilted_b(const MixtureOutcomeModel& model, std::span<const double> x, double gamma) {
  return tilted_b(model.at(x), gamma);
}

struct Composite {
  double d;
  double e;

  double ratio() const { return d / e; }
};

/// d and e under the external-control outcome law.
inline Composite composite_de(const UnitNuisance& u, double gamma_r0, double gamma_s) {
  const TiltedMoments ms = tilted_moments(u.outcome_0, gamma_s);
  const TiltedMoments mr = tilted_moments(u.outcome_0, gamma_r0);
  const TiltedMoments msr = tilted_moments(u.outcome_0, gamma_s + gamma_r0);
  const double p = u.pi_r0;
  return {p * ms.b * mr.c + (1.0 - p) * msr.b, p * ms.c * mr.c + (1.0 - p) * msr.c};
}

inline Composite composite_de(const NuisanceSet& nu, std::span<const double> x, double gamma_r0, double gamma_s) {
  return composite_de(nu.at(x), gamma_r0, gamma_s);
}

/// Trial-arm augmentation; only defined for observed trial outcomes.
inline double aug_g(const UnitNuisance& u, int s, int r, std::optional<double> y, double gamma_r1) {
  if (s != 1 || r != 1) throw ContractError("aug_g requires a trial unit with r=1");
  if (!y) throw ContractError("aug_g requires an observed outcome");
  const TiltedMoments m = tilted_moments(u.outcome_1, gamma_r1);
  const double w = detail::checked_exp(gamma_r1 * *y, gamma_r1);
  return *y * w / m.c - m.b * w / (m.c * m.c);
}

/// External-control augmentation. Units with r=0 only use the x-level terms.
inline double aug_h(const UnitNuisance& u, int s, int r, std::optional<double> y, double gamma_r0,
                    double gamma_s) {
  if (s != 0) throw ContractError("aug_h requires an external-control unit");
  if (r == 1 && !y) throw ContractError("aug_h requires an observed outcome when r=1");
  const TiltedMoments ms = tilted_moments(u.outcome_0, gamma_s);
  const TiltedMoments mr = tilted_moments(u.outcome_0, gamma_r0);
  const TiltedMoments msr = tilted_moments(u.outcome_0, gamma_s + gamma_r0);
  const double p = u.pi_r0;
  const double d = p * ms.b * mr.c + (1.0 - p) * msr.b;
  const double e = p * ms.c * mr.c + (1.0 - p) * msr.c;
  const double m1 = ms.b * mr.c - msr.b;
  const double m2 = ms.c * mr.c - msr.c;
  const double dr = static_cast<double>(r) - p;
  double h = dr * m1 / e - dr * d * m2 / (e * e);
  if (r == 1) {
    const double yy = *y;
    const double q = u.q_r0();
    const double es = detail::checked_exp(gamma_s * yy, gamma_s);
    const double er = detail::checked_exp(gamma_r0 * yy, gamma_r0);
    const double esr = detail::checked_exp((gamma_s + gamma_r0) * yy, gamma_s + gamma_r0);
    const double m3 = ms.b * er + mr.c * (yy * es - ms.b) + q * yy * esr;
    const double m4 = ms.c * er + mr.c * (es - ms.c) + q * esr;
    h += m3 / e - d * m4 / (e * e);
  }
  return h;
}

}  // namespace ectsens

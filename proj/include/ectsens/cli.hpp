#pragma once

// Helpers behind the command-line tool: sensitivity grid parsing.

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "ectsens/error.hpp"
#include "ectsens/tilting.hpp"

namespace ectsens {

/// Thrown for malformed grid specifications.
class GridSpecError : public ContractError {
 public:
  using ContractError::ContractError;
};

namespace detail {

inline double parse_grid_number(const std::string& tok, const std::string& spec) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw GridSpecError("invalid grid '" + spec + "': '" + tok + "' is not a number");
  }
  if (used != tok.size() || !std::isfinite(v)) throw GridSpecError("invalid grid '" + spec + "': '" + tok + "' is not a number");
  return v;
}

}  // namespace detail

/// One axis of a grid: "start:stop:step" (inclusive of stop) or a comma list.
inline std::vector<double> parse_axis(const std::string& spec) {
  if (spec.empty()) throw GridSpecError("invalid grid: empty specification");
  std::vector<double> out;
  if (spec.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ':')) parts.push_back(tok);
    if (parts.size() != 3) throw GridSpecError("invalid grid '" + spec + "': expected start:stop:step");
    const double start = detail::parse_grid_number(parts[0], spec);
    const double stop = detail::parse_grid_number(parts[1], spec);
    const double step = detail::parse_grid_number(parts[2], spec);
    if (step <= 0.0) throw GridSpecError("invalid grid '" + spec + "': step must be positive");
    if (stop < start) throw GridSpecError("invalid grid '" + spec + "': stop below start");
    const double span = (stop - start) / step;
    if (span > 1e5) throw GridSpecError("invalid grid '" + spec + "': too many points");
    const auto n = static_cast<std::size_t>(std::floor(span + 1e-9)) + 1;
    for (std::size_t k = 0; k < n; ++k) {
      double v = start + static_cast<double>(k) * step;
      if (std::abs(v) < 1e-9 * step) v = 0.0;
      out.push_back(v);
    }
    return out;
  }
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(detail::parse_grid_number(tok, spec));
  if (out.empty()) throw GridSpecError("invalid grid '" + spec + "': no values");
  return out;
}

/// Cartesian product, gamma_s slowest and gamma_r1 fastest.
inline std::vector<GammaTriple> expand_grid(const std::vector<double>& gs, const std::vector<double>& gr0,
                                            const std::vector<double>& gr1) {
  if (gs.empty() || gr0.empty() || gr1.empty()) throw GridSpecError("invalid grid: an axis has no values");
  std::vector<GammaTriple> out;
  out.reserve(gs.size() * gr0.size() * gr1.size());
  for (double a : gs)
    for (double b : gr0)
      for (double c : gr1) out.push_back({a, b, c});
  return out;
}

}  // namespace ectsens

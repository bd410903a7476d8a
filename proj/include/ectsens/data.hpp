#pragma once

// Observed-data representation for a single-arm trial (S=1) pooled with
// external controls (S=0). R=1 marks units without an intercurrent event;
// only those carry an outcome.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ectsens/error.hpp"

namespace ectsens {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Unit {
  std::vector<double> x;
  int s = 0;
  int r = 0;
  std::optional<double> y;
};

/// Read-only view of one row of a Dataset.
struct UnitView {
  std::span<const double> x;
  int s;
  int r;
  std::optional<double> y;
};

class Dataset {
 public:
  Dataset() = default;

  /// Validates every invariant; throws DataError naming the first offending row
  /// (1-based).
  Dataset(const std::vector<Unit>& units) {
    if (units.empty()) throw DataError("dataset is empty");
    p_ = units.front().x.size();
    x_.resize(static_cast<Eigen::Index>(units.size()), static_cast<Eigen::Index>(p_));
    s_.reserve(units.size());
    r_.reserve(units.size());
    y_.reserve(units.size());
    for (std::size_t i = 0; i < units.size(); ++i) {
      const Unit& u = units[i];
      check_row(u, i + 1);
      for (std::size_t j = 0; j < p_; ++j) x_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = u.x[j];
      s_.push_back(u.s);
      r_.push_back(u.r);
      y_.push_back(u.y.value_or(std::numeric_limits<double>::quiet_NaN()));
    }
    count();
  }

  /// Column form used by the simulator and bootstrap; y entries for r=0 rows
  /// are ignored (stored as NaN).
  Dataset(RowMatrix x, std::vector<int> s, std::vector<int> r, std::vector<double> y)
      : x_(std::move(x)), s_(std::move(s)), r_(std::move(r)), y_(std::move(y)) {
    p_ = static_cast<std::size_t>(x_.cols());
    const auto n = static_cast<std::size_t>(x_.rows());
    if (n == 0) throw DataError("dataset is empty");
    if (s_.size() != n || r_.size() != n || y_.size() != n)
      throw DataError("column lengths disagree");
    for (std::size_t i = 0; i < n; ++i) {
      if (r_[i] == 0) y_[i] = std::numeric_limits<double>::quiet_NaN();
      Unit u{{}, s_[i], r_[i], r_[i] == 1 ? std::optional<double>(y_[i]) : std::nullopt};
      u.x.assign(x_.row(static_cast<Eigen::Index>(i)).data(),
                 x_.row(static_cast<Eigen::Index>(i)).data() + p_);
      check_row(u, i + 1);
    }
    count();
  }

  std::size_t size() const noexcept { return s_.size(); }
  std::size_t p() const noexcept { return p_; }
  std::size_t n_trial() const noexcept { return n_trial_; }
  std::size_t n_external() const noexcept { return size() - n_trial_; }

  int s(std::size_t i) const { return s_[i]; }
  int r(std::size_t i) const { return r_[i]; }
  /// Outcome; NaN when r(i)==0.
  double y(std::size_t i) const { return y_[i]; }
  std::span<const double> x(std::size_t i) const {
    return {x_.row(static_cast<Eigen::Index>(i)).data(), p_};
  }
  const RowMatrix& covariates() const noexcept { return x_; }

  UnitView unit(std::size_t i) const {
    return {x(i), s_[i], r_[i], r_[i] == 1 ? std::optional<double>(y_[i]) : std::nullopt};
  }

  /// Number of units in stratum (s, r); r absent means both.
  std::size_t count(int s, std::optional<int> r = std::nullopt) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < size(); ++i)
      if (s_[i] == s && (!r || r_[i] == *r)) ++c;
    return c;
  }

  /// Estimation needs both (S=1,R=1) and (S=0,R=1) units.
  bool estimable() const { return count(1, 1) > 0 && count(0, 1) > 0; }

  /// Subset by row indices (rows may repeat).
  Dataset subset(std::span<const std::size_t> rows) const {
    RowMatrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p_));
    std::vector<int> s(rows.size()), r(rows.size());
    std::vector<double> y(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      x.row(static_cast<Eigen::Index>(k)) = x_.row(static_cast<Eigen::Index>(rows[k]));
      s[k] = s_[rows[k]];
      r[k] = r_[rows[k]];
      y[k] = y_[rows[k]];
    }
    return Dataset(std::move(x), std::move(s), std::move(r), std::move(y));
  }

  /// Same units with every observed outcome shifted by kappa.
  Dataset shifted_outcomes(double kappa) const {
    std::vector<double> y = y_;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (r_[i] == 1) y[i] += kappa;
    return Dataset(x_, s_, r_, std::move(y));
  }

 private:
  void check_row(const Unit& u, std::size_t row) const {
    const std::string where = " at row " + std::to_string(row);
    if (u.x.size() != p_) throw DataError("covariate count mismatch" + where);
    if (u.s != 0 && u.s != 1) throw DataError("s out of {0,1}" + where);
    if (u.r != 0 && u.r != 1) throw DataError("r out of {0,1}" + where);
    for (double v : u.x)
      if (!std::isfinite(v)) throw DataError("non-finite covariate" + where);
    if (u.r == 0 && u.y) throw DataError("outcome present after intercurrent event" + where);
    if (u.r == 1 && !u.y) throw DataError("outcome missing without intercurrent event" + where);
    if (u.r == 1 && !std::isfinite(*u.y)) throw DataError("non-finite outcome" + where);
  }

  void count() {
    n_trial_ = 0;
    for (int v : s_) n_trial_ += static_cast<std::size_t>(v == 1);
  }

  RowMatrix x_;
  std::vector<int> s_;
  std::vector<int> r_;
  std::vector<double> y_;
  std::size_t p_ = 0;
  std::size_t n_trial_ = 0;
};

/// Index view over units matching (s, r).
class StratumView {
 public:
  StratumView(const Dataset& ds, int s, std::optional<int> r = std::nullopt) : ds_(&ds) {
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.s(i) == s && (!r || ds.r(i) == *r)) rows_.push_back(i);
  }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }
  const std::vector<std::size_t>& rows() const noexcept { return rows_; }
  UnitView operator[](std::size_t k) const { return ds_->unit(rows_[k]); }

 private:
  const Dataset* ds_;
  std::vector<std::size_t> rows_;
};

inline StratumView stratify(const Dataset& ds, int s, std::optional<int> r = std::nullopt) {
  return StratumView(ds, s, r);
}

// ---------------------------------------------------------------------------
// CSV

/// Column names: covariates in order, then the S, R and Y columns.
struct Schema {
  std::vector<std::string> covariates;
  std::string s = "s";
  std::string r = "r";
  std::string y = "y";
  std::vector<std::string> missing_tokens{"", "NA"};

  /// Parses "x1,...,xp,s,r,y": the last three names are S, R, Y.
  static Schema parse(const std::string& spec) {
    std::vector<std::string> names;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) names.push_back(trim(tok));
    if (names.size() < 4) throw DataError("schema needs at least one covariate plus s,r,y");
    Schema out;
    out.y = names.back();
    names.pop_back();
    out.r = names.back();
    names.pop_back();
    out.s = names.back();
    names.pop_back();
    out.covariates = std::move(names);
    return out;
  }

  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n\"");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n\"");
    return s.substr(b, e - b + 1);
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(Schema::trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(Schema::trim(cur));
  return out;
}

inline double parse_number(const std::string& cell, const std::string& what, std::size_t row) {
  try {
    std::size_t used = 0;
    double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw DataError("cannot parse " + what + " '" + cell + "' at row " + std::to_string(row));
  }
}

inline int parse_binary(const std::string& cell, const std::string& what, std::size_t row) {
  double v = parse_number(cell, what, row);
  if (v != 0.0 && v != 1.0) throw DataError(what + " out of {0,1} at row " + std::to_string(row));
  return static_cast<int>(v);
}

}  // namespace detail

/// Reads a CSV with a header row. With an empty schema covariate list, every
/// column other than s/r/y is taken as a covariate in file order.
inline Dataset read_dataset(std::istream& in, Schema schema = {}) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("missing header row");
  const auto header = detail::split_csv_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < header.size(); ++j) col[header[j]] = j;
  auto find = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw DataError("column '" + name + "' not found in header");
    return it->second;
  };
  const std::size_t cs = find(schema.s), cr = find(schema.r), cy = find(schema.y);
  if (schema.covariates.empty())
    for (const auto& h : header)
      if (h != schema.s && h != schema.r && h != schema.y) schema.covariates.push_back(h);
  if (schema.covariates.empty()) throw DataError("no covariate columns");
  std::vector<std::size_t> cx;
  for (const auto& name : schema.covariates) cx.push_back(find(name));

  auto is_missing = [&](const std::string& cell) {
    for (const auto& t : schema.missing_tokens)
      if (cell == t) return true;
    return false;
  };

  std::vector<Unit> units;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(cells.size()) + " at row " + std::to_string(row));
    Unit u;
    for (std::size_t j = 0; j < cx.size(); ++j)
      u.x.push_back(detail::parse_number(cells[cx[j]], schema.covariates[j], row));
    u.s = detail::parse_binary(cells[cs], "s", row);
    u.r = detail::parse_binary(cells[cr], "r", row);
    if (!is_missing(cells[cy])) u.y = detail::parse_number(cells[cy], "y", row);
    if (u.r == 0 && u.y) throw DataError("outcome present after intercurrent event at row " + std::to_string(row));
    if (u.r == 1 && !u.y) throw DataError("outcome missing without intercurrent event at row " + std::to_string(row));
    units.push_back(std::move(u));
  }
  if (units.empty()) throw DataError("no data rows");
  return Dataset(units);
}

inline Dataset load_dataset(const std::string& path, Schema schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_dataset(in, std::move(schema));
}

/// Writes x1..xp,s,r,y with an empty cell for missing outcomes.
inline void write_dataset(std::ostream& out, const Dataset& ds,
                          const std::vector<std::string>& names = {}) {
  out << std::setprecision(17);
  for (std::size_t j = 0; j < ds.p(); ++j)
    out << (j < names.size() ? names[j] : "x" + std::to_string(j + 1)) << ',';
  out << "s,r,y\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.x(i)) out << v << ',';
    out << ds.s(i) << ',' << ds.r(i) << ',';
    if (ds.r(i) == 1) out << ds.y(i);
    out << '\n';
  }
}

/// Stratum counts and covariate means, for the CLI's dataset summary.
inline nlohmann::json summarize(const Dataset& ds) {
  nlohmann::json j;
  j["n"] = ds.size();
  j["n_r"] = ds.n_trial();
  j["n_e"] = ds.n_external();
  j["p"] = ds.p();
  for (int s : {0, 1})
    for (int r : {0, 1})
      j["strata"]["s" + std::to_string(s) + "_r" + std::to_string(r)] = ds.count(s, r);
  Eigen::VectorXd means = ds.covariates().colwise().mean();
  j["covariate_means"] = std::vector<double>(means.data(), means.data() + means.size());
  return j;
}

}  // namespace ectsens

#pragma once

// Pearson chi-square tests on binned counts.

#include <algorithm>
#include <cstdint>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "ringroute/error.hpp"

namespace ringroute {

struct ChiSquare {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  int bins = 0;  // after pooling
};

inline double chi_square_sf(double x, int dof) {
  require(dof >= 1, "chi-square needs at least one degree of freedom");
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), x));
}

// Goodness of fit of counts against probabilities. probs[i] is the mass of
// bin i, and the last bin takes the remaining mass 1 - sum of the others.
// Adjacent bins are pooled from the tail until each expected count reaches
// min_expected.
inline ChiSquare chi_square_gof(const std::vector<std::int64_t>& counts, std::vector<double> probs,
                                double min_expected = 5.0) {
  require(counts.size() == probs.size() && counts.size() >= 2, "need matching bins, at least two");
  double head = 0.0;
  for (std::size_t i = 0; i + 1 < probs.size(); ++i) head += probs[i];
  probs.back() = std::max(0.0, 1.0 - head);
  double n = 0.0;
  for (auto c : counts) n += static_cast<double>(c);
  require(n > 0, "no observations");

  std::vector<double> obs, expct;
  double o = 0.0, e = 0.0;
  for (std::size_t i = counts.size(); i-- > 0;) {
    o += static_cast<double>(counts[i]);
    e += probs[i] * n;
    if (e >= min_expected) {
      obs.push_back(o);
      expct.push_back(e);
      o = e = 0.0;
    }
  }
  if (e > 0.0 || o > 0.0) {
    if (expct.empty()) {
      obs.push_back(o);
      expct.push_back(e);
    } else {
      obs.back() += o;
      expct.back() += e;
    }
  }
  ChiSquare out;
  out.bins = static_cast<int>(obs.size());
  out.dof = out.bins - 1;
  require(out.dof >= 1, "too few populated bins for a chi-square test");
  for (std::size_t i = 0; i < obs.size(); ++i) {
    require(expct[i] > 0.0, "observation in a bin with zero expected mass");
    out.statistic += (obs[i] - expct[i]) * (obs[i] - expct[i]) / expct[i];
  }
  out.p_value = chi_square_sf(out.statistic, out.dof);
  return out;
}

// Homogeneity of several histograms over the same bins. Columns are pooled
// from the tail until every expected cell count reaches min_expected.
inline ChiSquare chi_square_homogeneity(const std::vector<std::vector<std::int64_t>>& rows,
                                        double min_expected = 5.0) {
  require(rows.size() >= 2, "homogeneity needs at least two samples");
  const std::size_t bins = rows[0].size();
  for (const auto& r : rows) require(r.size() == bins, "histograms differ in bin count");
  std::vector<double> row_tot(rows.size(), 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (auto c : rows[r]) row_tot[r] += static_cast<double>(c);
  for (double t : row_tot) total += t;
  require(total > 0, "no observations");
  const double min_share = *std::min_element(row_tot.begin(), row_tot.end()) / total;

  std::vector<std::vector<double>> cols;  // pooled columns, each of size rows
  std::vector<double> acc(rows.size(), 0.0);
  double acc_tot = 0.0;
  for (std::size_t b = bins; b-- > 0;) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      acc[r] += static_cast<double>(rows[r][b]);
      acc_tot += static_cast<double>(rows[r][b]);
    }
    if (acc_tot * min_share >= min_expected) {
      cols.push_back(acc);
      acc.assign(rows.size(), 0.0);
      acc_tot = 0.0;
    }
  }
  if (acc_tot > 0.0) {
    if (cols.empty()) {
      cols.push_back(acc);
    } else {
      for (std::size_t r = 0; r < rows.size(); ++r) cols.back()[r] += acc[r];
    }
  }
  ChiSquare out;
  out.bins = static_cast<int>(cols.size());
  out.dof = (out.bins - 1) * static_cast<int>(rows.size() - 1);
  require(out.dof >= 1, "too few populated bins for a homogeneity test");
  for (const auto& col : cols) {
    double ct = 0.0;
    for (double c : col) ct += c;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double e = row_tot[r] * ct / total;
      out.statistic += (col[r] - e) * (col[r] - e) / e;
    }
  }
  out.p_value = chi_square_sf(out.statistic, out.dof);
  return out;
}

}  // namespace ringroute

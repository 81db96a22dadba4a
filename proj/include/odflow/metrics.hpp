#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "odflow/common.hpp"

namespace odflow {

/// Flow-magnitude bins, right-open. Values >= the last boundary fall into an
/// overflow bin that is reported separately and never enters the bin mean.
struct BinSpec {
  std::vector<double> boundaries{0.0, 10.0, 100.0, 1000.0, 10000.0};

  std::size_t n_bins() const { return boundaries.size() - 1; }

  void validate() const {
    if (boundaries.size() < 2) throw DataError("BinSpec: need at least one bin");
    for (std::size_t i = 1; i < boundaries.size(); ++i)
      if (!(boundaries[i] > boundaries[i - 1]))
        throw DataError("BinSpec: boundaries must be strictly increasing");
  }

  /// Bin index of a ground-truth value; n_bins() for the overflow bin,
  /// npos-like -1 never returned (values below the first boundary clamp into
  /// bin 0, which matters only for negative ground truth and cannot occur
  /// for flows).
  std::size_t bin_of(double y) const {
    for (std::size_t b = 1; b + 1 < boundaries.size(); ++b)
      if (y < boundaries[b]) return b - 1;
    if (y < boundaries.back()) return boundaries.size() - 2;
    return n_bins();  // overflow
  }
};

inline void require_same_length(const std::vector<double>& y, const std::vector<double>& yhat) {
  if (y.size() != yhat.size())
    throw DataError("metric: length mismatch (" + std::to_string(y.size()) + " vs " +
                    std::to_string(yhat.size()) + ")");
}

inline double mae(const std::vector<double>& y, const std::vector<double>& yhat) {
  require_same_length(y, yhat);
  if (y.empty()) throw DataError("mae: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - yhat[i]);
  return s / static_cast<double>(y.size());
}

/// Per-bin MAE (bins decided by ground truth); empty bins are absent.
inline std::vector<std::optional<double>> binned_mae(const std::vector<double>& y,
                                                     const std::vector<double>& yhat,
                                                     const BinSpec& bins) {
  require_same_length(y, yhat);
  bins.validate();
  std::vector<double> sums(bins.n_bins() + 1, 0.0);
  std::vector<std::size_t> counts(bins.n_bins() + 1, 0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t b = bins.bin_of(y[i]);
    sums[b] += std::abs(y[i] - yhat[i]);
    counts[b] += 1;
  }
  std::vector<std::optional<double>> out(bins.n_bins() + 1);
  for (std::size_t b = 0; b <= bins.n_bins(); ++b)
    if (counts[b] > 0) out[b] = sums[b] / static_cast<double>(counts[b]);
  return out;
}

/// Mean of the per-bin MAEs over the standard (non-overflow) bins that are
/// non-empty.
inline double bin_mean_mae(const std::vector<double>& y, const std::vector<double>& yhat,
                           const BinSpec& bins, bool* had_empty_bin = nullptr) {
  auto per_bin = binned_mae(y, yhat, bins);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t b = 0; b < bins.n_bins(); ++b) {
    if (per_bin[b].has_value()) {
      sum += *per_bin[b];
      ++present;
    }
  }
  if (had_empty_bin != nullptr) *had_empty_bin = present < bins.n_bins();
  if (present == 0) throw DataError("bin_mean_mae: all bins empty");
  return sum / static_cast<double>(present);
}

/// MAPE (percent) over the members of one bin; y = 0 entries are excluded
/// (division by the ground truth) and counted. Empty bin -> absent.
inline std::optional<double> mape(const std::vector<double>& y, const std::vector<double>& yhat,
                                  const BinSpec& bins, std::size_t bin,
                                  std::size_t* excluded_zero_y = nullptr) {
  require_same_length(y, yhat);
  double s = 0.0;
  std::size_t count = 0, excluded = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (bins.bin_of(y[i]) != bin) continue;
    if (y[i] == 0.0) {
      ++excluded;
      continue;
    }
    s += std::abs((y[i] - yhat[i]) / y[i]);
    ++count;
  }
  if (excluded_zero_y != nullptr) *excluded_zero_y = excluded;
  if (count == 0) return std::nullopt;
  return 100.0 * s / static_cast<double>(count);
}

/// Sorensen similarity index, with a y = yhat = 0 term counting as perfect
/// agreement (1).
inline double ssi(const std::vector<double>& y, const std::vector<double>& yhat) {
  require_same_length(y, yhat);
  if (y.empty()) throw DataError("ssi: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double a = y[i], b = std::max(yhat[i], 0.0);
    s += (a + b) == 0.0 ? 1.0 : 2.0 * std::min(a, b) / (a + b);
  }
  return s / static_cast<double>(y.size());
}

/// Common part of commuters. Both totals zero -> 1 (vacuous agreement).
inline double cpc(const std::vector<double>& y, const std::vector<double>& yhat,
                  bool* vacuous = nullptr) {
  require_same_length(y, yhat);
  double common = 0.0, total_y = 0.0, total_yhat = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double b = std::max(yhat[i], 0.0);
    common += std::min(y[i], b);
    total_y += y[i];
    total_yhat += b;
  }
  if (vacuous != nullptr) *vacuous = (total_y + total_yhat) == 0.0;
  if (total_y + total_yhat == 0.0) return 1.0;
  return 2.0 * common / (total_y + total_yhat);
}

/// Common part of links: shared positive support. Both supports empty -> 1.
inline double cpl(const std::vector<double>& y, const std::vector<double>& yhat,
                  bool* vacuous = nullptr) {
  require_same_length(y, yhat);
  double common = 0.0, pos_y = 0.0, pos_yhat = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool a = y[i] > 0.0, b = yhat[i] > 0.0;
    common += (a && b) ? 1.0 : 0.0;
    pos_y += a ? 1.0 : 0.0;
    pos_yhat += b ? 1.0 : 0.0;
  }
  if (vacuous != nullptr) *vacuous = (pos_y + pos_yhat) == 0.0;
  if (pos_y + pos_yhat == 0.0) return 1.0;
  return 2.0 * common / (pos_y + pos_yhat);
}

/// Continuous maximum-likelihood tail exponent: 1 + n / sum(ln(x / x_min))
/// over x >= x_min. Needs at least 10 tail points.
inline double powerlaw_exponent(const std::vector<double>& values, double x_min) {
  if (!(x_min > 0.0)) throw DataError("powerlaw_exponent: x_min must be > 0");
  double log_sum = 0.0;
  std::size_t n_tail = 0;
  for (double v : values) {
    if (v < x_min) continue;
    log_sum += std::log(v / x_min);
    ++n_tail;
  }
  if (n_tail < 10)
    throw DataError("powerlaw_exponent: only " + std::to_string(n_tail) +
                    " tail points (need >= 10)");
  if (!(log_sum > 0.0))
    throw ComputeError("powerlaw_exponent: degenerate tail (all values at x_min)");
  return 1.0 + static_cast<double>(n_tail) / log_sum;
}

/// Full goodness-of-fit report for one prediction vector on one edge set.
struct MetricsReport {
  double mae_total = 0.0;
  std::vector<std::optional<double>> mae_bins;   // 4 standard bins
  double bin_mean = 0.0;                         // mean of non-empty standard bins
  std::vector<std::optional<double>> mape_bins;  // 4 standard bins
  double ssi = 0.0;
  double cpc = 0.0;
  double cpl = 0.0;
  std::size_t n_edges = 0;
  std::vector<std::size_t> n_per_bin;  // 4 standard bins + overflow
  std::optional<double> mae_overflow;  // y >= top boundary, reported separately
  std::size_t clipped_predictions = 0;
  std::size_t mape_excluded_zero_y = 0;
  bool had_empty_bin = false;
};

/// Computes every metric of the suite. Predictions are clipped at 0 first.
inline MetricsReport compute_metrics(const std::vector<double>& y,
                                     const std::vector<double>& yhat_raw,
                                     const BinSpec& bins = BinSpec{}) {
  require_same_length(y, yhat_raw);
  if (y.empty()) throw DataError("compute_metrics: empty edge set");
  bins.validate();

  MetricsReport rep;
  std::vector<double> yhat = yhat_raw;
  for (double& v : yhat) {
    if (v < 0.0) {
      v = 0.0;
      ++rep.clipped_predictions;
    }
  }

  rep.n_edges = y.size();
  rep.mae_total = mae(y, yhat);
  auto per_bin = binned_mae(y, yhat, bins);
  rep.mae_bins.assign(per_bin.begin(), per_bin.begin() + static_cast<long>(bins.n_bins()));
  rep.mae_overflow = per_bin[bins.n_bins()];
  rep.bin_mean = bin_mean_mae(y, yhat, bins, &rep.had_empty_bin);
  rep.mape_bins.resize(bins.n_bins());
  for (std::size_t b = 0; b < bins.n_bins(); ++b) {
    std::size_t excl = 0;
    rep.mape_bins[b] = mape(y, yhat, bins, b, &excl);
    rep.mape_excluded_zero_y += excl;
  }
  rep.ssi = ssi(y, yhat);
  rep.cpc = cpc(y, yhat);
  rep.cpl = cpl(y, yhat);
  rep.n_per_bin.assign(bins.n_bins() + 1, 0);
  for (double v : y) rep.n_per_bin[bins.bin_of(v)] += 1;
  return rep;
}

}  // namespace odflow

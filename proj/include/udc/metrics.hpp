#pragma once

// KITTI-style depth metrics over valid ground-truth pixels.
//
// MAE/RMSE are reported in millimeters; IMAE/IRMSE on inverse depth in
// 1/km, i.e. on 1/d_km = 1000/d_m.

#include <string>

#include "udc/grid.hpp"

namespace udc {

struct MetricReport {
  double rmse_mm = 0.0;
  double mae_mm = 0.0;
  double irmse_per_km = 0.0;
  double imae_per_km = 0.0;
  std::size_t n_valid = 0;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

MetricReport evaluate(const DepthGrid& pred, const SparseDepthGrid& gt);

/// Metrics restricted to pixels where both `selector` and gt are valid.
MetricReport evaluate_subset(const DepthGrid& pred, const SparseDepthGrid& gt,
                             const ValidityMask& selector);

/// "rmse_mm=… mae_mm=… irmse=… imae=… n=…" with six decimals.
std::string format_report(const MetricReport& report);
MetricReport parse_report(const std::string& line);

}  // namespace udc

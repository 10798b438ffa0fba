#pragma once

// Masked losses for joint depth/uncertainty training and residual
// refinement, each returning its value and analytic per-pixel gradients.
//
// N in every loss is the number of valid ground-truth pixels, never H·W.
// Reductions run left to right in raster order.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "udc/grid.hpp"

namespace udc {

/// Raised when a masked loss or metric has no valid pixel to average over.
class UndefinedLossError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct MaskedLossValue {
  double value = 0.0;
  std::size_t n_valid = 0;
  FieldGrid grad_pred;
  /// Absent for losses without a trained log-variance.
  std::optional<FieldGrid> grad_s;
};

struct LossConfig {
  /// Regularizer coefficient 2 on s when true (Jeffrey's prior), 1 otherwise.
  bool jeffrey = true;
  /// ω per pyramid level, same coarse→fine order as ScalePyramid.
  std::vector<double> scale_weights{1.0};
  bool epoch_balanced = false;

  double regularizer() const { return jeffrey ? 2.0 : 1.0; }
};

/// ω for level i of a coarse→fine pyramid: 2^−k with k = levels−1−i, so
/// the finest level weighs 1.
std::vector<double> default_scale_weights(int levels);

/// (1/N)·Σ_valid [e^{−s}(x̂ − x)² + c·s], c = cfg.regularizer().
MaskedLossValue loss_ud(const DepthGrid& pred, const DepthGrid& gt,
                        const LogVarGrid& s, const ValidityMask& mask,
                        const LossConfig& cfg);

/// |(4·log σ + r²/σ²) − (e^{−s}·r² + 2·s)| with s = 2·log σ.
double verify_map_identity(double residual, double sigma);

struct MultiscaleLoss {
  double value = 0.0;
  /// Inputs with value and gradients scaled by ω_k.
  std::vector<MaskedLossValue> weighted;
};

/// Σ_k ω_k·L_k with per_scale[i] paired to cfg.scale_weights[i].
MultiscaleLoss loss_multiscale(const std::vector<MaskedLossValue>& per_scale,
                               const LossConfig& cfg);

/// Attention weight of a stage-one log-variance: σ = e^{s/2}.
inline double uncertainty_weight(double s) { return std::exp(0.5 * s); }

/// (1/N)·Σ_valid w·|(x − x̂) − r|, w = e^{s1/2} held constant.
/// grad_pred holds d/dr.
MaskedLossValue loss_ur(const FieldGrid& residual, const DepthGrid& stage1,
                        const DepthGrid& gt, const LogVarGrid& s1,
                        const ValidityMask& mask);

/// (1/N)·Σ_valid w·((x − x̂) − r)².
MaskedLossValue loss_ur2(const FieldGrid& residual, const DepthGrid& stage1,
                         const DepthGrid& gt, const LogVarGrid& s1,
                         const ValidityMask& mask);

/// loss_ur on even epochs (0 counts as even), ½(loss_ur + loss_ur2) on odd.
MaskedLossValue loss_urb(int epoch, const FieldGrid& residual,
                         const DepthGrid& stage1, const DepthGrid& gt,
                         const LogVarGrid& s1, const ValidityMask& mask);

/// (1/N)·Σ_valid (x̂ − x)².
MaskedLossValue loss_mse(const DepthGrid& pred, const DepthGrid& gt,
                         const ValidityMask& mask);

}  // namespace udc

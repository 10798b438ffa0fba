#include "udc/losses.hpp"

#include <cmath>
#include <quadmath.h>
#include <string>

namespace udc {

namespace {

template <class A, class B>
void require_shape(const A& a, const B& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": grid shapes differ");
  }
}

std::size_t require_nonempty(const ValidityMask& mask, const char* what) {
  const std::size_t n = mask.count();
  if (n == 0) {
    throw UndefinedLossError(std::string(what) + ": no valid pixel in mask");
  }
  return n;
}

// Shared body of the residual losses; `power` is 1 (|·|) or 2 (squared).
MaskedLossValue residual_loss(const FieldGrid& residual,
                              const DepthGrid& stage1, const DepthGrid& gt,
                              const LogVarGrid& s1, const ValidityMask& mask,
                              int power, const char* what) {
  require_shape(residual, stage1, what);
  require_shape(residual, gt, what);
  require_shape(residual, s1, what);
  require_shape(residual, mask, what);
  const std::size_t n = require_nonempty(mask, what);
  const double inv_n = 1.0 / static_cast<double>(n);

  MaskedLossValue out;
  out.n_valid = n;
  out.grad_pred = FieldGrid(residual.height(), residual.width(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < residual.size(); ++i) {
    if (!mask[i]) continue;
    const double w = uncertainty_weight(s1[i]);
    const double e = (gt[i] - stage1[i]) - residual[i];
    if (power == 1) {
      total += w * std::abs(e);
      const double sign = (e > 0.0) - (e < 0.0);
      out.grad_pred[i] = -w * sign * inv_n;
    } else {
      total += w * e * e;
      out.grad_pred[i] = -2.0 * w * e * inv_n;
    }
  }
  out.value = total * inv_n;
  return out;
}

}  // namespace

std::vector<double> default_scale_weights(int levels) {
  if (levels < 1) throw std::invalid_argument("levels must be >= 1");
  std::vector<double> w(static_cast<std::size_t>(levels));
  for (int i = 0; i < levels; ++i) {
    w[static_cast<std::size_t>(i)] = std::ldexp(1.0, -(levels - 1 - i));
  }
  return w;
}

MaskedLossValue loss_ud(const DepthGrid& pred, const DepthGrid& gt,
                        const LogVarGrid& s, const ValidityMask& mask,
                        const LossConfig& cfg) {
  require_shape(pred, gt, "loss_ud");
  require_shape(pred, s, "loss_ud");
  require_shape(pred, mask, "loss_ud");
  const std::size_t n = require_nonempty(mask, "loss_ud");
  const double inv_n = 1.0 / static_cast<double>(n);
  const double c = cfg.regularizer();

  MaskedLossValue out;
  out.n_valid = n;
  out.grad_pred = FieldGrid(pred.height(), pred.width(), 0.0);
  out.grad_s = FieldGrid(pred.height(), pred.width(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double r = pred[i] - gt[i];
    const double attenuation = std::exp(-s[i]);
    const double weighted_sq = attenuation * (r * r);
    total += weighted_sq + c * s[i];
    out.grad_pred[i] = 2.0 * attenuation * r * inv_n;
    (*out.grad_s)[i] = (c - weighted_sq) * inv_n;
  }
  out.value = total * inv_n;
  return out;
}

double verify_map_identity(double residual, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
  // r²/σ² reaches 1e8 on the documented domain, where one double ulp is
  // already 1.5e-8; both sides are evaluated in binary128 so the result
  // measures the algebra rather than double rounding.
  using quad = __float128;
  const quad r = residual;
  const quad sg = sigma;
  const quad r2 = r * r;
  const quad sigma_form = 4 * logq(sg) + r2 / (sg * sg);
  const quad s = 2 * logq(sg);
  const quad s_form = expq(-s) * r2 + 2 * s;
  return static_cast<double>(fabsq(sigma_form - s_form));
}

MultiscaleLoss loss_multiscale(const std::vector<MaskedLossValue>& per_scale,
                               const LossConfig& cfg) {
  if (per_scale.size() != cfg.scale_weights.size()) {
    throw std::invalid_argument(
        "loss_multiscale: " + std::to_string(per_scale.size()) +
        " scale losses for " + std::to_string(cfg.scale_weights.size()) +
        " weights");
  }
  MultiscaleLoss out;
  out.weighted.reserve(per_scale.size());
  for (std::size_t k = 0; k < per_scale.size(); ++k) {
    const double w = cfg.scale_weights[k];
    if (!(w > 0.0)) throw std::invalid_argument("scale weights must be > 0");
    MaskedLossValue scaled = per_scale[k];
    scaled.value *= w;
    for (double& g : scaled.grad_pred.values()) g *= w;
    if (scaled.grad_s) {
      for (double& g : scaled.grad_s->values()) g *= w;
    }
    out.value += scaled.value;
    out.weighted.push_back(std::move(scaled));
  }
  return out;
}

MaskedLossValue loss_ur(const FieldGrid& residual, const DepthGrid& stage1,
                        const DepthGrid& gt, const LogVarGrid& s1,
                        const ValidityMask& mask) {
  return residual_loss(residual, stage1, gt, s1, mask, 1, "loss_ur");
}

MaskedLossValue loss_ur2(const FieldGrid& residual, const DepthGrid& stage1,
                         const DepthGrid& gt, const LogVarGrid& s1,
                         const ValidityMask& mask) {
  return residual_loss(residual, stage1, gt, s1, mask, 2, "loss_ur2");
}

MaskedLossValue loss_urb(int epoch, const FieldGrid& residual,
                         const DepthGrid& stage1, const DepthGrid& gt,
                         const LogVarGrid& s1, const ValidityMask& mask) {
  if (epoch < 0) throw std::invalid_argument("loss_urb: epoch must be >= 0");
  MaskedLossValue l1 = loss_ur(residual, stage1, gt, s1, mask);
  if (epoch % 2 == 0) return l1;
  const MaskedLossValue l2 = loss_ur2(residual, stage1, gt, s1, mask);
  l1.value = 0.5 * (l1.value + l2.value);
  for (std::size_t i = 0; i < l1.grad_pred.size(); ++i) {
    l1.grad_pred[i] = 0.5 * (l1.grad_pred[i] + l2.grad_pred[i]);
  }
  return l1;
}

MaskedLossValue loss_mse(const DepthGrid& pred, const DepthGrid& gt,
                         const ValidityMask& mask) {
  require_shape(pred, gt, "loss_mse");
  require_shape(pred, mask, "loss_mse");
  const std::size_t n = require_nonempty(mask, "loss_mse");
  const double inv_n = 1.0 / static_cast<double>(n);

  MaskedLossValue out;
  out.n_valid = n;
  out.grad_pred = FieldGrid(pred.height(), pred.width(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double r = pred[i] - gt[i];
    total += r * r;
    out.grad_pred[i] = 2.0 * r * inv_n;
  }
  out.value = total * inv_n;
  return out;
}

}  // namespace udc

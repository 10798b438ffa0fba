#include "udc/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "udc/losses.hpp"

namespace udc {

namespace {

MetricReport accumulate(const DepthGrid& pred, const SparseDepthGrid& gt,
                        const ValidityMask* selector) {
  if (!pred.same_shape(gt)) {
    throw std::invalid_argument("evaluate: prediction and GT shapes differ");
  }
  if (selector && !selector->same_shape(gt)) {
    throw std::invalid_argument("evaluate: selector shape differs");
  }
  double abs_sum = 0.0, sq_sum = 0.0, inv_abs_sum = 0.0, inv_sq_sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid(i) || (selector && !(*selector)[i])) continue;
    const double p = pred[i];
    if (!(p > 0.0)) {
      throw std::domain_error("evaluate: non-positive prediction at a valid pixel");
    }
    const double d = gt.depth(i);
    const double err_mm = (p - d) * 1000.0;
    const double inv_err = 1000.0 / p - 1000.0 / d;
    abs_sum += std::abs(err_mm);
    sq_sum += err_mm * err_mm;
    inv_abs_sum += std::abs(inv_err);
    inv_sq_sum += inv_err * inv_err;
    ++n;
  }
  if (n == 0) {
    throw UndefinedLossError("evaluate: no valid ground-truth pixel selected");
  }
  const double dn = static_cast<double>(n);
  return {std::sqrt(sq_sum / dn), abs_sum / dn, std::sqrt(inv_sq_sum / dn),
          inv_abs_sum / dn, n};
}

}  // namespace

MetricReport evaluate(const DepthGrid& pred, const SparseDepthGrid& gt) {
  return accumulate(pred, gt, nullptr);
}

MetricReport evaluate_subset(const DepthGrid& pred, const SparseDepthGrid& gt,
                             const ValidityMask& selector) {
  return accumulate(pred, gt, &selector);
}

std::string format_report(const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "rmse_mm=%.6f mae_mm=%.6f irmse=%.6f imae=%.6f n=%zu",
                r.rmse_mm, r.mae_mm, r.irmse_per_km, r.imae_per_km, r.n_valid);
  return buf;
}

MetricReport parse_report(const std::string& line) {
  std::istringstream in(line);
  std::map<std::string, std::string> fields;
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("malformed report token '" + token + "'");
    }
    fields[token.substr(0, eq)] = token.substr(eq + 1);
  }
  auto get = [&fields](const char* key) {
    const auto it = fields.find(key);
    if (it == fields.end()) {
      throw std::invalid_argument(std::string("report lacks ") + key);
    }
    return it->second;
  };
  MetricReport r;
  r.rmse_mm = std::stod(get("rmse_mm"));
  r.mae_mm = std::stod(get("mae_mm"));
  r.irmse_per_km = std::stod(get("irmse"));
  r.imae_per_km = std::stod(get("imae"));
  r.n_valid = std::stoull(get("n"));
  return r;
}

}  // namespace udc

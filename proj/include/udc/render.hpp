#pragma once

// False-color renderings of depth, log-variance and residual maps.
// Ranges are fixed so renders compare across runs.

#include <array>
#include <cstdint>

#include "udc/grid.hpp"
#include "udc/pnm_io.hpp"

namespace udc {

inline constexpr double kRenderDepthMax = 80.0;
inline constexpr double kRenderResidualMax = 5.0;

using Rgb = std::array<std::uint8_t, 3>;

/// Turbo-style rainbow, t clamped to [0, 1].
Rgb turbo(double t);
/// Blue → mid-gray → red, t clamped to [−1, 1]; t = 0 is (128,128,128).
Rgb diverging(double t);

/// Depth over [0, kRenderDepthMax] meters.
RgbImage render_depth(const DepthGrid& depth);
/// s over [−kLogVarBound, kLogVarBound].
RgbImage render_logvar(const LogVarGrid& s);
/// Residual over ±kRenderResidualMax meters.
RgbImage render_residual(const FieldGrid& residual);

}  // namespace udc

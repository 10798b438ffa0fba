#include "udc/render.hpp"

#include <algorithm>
#include <cmath>

#include "udc/model.hpp"

namespace udc {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

template <class G, class Map>
RgbImage render(const G& grid, Map map) {
  RgbImage img;
  img.width = grid.width();
  img.height = grid.height();
  img.rgb.reserve(grid.size() * 3);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Rgb c = map(grid[i]);
    img.rgb.insert(img.rgb.end(), c.begin(), c.end());
  }
  return img;
}

}  // namespace

Rgb turbo(double t) {
  t = std::clamp(t, 0.0, 1.0);
  // Polynomial fit of the Turbo colormap.
  const double r = 0.13572138 + t * (4.61539260 + t * (-42.66032258 + t * (132.13108234 +
                   t * (-152.94239396 + t * 59.28637943))));
  const double g = 0.09140261 + t * (2.19418839 + t * (4.84296658 + t * (-14.18503333 +
                   t * (4.27729857 + t * 2.82956604))));
  const double b = 0.10667330 + t * (12.64194608 + t * (-60.58204836 + t * (110.36276771 +
                   t * (-89.90310912 + t * 27.34824973))));
  return {to_byte(r), to_byte(g), to_byte(b)};
}

Rgb diverging(double t) {
  t = std::clamp(t, -1.0, 1.0);
  constexpr double kGray = 128.0 / 255.0;
  const double a = std::abs(t);
  // Interpolate from gray toward blue (t < 0) or red (t > 0).
  const double hi = kGray + a * (1.0 - kGray);
  const double lo = kGray * (1.0 - a);
  if (t < 0.0) return {to_byte(lo), to_byte(lo), to_byte(hi)};
  return {to_byte(hi), to_byte(lo), to_byte(lo)};
}

RgbImage render_depth(const DepthGrid& depth) {
  return render(depth, [](double d) { return turbo(d / kRenderDepthMax); });
}

RgbImage render_logvar(const LogVarGrid& s) {
  return render(s, [](double v) {
    return turbo((v + kLogVarBound) / (2.0 * kLogVarBound));
  });
}

RgbImage render_residual(const FieldGrid& residual) {
  return render(residual, [](double r) { return diverging(r / kRenderResidualMax); });
}

}  // namespace udc

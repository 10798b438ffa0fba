#include "udc/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace udc {

namespace {

void require_dims(int height, int width) {
  if (height <= 0 || width <= 0) {
    throw std::invalid_argument("grid dimensions must be positive, got " +
                                std::to_string(height) + "x" +
                                std::to_string(width));
  }
}

void require_factor(int factor) {
  if (!is_power_of_two(factor)) {
    throw std::invalid_argument("scale factor must be a power of two, got " +
                                std::to_string(factor));
  }
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

template <class Tag>
Grid<Tag>::Grid(int height, int width, double fill)
    : height_(height), width_(width) {
  require_dims(height, width);
  values_.assign(static_cast<std::size_t>(height) * width, fill);
}

template <class Tag>
Grid<Tag>::Grid(int height, int width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  require_dims(height, width);
  if (values_.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("grid value count does not match dimensions");
  }
}

template class Grid<DepthTag>;
template class Grid<LogVarTag>;
template class Grid<FieldTag>;

ValidityMask::ValidityMask(int height, int width, bool fill)
    : height_(height), width_(width) {
  require_dims(height, width);
  bits_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

ValidityMask::ValidityMask(int height, int width,
                           std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  require_dims(height, width);
  if (bits_.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("mask size does not match dimensions");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t ValidityMask::count() const {
  return static_cast<std::size_t>(
      std::count_if(bits_.begin(), bits_.end(), [](auto b) { return b != 0; }));
}

SparseDepthGrid::SparseDepthGrid(int height, int width)
    : depth_(height, width, 0.0), mask_(height, width, false) {}

SparseDepthGrid::SparseDepthGrid(DepthGrid depth)
    : depth_(std::move(depth)), mask_(depth_.height(), depth_.width(), false) {
  for (std::size_t i = 0; i < depth_.size(); ++i) {
    const double d = depth_[i];
    if (!std::isfinite(d) || d < 0.0) {
      throw std::invalid_argument("sparse depth must be finite and >= 0");
    }
    mask_.set(i, d > 0.0);
  }
}

void SparseDepthGrid::set(int row, int col, double depth) {
  set(static_cast<std::size_t>(row) * width() + col, depth);
}

void SparseDepthGrid::set(std::size_t i, double depth) {
  if (!std::isfinite(depth)) {
    throw std::invalid_argument("sparse depth must be finite");
  }
  const bool v = depth > 0.0;
  depth_[i] = v ? depth : 0.0;
  mask_.set(i, v);
}

double SparseDepthGrid::valid_fraction() const {
  return size() == 0 ? 0.0
                     : static_cast<double>(mask_.count()) /
                           static_cast<double>(size());
}

GuideImage::GuideImage(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  require_dims(height, width);
  if (channels != 1 && channels != 3) {
    throw std::invalid_argument("guide images have 1 or 3 channels");
  }
  values_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

GuideImage::GuideImage(int height, int width, int channels,
                       std::vector<double> values)
    : height_(height),
      width_(width),
      channels_(channels),
      values_(std::move(values)) {
  require_dims(height, width);
  if (channels != 1 && channels != 3) {
    throw std::invalid_argument("guide images have 1 or 3 channels");
  }
  if (values_.size() != static_cast<std::size_t>(channels) * height * width) {
    throw std::invalid_argument("guide value count does not match dimensions");
  }
  for (double v : values_) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("guide intensities must lie in [0, 1]");
    }
  }
}

bool is_power_of_two(int factor) {
  return factor >= 1 && (factor & (factor - 1)) == 0;
}

SparseDepthGrid downsample_sparse_max(const SparseDepthGrid& grid,
                                      int factor) {
  require_factor(factor);
  if (factor == 1) return grid;
  const int oh = ceil_div(grid.height(), factor);
  const int ow = ceil_div(grid.width(), factor);
  SparseDepthGrid out(oh, ow);
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      double best = 0.0;
      const int r1 = std::min(grid.height(), (r + 1) * factor);
      const int c1 = std::min(grid.width(), (c + 1) * factor);
      for (int y = r * factor; y < r1; ++y) {
        for (int x = c * factor; x < c1; ++x) {
          if (grid.valid(y, x)) best = std::max(best, grid.depth(y, x));
        }
      }
      out.set(r, c, best);
    }
  }
  return out;
}

GuideImage downsample_guide(const GuideImage& guide, int factor) {
  require_factor(factor);
  if (factor == 1) return guide;
  const int oh = ceil_div(guide.height(), factor);
  const int ow = ceil_div(guide.width(), factor);
  GuideImage out(oh, ow, guide.channels());
  for (int ch = 0; ch < guide.channels(); ++ch) {
    for (int r = 0; r < oh; ++r) {
      for (int c = 0; c < ow; ++c) {
        const int r1 = std::min(guide.height(), (r + 1) * factor);
        const int c1 = std::min(guide.width(), (c + 1) * factor);
        double sum = 0.0;
        int n = 0;
        for (int y = r * factor; y < r1; ++y) {
          for (int x = c * factor; x < c1; ++x) {
            sum += guide.at(ch, y, x);
            ++n;
          }
        }
        out.at(ch, r, c) = std::clamp(sum / n, 0.0, 1.0);
      }
    }
  }
  return out;
}

LinearTap bilinear_tap(int out, int in_size, int factor) {
  double src = (out + 0.5) / factor - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
  const int lo = static_cast<int>(std::floor(src));
  const int hi = std::min(lo + 1, in_size - 1);
  return {lo, hi, src - lo};
}

template <class Tag>
Grid<Tag> upsample_bilinear(const Grid<Tag>& grid, int factor) {
  require_factor(factor);
  if (factor == 1) return grid;
  const int oh = grid.height() * factor;
  const int ow = grid.width() * factor;
  Grid<Tag> out(oh, ow);
  std::vector<LinearTap> cols(ow);
  for (int c = 0; c < ow; ++c) cols[c] = bilinear_tap(c, grid.width(), factor);
  for (int r = 0; r < oh; ++r) {
    const LinearTap ty = bilinear_tap(r, grid.height(), factor);
    for (int c = 0; c < ow; ++c) {
      const LinearTap& tx = cols[c];
      const double top = (1.0 - tx.w_hi) * grid.at(ty.lo, tx.lo) +
                         tx.w_hi * grid.at(ty.lo, tx.hi);
      const double bottom = (1.0 - tx.w_hi) * grid.at(ty.hi, tx.lo) +
                            tx.w_hi * grid.at(ty.hi, tx.hi);
      out.at(r, c) = (1.0 - ty.w_hi) * top + ty.w_hi * bottom;
    }
  }
  return out;
}

template DepthGrid upsample_bilinear(const DepthGrid&, int);
template LogVarGrid upsample_bilinear(const LogVarGrid&, int);
template FieldGrid upsample_bilinear(const FieldGrid&, int);

ScalePyramid build_pyramid(const GuideImage& guide,
                           const SparseDepthGrid& sparse, int levels) {
  if (levels < 1 || levels > 4) {
    throw std::invalid_argument("pyramid levels must be in [1, 4]");
  }
  if (!guide.same_shape(sparse)) {
    throw std::invalid_argument("guide and sparse depth dimensions differ");
  }
  const int coarsest = 1 << (levels - 1);
  if (sparse.height() % coarsest != 0 || sparse.width() % coarsest != 0) {
    throw std::invalid_argument(
        "dimensions " + std::to_string(sparse.height()) + "x" +
        std::to_string(sparse.width()) + " not divisible by " +
        std::to_string(coarsest));
  }
  ScalePyramid pyramid;
  pyramid.levels.reserve(levels);
  for (int k = levels - 1; k >= 0; --k) {
    const int factor = 1 << k;
    pyramid.levels.push_back(
        {downsample_guide(guide, factor), downsample_sparse_max(sparse, factor)});
  }
  return pyramid;
}

std::size_t count_valid(const SparseDepthGrid& grid) {
  return grid.mask().count();
}

}  // namespace udc

#pragma once

// Depth, log-variance and guide grids plus the multiscale pyramid.
//
// All grids are row-major H×W value types. Missing depth is encoded as
// depth 0 together with an explicit validity mask (KITTI convention).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace udc {

/// Real-valued H×W grid. The tag distinguishes depth, log-variance and
/// signed fields at the type level; it carries no data.
template <class Tag>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, double fill = 0.0);
  Grid(int height, int width, std::vector<double> values);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& at(int row, int col) { return values_[index(row, col)]; }
  double at(int row, int col) const { return values_[index(row, col)]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool same_shape(int height, int width) const {
    return height_ == height && width_ == width;
  }
  template <class Other>
  bool same_shape(const Other& o) const {
    return same_shape(o.height(), o.width());
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

struct DepthTag {};
struct LogVarTag {};
struct FieldTag {};

/// Dense depth in meters (X, X̂). Entries are finite and non-negative.
using DepthGrid = Grid<DepthTag>;
/// Per-pixel s = 2·log σ. Entries are finite.
using LogVarGrid = Grid<LogVarTag>;
/// Signed real field: residual maps, per-pixel gradients.
using FieldGrid = Grid<FieldTag>;

/// Per-pixel boolean mask.
class ValidityMask {
 public:
  ValidityMask() = default;
  ValidityMask(int height, int width, bool fill = false);
  ValidityMask(int height, int width, std::vector<std::uint8_t> bits);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return bits_.size(); }

  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  bool at(int row, int col) const {
    return bits_[static_cast<std::size_t>(row) * width_ + col] != 0;
  }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }
  void set(int row, int col, bool v) {
    set(static_cast<std::size_t>(row) * width_ + col, v);
  }
  std::span<const std::uint8_t> bits() const { return bits_; }

  bool same_shape(int height, int width) const {
    return height_ == height && width_ == width;
  }
  template <class Other>
  bool same_shape(const Other& o) const {
    return same_shape(o.height(), o.width());
  }

  std::size_t count() const;

  friend bool operator==(const ValidityMask&, const ValidityMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Sparse depth samples Y: depth > 0 exactly where valid.
class SparseDepthGrid {
 public:
  SparseDepthGrid() = default;
  /// All-invalid grid.
  SparseDepthGrid(int height, int width);
  /// Validity is derived from depth > 0. Negative or non-finite entries
  /// are rejected.
  explicit SparseDepthGrid(DepthGrid depth);

  int height() const { return depth_.height(); }
  int width() const { return depth_.width(); }
  std::size_t size() const { return depth_.size(); }

  const DepthGrid& depth() const { return depth_; }
  const ValidityMask& mask() const { return mask_; }

  bool valid(std::size_t i) const { return mask_[i]; }
  bool valid(int row, int col) const { return mask_.at(row, col); }
  double depth(std::size_t i) const { return depth_[i]; }
  double depth(int row, int col) const { return depth_.at(row, col); }

  /// Sets a sample; depth <= 0 marks the pixel invalid and stores 0.
  void set(int row, int col, double depth);
  void set(std::size_t i, double depth);
  void clear(std::size_t i) { set(i, 0.0); }

  double valid_fraction() const;

  friend bool operator==(const SparseDepthGrid&,
                         const SparseDepthGrid&) = default;

 private:
  DepthGrid depth_;
  ValidityMask mask_;
};

/// Guide image I, planar channel layout, intensities in [0, 1].
class GuideImage {
 public:
  GuideImage() = default;
  GuideImage(int height, int width, int channels, double fill = 0.0);
  GuideImage(int height, int width, int channels, std::vector<double> values);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }

  double& at(int channel, int row, int col) {
    return values_[index(channel, row, col)];
  }
  double at(int channel, int row, int col) const {
    return values_[index(channel, row, col)];
  }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  template <class Other>
  bool same_shape(const Other& o) const {
    return height_ == o.height() && width_ == o.width();
  }

  friend bool operator==(const GuideImage&, const GuideImage&) = default;

 private:
  std::size_t index(int channel, int row, int col) const {
    return (static_cast<std::size_t>(channel) * height_ + row) * width_ + col;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  std::vector<double> values_;
};

struct PyramidLevel {
  GuideImage guide;
  SparseDepthGrid sparse;
};

/// Pyramid levels ordered coarse→fine: levels.front() is scale k = K−1,
/// levels.back() is scale k = 0 (the originals).
struct ScalePyramid {
  std::vector<PyramidLevel> levels;

  int size() const { return static_cast<int>(levels.size()); }
  const PyramidLevel& finest() const { return levels.back(); }
  const PyramidLevel& coarsest() const { return levels.front(); }
  /// Level at downsampling exponent k (factor 2^k).
  const PyramidLevel& scale(int k) const {
    return levels[levels.size() - 1 - static_cast<std::size_t>(k)];
  }
};

bool is_power_of_two(int factor);

/// Max over the valid pixels of each factor×factor window; a window with
/// no valid pixel stays invalid. Edge windows may be partial.
SparseDepthGrid downsample_sparse_max(const SparseDepthGrid& grid, int factor);

/// Area mean of each factor×factor window, per channel.
GuideImage downsample_guide(const GuideImage& guide, int factor);

/// Source taps of one output coordinate under align-corners-false
/// bilinear upsampling: value = (1 − w_hi)·in[lo] + w_hi·in[hi].
struct LinearTap {
  int lo;
  int hi;
  double w_hi;
};
LinearTap bilinear_tap(int out, int in_size, int factor);

/// Bilinear upsampling, align-corners-false, output dims = input × factor.
template <class Tag>
Grid<Tag> upsample_bilinear(const Grid<Tag>& grid, int factor);

/// Levels built with factor 2^k; requires dims divisible by 2^(levels−1).
ScalePyramid build_pyramid(const GuideImage& guide,
                           const SparseDepthGrid& sparse, int levels);

std::size_t count_valid(const SparseDepthGrid& grid);

}  // namespace udc

#pragma once

// Synthetic KITTI-like frames: a ray-cast scene of ground, boxes and poles
// seen by a pinhole camera, a LiDAR scan with a fixed angular lattice, and
// a semi-dense ground truth carrying misprojection outliers.
//
// Camera frame: x right, y up, z forward; depth is the z coordinate.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "udc/grid.hpp"

namespace udc {

inline constexpr double kFarPlane = 80.0;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

struct PinholeCamera {
  double focal = 114.0;  // pixels
  double cx = 96.0;
  double cy = 32.0;
  int width = 192;
  int height = 64;

  /// KITTI-like field of view (≈80° horizontal) for the given image size.
  static PinholeCamera for_size(int height, int width);
  /// Un-normalized ray through the pixel center, with z component 1.
  Vec3 ray(int row, int col) const;
};

/// Horizontal plane y = height (below the camera for negative height).
struct GroundPlane {
  double height = -1.65;
  double albedo = 0.35;
};

/// Box standing on its center, rotated by yaw about the vertical axis.
struct Box {
  Vec3 center;
  Vec3 half_size;
  double yaw = 0.0;
  double albedo = 0.5;
};

/// Vertical cylinder.
struct Pole {
  double x = 0.0;
  double z = 10.0;
  double radius = 0.2;
  double bottom = -1.65;
  double top = 3.0;
  double albedo = 0.6;
};

using Primitive = std::variant<GroundPlane, Box, Pole>;

struct Scene {
  std::vector<Primitive> primitives;
  PinholeCamera camera;
};

struct ScanConfig {
  int n_beams = 16;
  double azimuth_step = 0.03;      // radians
  double vertical_fov_min = -0.44;  // radians, ≈ −25°
  double vertical_fov_max = 0.05;   // radians, ≈ +3°
  double dropout = 0.1;
  /// Sensor origin ahead of the camera along z, meters.
  double mount_forward = 2.0;
};

struct CorruptionConfig {
  double outlier_rate = 0.1;
  int outlier_shift = 3;  // pixels
  double gt_density = 0.35;
};

/// Nearest-hit z depth per pixel; rays that hit nothing within the far
/// plane get kFarPlane.
DepthGrid render_gt(const Scene& scene);

/// Lambert-shaded albedo rendering in [0, 1], single channel.
GuideImage render_guide(const Scene& scene);

void validate(const ScanConfig& cfg);
void validate(const CorruptionConfig& cfg);

/// Samples gt at the pixels hit by the LiDAR's beam/azimuth lattice (one
/// sample per lattice cell, the pixel nearest the beam direction), then
/// drops each sampled pixel with probability cfg.dropout. Pixels at the far
/// plane return nothing. Samples always equal gt.
SparseDepthGrid simulate_scan(const DepthGrid& gt, const PinholeCamera& camera,
                              const ScanConfig& cfg, std::uint64_t seed);

/// Keeps each pixel with probability gt_density; a kept pixel becomes an
/// outlier with probability outlier_rate, taking the clean depth at an
/// integer offset drawn uniformly from {0 < |δ| ≤ outlier_shift}
/// (clamped to the image).
SparseDepthGrid corrupt_gt(const DepthGrid& gt, const CorruptionConfig& cfg,
                           std::uint64_t seed);

/// Integer offsets 0 < dx² + dy² ≤ shift², in raster order.
std::vector<std::pair<int, int>> outlier_offsets(int shift);

struct DatasetConfig {
  int height = 64;
  int width = 192;
  ScanConfig scan;
  CorruptionConfig corruption;
};

struct Frame {
  std::string name;
  GuideImage guide;
  SparseDepthGrid sparse;
  SparseDepthGrid gt_semi;
  SparseDepthGrid gt_clean;
};

using Dataset = std::vector<Frame>;

Scene random_scene(const DatasetConfig& cfg, std::uint64_t seed, int frame);

/// One frame, already quantized to the on-disk depth lattice.
Frame generate_frame(const DatasetConfig& cfg, std::uint64_t seed, int frame);

struct Manifest {
  std::filesystem::path path;
  std::vector<std::string> frames;
};

/// Writes out_dir/frame_%04d/{guide,sparse,gt_semi,gt_clean}.pgm and
/// out_dir/manifest.txt. Byte-identical for identical arguments.
Manifest gen_dataset(int n_frames, std::uint64_t seed,
                     const std::filesystem::path& out_dir,
                     const DatasetConfig& cfg = {});

Frame load_frame(const std::filesystem::path& frame_dir);
/// Frames listed in manifest.txt, or every frame_* subdirectory in sorted
/// order when there is no manifest.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace udc

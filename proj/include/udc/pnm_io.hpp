#pragma once

// Binary PGM/PPM readers and writers.
//
// Depth maps are 16-bit big-endian P5 with maxval 65535, stored value
// round(depth_m × 256) and 0 meaning "no sample" (KITTI convention).
// Guides are 8-bit P5 (gray) or P6 (color); any maxval up to 65535 reads.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "udc/errors.hpp"
#include "udc/grid.hpp"

namespace udc {

/// Raw decoded PNM raster: interleaved samples, channels 1 (P5) or 3 (P6).
struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  int maxval = 255;
  std::vector<std::uint16_t> samples;

  friend bool operator==(const PnmImage&, const PnmImage&) = default;
};

/// 8-bit RGB raster used for false-color renders.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved
};

std::vector<std::uint8_t> encode_pnm(const PnmImage& image);
PnmImage decode_pnm(const std::vector<std::uint8_t>& bytes);

PnmImage read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const PnmImage& image);

constexpr double kDepthScale = 256.0;

/// Largest depth encodable in 16 bits (65535 / 256 m).
constexpr double kMaxEncodableDepth = 65535.0 / kDepthScale;

PnmImage encode_depth(const SparseDepthGrid& grid);
SparseDepthGrid decode_depth(const PnmImage& image);

/// Rounds depths onto the 1/256 m lattice the file format stores.
SparseDepthGrid quantize_depth(const SparseDepthGrid& grid);

SparseDepthGrid read_depth_pgm(const std::filesystem::path& path);
void write_depth_pgm(const std::filesystem::path& path,
                     const SparseDepthGrid& grid);

PnmImage encode_guide(const GuideImage& guide);
GuideImage decode_guide(const PnmImage& image);

GuideImage read_guide(const std::filesystem::path& path);
void write_guide(const std::filesystem::path& path, const GuideImage& guide);

PnmImage to_pnm(const RgbImage& image);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

}  // namespace udc

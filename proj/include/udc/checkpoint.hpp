#pragma once

// Flat binary parameter file, all integers and reals little-endian:
//
//   magic    "UDCK" (4 bytes)
//   version  u32 (= 1)
//   metadata u32 length + bytes (free-form key=value text)
//   count    u32
//   count × { u32 name length, name bytes, u32 rank, rank × u32 dims,
//             numel × f64 values }

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "udc/autodiff.hpp"
#include "udc/errors.hpp"

namespace udc {

struct NamedTensor {
  std::string name;
  ad::Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct ParameterFile {
  std::string metadata;
  std::vector<NamedTensor> entries;

  friend bool operator==(const ParameterFile&, const ParameterFile&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_parameters(const ParameterFile& file);
/// Throws IoError on any structural problem.
ParameterFile decode_parameters(const std::vector<std::uint8_t>& bytes);

void write_parameter_file(const std::filesystem::path& path,
                          const ParameterFile& file);
ParameterFile read_parameter_file(const std::filesystem::path& path);

}  // namespace udc

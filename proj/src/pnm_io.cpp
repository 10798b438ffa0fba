#include "udc/pnm_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace udc {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<std::uint8_t>& bytes)
      : bytes_(bytes) {}

  std::string token() {
    skip_space_and_comments();
    std::string out;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) {
      out.push_back(static_cast<char>(bytes_[pos_++]));
    }
    if (out.empty()) throw IoError("truncated PNM header");
    return out;
  }

  int integer() {
    const std::string t = token();
    if (!std::all_of(t.begin(), t.end(),
                     [](char c) { return std::isdigit(c); }) ||
        t.size() > 9) {
      throw IoError("malformed PNM header field '" + t + "'");
    }
    return std::stoi(t);
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw IoError("missing PNM raster separator");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path,
                 const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_pnm(const PnmImage& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument("PNM images have 1 or 3 channels");
  }
  if (image.maxval < 1 || image.maxval > 65535) {
    throw std::invalid_argument("PNM maxval must be in [1, 65535]");
  }
  const std::size_t n =
      static_cast<std::size_t>(image.width) * image.height * image.channels;
  if (image.samples.size() != n) {
    throw std::invalid_argument("PNM sample count does not match dimensions");
  }
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") +
                             "\n" + std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n" +
                             std::to_string(image.maxval) + "\n";
  const bool wide = image.maxval > 255;
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + n * (wide ? 2 : 1));
  for (std::uint16_t s : image.samples) {
    if (s > image.maxval) {
      throw std::invalid_argument("PNM sample exceeds maxval");
    }
    if (wide) bytes.push_back(static_cast<std::uint8_t>(s >> 8));
    bytes.push_back(static_cast<std::uint8_t>(s & 0xff));
  }
  return bytes;
}

PnmImage decode_pnm(const std::vector<std::uint8_t>& bytes) {
  HeaderReader header(bytes);
  const std::string magic = header.token();
  PnmImage image;
  if (magic == "P5") {
    image.channels = 1;
  } else if (magic == "P6") {
    image.channels = 3;
  } else {
    throw IoError("unsupported PNM magic '" + magic + "'");
  }
  image.width = header.integer();
  image.height = header.integer();
  image.maxval = header.integer();
  if (image.width <= 0 || image.height <= 0) {
    throw IoError("PNM dimensions must be positive");
  }
  if (image.maxval < 1 || image.maxval > 65535) {
    throw IoError("PNM maxval out of range");
  }
  const std::size_t start = header.raster_start();
  const bool wide = image.maxval > 255;
  const std::size_t n =
      static_cast<std::size_t>(image.width) * image.height * image.channels;
  if (bytes.size() < start + n * (wide ? 2 : 1)) {
    throw IoError("truncated PNM raster");
  }
  image.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint16_t s;
    if (wide) {
      s = static_cast<std::uint16_t>((bytes[start + 2 * i] << 8) |
                                     bytes[start + 2 * i + 1]);
    } else {
      s = bytes[start + i];
    }
    if (s > image.maxval) throw IoError("PNM sample exceeds maxval");
    image.samples[i] = s;
  }
  return image;
}

PnmImage read_pnm(const std::filesystem::path& path) {
  try {
    return decode_pnm(read_bytes(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_pnm(const std::filesystem::path& path, const PnmImage& image) {
  write_bytes(path, encode_pnm(image));
}

PnmImage encode_depth(const SparseDepthGrid& grid) {
  PnmImage image;
  image.width = grid.width();
  image.height = grid.height();
  image.channels = 1;
  image.maxval = 65535;
  image.samples.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!grid.valid(i)) {
      image.samples[i] = 0;
      continue;
    }
    // A valid sample never rounds to the "missing" code.
    const double v = std::round(grid.depth(i) * kDepthScale);
    image.samples[i] = static_cast<std::uint16_t>(std::clamp(v, 1.0, 65535.0));
  }
  return image;
}

SparseDepthGrid decode_depth(const PnmImage& image) {
  if (image.channels != 1) throw IoError("depth maps must be single-channel");
  SparseDepthGrid grid(image.height, image.width);
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    grid.set(i, image.samples[i] / kDepthScale);
  }
  return grid;
}

SparseDepthGrid quantize_depth(const SparseDepthGrid& grid) {
  return decode_depth(encode_depth(grid));
}

SparseDepthGrid read_depth_pgm(const std::filesystem::path& path) {
  return decode_depth(read_pnm(path));
}

void write_depth_pgm(const std::filesystem::path& path,
                     const SparseDepthGrid& grid) {
  write_pnm(path, encode_depth(grid));
}

PnmImage encode_guide(const GuideImage& guide) {
  PnmImage image;
  image.width = guide.width();
  image.height = guide.height();
  image.channels = guide.channels();
  image.maxval = 255;
  image.samples.resize(static_cast<std::size_t>(guide.width()) *
                       guide.height() * guide.channels());
  std::size_t i = 0;
  for (int r = 0; r < guide.height(); ++r) {
    for (int c = 0; c < guide.width(); ++c) {
      for (int ch = 0; ch < guide.channels(); ++ch) {
        image.samples[i++] = static_cast<std::uint16_t>(
            std::lround(std::clamp(guide.at(ch, r, c), 0.0, 1.0) * 255.0));
      }
    }
  }
  return image;
}

GuideImage decode_guide(const PnmImage& image) {
  GuideImage guide(image.height, image.width, image.channels);
  std::size_t i = 0;
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      for (int ch = 0; ch < image.channels; ++ch) {
        guide.at(ch, r, c) =
            static_cast<double>(image.samples[i++]) / image.maxval;
      }
    }
  }
  return guide;
}

GuideImage read_guide(const std::filesystem::path& path) {
  return decode_guide(read_pnm(path));
}

void write_guide(const std::filesystem::path& path, const GuideImage& guide) {
  write_pnm(path, encode_guide(guide));
}

PnmImage to_pnm(const RgbImage& image) {
  PnmImage out;
  out.width = image.width;
  out.height = image.height;
  out.channels = 3;
  out.maxval = 255;
  out.samples.assign(image.rgb.begin(), image.rgb.end());
  return out;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  write_pnm(path, to_pnm(image));
}

}  // namespace udc

#include <doctest.h>

#include <cmath>
#include <cstring>

#include "support.hpp"
#include "udc/checkpoint.hpp"
#include "udc/model.hpp"
#include "udc/pnm_io.hpp"
#include "udc/render.hpp"

using namespace udc;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) {
  return {s.begin(), s.end()};
}

}  // namespace

TEST_CASE("16-bit depth PGM is big-endian with 1/256 m steps") {
  SparseDepthGrid s(1, 3);
  s.set(0, 0, 1.0);
  s.set(0, 2, 255.99);
  const std::vector<std::uint8_t> bytes = encode_pnm(encode_depth(s));
  const std::string header = "P5\n3 1\n65535\n";
  REQUIRE(bytes.size() == header.size() + 6);
  CHECK(std::memcmp(bytes.data(), header.data(), header.size()) == 0);
  const std::uint8_t* raster = bytes.data() + header.size();
  CHECK(raster[0] == 0x01);  // 256
  CHECK(raster[1] == 0x00);
  CHECK(raster[2] == 0x00);
  CHECK(raster[3] == 0x00);
  CHECK(raster[4] * 256 + raster[5] == 65533);  // round(255.99·256)

  const SparseDepthGrid back = decode_depth(decode_pnm(bytes));
  CHECK(back.valid(0, 0));
  CHECK_FALSE(back.valid(0, 1));
  CHECK(back.depth(0, 2) == 65533 / 256.0);
}

TEST_CASE("depth encoding keeps tiny valid samples valid and saturates far ones") {
  SparseDepthGrid s(1, 2);
  s.set(0, 0, 1e-4);
  s.set(0, 1, 1000.0);
  const PnmImage img = encode_depth(s);
  CHECK(img.samples[0] == 1);
  CHECK(img.samples[1] == 65535);
}

TEST_CASE("quantized depth round-trips losslessly") {
  auto rng = test::rng_for(10);
  test::TempDir dir("depth_rt");
  for (int trial = 0; trial < 10; ++trial) {
    const SparseDepthGrid q = quantize_depth(test::random_sparse(rng, 9, 13, 0.4, 0.5, 80.0));
    write_depth_pgm(dir / "d.pgm", q);
    CHECK(read_depth_pgm(dir / "d.pgm") == q);
    CHECK(quantize_depth(q) == q);
  }
}

TEST_CASE("guide images round-trip through 8-bit PGM and PPM") {
  auto rng = test::rng_for(11);
  test::TempDir dir("guide_rt");
  for (int channels : {1, 3}) {
    GuideImage g = test::random_guide(rng, 6, 10, channels);
    for (double& v : g.values()) v = std::round(v * 255.0) / 255.0;
    write_guide(dir / "g.pnm", g);
    const GuideImage back = read_guide(dir / "g.pnm");
    REQUIRE(back.channels() == channels);
    for (std::size_t i = 0; i < g.values().size(); ++i) {
      CHECK(back.values()[i] == doctest::Approx(g.values()[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("PNM header comments and maxval variants parse") {
  const auto img = decode_pnm(bytes_of("P5\n# comment\n2 1\n# another\n15\n\x03\x0f"));
  CHECK(img.width == 2);
  CHECK(img.maxval == 15);
  CHECK(img.samples == std::vector<std::uint16_t>{3, 15});
  CHECK(decode_guide(img).at(0, 0, 1) == 1.0);
}

TEST_CASE("malformed PNM input throws IoError") {
  CHECK_THROWS_AS(decode_pnm(bytes_of("")), IoError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P2\n1 1\n255\n0")), IoError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P5\n2 2\n255\n\x01")), IoError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P5\n0 2\n255\n")), IoError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P5\n1 1\n70000\n\x01\x01")), IoError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P5\n1 1\n10\n\x0b")), IoError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P5\nx 1\n255\n\x00")), IoError);
  CHECK_THROWS_AS(decode_depth(decode_pnm(bytes_of("P6\n1 1\n255\nabc"))), IoError);
  CHECK_THROWS_AS(read_pnm("/nonexistent/file.pgm"), IoError);
}

TEST_CASE("PNM encode rejects inconsistent images") {
  PnmImage img;
  img.width = 2;
  img.height = 1;
  img.samples = {1};
  CHECK_THROWS_AS(encode_pnm(img), std::invalid_argument);
  img.samples = {1, 300};
  CHECK_THROWS_AS(encode_pnm(img), std::invalid_argument);
  img.channels = 2;
  CHECK_THROWS_AS(encode_pnm(img), std::invalid_argument);
}

TEST_CASE("parameter file layout is little-endian with named entries") {
  ParameterFile f;
  f.metadata = "k=v";
  f.entries.push_back({"w", ad::Tensor({2, 1}, std::vector<double>{1.5, -2.0})});
  const std::vector<std::uint8_t> b = encode_parameters(f);
  // magic, version, metadata, count, name, rank, dims, values
  REQUIRE(b.size() == 4 + 4 + 4 + 3 + 4 + 4 + 1 + 4 + 8 + 16);
  CHECK(std::memcmp(b.data(), "UDCK", 4) == 0);
  CHECK(b[4] == 1);
  CHECK(b[5] == 0);
  CHECK(b[8] == 3);
  CHECK(b[15] == 1);  // count
  double first = 0.0;
  std::memcpy(&first, b.data() + b.size() - 16, 8);
  CHECK(first == 1.5);
  CHECK(decode_parameters(b) == f);
}

TEST_CASE("corrupted parameter files are rejected") {
  ParameterFile f;
  f.entries.push_back({"a", ad::Tensor({3}, 2.0)});
  const auto good = encode_parameters(f);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_parameters(bad_magic), IoError);
  auto bad_version = good;
  bad_version[4] = 9;
  CHECK_THROWS_AS(decode_parameters(bad_version), IoError);
  for (std::size_t cut : {std::size_t{0}, std::size_t{6}, good.size() - 1}) {
    CHECK_THROWS_AS(
        decode_parameters(std::vector<std::uint8_t>(good.begin(), good.begin() + cut)),
        IoError);
  }
  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_parameters(trailing), IoError);
  CHECK_THROWS_AS(read_parameter_file("/nonexistent/x.ckpt"), IoError);
}

TEST_CASE("colormaps hit their anchors") {
  CHECK(diverging(0.0) == Rgb{128, 128, 128});
  const Rgb blue = diverging(-1.0);
  const Rgb red = diverging(1.0);
  CHECK(blue[2] > blue[0]);
  CHECK(red[0] > red[2]);
  CHECK(diverging(-7.0) == blue);
  CHECK(turbo(-1.0) == turbo(0.0));
  CHECK(turbo(2.0) == turbo(1.0));
  CHECK(turbo(0.0) != turbo(1.0));
}

TEST_CASE("renders are uniform for uniform inputs and re-parse as P6") {
  test::TempDir dir("render_rt");
  const RgbImage depth = render_depth(DepthGrid(4, 6, 10.0));
  const RgbImage resid = render_residual(FieldGrid(4, 6, 0.0));
  for (std::size_t i = 0; i < resid.rgb.size(); ++i) CHECK(resid.rgb[i] == 128);
  for (std::size_t i = 3; i < depth.rgb.size(); ++i) CHECK(depth.rgb[i] == depth.rgb[i % 3]);
  write_ppm(dir / "d.ppm", depth);
  const PnmImage back = read_pnm(dir / "d.ppm");
  CHECK(back.channels == 3);
  CHECK(back.width == 6);
  CHECK(back.height == 4);
  CHECK(back == to_pnm(depth));
  const RgbImage s = render_logvar(LogVarGrid(2, 2, -20.0));
  CHECK(s.rgb == render_logvar(LogVarGrid(2, 2, -kLogVarBound)).rgb);
}

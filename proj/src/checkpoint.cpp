#include "udc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace udc {

namespace {

constexpr char kMagic[4] = {'U', 'D', 'C', 'K'};
// Guards against absurd allocations from corrupted headers.
constexpr std::uint32_t kMaxNameLength = 4096;
constexpr std::uint32_t kMaxRank = 8;

static_assert(sizeof(double) == 8);

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw IoError("truncated parameter file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{in_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{in_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_parameters(const ParameterFile& file) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(file.metadata.size()));
  w.bytes(file.metadata.data(), file.metadata.size());
  w.u32(static_cast<std::uint32_t>(file.entries.size()));
  for (const NamedTensor& e : file.entries) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u32(static_cast<std::uint32_t>(e.value.rank()));
    for (int d : e.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : e.value.data()) w.f64(v);
  }
  return w.take();
}

ParameterFile decode_parameters(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) {
    throw IoError("not a parameter file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported parameter file version " + std::to_string(version));
  }
  ParameterFile file;
  const std::uint32_t meta_len = r.u32();
  file.metadata = r.str(meta_len);
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    const std::uint32_t name_len = r.u32();
    if (name_len > kMaxNameLength) throw IoError("parameter name too long");
    e.name = r.str(name_len);
    const std::uint32_t rank = r.u32();
    if (rank > kMaxRank) throw IoError("parameter rank too large");
    ad::Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      const std::uint32_t v = r.u32();
      if (v > (1u << 30)) throw IoError("parameter dimension too large");
      d = static_cast<int>(v);
      numel *= v;
    }
    if (numel * 8 > r.remaining()) throw IoError("truncated parameter values");
    std::vector<double> data(static_cast<std::size_t>(numel));
    for (double& v : data) v = r.f64();
    e.value = ad::Tensor(std::move(shape), std::move(data));
    file.entries.push_back(std::move(e));
  }
  if (!r.done()) throw IoError("trailing bytes after parameter entries");
  return file;
}

void write_parameter_file(const std::filesystem::path& path,
                          const ParameterFile& file) {
  const auto bytes = encode_parameters(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

ParameterFile read_parameter_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  try {
    return decode_parameters(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace udc

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "udc/grid.hpp"
#include "udc/rng.hpp"

namespace udc::test {

inline CounterRng rng_for(std::uint64_t case_id) {
  return CounterRng(0x5eed, case_id, RngOp::kTest);
}

template <class Tag>
Grid<Tag> random_grid(CounterRng& rng, int h, int w, double lo, double hi) {
  Grid<Tag> g(h, w);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = rng.uniform(lo, hi);
  return g;
}

inline ValidityMask random_mask(CounterRng& rng, int h, int w, double p) {
  ValidityMask m(h, w);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.uniform() < p);
  return m;
}

inline SparseDepthGrid random_sparse(CounterRng& rng, int h, int w, double p,
                                     double lo = 1.0, double hi = 50.0) {
  SparseDepthGrid s(h, w);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double d = rng.uniform(lo, hi);
    if (rng.uniform() < p) s.set(i, d);
  }
  return s;
}

inline GuideImage random_guide(CounterRng& rng, int h, int w, int channels = 1) {
  GuideImage g(h, w, channels);
  for (double& v : g.values()) v = rng.uniform();
  return g;
}

/// Fresh empty directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("udc_test_" + tag);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace udc::test

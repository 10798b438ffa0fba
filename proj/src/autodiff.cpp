#include "udc/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "udc/grid.hpp"

namespace udc::ad {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

void require_rank4(const Var& x, const char* op) {
  if (x.shape().size() != 4) {
    throw std::invalid_argument(std::string(op) + ": expected NCHW tensor, got " +
                                shape_str(x.shape()));
  }
}

void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) {
    throw std::invalid_argument("operands recorded on different tapes");
  }
}

// Unary pointwise op with derivative computed from (input, output).
template <class Forward, class Derivative>
Var pointwise(const Var& x, Forward forward, Derivative derivative) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = forward(in[i]);
  return x.tape().record(std::move(out), {x},
                         [x, derivative](Tape& t, const Tensor& g) {
                           Tensor* gx = t.grad_buffer(x);
                           const Tensor& xin = t.value(x);
                           for (std::size_t i = 0; i < g.numel(); ++i) {
                             (*gx)[i] += g[i] * derivative(xin[i]);
                           }
                         });
}

using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

// Geometry of one convolution; output rows are processed in bands so the
// column buffer stays cache-resident.
struct ConvGeometry {
  int channels, height, width, k, stride, pad, out_h, out_w;

  std::size_t plane() const { return static_cast<std::size_t>(out_h) * out_w; }
  int ckk() const { return channels * k * k; }
  /// Output columns [lo, hi) whose stride-1 input column lies inside the image.
  std::pair<int, int> valid_columns(int kx) const {
    return {std::clamp(pad - kx, 0, out_w), std::clamp(width + pad - kx, 0, out_w)};
  }
  int band_rows() const {
    constexpr std::size_t kBandDoubles = 1 << 16;
    const std::size_t per_row = static_cast<std::size_t>(ckk()) * out_w;
    return static_cast<int>(std::max<std::size_t>(1, kBandDoubles / per_row));
  }
};

// Rows of the column matrix: (c, ky, kx); columns: output pixels of rows
// [oy0, oy1).
void im2col(const ConvGeometry& g, const double* img, int oy0, int oy1,
            double* cols) {
  const std::size_t n = static_cast<std::size_t>(oy1 - oy0) * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    const double* src = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* dst = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * n;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* row = dst + static_cast<std::size_t>(oy - oy0) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(row, row + g.out_w, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(iy) * g.width;
          if (g.stride == 1) {
            const auto [lo, hi] = g.valid_columns(kx);
            std::fill(row, row + lo, 0.0);
            std::copy(srow + lo - g.pad + kx, srow + hi - g.pad + kx, row + lo);
            std::fill(row + hi, row + g.out_w, 0.0);
            continue;
          }
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            row[ox] = (ix >= 0 && ix < g.width) ? srow[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* cols, int oy0, int oy1,
            double* img) {
  const std::size_t n = static_cast<std::size_t>(oy1 - oy0) * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    double* dst = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* src =
            cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * n;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const double* row = src + static_cast<std::size_t>(oy - oy0) * g.out_w;
          double* drow = dst + static_cast<std::size_t>(iy) * g.width;
          if (g.stride == 1) {
            const auto [lo, hi] = g.valid_columns(kx);
            double* d = drow - g.pad + kx;
            for (int ox = lo; ox < hi; ++ox) d[ox] += row[ox];
            continue;
          }
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) drow[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor data length " +
                                std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw std::invalid_argument("item() on a tensor of shape " +
                                shape_str(shape_));
  }
  return data_[0];
}

const Tensor& Var::value() const { return tape_->value(*this); }
const Tensor& Var::grad() const { return tape_->grad(*this); }

std::size_t Tape::check(const Var& v) const {
  if (v.tape_ != this || v.id_ < 0 ||
      static_cast<std::size_t>(v.id_) >= nodes_.size()) {
    throw std::invalid_argument("variable does not belong to this tape");
  }
  return static_cast<std::size_t>(v.id_);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back({std::move(value), {}, true, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, false, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents,
                 BackwardFn fn) {
  if (consumed_) {
    throw std::logic_error("cannot record on a consumed tape");
  }
  bool needs = false;
  for (const Var& p : parents) needs = needs || nodes_[check(p)].requires_grad;
  nodes_.push_back({std::move(value), {}, needs, needs ? std::move(fn) : nullptr});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Tensor* Tape::grad_buffer(const Var& v) {
  Node& node = nodes_[check(v)];
  if (!node.requires_grad) return nullptr;
  if (node.grad.numel() != node.value.numel()) {
    node.grad = Tensor(node.value.shape(), 0.0);
  }
  return &node.grad;
}

const Tensor& Tape::grad(const Var& v) const {
  const Node& node = nodes_[check(v)];
  if (node.grad.numel() != node.value.numel()) {
    node.grad = Tensor(node.value.shape(), 0.0);
  }
  return node.grad;
}

void Tape::backward(const Var& root) {
  const std::size_t r = check(root);
  if (consumed_) {
    throw std::logic_error("backward already ran on this tape; re-record");
  }
  if (nodes_[r].value.numel() != 1) {
    throw std::invalid_argument("backward root must be scalar, got shape " +
                                shape_str(nodes_[r].value.shape()));
  }
  consumed_ = true;
  if (!nodes_[r].requires_grad) return;
  grad_buffer(root)->data()[0] = 1.0;
  for (std::size_t i = r + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.numel() == 0) continue;
    node.backward(*this, node.grad);
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride,
           int padding) {
  require_rank4(x, "conv2d");
  require_same_tape(x, weight);
  require_same_tape(x, bias);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3]) {
    throw std::invalid_argument("conv2d: weight shape " + shape_str(ws) +
                                " incompatible with input " + shape_str(xs));
  }
  if (bias.shape() != Shape{ws[0]}) {
    throw std::invalid_argument("conv2d: bias shape " +
                                shape_str(bias.shape()) + " expected (" +
                                std::to_string(ws[0]) + ")");
  }
  if (stride != 1 && stride != 2) {
    throw std::invalid_argument("conv2d: stride must be 1 or 2");
  }
  if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
  const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int o = ws[0], k = ws[2];
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  }
  const ConvGeometry geo{c, h, w, k, stride, padding,
                         (h + 2 * padding - k) / stride + 1,
                         (w + 2 * padding - k) / stride + 1};
  const std::size_t plane = geo.plane();
  const int ckk = geo.ckk();
  const bool pointwise_kernel = (k == 1 && stride == 1 && padding == 0);
  const int band = geo.band_rows();

  Tensor out({n, o, geo.out_h, geo.out_w});
  ConstMatrixMap wm(weight.value().ptr(), o, ckk);
  const Tensor& bv = bias.value();
  std::vector<double> cols;
  if (!pointwise_kernel) cols.resize(static_cast<std::size_t>(ckk) * band * geo.out_w);
  for (int b = 0; b < n; ++b) {
    const double* img = x.value().ptr() + static_cast<std::size_t>(b) * c * h * w;
    double* obase = out.ptr() + static_cast<std::size_t>(b) * o * plane;
    if (pointwise_kernel) {
      MatrixMap om(obase, o, static_cast<Eigen::Index>(plane));
      om.noalias() = wm * ConstMatrixMap(img, c, static_cast<Eigen::Index>(plane));
    } else {
      for (int oy0 = 0; oy0 < geo.out_h; oy0 += band) {
        const int oy1 = std::min(geo.out_h, oy0 + band);
        const auto cols_n = static_cast<Eigen::Index>(oy1 - oy0) * geo.out_w;
        im2col(geo, img, oy0, oy1, cols.data());
        StridedMap om(obase + static_cast<std::size_t>(oy0) * geo.out_w, o, cols_n,
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
        om.noalias() = wm * ConstMatrixMap(cols.data(), ckk, cols_n);
      }
    }
    MatrixMap om(obase, o, static_cast<Eigen::Index>(plane));
    for (int oc = 0; oc < o; ++oc) om.row(oc).array() += bv[oc];
  }

  return x.tape().record(
      std::move(out), {x, weight, bias},
      [x, weight, bias, geo, n, o, pointwise_kernel, band](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(x);
        Tensor* gw = t.grad_buffer(weight);
        Tensor* gb = t.grad_buffer(bias);
        const int c = geo.channels, ckk = geo.ckk();
        const std::size_t plane = geo.plane();
        const std::size_t in_size = static_cast<std::size_t>(c) * geo.height * geo.width;
        ConstMatrixMap wm(t.value(weight).ptr(), o, ckk);
        std::vector<double> cols, gcols;
        if (!pointwise_kernel) {
          cols.resize(static_cast<std::size_t>(ckk) * band * geo.out_w);
          if (gx) gcols.resize(cols.size());
        }
        for (int b = 0; b < n; ++b) {
          const double* gbase = g.ptr() + static_cast<std::size_t>(b) * o * plane;
          const double* img = t.value(x).ptr() + b * in_size;
          ConstMatrixMap gm(gbase, o, static_cast<Eigen::Index>(plane));
          if (gb) {
            for (int oc = 0; oc < o; ++oc) {
              const double* row = gbase + static_cast<std::size_t>(oc) * plane;
              (*gb)[oc] += std::accumulate(row, row + plane, 0.0);
            }
          }
          if (pointwise_kernel) {
            ConstMatrixMap xm(img, c, static_cast<Eigen::Index>(plane));
            if (gw) MatrixMap(gw->ptr(), o, ckk).noalias() += gm * xm.transpose();
            if (gx) {
              MatrixMap gxm(gx->ptr() + b * in_size, c, static_cast<Eigen::Index>(plane));
              gxm.noalias() += wm.transpose() * gm;
            }
            continue;
          }
          for (int oy0 = 0; oy0 < geo.out_h; oy0 += band) {
            const int oy1 = std::min(geo.out_h, oy0 + band);
            const auto cols_n = static_cast<Eigen::Index>(oy1 - oy0) * geo.out_w;
            ConstStridedMap gt(gbase + static_cast<std::size_t>(oy0) * geo.out_w, o,
                               cols_n, Eigen::OuterStride<>(static_cast<Eigen::Index>(plane)));
            if (gw) {
              im2col(geo, img, oy0, oy1, cols.data());
              MatrixMap(gw->ptr(), o, ckk).noalias() +=
                  gt * ConstMatrixMap(cols.data(), ckk, cols_n).transpose();
            }
            if (gx) {
              MatrixMap(gcols.data(), ckk, cols_n).noalias() = wm.transpose() * gt;
              col2im(geo, gcols.data(), oy0, oy1, gx->ptr() + b * in_size);
            }
          }
        }
      });
}

Var relu(const Var& x) {
  return pointwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v >= 0.0 ? 1.0 : 0.0; });
}

Var exp(const Var& x) {
  return pointwise(
      x, [](double v) { return std::exp(v); },
      [](double v) { return std::exp(v); });
}

Var log(const Var& x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw std::domain_error("log of non-positive entry");
  }
  return pointwise(
      x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Var softplus(const Var& x) {
  return pointwise(
      x,
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v) {
        // Logistic sigmoid, evaluated without overflow.
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Var clamp(const Var& x, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return pointwise(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var scale(const Var& x, double factor) {
  return pointwise(
      x, [factor](double v) { return factor * v; },
      [factor](double) { return factor; });
}

Var add_scalar(const Var& x, double offset) {
  return pointwise(
      x, [offset](double v) { return v + offset; }, [](double) { return 1.0; });
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (Tensor* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record(Tensor::scalar(total), {x}, [x](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(x);
    const double gv = g[0];
    for (double& v : gx->data()) v += gv;
  });
}

Var dot_constant(const Var& x, const Tensor& weights) {
  if (weights.shape() != x.shape()) {
    throw std::invalid_argument("dot_constant: shape mismatch");
  }
  const Tensor& xv = x.value();
  double total = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) total += xv[i] * weights[i];
  return x.tape().record(Tensor::scalar(total), {x},
                         [x, weights](Tape& t, const Tensor& g) {
                           Tensor* gx = t.grad_buffer(x);
                           const double gv = g[0];
                           for (std::size_t i = 0; i < weights.numel(); ++i) {
                             (*gx)[i] += gv * weights[i];
                           }
                         });
}

Var maxpool2(const Var& x) {
  require_rank4(x, "maxpool2");
  const Shape& s = x.shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("maxpool2: spatial dims must be even, got " +
                                shape_str(s));
  }
  const int oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  const Tensor& in = x.value();
  std::size_t o = 0;
  for (int p = 0; p < n * c; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * h * w;
    for (int r = 0; r < oh; ++r) {
      for (int col = 0; col < ow; ++col, ++o) {
        const std::size_t i0 = base + static_cast<std::size_t>(2 * r) * w + 2 * col;
        const std::size_t cand[4] = {i0, i0 + 1, i0 + w, i0 + w + 1};
        std::size_t best = cand[0];
        for (int q = 1; q < 4; ++q) {
          if (in[cand[q]] > in[best]) best = cand[q];
        }
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  return x.tape().record(std::move(out), {x},
                         [x, argmax = std::move(argmax)](Tape& t, const Tensor& g) {
                           Tensor* gx = t.grad_buffer(x);
                           for (std::size_t i = 0; i < g.numel(); ++i) {
                             (*gx)[argmax[i]] += g[i];
                           }
                         });
}

Var upsample_nearest2(const Var& x) {
  require_rank4(x, "upsample_nearest2");
  const Shape& s = x.shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  const int oh = 2 * h, ow = 2 * w;
  Tensor out({n, c, oh, ow});
  const Tensor& in = x.value();
  for (int p = 0; p < n * c; ++p) {
    const double* src = in.ptr() + static_cast<std::size_t>(p) * h * w;
    double* dst = out.ptr() + static_cast<std::size_t>(p) * oh * ow;
    for (int r = 0; r < oh; ++r) {
      const double* srow = src + static_cast<std::size_t>(r / 2) * w;
      double* drow = dst + static_cast<std::size_t>(r) * ow;
      for (int col = 0; col < ow; ++col) drow[col] = srow[col / 2];
    }
  }
  return x.tape().record(
      std::move(out), {x}, [x, n, c, h, w](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(x);
        const int ow = 2 * w;
        for (int p = 0; p < n * c; ++p) {
          const double* src = g.ptr() + static_cast<std::size_t>(p) * 4 * h * w;
          double* dst = gx->ptr() + static_cast<std::size_t>(p) * h * w;
          for (int r = 0; r < h; ++r) {
            const double* g0 = src + static_cast<std::size_t>(2 * r) * ow;
            const double* g1 = g0 + ow;
            for (int col = 0; col < w; ++col) {
              dst[static_cast<std::size_t>(r) * w + col] +=
                  g0[2 * col] + g0[2 * col + 1] + g1[2 * col] + g1[2 * col + 1];
            }
          }
        }
      });
}

Var upsample_bilinear(const Var& x, int factor) {
  require_rank4(x, "upsample_bilinear");
  if (!is_power_of_two(factor)) {
    throw std::invalid_argument("upsample_bilinear: factor must be a power of two");
  }
  const Shape& s = x.shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  const int oh = h * factor, ow = w * factor;
  std::vector<LinearTap> rows(oh), cols(ow);
  for (int r = 0; r < oh; ++r) rows[r] = bilinear_tap(r, h, factor);
  for (int col = 0; col < ow; ++col) cols[col] = bilinear_tap(col, w, factor);

  Tensor out({n, c, oh, ow});
  const Tensor& in = x.value();
  for (int p = 0; p < n * c; ++p) {
    const double* src = in.ptr() + static_cast<std::size_t>(p) * h * w;
    double* dst = out.ptr() + static_cast<std::size_t>(p) * oh * ow;
    for (int r = 0; r < oh; ++r) {
      const LinearTap& ty = rows[r];
      for (int col = 0; col < ow; ++col) {
        const LinearTap& tx = cols[col];
        const double top = (1.0 - tx.w_hi) * src[ty.lo * w + tx.lo] +
                           tx.w_hi * src[ty.lo * w + tx.hi];
        const double bottom = (1.0 - tx.w_hi) * src[ty.hi * w + tx.lo] +
                              tx.w_hi * src[ty.hi * w + tx.hi];
        dst[static_cast<std::size_t>(r) * ow + col] =
            (1.0 - ty.w_hi) * top + ty.w_hi * bottom;
      }
    }
  }
  return x.tape().record(
      std::move(out), {x},
      [x, rows = std::move(rows), cols = std::move(cols), n, c, h, w, oh,
       ow](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(x);
        for (int p = 0; p < n * c; ++p) {
          const double* src = g.ptr() + static_cast<std::size_t>(p) * oh * ow;
          double* dst = gx->ptr() + static_cast<std::size_t>(p) * h * w;
          for (int r = 0; r < oh; ++r) {
            const LinearTap& ty = rows[r];
            for (int col = 0; col < ow; ++col) {
              const LinearTap& tx = cols[col];
              const double gv = src[static_cast<std::size_t>(r) * ow + col];
              const double top = (1.0 - ty.w_hi) * gv;
              const double bottom = ty.w_hi * gv;
              dst[ty.lo * w + tx.lo] += (1.0 - tx.w_hi) * top;
              dst[ty.lo * w + tx.hi] += tx.w_hi * top;
              dst[ty.hi * w + tx.lo] += (1.0 - tx.w_hi) * bottom;
              dst[ty.hi * w + tx.hi] += tx.w_hi * bottom;
            }
          }
        }
      });
}

Var concat_channels(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_rank4(a, "concat_channels");
  require_rank4(b, "concat_channels");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3]) {
    throw std::invalid_argument("concat_channels: mismatch " + shape_str(as) +
                                " vs " + shape_str(bs));
  }
  const int n = as[0], ca = as[1], cb = bs[1];
  const std::size_t plane = static_cast<std::size_t>(as[2]) * as[3];
  Tensor out({n, ca + cb, as[2], as[3]});
  for (int i = 0; i < n; ++i) {
    double* dst = out.ptr() + static_cast<std::size_t>(i) * (ca + cb) * plane;
    const double* sa = a.value().ptr() + static_cast<std::size_t>(i) * ca * plane;
    const double* sb = b.value().ptr() + static_cast<std::size_t>(i) * cb * plane;
    std::copy(sa, sa + ca * plane, dst);
    std::copy(sb, sb + cb * plane, dst + ca * plane);
  }
  return a.tape().record(
      std::move(out), {a, b}, [a, b, n, ca, cb, plane](Tape& t, const Tensor& g) {
        Tensor* ga = t.grad_buffer(a);
        Tensor* gb = t.grad_buffer(b);
        for (int i = 0; i < n; ++i) {
          const double* src = g.ptr() + static_cast<std::size_t>(i) * (ca + cb) * plane;
          if (ga) {
            double* d = ga->ptr() + static_cast<std::size_t>(i) * ca * plane;
            for (std::size_t j = 0; j < ca * plane; ++j) d[j] += src[j];
          }
          if (gb) {
            double* d = gb->ptr() + static_cast<std::size_t>(i) * cb * plane;
            const double* s2 = src + ca * plane;
            for (std::size_t j = 0; j < cb * plane; ++j) d[j] += s2[j];
          }
        }
      });
}

GradCheckResult compare_gradient(const ValueFn& f, const Tensor& x,
                                 const Tensor& analytic, double eps,
                                 const GradCheckOptions& options) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be > 0");
  if (analytic.numel() != x.numel()) {
    throw std::invalid_argument("grad_check: gradient size mismatch");
  }
  std::vector<std::size_t> coords = options.coords;
  if (coords.empty()) {
    coords.resize(x.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  }
  GradCheckResult result;
  Tensor probe = x;
  const double f0 = f(x);
  for (std::size_t i : coords) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(probe);
    probe[i] = orig - eps;
    const double fm = f(probe);
    probe[i] = orig;
    const double forward = (fp - f0) / eps;
    const double backward = (f0 - fm) / eps;
    const double slope_scale =
        std::max({1.0, std::abs(forward), std::abs(backward)});
    if (std::abs(forward - backward) > options.kink_tol * slope_scale) {
      ++result.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    const double denom =
        std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
    ++result.checked;
  }
  return result;
}

GradCheckResult grad_check(const RecordedFn& f, const Tensor& x, double eps,
                           const GradCheckOptions& options) {
  Tape tape;
  Var xv = tape.leaf(x);
  Var out = f(tape, xv);
  tape.backward(out);
  const Tensor analytic = tape.grad(xv);
  auto value = [&f](const Tensor& probe) {
    Tape t;
    Var v = t.constant(probe);
    return f(t, v).value().item();
  };
  return compare_gradient(value, x, analytic, eps, options);
}

}  // namespace udc::ad

#pragma once

// Reverse-mode automatic differentiation over dense float64 tensors.
//
// A Tape records every operation in execution order; backward() walks the
// record once in reverse. Tensors use NCHW layout for 4-d data. There is
// no broadcasting: operands of binary ops must have identical shapes.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace udc::ad {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Value of a single-element tensor.
  double item() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

/// Handle to a node recorded on a tape.
class Var {
 public:
  Var() = default;

  /// The reference is invalidated when the tape records another node.
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient accumulated by the last backward pass (zeros if none).
  const Tensor& grad() const;
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Ordered operation record. Single use: backward() may run once.
class Tape {
 public:
  /// Propagates the output gradient into the parents' buffers.
  using BackwardFn = std::function<void(Tape& tape, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input.
  Var leaf(Tensor value);
  /// Input excluded from differentiation.
  Var constant(Tensor value);

  /// Appends a node. `fn` is dropped when no parent requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);

  /// Seeds d(root)/d(root) = 1 and propagates to every node. Throws
  /// std::invalid_argument for a non-scalar root and std::logic_error
  /// when the tape was already consumed.
  void backward(const Var& root);

  const Tensor& value(const Var& v) const { return nodes_[check(v)].value; }
  const Tensor& grad(const Var& v) const;
  bool requires_grad(const Var& v) const {
    return nodes_[check(v)].requires_grad;
  }
  /// Gradient buffer for accumulation inside a BackwardFn; null when the
  /// node does not require a gradient.
  Tensor* grad_buffer(const Var& v);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor value;
    mutable Tensor grad;  // zeros materialized on first read
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::size_t check(const Var& v) const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Convolution (cross-correlation), zero padding. x: (N,C,H,W),
// weight: (O,C,k,k), bias: (O). Output spatial size
// floor((H + 2·pad − k)/stride) + 1.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride,
           int padding);

// Pointwise ops. relu'(0) is taken as 1.
Var relu(const Var& x);
Var exp(const Var& x);
/// Throws std::domain_error on a non-positive entry.
Var log(const Var& x);
Var softplus(const Var& x);
/// Gradient passes where lo <= x <= hi.
Var clamp(const Var& x, double lo, double hi);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double offset);

/// Sum of all entries, shape {1}.
Var sum(const Var& x);
/// Σ x·weights with `weights` held constant. Injects an externally
/// computed gradient: d/dx = weights.
Var dot_constant(const Var& x, const Tensor& weights);

/// 2×2 stride-2 max pooling; ties resolve to the first index in raster
/// order. Spatial dims must be even.
Var maxpool2(const Var& x);
/// Replicates every pixel into a 2×2 block.
Var upsample_nearest2(const Var& x);
/// Align-corners-false bilinear upsampling by a power-of-two factor.
Var upsample_bilinear(const Var& x, int factor);
/// Channel concatenation; N, H, W must match.
Var concat_channels(const Var& a, const Var& b);

struct GradCheckOptions {
  /// Coordinates to probe; empty means all.
  std::vector<std::size_t> coords;
  /// Coordinates where one-sided slopes disagree by more than
  /// kink_tol·max(1, |slope|) straddle a kink and are skipped.
  double kink_tol = 1e-3;
  /// Lower bound on the relative-error denominator.
  double denominator_floor = 1e-8;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

using RecordedFn = std::function<Var(Tape& tape, const Var& x)>;
using ValueFn = std::function<double(const Tensor& x)>;

/// Analytic gradient of f at x against central differences
/// (f(x+eps) − f(x−eps)) / (2·eps), per coordinate.
GradCheckResult grad_check(const RecordedFn& f, const Tensor& x, double eps,
                           const GradCheckOptions& options = {});

/// Same comparison for a gradient computed elsewhere.
GradCheckResult compare_gradient(const ValueFn& f, const Tensor& x,
                                 const Tensor& analytic, double eps,
                                 const GradCheckOptions& options = {});

}  // namespace udc::ad

#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <string>

#include "support.hpp"
#include "udc/autodiff.hpp"

using namespace udc;
using namespace udc::ad;

namespace {

constexpr int kInstances = 20;
constexpr double kEps = 1e-6;
constexpr double kMaxRelError = 1e-4;

Tensor random_tensor(CounterRng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Runs `make` on kInstances fresh random draws; `make` returns the input
/// point and a scalar function of it.
template <class Make>
void check_instances(std::uint64_t case_id, Make make, double eps = kEps) {
  auto rng = test::rng_for(case_id);
  for (int i = 0; i < kInstances; ++i) {
    auto [x, f] = make(rng);
    const GradCheckResult r = grad_check(f, x, eps);
    CAPTURE(i);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < kMaxRelError);
  }
}

/// Unary op followed by a random linear readout.
template <class Op>
void check_unary(std::uint64_t case_id, Op op, Shape shape, double lo = -1.0,
                 double hi = 1.0) {
  check_instances(case_id, [&](CounterRng& rng) {
    Tensor x = random_tensor(rng, shape, lo, hi);
    Tape probe;
    Tensor w = random_tensor(rng, op(probe.constant(x)).shape());
    RecordedFn f = [op, w](Tape&, const Var& v) { return dot_constant(op(v), w); };
    return std::pair{x, f};
  });
}

Var conv_fixed(Tape& tape, const Var& x, const Tensor& w, const Tensor& b, int stride,
               int pad) {
  return conv2d(x, tape.constant(w), tape.constant(b), stride, pad);
}

}  // namespace

TEST_CASE("conv2d identity and direct summation") {
  auto rng = test::rng_for(20);
  Tape tape;
  const Tensor x = random_tensor(rng, {1, 1, 4, 5});
  const Var id = conv2d(tape.constant(x), tape.constant(Tensor({1, 1, 1, 1}, 1.0)),
                        tape.constant(Tensor({1}, 0.0)), 1, 0);
  CHECK(id.value() == x);

  const Var ones = conv2d(tape.constant(Tensor({1, 1, 5, 5}, 1.0)),
                          tape.constant(Tensor({1, 1, 3, 3}, 1.0)),
                          tape.constant(Tensor({1}, 0.0)), 1, 1);
  REQUIRE(ones.shape() == Shape{1, 1, 5, 5});
  CHECK(ones.value()[2 * 5 + 2] == 9.0);
  CHECK(ones.value()[0] == 4.0);
  CHECK(ones.value()[1] == 6.0);
}

TEST_CASE("conv2d matches a direct loop on random multi-channel input") {
  auto rng = test::rng_for(21);
  for (auto [k, stride, pad] : {std::tuple{3, 1, 1}, {3, 2, 1}, {5, 1, 2}, {5, 2, 0}, {1, 1, 0}}) {
    const int n = 2, c = 3, o = 4, h = 9, w = 11;
    const Tensor x = random_tensor(rng, {n, c, h, w});
    const Tensor wt = random_tensor(rng, {o, c, k, k});
    const Tensor b = random_tensor(rng, {o});
    Tape tape;
    const Var y = conv_fixed(tape, tape.constant(x), wt, b, stride, pad);
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;
    REQUIRE(y.shape() == Shape{n, o, oh, ow});
    double max_diff = 0.0;
    for (int ni = 0; ni < n; ++ni)
      for (int oi = 0; oi < o; ++oi)
        for (int r = 0; r < oh; ++r)
          for (int col = 0; col < ow; ++col) {
            double acc = b[oi];
            for (int ci = 0; ci < c; ++ci)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int yy = r * stride - pad + ky;
                  const int xx = col * stride - pad + kx;
                  if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                  acc += x[((ni * c + ci) * h + yy) * w + xx] *
                         wt[((oi * c + ci) * k + ky) * k + kx];
                }
            const double got = y.value()[((ni * o + oi) * oh + r) * ow + col];
            max_diff = std::max(max_diff, std::abs(got - acc));
          }
    CHECK(max_diff < 1e-12);
  }
}

TEST_CASE("conv2d rejects incompatible shapes") {
  Tape tape;
  const Var x = tape.constant(Tensor({1, 2, 4, 4}));
  const Var b = tape.constant(Tensor({3}));
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({3, 1, 3, 3})), b, 1, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({3, 2, 3, 3})), tape.constant(Tensor({2})),
                         1, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({3, 2, 3, 3})), b, 3, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, tape.constant(Tensor({3, 2, 7, 7})), b, 1, 0),
                  std::invalid_argument);
}

TEST_CASE("conv2d weight gradient of a plain sum matches finite differences") {
  check_instances(22, [](CounterRng& rng) {
    const Tensor x = random_tensor(rng, {1, 2, 6, 7});
    const Tensor b = random_tensor(rng, {3});
    RecordedFn f = [x, b](Tape& tape, const Var& w) {
      return sum(conv2d(tape.constant(x), w, tape.constant(b), 1, 1));
    };
    return std::pair{random_tensor(rng, {3, 2, 3, 3}), f};
  });
  auto rng = test::rng_for(23);
  const Tensor x = random_tensor(rng, {1, 2, 6, 7});
  RecordedFn f = [x](Tape& tape, const Var& w) {
    return sum(conv2d(tape.constant(x), w, tape.constant(Tensor({3})), 1, 1));
  };
  CHECK(grad_check(f, random_tensor(rng, {3, 2, 3, 3}), kEps).max_rel_error < 1e-6);
}

TEST_CASE("conv2d gradients wrt input, weight and bias") {
  for (auto [k, stride, pad] : {std::tuple{3, 1, 1}, {3, 2, 1}, {5, 1, 2}, {1, 1, 0}, {3, 1, 0}}) {
    CAPTURE(k);
    CAPTURE(stride);
    check_instances(24, [k = k, stride = stride, pad = pad](CounterRng& rng) {
      const Tensor w = random_tensor(rng, {3, 2, k, k});
      const Tensor b = random_tensor(rng, {3});
      const Tensor probe = random_tensor(rng, {2, 3, (8 + 2 * pad - k) / stride + 1,
                                               (10 + 2 * pad - k) / stride + 1});
      RecordedFn f = [=](Tape& tape, const Var& x) {
        return dot_constant(conv_fixed(tape, x, w, b, stride, pad), probe);
      };
      return std::pair{random_tensor(rng, {2, 2, 8, 10}), f};
    });
    check_instances(25, [k = k, stride = stride, pad = pad](CounterRng& rng) {
      const Tensor x = random_tensor(rng, {2, 2, 8, 10});
      const Tensor b = random_tensor(rng, {3});
      const Tensor probe = random_tensor(rng, {2, 3, (8 + 2 * pad - k) / stride + 1,
                                               (10 + 2 * pad - k) / stride + 1});
      RecordedFn f = [=](Tape& tape, const Var& w) {
        return dot_constant(conv2d(tape.constant(x), w, tape.constant(b), stride, pad),
                            probe);
      };
      return std::pair{random_tensor(rng, {3, 2, k, k}), f};
    });
    check_instances(26, [k = k, stride = stride, pad = pad](CounterRng& rng) {
      const Tensor x = random_tensor(rng, {2, 2, 8, 10});
      const Tensor w = random_tensor(rng, {3, 2, k, k});
      const Tensor probe = random_tensor(rng, {2, 3, (8 + 2 * pad - k) / stride + 1,
                                               (10 + 2 * pad - k) / stride + 1});
      RecordedFn f = [=](Tape& tape, const Var& b) {
        return dot_constant(conv2d(tape.constant(x), tape.constant(w), b, stride, pad),
                            probe);
      };
      return std::pair{random_tensor(rng, {3}), f};
    });
  }
}

TEST_CASE("pointwise ops: values") {
  Tape tape;
  const Var x = tape.constant(Tensor({2}, std::vector<double>{-1.0, 2.0}));
  CHECK(relu(x).value() == Tensor({2}, std::vector<double>{0.0, 2.0}));

  auto rng = test::rng_for(27);
  const Tensor pos = random_tensor(rng, {5}, 0.1, 10.0);
  const Var p = tape.constant(pos);
  const Var round_trip = exp(log(p));
  for (std::size_t i = 0; i < pos.numel(); ++i) {
    CHECK(round_trip.value()[i] == doctest::Approx(pos[i]).epsilon(1e-14));
  }
  CHECK_THROWS_AS(log(x), std::domain_error);
  CHECK_THROWS_AS(log(tape.constant(Tensor({1}, 0.0))), std::domain_error);

  const Var big = tape.constant(Tensor({3}, std::vector<double>{-800.0, 0.0, 800.0}));
  const Tensor sp = softplus(big).value();
  CHECK(sp[0] == 0.0);
  CHECK(sp[1] == doctest::Approx(std::log(2.0)));
  CHECK(sp[2] == 800.0);

  const Tensor cl = clamp(big, -1.0, 1.0).value();
  CHECK(cl == Tensor({3}, std::vector<double>{-1.0, 0.0, 1.0}));
  CHECK(scale(x, 3.0).value() == Tensor({2}, std::vector<double>{-3.0, 6.0}));
  CHECK(add_scalar(x, 1.0).value() == Tensor({2}, std::vector<double>{0.0, 3.0}));
}

TEST_CASE("binary ops require identical shapes") {
  Tape tape;
  const Var a = tape.constant(Tensor({2, 3}));
  const Var b = tape.constant(Tensor({3, 2}));
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(sub(a, b), std::invalid_argument);
  CHECK_THROWS_AS(mul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(dot_constant(a, Tensor({6})), std::invalid_argument);
}

TEST_CASE("relu derivative at zero is one") {
  Tape tape;
  const Var x = tape.leaf(Tensor({3}, std::vector<double>{-1.0, 0.0, 1.0}));
  tape.backward(sum(relu(x)));
  CHECK(x.grad() == Tensor({3}, std::vector<double>{0.0, 1.0, 1.0}));
}

TEST_CASE("gradient of sum(x*y) wrt x is y") {
  auto rng = test::rng_for(28);
  const Tensor xv = random_tensor(rng, {4, 3});
  const Tensor yv = random_tensor(rng, {4, 3});
  Tape tape;
  const Var x = tape.leaf(xv);
  const Var y = tape.leaf(yv);
  tape.backward(sum(mul(x, y)));
  CHECK(x.grad() == yv);
  CHECK(y.grad() == xv);
}

TEST_CASE("pointwise op gradients") {
  const Shape shape{2, 3, 4, 5};
  check_unary(30, [](const Var& v) { return relu(v); }, shape);
  check_unary(31, [](const Var& v) { return exp(v); }, shape, -3.0, 3.0);
  check_unary(32, [](const Var& v) { return log(v); }, shape, 0.2, 5.0);
  check_unary(33, [](const Var& v) { return softplus(v); }, shape, -6.0, 6.0);
  check_unary(34, [](const Var& v) { return clamp(v, -0.5, 0.5); }, shape);
  check_unary(35, [](const Var& v) { return scale(v, -2.5); }, shape);
  check_unary(36, [](const Var& v) { return add_scalar(v, 4.0); }, shape);
  check_unary(37, [](const Var& v) { return mul(v, v); }, shape);
  check_unary(38, [](const Var& v) { return add(v, exp(v)); }, shape);
  check_unary(39, [](const Var& v) { return sub(exp(v), v); }, shape);
}

TEST_CASE("binary op gradients wrt each operand") {
  const Shape shape{3, 7};
  for (int which = 0; which < 3; ++which) {
    check_instances(40 + which, [&](CounterRng& rng) {
      const Tensor other = random_tensor(rng, shape);
      const Tensor w = random_tensor(rng, shape);
      RecordedFn f = [=](Tape& tape, const Var& a) {
        const Var b = tape.constant(other);
        const Var left = which == 0 ? add(a, b) : which == 1 ? sub(a, b) : mul(a, b);
        const Var right = which == 0 ? add(b, a) : which == 1 ? sub(b, a) : mul(b, a);
        return add(dot_constant(left, w), scale(dot_constant(right, w), 0.5));
      };
      return std::pair{random_tensor(rng, shape), f};
    });
  }
}

TEST_CASE("reductions") {
  Tape tape;
  const Var x = tape.leaf(Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}));
  const Var s = sum(x);
  CHECK(s.value().item() == 10.0);
  tape.backward(s);
  CHECK(x.grad() == Tensor({2, 2}, 1.0));

  check_unary(45, [](const Var& v) { return sum(mul(v, v)); }, {5});
}

TEST_CASE("backward contract") {
  Tape tape;
  const Var x = tape.leaf(Tensor({2}, 1.0));
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
  const Var s = sum(x);
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), std::logic_error);
  CHECK(tape.consumed());

  Tape other;
  const Var c = other.constant(Tensor({1}, 2.0));
  other.backward(scale(c, 3.0));
  CHECK(c.grad() == Tensor({1}, 0.0));
}

TEST_CASE("tape records parents before children") {
  Tape tape;
  const Var x = tape.leaf(Tensor({1, 1, 2, 2}, 1.0));
  const Var y = relu(upsample_nearest2(x));
  const Var z = sum(maxpool2(y));
  CHECK(x.id() < y.id());
  CHECK(y.id() < z.id());
  CHECK(tape.size() == static_cast<std::size_t>(z.id() + 1));
}

TEST_CASE("maxpool2 values, tie rule and errors") {
  Tape tape;
  const Var x = tape.leaf(Tensor({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  const Var y = maxpool2(x);
  CHECK(y.value().item() == 4.0);

  const Var c = tape.leaf(Tensor({1, 1, 2, 4}, 7.0));
  const Var pooled = maxpool2(c);
  CHECK(pooled.value() == Tensor({1, 1, 1, 2}, 7.0));
  tape.backward(add(sum(y), sum(pooled)));
  CHECK(c.grad() == Tensor({1, 1, 2, 4}, std::vector<double>{1, 0, 1, 0, 0, 0, 0, 0}));
  CHECK(x.grad() == Tensor({1, 1, 2, 2}, std::vector<double>{0, 0, 0, 1}));

  Tape t2;
  CHECK_THROWS_AS(maxpool2(t2.constant(Tensor({1, 1, 3, 4}))), std::invalid_argument);
  CHECK_THROWS_AS(maxpool2(t2.constant(Tensor({4, 4}))), std::invalid_argument);
}

TEST_CASE("maxpool2 gradient on random inputs") {
  check_unary(50, [](const Var& v) { return maxpool2(v); }, {1, 1, 4, 4});
  check_unary(51, [](const Var& v) { return maxpool2(v); }, {2, 3, 6, 8});
}

TEST_CASE("upsample_nearest2 replicates and sums gradients") {
  Tape tape;
  const Var x = tape.leaf(Tensor({1, 1, 1, 1}, 1.0));
  const Var y = upsample_nearest2(x);
  CHECK(y.value() == Tensor({1, 1, 2, 2}, 1.0));
  tape.backward(sum(y));
  CHECK(x.grad().item() == 4.0);

  auto rng = test::rng_for(52);
  Tape t2;
  const Tensor flat({2, 3, 4, 6}, rng.uniform());
  const Var c = t2.constant(flat);
  const Tensor down_up = upsample_nearest2(maxpool2(c)).value();
  const Tensor up_down = maxpool2(upsample_nearest2(c)).value();
  CHECK(down_up == flat);
  CHECK(up_down == flat);

  check_unary(53, [](const Var& v) { return upsample_nearest2(v); }, {2, 2, 3, 5});
}

TEST_CASE("upsample_bilinear on tensors matches the grid version") {
  auto rng = test::rng_for(54);
  const auto g = test::random_grid<DepthTag>(rng, 3, 5, 0.0, 10.0);
  Tape tape;
  const Var x = tape.constant(Tensor({1, 1, 3, 5}, std::vector<double>(g.values().begin(),
                                                                       g.values().end())));
  for (int f : {1, 2, 4}) {
    const DepthGrid ref = upsample_bilinear(g, f);
    const Var y = upsample_bilinear(x, f);
    REQUIRE(y.shape() == Shape{1, 1, 3 * f, 5 * f});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.value()[i] == ref[i]);
  }
  CHECK_THROWS_AS(upsample_bilinear(x, 3), std::invalid_argument);
  check_unary(55, [](const Var& v) { return upsample_bilinear(v, 2); }, {2, 2, 3, 4});
  check_unary(56, [](const Var& v) { return upsample_bilinear(v, 4); }, {1, 1, 2, 3});
}

TEST_CASE("concat_channels shapes, order and gradient") {
  auto rng = test::rng_for(57);
  const Tensor a = random_tensor(rng, {1, 2, 4, 4});
  const Tensor b = random_tensor(rng, {1, 3, 4, 4});
  Tape tape;
  const Var y = concat_channels(tape.constant(a), tape.constant(b));
  REQUIRE(y.shape() == Shape{1, 5, 4, 4});
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(y.value()[i] == a[i]);
  for (std::size_t i = 0; i < b.numel(); ++i) CHECK(y.value()[a.numel() + i] == b[i]);
  CHECK_THROWS_AS(concat_channels(tape.constant(a), tape.constant(Tensor({1, 3, 4, 5}))),
                  std::invalid_argument);

  for (int side = 0; side < 2; ++side) {
    check_instances(58 + side, [side](CounterRng& rng) {
      const Tensor other = random_tensor(rng, {2, 3, 3, 4});
      const Tensor w = random_tensor(rng, {2, 5, 3, 4});
      RecordedFn f = [=](Tape& tape, const Var& x) {
        const Var o = tape.constant(other);
        const Var cat = side == 0 ? concat_channels(x, o) : concat_channels(o, x);
        return dot_constant(mul(cat, cat), w);
      };
      return std::pair{random_tensor(rng, {2, 2, 3, 4}), f};
    });
  }
}

TEST_CASE("composed conv/relu/pool network matches finite differences") {
  check_instances(60, [](CounterRng& rng) {
    const Tensor w1 = random_tensor(rng, {4, 2, 3, 3});
    const Tensor b1 = random_tensor(rng, {4}, -0.1, 0.1);
    const Tensor w2 = random_tensor(rng, {1, 6, 3, 3});
    const Tensor b2 = random_tensor(rng, {1});
    const Tensor probe = random_tensor(rng, {1, 1, 8, 8});
    RecordedFn f = [=](Tape& tape, const Var& x) {
      const Var h = maxpool2(relu(conv_fixed(tape, x, w1, b1, 1, 1)));
      const Var up = concat_channels(upsample_nearest2(h), x);
      const Var y = softplus(conv_fixed(tape, up, w2, b2, 1, 1));
      return dot_constant(y, probe);
    };
    return std::pair{random_tensor(rng, {1, 2, 8, 8}), f};
  });
}

TEST_CASE("grad_check oracle behaviour") {
  auto rng = test::rng_for(61);
  const Tensor x = random_tensor(rng, {6});
  const Tensor w = random_tensor(rng, {6});
  RecordedFn linear = [w](Tape&, const Var& v) { return dot_constant(v, w); };
  CHECK(grad_check(linear, x, 1e-3).max_rel_error < 1e-10);

  RecordedFn quadratic = [](Tape&, const Var& v) { return sum(mul(v, v)); };
  CHECK(grad_check(quadratic, x, 1e-5).max_rel_error < 1e-8);

  RecordedFn kink = [](Tape&, const Var& v) { return sum(relu(v)); };
  const GradCheckResult r =
      grad_check(kink, Tensor({3}, std::vector<double>{0.0, 1.0, -1.0}), 1e-6);
  CHECK(r.skipped == 1);
  CHECK(r.checked == 2);
  CHECK(r.max_rel_error < 1e-10);

  CHECK_THROWS_AS(grad_check(linear, x, 0.0), std::invalid_argument);
}

TEST_CASE("backward is deterministic and linear") {
  auto rng = test::rng_for(62);
  const Tensor xv = random_tensor(rng, {1, 2, 6, 6});
  const Tensor wv = random_tensor(rng, {3, 2, 3, 3});
  const Tensor probe = random_tensor(rng, {1, 3, 3, 3});
  auto run = [&](double a, double b) {
    Tape tape;
    const Var x = tape.leaf(xv);
    const Var w = tape.leaf(wv);
    const Var h = maxpool2(relu(conv2d(x, w, tape.constant(Tensor({3})), 1, 1)));
    const Var f = dot_constant(h, probe);
    const Var g = sum(exp(scale(x, 0.1)));
    tape.backward(add(scale(f, a), scale(g, b)));
    return std::pair{x.grad(), w.grad()};
  };
  const auto first = run(1.0, 1.0);
  const auto second = run(1.0, 1.0);
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);

  const auto only_f = run(1.0, 0.0);
  const auto only_g = run(0.0, 1.0);
  const auto combo = run(2.0, -3.0);
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    CHECK(combo.first[i] ==
          doctest::Approx(2.0 * only_f.first[i] - 3.0 * only_g.first[i]).epsilon(1e-12));
  }
}

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "ccstereo/gradcheck.hpp"
#include "ccstereo/ops.hpp"
#include "ccstereo/optim.hpp"
#include "ccstereo/rng.hpp"
#include "ccstereo/tensor.hpp"

using namespace ccs;
using ad::Tensor;

namespace {

Tensor<double> randn(Rng* rng, std::vector<int> shape) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng->normal();
  return Tensor<double>::leaf(std::move(shape), std::move(v), true);
}

}  // namespace

TEST_CASE("matmul matches hand arithmetic") {
  auto a = Tensor<double>::leaf({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::leaf({2, 2}, {5, 6, 7, 8});
  auto c = ad::matmul(a, b);
  CHECK(c.values() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("matmul broadcasts a shared right operand over the batch") {
  Rng rng(1);
  auto a = randn(&rng, {3, 2, 4});
  auto b = randn(&rng, {4, 2});
  auto out = ad::matmul(a, b);
  REQUIRE(out.shape() == std::vector<int>{3, 2, 2});
  for (int batch = 0; batch < 3; ++batch)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k)
          acc += a.values()[(batch * 2 + i) * 4 + k] * b.values()[k * 2 + j];
        CHECK(out.values()[(batch * 2 + i) * 2 + j] == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("matmul rejects inner dimension mismatch") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 2});
  CHECK_THROWS_AS(ad::matmul(a, b), std::invalid_argument);
}

TEST_CASE("softmax rows are distributions and constant rows go uniform") {
  Rng rng(2);
  auto x = randn(&rng, {4, 7});
  auto s = ad::softmax(x, 1);
  for (int i = 0; i < 4; ++i) {
    double sum = 0.0;
    for (int j = 0; j < 7; ++j) {
      const double v = s.values()[i * 7 + j];
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  auto flat = Tensor<double>::full({2, 5}, 3.25);
  auto u = ad::softmax(flat, 1);
  for (double v : u.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("softmax is shift invariant") {
  Rng rng(3);
  auto x = randn(&rng, {3, 6});
  auto shifted = ad::add_scalar(x, 123.0);
  auto a = ad::softmax(x, 1);
  auto b = ad::softmax(shifted, 1);
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-9));
}

TEST_CASE("conv2d output follows the shape formula") {
  Rng rng(4);
  for (auto [h, w, stride, pad] : {std::tuple{8, 10, 1, 1}, {9, 7, 2, 1}, {5, 5, 1, 0}}) {
    auto x = randn(&rng, {2, 3, h, w});
    auto wgt = randn(&rng, {4, 3, 3, 3});
    auto y = ad::conv2d(x, wgt, stride, pad);
    const int oh = (h + 2 * pad - 3) / stride + 1;
    const int ow = (w + 2 * pad - 3) / stride + 1;
    CHECK(y.shape() == std::vector<int>{2, 4, oh, ow});
  }
}

TEST_CASE("conv2d with a 1x1 identity kernel copies the input") {
  Rng rng(5);
  auto x = randn(&rng, {1, 1, 4, 4});
  auto w = Tensor<double>::leaf({1, 1, 1, 1}, {1.0});
  auto y = ad::conv2d(x, w, 1, 0);
  for (size_t i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d interior equals the dot product of kernel and patch") {
  Rng rng(6);
  auto x = randn(&rng, {1, 2, 5, 5});
  auto w = randn(&rng, {1, 2, 3, 3});
  auto y = ad::conv2d(x, w, 1, 1);
  // centre output pixel (2,2) sees the full 3x3 patch of both channels
  double acc = 0.0;
  for (int c = 0; c < 2; ++c)
    for (int dy = 0; dy < 3; ++dy)
      for (int dx = 0; dx < 3; ++dx)
        acc += x.values()[(c * 5 + (1 + dy)) * 5 + (1 + dx)] *
               w.values()[(c * 3 + dy) * 3 + dx];
  CHECK(y.values()[2 * 5 + 2] == doctest::Approx(acc).epsilon(1e-12));
}

TEST_CASE("conv2d_transpose inverts the conv2d shape map") {
  Rng rng(7);
  auto x = randn(&rng, {1, 3, 4, 6});
  auto w = randn(&rng, {3, 2, 3, 3});  // (C_in, C_out, kh, kw)
  auto y = ad::conv2d_transpose(x, w, 2, 1);
  CHECK(y.shape() == std::vector<int>{1, 2, 7, 11});  // (in-1)*2 - 2 + 3
}

TEST_CASE("upsample_nearest2 repeats pixels") {
  auto x = Tensor<double>::leaf({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = ad::upsample_nearest2(x);
  CHECK(y.shape() == std::vector<int>{1, 1, 4, 4});
  CHECK(y.values() == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
}

TEST_CASE("avgpool2d averages non-overlapping windows") {
  auto x = Tensor<double>::leaf({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto y = ad::avgpool2d(x, 2, 2);
  CHECK(y.shape() == std::vector<int>{1, 1, 1, 2});
  CHECK(y.values()[0] == doctest::Approx((1 + 2 + 5 + 6) / 4.0));
  CHECK(y.values()[1] == doctest::Approx((3 + 4 + 7 + 8) / 4.0));
}

TEST_CASE("batchnorm2d train mode normalizes each channel over the batch") {
  Rng rng(8);
  const int n = 3, c = 2, h = 4, w = 5;
  auto x = randn(&rng, {n, c, h, w});
  auto gamma = Tensor<double>::full({c}, 1.0, true);
  auto beta = Tensor<double>::zeros({c}, true);
  std::vector<double> mean(c, 0.0), var(c, 1.0);
  auto y = ad::batchnorm2d(x, gamma, beta, &mean, &var, true, false);

  const size_t plane = static_cast<size_t>(h) * w;
  for (int ci = 0; ci < c; ++ci) {
    double mu = 0.0, m2 = 0.0;
    for (int s = 0; s < n; ++s)
      for (size_t i = 0; i < plane; ++i) mu += y.values()[(s * c + ci) * plane + i];
    mu /= n * plane;
    for (int s = 0; s < n; ++s)
      for (size_t i = 0; i < plane; ++i) {
        const double d = y.values()[(s * c + ci) * plane + i] - mu;
        m2 += d * d;
      }
    m2 /= n * plane;
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(m2 == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks variance slightly
  }
}

TEST_CASE("batchnorm2d eval mode applies the running-stat affine map") {
  auto x = Tensor<double>::leaf({1, 1, 1, 2}, {3.0, 7.0});
  auto gamma = Tensor<double>::leaf({1}, {2.0}, true);
  auto beta = Tensor<double>::leaf({1}, {0.5}, true);
  std::vector<double> mean{1.0}, var{4.0};
  auto y = ad::batchnorm2d(x, gamma, beta, &mean, &var, false, false);
  const double inv = 1.0 / std::sqrt(4.0 + 1e-5);
  CHECK(y.values()[0] == doctest::Approx(2.0 * (3.0 - 1.0) * inv + 0.5).epsilon(1e-12));
  CHECK(y.values()[1] == doctest::Approx(2.0 * (7.0 - 1.0) * inv + 0.5).epsilon(1e-12));
}

TEST_CASE("batchnorm2d updates running stats only when asked") {
  Rng rng(9);
  auto x = randn(&rng, {4, 1, 3, 3});
  auto gamma = Tensor<double>::full({1}, 1.0, true);
  auto beta = Tensor<double>::zeros({1}, true);

  std::vector<double> mean{0.0}, var{1.0};
  ad::batchnorm2d(x, gamma, beta, &mean, &var, true, false);
  CHECK(mean[0] == 0.0);
  CHECK(var[0] == 1.0);

  ad::batchnorm2d(x, gamma, beta, &mean, &var, true, true);
  double mu = 0.0;
  for (double v : x.values()) mu += v;
  mu /= static_cast<double>(x.size());
  double var_acc = 0.0;
  for (double v : x.values()) var_acc += (v - mu) * (v - mu);
  const double unbiased = var_acc / static_cast<double>(x.size() - 1);
  CHECK(mean[0] == doctest::Approx(0.1 * mu).epsilon(1e-12));
  CHECK(var[0] == doctest::Approx(0.9 + 0.1 * unbiased).epsilon(1e-12));
}

TEST_CASE("permute then inverse permute restores the tensor") {
  Rng rng(10);
  auto x = randn(&rng, {2, 3, 4});
  auto y = ad::permute(ad::permute(x, {2, 0, 1}), {1, 2, 0});
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("slice then concat restores the tensor") {
  Rng rng(11);
  auto x = randn(&rng, {3, 6});
  auto y = ad::concat<double>({ad::slice(x, 1, 0, 2), ad::slice(x, 1, 2, 4)}, 1);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("backward accumulates through a reused node exactly once per path") {
  auto x = Tensor<double>::leaf({1}, {3.0}, true);
  auto y = ad::mul(x, x);  // x^2, dy/dx = 2x = 6
  ad::backward(ad::sum_all(y));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("gradients accumulate across backward calls until cleared") {
  auto x = Tensor<double>::leaf({1}, {2.0}, true);
  auto run = [&] { ad::backward(ad::scale(x, 5.0)); };
  run();
  CHECK(x.grad()[0] == doctest::Approx(5.0));
  run();
  CHECK(x.grad()[0] == doctest::Approx(10.0));
  x.zero_grad();
  run();
  CHECK(x.grad()[0] == doctest::Approx(5.0));
}

TEST_CASE("grad_check validates composite graphs on random shapes") {
  Rng rng(12);
  for (int round = 0; round < 5; ++round) {
    const int m = rng.range_int(2, 4);
    const int k = rng.range_int(2, 5);
    auto a = randn(&rng, {m, k});
    auto b = randn(&rng, {k, m});
    auto fn = [](const std::vector<Tensor<double>>& in) {
      return ad::mean_all(ad::tanh_op(ad::matmul(in[0], in[1])));
    };
    const auto res = ad::grad_check(fn, {a, b}, 1e-4, 1e-3, 0, 1);
    CHECK_MESSAGE(res.pass, res.detail);
  }
}

TEST_CASE("grad_check flags a deliberately wrong gradient") {
  // abs has subgradient 0 at the origin; a graph built as x -> relu(x) with
  // x strictly negative has zero gradient, so claim via mul that it does not.
  auto fn = [](const std::vector<Tensor<double>>& in) {
    // sum(x * 2) but report gradients through a detached copy: build a leaf
    // from the values so the analytic gradient is zero while fd sees slope 2
    auto detached = Tensor<double>::leaf(in[0].shape(), in[0].values(), false);
    return ad::sum_all(ad::scale(detached, 2.0));
  };
  auto x = Tensor<double>::leaf({3}, {1.0, -2.0, 0.5}, true);
  const auto res = ad::grad_check(fn, {x}, 1e-4, 1e-3, 0, 1);
  CHECK_FALSE(res.pass);
}

TEST_CASE("adam first step matches the closed form") {
  auto p = Tensor<double>::leaf({1}, {1.0}, true);
  ad::AdamGroup<double> group;
  group.params = {p};
  group.lr = 0.1;
  ad::Adam<double> opt({group});

  p.grad()[0] = 0.5;
  opt.step();
  const double m = 0.1 * 0.5;           // (1-beta1)*g
  const double v = 0.001 * 0.25;        // (1-beta2)*g^2
  const double mhat = m / 0.1;          // bias correction at t=1
  const double vhat = v / 0.001;
  const double expected = 1.0 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(p.values()[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(p.grad()[0] == 0.0);  // step clears gradients
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam respects per-group learning rates") {
  auto pa = Tensor<double>::leaf({1}, {0.0}, true);
  auto pb = Tensor<double>::leaf({1}, {0.0}, true);
  ad::AdamGroup<double> ga, gb;
  ga.params = {pa};
  ga.lr = 1e-2;
  gb.params = {pb};
  gb.lr = 1e-4;
  ad::Adam<double> opt({ga, gb});
  pa.grad()[0] = 1.0;
  pb.grad()[0] = 1.0;
  opt.step();
  // First Adam step moves a parameter by almost exactly lr regardless of g.
  CHECK(pa.values()[0] == doctest::Approx(-1e-2).epsilon(1e-6));
  CHECK(pb.values()[0] == doctest::Approx(-1e-4).epsilon(1e-6));
}

TEST_CASE("adam converges on a quadratic") {
  auto p = Tensor<double>::leaf({1}, {5.0}, true);
  ad::AdamGroup<double> group;
  group.params = {p};
  group.lr = 0.3;
  ad::Adam<double> opt({group});
  for (int i = 0; i < 400; ++i) {
    auto loss = ad::mul(p, p);
    ad::backward(ad::sum_all(loss));
    opt.step();
  }
  CHECK(std::abs(p.values()[0]) < 1e-2);
}

TEST_CASE("rng is deterministic and streams are draw-order independent") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  // Substreams derive from the construction seed, not the mutated state.
  Rng c(77), d(77);
  (void)c.next_u64();
  (void)c.normal();
  CHECK(c.stream("x", 3).next_u64() == d.stream("x", 3).next_u64());
  CHECK(c.stream("x", 3).next_u64() != d.stream("x", 4).next_u64());
  CHECK(c.stream("x").next_u64() != d.stream("y").next_u64());
}

TEST_CASE("rng uniform stays in range and below respects the bound") {
  Rng rng(55);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.below(7) < 7);
  }
}

TEST_CASE("rng shuffle produces a permutation") {
  Rng rng(99);
  std::vector<int> v(20);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(v.begin(), v.end());
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 20; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("l2_normalize rows have unit norm") {
  Rng rng(13);
  auto x = randn(&rng, {4, 6});
  auto y = ad::l2_normalize(x, 1);
  for (int i = 0; i < 4; ++i) {
    double sq = 0.0;
    for (int j = 0; j < 6; ++j) sq += y.values()[i * 6 + j] * y.values()[i * 6 + j];
    CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("expand_batch repeats values and ops reject bad shapes") {
  auto x = Tensor<double>::leaf({2}, {1.0, 2.0});
  auto y = ad::expand_batch(x, 3);
  CHECK(y.shape() == std::vector<int>{3, 2});
  CHECK(y.values() == std::vector<double>{1, 2, 1, 2, 1, 2});

  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({3, 2});
  CHECK_THROWS_AS(ad::add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(ad::reshape(a, {4, 2}), std::invalid_argument);
  CHECK_THROWS_AS(ad::slice(a, 1, 2, 3), std::invalid_argument);
  CHECK_THROWS_AS(ad::softmax(a, 5), std::invalid_argument);
}

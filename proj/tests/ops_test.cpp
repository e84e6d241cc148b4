#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <random>

#include "fgst/ops.hpp"
#include "fgst/tape.hpp"
#include "fgst/tensor.hpp"
#include "support/oracles.hpp"

using namespace fgst;

namespace {

double inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d scalar product and identity kernel", "[ops]") {
  Tape tape;
  auto x = make_tensor({1, 1, 1}, {5.0});
  auto k = make_tensor({1, 1, 1, 1}, {2.0});
  auto y = conv2d(tape, x, k, 1, 0);
  REQUIRE(y->shape == Shape{1, 1, 1});
  REQUIRE(y->data[0] == 10.0);

  auto img = make_tensor({2, 4, 4});
  oracle::fill_uniform_seeded(*img, 3);
  auto delta = make_tensor({2, 2, 3, 3});
  delta->data[(0 * 2 + 0) * 9 + 4] = 1.0;  // center tap, channel 0 -> 0
  delta->data[(1 * 2 + 1) * 9 + 4] = 1.0;  // center tap, channel 1 -> 1
  auto same = conv2d(tape, img, delta, 1, 1);
  REQUIRE(same->shape == img->shape);
  for (std::size_t i = 0; i < img->data.size(); ++i) REQUIRE(same->data[i] == img->data[i]);
}

TEST_CASE("conv2d matches the nested-loop reference", "[ops]") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    std::size_t ci = 1 + rng() % 3, co = 1 + rng() % 3;
    std::size_t h = 3 + rng() % 4, w = 3 + rng() % 4;
    std::size_t k = 1 + 2 * (rng() % 2);  // 1 or 3
    std::size_t stride = 1 + rng() % 2, pad = rng() % 2;
    if (h + 2 * pad < k || w + 2 * pad < k) continue;
    auto x = make_tensor({ci, h, w});
    auto kr = make_tensor({co, ci, k, k});
    auto b = make_tensor({co});
    oracle::fill_uniform_seeded(*x, 100 + trial);
    oracle::fill_uniform_seeded(*kr, 200 + trial);
    oracle::fill_uniform_seeded(*b, 300 + trial);
    Tape tape;
    auto got = conv2d(tape, x, kr, b, stride, pad);
    auto want = oracle::conv2d_ref(*x, *kr, b.get(), stride, pad);
    REQUIRE(got->shape == want->shape);
    for (std::size_t i = 0; i < got->data.size(); ++i)
      REQUIRE(std::abs(got->data[i] - want->data[i]) < 1e-12);
  }

  // fixed instance from the contract: 2x4x4 input against a 3x2x3x3 kernel
  auto x = make_tensor({2, 4, 4});
  auto kr = make_tensor({3, 2, 3, 3});
  oracle::fill_uniform_seeded(*x, 5);
  oracle::fill_uniform_seeded(*kr, 6);
  Tape tape;
  auto got = conv2d(tape, x, kr, 1, 0);
  auto want = oracle::conv2d_ref(*x, *kr, nullptr, 1, 0);
  REQUIRE(got->shape == Shape{3, 2, 2});
  for (std::size_t i = 0; i < got->data.size(); ++i)
    REQUIRE(std::abs(got->data[i] - want->data[i]) < 1e-12);
}

TEST_CASE("conv2d validates shapes", "[ops]") {
  Tape tape;
  auto x = make_tensor({2, 4, 4});
  auto k_bad = make_tensor({3, 1, 3, 3});
  REQUIRE_THROWS_AS(conv2d(tape, x, k_bad, 1, 1), std::invalid_argument);
  auto k = make_tensor({3, 2, 3, 3});
  REQUIRE_THROWS_AS(conv2d(tape, x, k, 0, 1), std::invalid_argument);
  auto tiny = make_tensor({2, 1, 1});
  REQUIRE_THROWS_AS(conv2d(tape, tiny, k, 1, 0), std::invalid_argument);
}

TEST_CASE("deconv2d single tap, zero input, reference", "[ops]") {
  Tape tape;
  auto x = make_tensor({1, 1, 1}, {1.0});
  auto k = make_tensor({1, 1, 2, 2}, {1.0, 1.0, 1.0, 1.0});
  auto y = deconv2d(tape, x, k, 2);
  REQUIRE(y->shape == Shape{1, 2, 2});
  for (double v : y->data) REQUIRE(v == 1.0);

  auto zx = make_tensor({2, 3, 3});
  auto k2 = make_tensor({2, 4, 2, 2});
  oracle::fill_uniform_seeded(*k2, 8);
  auto zy = deconv2d(tape, zx, k2, 2);
  REQUIRE(zy->shape == Shape{4, 6, 6});
  for (double v : zy->data) REQUIRE(v == 0.0);

  oracle::fill_uniform_seeded(*zx, 9);
  auto got = deconv2d(tape, zx, k2, 2);
  auto want = oracle::deconv2d_ref(*zx, *k2, nullptr, 2);
  for (std::size_t i = 0; i < got->data.size(); ++i)
    REQUIRE(std::abs(got->data[i] - want->data[i]) < 1e-12);

  auto k_bad = make_tensor({3, 4, 2, 2});
  REQUIRE_THROWS_AS(deconv2d(tape, zx, k_bad, 2), std::invalid_argument);
}

TEST_CASE("conv2d and deconv2d are adjoint", "[ops]") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t a = 1 + rng() % 3, b = 1 + rng() % 3;
    std::size_t h = 2 + rng() % 4, w = 2 + rng() % 4;
    std::size_t k = 2 + rng() % 3, stride = 1 + rng() % 2;
    auto x = make_tensor({a, h, w});
    auto kern = make_tensor({a, b, k, k});
    oracle::fill_uniform_seeded(*x, 400 + trial);
    oracle::fill_uniform_seeded(*kern, 500 + trial);
    Tape tape;
    // forward deconv maps [a,h,w] -> [b,oh,ow]; conv with the same kernel
    // (read as [a "out", b "in", k, k]) maps [b,oh,ow] -> [a,h,w]
    auto up = deconv2d(tape, x, kern, stride);
    auto y = make_tensor({b, up->shape[1], up->shape[2]});
    oracle::fill_uniform_seeded(*y, 600 + trial);
    auto down = conv2d(tape, y, kern, stride, 0);
    REQUIRE(down->shape == x->shape);
    double lhs = inner(*up, *y);
    double rhs = inner(*x, *down);
    REQUIRE(std::abs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("layer_norm handles constants and normalized input", "[ops]") {
  Tape tape;
  auto gain = make_tensor({3}, {1.0, 1.0, 1.0});
  auto bias = make_tensor({3});

  auto c = make_tensor({3}, {4.2, 4.2, 4.2});
  auto yc = layer_norm(tape, c, gain, bias);
  for (double v : yc->data) REQUIRE(std::abs(v) < 1e-10);

  auto gain2 = make_tensor({2}, {1.0, 1.0});
  auto bias2 = make_tensor({2});
  auto pm = make_tensor({2}, {1.0, -1.0});
  auto ypm = layer_norm(tape, pm, gain2, bias2, 1e-12);
  REQUIRE(std::abs(ypm->data[0] - 1.0) < 1e-10);
  REQUIRE(std::abs(ypm->data[1] + 1.0) < 1e-10);
}

TEST_CASE("layer_norm matches the direct two-pass formula", "[ops]") {
  Tape tape;
  std::size_t c = 6;
  auto x = make_tensor({c});
  oracle::fill_uniform_seeded(*x, 31, -2.0, 2.0);
  auto gain = make_tensor({c});
  auto bias = make_tensor({c});
  oracle::fill_uniform_seeded(*gain, 32);
  oracle::fill_uniform_seeded(*bias, 33);
  double eps = 1e-5;
  auto y = layer_norm(tape, x, gain, bias, eps);
  double mu = 0.0;
  for (double v : x->data) mu += v;
  mu /= static_cast<double>(c);
  double var = 0.0;
  for (double v : x->data) var += (v - mu) * (v - mu);
  var /= static_cast<double>(c);
  for (std::size_t i = 0; i < c; ++i) {
    double want = gain->data[i] * (x->data[i] - mu) / std::sqrt(var + eps) + bias->data[i];
    REQUIRE(std::abs(y->data[i] - want) < 1e-12);
  }
}

TEST_CASE("layer_norm per-site mean vanishes pre-affine", "[ops]") {
  Tape tape;
  std::size_t c = 4, h = 3, w = 5;
  auto x = make_tensor({c, h, w});
  oracle::fill_uniform_seeded(*x, 41, -3.0, 3.0);
  auto gain = make_tensor({c}, {1.0, 1.0, 1.0, 1.0});
  auto bias = make_tensor({c});
  auto y = layer_norm(tape, x, gain, bias);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double mu = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) mu += y->at3(ch, i, j);
      REQUIRE(std::abs(mu / static_cast<double>(c)) < 1e-10);
    }
  auto bad_gain = make_tensor({3});
  REQUIRE_THROWS_AS(layer_norm(tape, x, bad_gain, bias), std::invalid_argument);
}

TEST_CASE("softmax mass and stability", "[ops]") {
  Tape tape;
  auto two = make_tensor({2}, {0.0, 0.0});
  auto s2 = softmax(tape, two);
  REQUIRE(s2->data[0] == 0.5);
  REQUIRE(s2->data[1] == 0.5);

  auto one = make_tensor({1}, {123.0});
  auto s1 = softmax(tape, one);
  REQUIRE(s1->data[0] == 1.0);

  auto big = make_tensor({3}, {1000.0, 1000.0, 999.0});
  auto sb = softmax(tape, big);
  double mass = sb->data[0] + sb->data[1] + sb->data[2];
  REQUIRE(std::abs(mass - 1.0) <= 1e-12);
  for (double v : sb->data) REQUIRE(v >= 0.0);

  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = make_tensor({1 + rng() % 9});
    oracle::fill_uniform_seeded(*x, 700 + trial, -30.0, 30.0);
    auto s = softmax(tape, x);
    double m = 0.0;
    for (double v : s->data) {
      REQUIRE(v >= 0.0);
      m += v;
    }
    REQUIRE(std::abs(m - 1.0) <= 1e-12);
  }
}

TEST_CASE("linear and elementwise ops", "[ops]") {
  Tape tape;
  auto w = make_tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  auto x = make_tensor({3}, {1, 1, 2});
  auto y = linear(tape, x, w);
  REQUIRE(y->shape == Shape{2});
  REQUIRE(y->data[0] == 1 + 2 + 6);
  REQUIRE(y->data[1] == 4 + 5 + 12);

  // adjoint: <Wx, y> == <x, W^T y>
  auto yy = make_tensor({2}, {0.5, -2.0});
  double lhs = inner(*y, *yy);
  double rhs = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < 2; ++i) col += w->data[i * 3 + j] * yy->data[i];
    rhs += x->data[j] * col;
  }
  REQUIRE(std::abs(lhs - rhs) < 1e-10);

  auto lr = leaky_relu(tape, make_tensor({3}, {2.0, 0.0, -2.0}), 0.1);
  REQUIRE(lr->data[0] == 2.0);
  REQUIRE(lr->data[1] == 0.0);
  REQUIRE(lr->data[2] == -0.2);

  auto a = make_tensor({2}, {1, 2});
  auto b = make_tensor({2}, {10, 20});
  REQUIRE(add(tape, a, b)->data == std::vector<double>{11, 22});
  REQUIRE(sub(tape, a, b)->data == std::vector<double>{-9, -18});
  REQUIRE(mul(tape, a, b)->data == std::vector<double>{10, 40});
  REQUIRE(scale(tape, a, -2.0)->data == std::vector<double>{-2, -4});
  REQUIRE(sum_all(tape, b)->data[0] == 30.0);
  auto c = make_tensor({3});
  REQUIRE_THROWS_AS(add(tape, a, c), std::invalid_argument);
}

TEST_CASE("concat_channels layout", "[ops]") {
  Tape tape;
  auto a = make_tensor({1, 2, 2}, {1, 2, 3, 4});
  auto b = make_tensor({2, 2, 2}, {5, 6, 7, 8, 9, 10, 11, 12});
  auto c = concat_channels(tape, a, b);
  REQUIRE(c->shape == Shape{3, 2, 2});
  REQUIRE(c->data == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  auto bad = make_tensor({1, 3, 2});
  REQUIRE_THROWS_AS(concat_channels(tape, a, bad), std::invalid_argument);
}

TEST_CASE("l1_loss is the mean absolute difference", "[ops]") {
  Tape tape;
  auto x = make_tensor({4}, {1.0, -2.0, 3.0, -4.0});
  REQUIRE(l1_loss(tape, x, x)->data[0] == 0.0);
  auto target = make_tensor({4}, {0.0, 0.0, 0.0, 0.0});
  REQUIRE(l1_loss(tape, x, target)->data[0] == (1.0 + 2.0 + 3.0 + 4.0) / 4.0);
}

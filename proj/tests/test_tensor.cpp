#include <cmath>
#include <fstream>

#include "birdast/error.hpp"
#include "birdast/ops.hpp"
#include "doctest.h"
#include "gradcheck_cases.hpp"
#include "support.hpp"

using namespace birdast;
using namespace birdast::tensor;
using birdast::testing::grad_check;
using birdast::testing::random_tensor;

namespace {

Tensor t2(std::size_t r, std::size_t c, std::vector<double> v, bool grad = false) {
  return Tensor::from_values({r, c}, std::move(v), grad);
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::InvalidArgument;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("matmul examples") {
    GradTape tape(false);
    const Tensor a = t2(2, 2, {1, 2, 3, 4});
    const Tensor b = t2(2, 1, {5, 6});
    const Tensor c = matmul(tape, a, b);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c.at(0) == 17.0);
    CHECK(c.at(1) == 39.0);
    const Tensor eye = t2(2, 2, {1, 0, 0, 1});
    const Tensor same = matmul(tape, eye, a);
    CHECK(std::vector<double>(same.values().begin(), same.values().end()) == std::vector<double>{1, 2, 3, 4});
    CHECK(code_of([&] { matmul(tape, a, t2(3, 1, {1, 2, 3})); }) == Errc::ShapeMismatch);
  }

  TEST_CASE("softmax examples and simplex property") {
    GradTape tape(false);
    const Tensor u = softmax(tape, t2(1, 4, {2, 2, 2, 2}), 1);
    for (double v : u.values()) CHECK(v == doctest::Approx(0.25));
    const Tensor s = softmax(tape, t2(1, 2, {0, std::log(3.0)}), 1);
    CHECK(s.at(0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(s.at(1) == doctest::Approx(0.75).epsilon(1e-12));
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor x = random_tensor(rng, {3, 7}, -30.0, 30.0, false);
      for (std::size_t axis : {0UL, 1UL}) {
        const Tensor p = softmax(tape, x, axis);
        const std::size_t outer = axis == 1 ? 3 : 7, inner = axis == 1 ? 7 : 3;
        for (std::size_t o = 0; o < outer; ++o) {
          double total = 0.0;
          for (std::size_t i = 0; i < inner; ++i) {
            const double v = axis == 1 ? p.at(o * 7 + i) : p.at(i * 7 + o);
            CHECK(v >= 0.0);
            total += v;
          }
          CHECK(std::abs(total - 1.0) <= 1e-6);
        }
      }
    }
  }

  TEST_CASE("layer_norm examples") {
    GradTape tape(false);
    const Tensor g = Tensor::full({2}, 1.0), b = Tensor::zeros({2});
    const Tensor y = layer_norm(tape, t2(1, 2, {1, 3}), g, b);
    const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y.at(0) == doctest::Approx(-expect).epsilon(1e-12));
    CHECK(y.at(1) == doctest::Approx(expect).epsilon(1e-12));
    const Tensor c = layer_norm(tape, t2(1, 2, {4, 4}), g, b);
    CHECK(c.at(0) == 0.0);
    CHECK(c.at(1) == 0.0);
  }

  TEST_CASE("activation anchors") {
    GradTape tape(false);
    CHECK(sigmoid(tape, Tensor::scalar(0.0)).item() == 0.5);
    CHECK(gelu(tape, Tensor::scalar(0.0)).item() == 0.0);
    CHECK(swish(tape, Tensor::scalar(0.0)).item() == 0.0);
    const double x = 1.3;
    const double tanh_gelu =
        0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (x + 0.044715 * x * x * x)));
    CHECK(gelu(tape, Tensor::scalar(x)).item() == doctest::Approx(tanh_gelu).epsilon(1e-14));
  }

  TEST_CASE("structural ops") {
    GradTape tape(false);
    const Tensor a = t2(2, 3, {1, 2, 3, 4, 5, 6});
    const Tensor at = transpose(tape, a);
    CHECK(at.shape() == Shape{3, 2});
    CHECK(at.at(1) == 4.0);
    const Tensor r = reshape(tape, a, {3, 2});
    CHECK(r.at(5) == 6.0);
    CHECK(code_of([&] { reshape(tape, a, {4, 2}); }) == Errc::ShapeMismatch);
    const Tensor s = slice(tape, a, 1, 1, 2);
    CHECK(std::vector<double>(s.values().begin(), s.values().end()) == std::vector<double>{2, 3, 5, 6});
    const std::vector<Tensor> parts = {a, t2(1, 3, {7, 8, 9})};
    const Tensor c = concat(tape, parts, 0);
    CHECK(c.shape() == Shape{3, 3});
    CHECK(c.at(8) == 9.0);
    const Tensor bias = add_bias(tape, a, Tensor::from_values({3}, {10, 20, 30}));
    CHECK(bias.at(4) == 25.0);
    CHECK(code_of([&] { add(tape, a, r); }) == Errc::ShapeMismatch);
    CHECK(sum(tape, a).item() == 21.0);
    CHECK(mean(tape, a).item() == 3.5);
    CHECK(scale(tape, a, 2.0).at(5) == 12.0);
  }

  TEST_CASE("backward examples") {
    Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
    {
      GradTape tape;
      tape.backward(sum(tape, x));
      CHECK(x.grad()[0] == 1.0);
      CHECK(x.grad()[1] == 1.0);
    }
    x.zero_grad();
    {
      GradTape tape;
      tape.backward(sum(tape, mul(tape, x, x)));
      CHECK(x.grad()[0] == 2.0);
      CHECK(x.grad()[1] == 4.0);
    }
  }

  TEST_CASE("tape contract") {
    Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
    GradTape tape;
    const Tensor y = scale(tape, x, 3.0);
    CHECK(tape.size() == 1);
    CHECK(code_of([&] { tape.backward(y); }) == Errc::NonScalarLoss);
    const Tensor loss = sum(tape, y);
    tape.backward(loss);
    CHECK(tape.consumed());
    CHECK(tape.replayed() == 2);
    CHECK(code_of([&] { tape.backward(loss); }) == Errc::TapeConsumed);

    GradTape off(false);
    scale(off, x, 3.0);
    CHECK(off.size() == 0);
    GradTape on;
    scale(on, Tensor::from_values({2}, {1.0, 2.0}, false), 3.0);
    CHECK(on.size() == 0);
  }

  TEST_CASE("non-finite outputs are rejected") {
    GradTape tape(false);
    const Tensor big = Tensor::from_values({1}, {1e300});
    CHECK(code_of([&] { mul(tape, big, big); }) == Errc::NonFinite);
  }

  TEST_CASE("conv2d examples") {
    GradTape tape(false);
    Rng rng(9);
    const Tensor x = random_tensor(rng, {2, 4, 5}, -1, 1, false);
    Tensor eye = Tensor::zeros({2, 2, 1, 1});
    eye.mutable_values()[0] = 1.0;
    eye.mutable_values()[3] = 1.0;
    const Tensor same = conv2d(tape, x, eye, 1);
    CHECK(same.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same.at(i) == x.at(i));

    const Tensor ones = conv2d(tape, Tensor::full({1, 5, 5}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0), 1);
    CHECK(ones.at(0) == 4.0);
    CHECK(ones.at(2 * 5 + 2) == 9.0);
    CHECK(ones.at(1) == 6.0);
    const Tensor strided = conv2d(tape, Tensor::full({1, 5, 5}, 1.0), Tensor::full({2, 1, 3, 3}, 1.0), 2);
    CHECK(strided.shape() == Shape{2, 3, 3});
    CHECK(code_of([&] { conv2d(tape, x, Tensor::full({1, 3, 3, 3}, 1.0), 1); }) == Errc::ShapeMismatch);
  }

  TEST_CASE("stride-1 conv is translation covariant away from the border") {
    GradTape tape(false);
    Rng rng(21);
    const Tensor x = random_tensor(rng, {2, 9, 9}, -1, 1, false);
    const Tensor k = random_tensor(rng, {3, 2, 3, 3}, -1, 1, false);
    Tensor shifted = Tensor::zeros({2, 9, 9});
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t i = 1; i < 9; ++i) {
        for (std::size_t j = 1; j < 9; ++j) shifted.mutable_values()[(c * 9 + i) * 9 + j] = x.at((c * 9 + i - 1) * 9 + j - 1);
      }
    }
    const Tensor y = conv2d(tape, x, k, 1), ys = conv2d(tape, shifted, k, 1);
    for (std::size_t o = 0; o < 3; ++o) {
      for (std::size_t i = 2; i < 8; ++i) {
        for (std::size_t j = 2; j < 8; ++j) {
          CHECK(ys.at((o * 9 + i) * 9 + j) == doctest::Approx(y.at((o * 9 + i - 1) * 9 + j - 1)).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("forward passes are bit-deterministic") {
    Rng rng(4);
    const Tensor a = random_tensor(rng, {5, 7}, -1, 1, false), b = random_tensor(rng, {7, 3}, -1, 1, false);
    GradTape t1(false), t2_(false);
    const Tensor x = gelu(t1, matmul(t1, a, b)), y = gelu(t2_, matmul(t2_, a, b));
    CHECK(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
  }

  TEST_CASE("gradient checks on five seeds per differentiable op") {
    for (const auto& c : birdast::testing::gradient_cases()) {
      for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const double err = c.run(seed);
        INFO(c.name << " seed " << seed << " error " << err);
        CHECK(err <= 1e-4);
      }
    }
  }

  TEST_CASE("gradient checks on the remaining ops") {
    Rng rng(77);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {3, 4}), bias = random_tensor(rng, {4});
      CHECK(grad_check({a, b}, [=](GradTape& t) { return mul(t, add(t, a, b), a); }, seed) <= 1e-4);
      CHECK(grad_check({a, bias}, [=](GradTape& t) { return add_bias(t, a, bias); }, seed) <= 1e-4);
      CHECK(grad_check({a}, [=](GradTape& t) { return transpose(t, scale(t, a, -1.5)); }, seed) <= 1e-4);
      CHECK(grad_check({a}, [=](GradTape& t) { return swish(t, a); }, seed) <= 1e-4);
      CHECK(grad_check({a}, [=](GradTape& t) { return mean(t, reshape(t, a, {2, 6})); }, seed) <= 1e-4);
      CHECK(grad_check({a, b}, [=](GradTape& t) {
              const std::vector<Tensor> parts = {slice(t, a, 1, 1, 2), slice(t, b, 1, 0, 3)};
              return concat(t, parts, 1);
            }, seed) <= 1e-4);
      Tensor x = random_tensor(rng, {3, 5, 4}), dk = random_tensor(rng, {3, 3, 3});
      Tensor g = random_tensor(rng, {3}, 0.5, 1.5), be = random_tensor(rng, {3});
      CHECK(grad_check({x, dk}, [=](GradTape& t) { return depthwise_conv2d(t, x, dk, 2); }, seed) <= 1e-4);
      CHECK(grad_check({x, g, be}, [=](GradTape& t) { return channel_norm(t, x, g, be); }, seed) <= 1e-4);
      CHECK(grad_check({x}, [=](GradTape& t) { return global_avg_pool(t, x); }, seed) <= 1e-4);
    }
  }

  TEST_CASE("weight files round trip exactly") {
    testing::TempDir dir("tensor");
    Rng rng(6);
    const std::vector<NamedTensor> ts = {{"a", random_tensor(rng, {2, 3}, -1, 1, false)},
                                         {"scalar", Tensor::scalar(0.1)},
                                         {"b.c", random_tensor(rng, {4}, -1e6, 1e6, false)}};
    save_tensors(dir / "w.bin", ts);
    const std::vector<NamedTensor> back = load_tensors(dir / "w.bin");
    REQUIRE(back.size() == ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
      CHECK(back[i].name == ts[i].name);
      CHECK(back[i].tensor.shape() == ts[i].tensor.shape());
      CHECK(std::equal(back[i].tensor.values().begin(), back[i].tensor.values().end(),
                       ts[i].tensor.values().begin()));
    }
    {
      std::ofstream(dir / "bad.bin", std::ios::binary) << "nope";
    }
    CHECK_THROWS_AS(load_tensors(dir / "bad.bin"), Error);
    CHECK_THROWS_AS(load_tensors(dir / "missing.bin"), Error);
  }
}

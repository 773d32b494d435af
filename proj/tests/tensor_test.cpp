#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mgmo/rng.hpp"
#include "mgmo/tensor.hpp"

using namespace mgmo;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
  Tensor t = Tensor::zeros(shape, requires_grad);
  for (auto& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tensor x = Tensor::from_values({3}, {0.0, 0.0, 0.0});
  Tensor y = softmax_lastdim(x);
  for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
  Rng rng(7);
  Tensor x = random_tensor({5, 9}, rng, false, 3.0);
  Tensor y = softmax_lastdim(x);
  for (int r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int c = 0; c < 9; ++c) s += y.data()[static_cast<size_t>(r) * 9 + c];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  Tensor xs = Tensor::zeros({5, 9});
  for (size_t i = 0; i < xs.data().size(); ++i) xs.data()[i] = x.data()[i] + 17.25;
  Tensor y2 = softmax_lastdim(xs);
  for (size_t i = 0; i < y.data().size(); ++i) CHECK(std::abs(y.data()[i] - y2.data()[i]) < 1e-9);
}

TEST_CASE("matmul against identity and log/exp inverses") {
  Rng rng(3);
  Tensor a = random_tensor({3, 3}, rng, false);
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.data()[static_cast<size_t>(i) * 3 + i] = 1.0;
  Tensor prod = matmul(eye, a);
  for (size_t i = 0; i < a.data().size(); ++i) CHECK(prod.data()[i] == doctest::Approx(a.data()[i]));

  Tensor x = Tensor::from_values({2}, {1.0, 2.0});
  CHECK(std::abs(sum(log(exp(x))).item() - 3.0) < 1e-12);
}

TEST_CASE("shape mismatches name both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[4,5]"), std::invalid_argument);
}

TEST_CASE("broadcast add over leading dimension") {
  Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_values({2}, {10, 20});
  Tensor c = add(a, b);
  CHECK(c.data() == std::vector<double>{11, 22, 13, 24});
}

TEST_CASE("simple analytic gradients") {
  SUBCASE("d/dx (x*x) at 3 is 6") {
    Tape::current().reset();
    Tensor x = Tensor::from_values({1}, {3.0}, true);
    Tensor y = mul(x, x);
    backward(y);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
  }
  SUBCASE("constants get zero gradient") {
    Tape::current().reset();
    Tensor x = Tensor::from_values({1}, {3.0}, true);
    Tensor c = Tensor::from_values({1}, {5.0}, true);
    Tensor y = add(x, scale(c, 0.0));
    backward(y);
    CHECK(c.grad()[0] == 0.0);
    CHECK(x.grad()[0] == 1.0);
  }
  SUBCASE("gradients accumulate across uses") {
    Tape::current().reset();
    Tensor x = Tensor::from_values({1}, {2.0}, true);
    Tensor y = add(mul(x, x), x);  // d/dx = 2x + 1 = 5
    backward(y);
    CHECK(x.grad()[0] == doctest::Approx(5.0).epsilon(1e-12));
  }
}

TEST_CASE("backward requires a scalar") {
  Tape::current().reset();
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("backward of a sum of losses is the sum of gradients") {
  Rng rng(11);
  Tensor w = random_tensor({4, 4}, rng);
  Tensor x = random_tensor({2, 4}, rng, false);

  auto loss1 = [&]() { return sum(matmul(x, w)); };
  auto loss2 = [&]() { return mean(relu(matmul(x, w))); };

  Tape::current().reset();
  w.zero_grad();
  backward(add(loss1(), loss2()));
  auto combined = w.grad();

  Tape::current().reset();
  w.zero_grad();
  backward(loss1());
  auto g1 = w.grad();
  Tape::current().reset();
  w.zero_grad();
  backward(loss2());
  auto g2 = w.grad();

  for (size_t i = 0; i < combined.size(); ++i) {
    CHECK(std::abs(combined[i] - (g1[i] + g2[i])) < 1e-12);
  }
}

TEST_CASE("finite differences: quadratic form") {
  Rng rng(5);
  Tensor w = random_tensor({3, 3}, rng);
  Tensor v = random_tensor({1, 3}, rng, false);
  auto f = [&]() { return sum(matmul(matmul(v, w), transpose(matmul(v, w)))); };
  CHECK(finite_difference_check(f, {w}, 1e-5) < 1e-8);
}

TEST_CASE("finite differences: softmax cross entropy toy") {
  Rng rng(9);
  Tensor w = random_tensor({4, 6}, rng);
  Tensor x = random_tensor({3, 4}, rng, false);
  std::vector<int> targets = {1, 4, 2};
  auto f = [&]() { return neg(sum(gather_lastdim(log_softmax_lastdim(matmul(x, w)), targets))); };
  CHECK(finite_difference_check(f, {w}, 1e-5) < 1e-6);
}

TEST_CASE("finite differences: random 3-layer MLP") {
  Rng rng(13);
  Tensor w1 = random_tensor({5, 8}, rng, true, 0.5);
  Tensor b1 = random_tensor({8}, rng, true, 0.1);
  Tensor w2 = random_tensor({8, 8}, rng, true, 0.5);
  Tensor b2 = random_tensor({8}, rng, true, 0.1);
  Tensor w3 = random_tensor({8, 4}, rng, true, 0.5);
  Tensor gain = random_tensor({8}, rng, true, 0.2);
  Tensor bias = random_tensor({8}, rng, true, 0.2);
  Tensor x = random_tensor({3, 5}, rng, false);

  auto f = [&]() {
    Tensor h1 = relu(add(matmul(x, w1), b1));
    Tensor h2 = layer_norm(add(matmul(h1, w2), b2), gain, bias);
    Tensor out = softmax_lastdim(matmul(h2, w3));
    return mean(mul(out, out));
  };
  CHECK(finite_difference_check(f, {w1, b1, w2, b2, w3, gain, bias}, 1e-5) < 1e-6);
}

TEST_CASE("finite differences: embedding, gather, slicing, stacking") {
  Rng rng(17);
  Tensor table = random_tensor({7, 6}, rng, true, 0.5);
  Tensor w = random_tensor({3, 4}, rng, true, 0.5);
  std::vector<int> ids = {2, 5, 1, 5};
  std::vector<int> picks = {0, 3, 2, 1};
  auto f = [&]() {
    Tensor e = embedding_lookup(table, ids);
    Tensor left = slice_cols(e, 0, 3);
    Tensor right = slice_cols(e, 3, 3);
    Tensor joined = concat_cols({left, right});
    Tensor rows = log_softmax_lastdim(matmul(slice_cols(joined, 1, 3), w));
    Tensor picked = gather_lastdim(rows, picks);
    Tensor a = sum(picked);
    Tensor b = mean(exp(scale(picked, 0.25)));
    return sum(mul(stack_scalars({a, b}), stack_scalars({b, a})));
  };
  CHECK(finite_difference_check(f, {table, w}, 1e-5) < 1e-6);
}

TEST_CASE("finite differences: reductions over rows") {
  Rng rng(19);
  Tensor w = random_tensor({4, 5}, rng, true, 0.5);
  Tensor x = random_tensor({3, 4}, rng, false);
  auto f = [&]() {
    Tensor h = matmul(x, w);
    Tensor pooled = mean_rows(h);               // [5]
    Tensor rows = sum_lastdim(mul(h, pooled));  // broadcast, then row sums
    return add(sum(rows), mean(reshape(pooled, {5})));
  };
  CHECK(finite_difference_check(f, {w}, 1e-5) < 1e-6);
}

TEST_CASE("tape determinism: same seed, same gradients bit for bit") {
  auto run = [&]() {
    Rng rng(23);
    Tape::current().reset();
    Tensor w = random_tensor({6, 6}, rng);
    Tensor x = random_tensor({2, 6}, rng, false);
    backward(sum(matmul(x, w)));
    return w.grad();
  };
  CHECK(run() == run());
}

TEST_CASE("no-grad guard suppresses recording") {
  Tape::current().reset();
  Tensor x = Tensor::from_values({1}, {2.0}, true);
  {
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK(Tape::current().size() == 0);
    CHECK(y.item() == doctest::Approx(4.0));
  }
  Tensor y = mul(x, x);
  CHECK(Tape::current().size() == 1);
}

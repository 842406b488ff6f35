#include <doctest.h>

#include <cmath>

#include "blofin/gradcheck.hpp"
#include "blofin/rng.hpp"
#include "blofin/tensor.hpp"

using namespace blofin;

TEST_CASE("matmul identity cases") {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  CHECK(matmul(a, eye).values() == std::vector<double>{1, 2, 3, 4});

  const Tensor col({2, 1}, {5, 7});
  CHECK(matmul(eye, col).values() == std::vector<double>{5, 7});
}

TEST_CASE("matmul shape errors name both shapes") {
  const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b({4, 2}, std::vector<double>(8, 0.0));
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       "matmul: inner dimensions of [2,3] and [4,2] do not match",
                       ShapeError);
}

TEST_CASE("matmul backward against finite differences") {
  Rng rng(11);
  Tensor a = Tensor({3, 4}, [&] {
    std::vector<double> v(12);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    return v;
  }(), true);
  Tensor b = Tensor({4, 2}, [&] {
    std::vector<double> v(8);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    return v;
  }(), true);

  for (Tensor t : {a, b}) {
    GradCheck check{"matmul", [a, b]() { return sum(matmul(a, b)); }, t};
    const auto result = run_gradcheck(check);
    CHECK(result.max_rel_error < 1e-5);
  }
}

TEST_CASE("elementwise basics") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));

  // d(x*x)/dx = 2x at x = 3
  Tensor x = Tensor::scalar(3.0, true);
  backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(6.0));

  // sigmoid'(0) = 0.25
  Tensor z = Tensor::scalar(0.0, true);
  backward(sigmoid(z));
  CHECK(z.grad()[0] == doctest::Approx(0.25));
}

TEST_CASE("log rejects non-positive input") {
  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), DomainError);
  CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), DomainError);
}

TEST_CASE("scalar broadcast in elementwise ops") {
  const Tensor a({3}, {1, 2, 3});
  CHECK(mul(a, Tensor::scalar(2.0)).values() == std::vector<double>{2, 4, 6});
  CHECK(add(Tensor::scalar(1.0), a).values() == std::vector<double>{2, 3, 4});

  const Tensor bad({2}, {1, 2});
  CHECK_THROWS_AS(add(a, bad), ShapeError);
}

TEST_CASE("softmax rows are normalized and shift invariant") {
  const Tensor flat({2}, {0.0, 0.0});
  CHECK(softmax_lastaxis(flat).values()[0] == doctest::Approx(0.5));

  const Tensor big({2}, {1000.0, 1000.0});
  const auto v = softmax_lastaxis(big).values();
  CHECK(v[0] == doctest::Approx(0.5));
  CHECK(std::isfinite(v[1]));

  Rng rng(3);
  std::vector<double> row(7);
  for (auto& x : row) x = rng.uniform(-2.0, 2.0);
  const Tensor base({7}, row);
  for (auto& x : row) x += 123.456;
  const Tensor shifted({7}, row);
  const auto sa = softmax_lastaxis(base).values();
  const auto sb = softmax_lastaxis(shifted).values();
  double total = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    CHECK(std::abs(sa[i] - sb[i]) < 1e-12);
    total += sa[i];
  }
  CHECK(std::abs(total - 1.0) < 1e-12);
}

TEST_CASE("reductions") {
  const Tensor v({3}, {1, 2, 3});
  CHECK(sum(v).item() == doctest::Approx(6.0));
  CHECK(mean(v).item() == doctest::Approx(2.0));

  Tensor g({3}, {1, 2, 3}, true);
  backward(mean(g));
  for (const double x : g.grad()) CHECK(x == doctest::Approx(1.0 / 3.0));

  const Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(sum(m, 0).values() == std::vector<double>{5, 7, 9});
  CHECK(mean(m, 1).values() == std::vector<double>{2, 5});
  CHECK_THROWS_AS(sum(m, 2), ShapeError);
}

TEST_CASE("backward contract") {
  Tensor w = Tensor::scalar(2.0, true);
  backward(mul(w, w));
  CHECK(w.grad()[0] == doctest::Approx(4.0));

  // A leaf that does not feed the loss keeps a zero gradient.
  Tensor unused = Tensor::scalar(5.0, true);
  unused.zero_grad();
  w.zero_grad();
  backward(mul(w, w));
  CHECK(unused.grad()[0] == 0.0);

  const Tensor non_scalar({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(backward(non_scalar), ContractError);
}

TEST_CASE("gradients accumulate over branches and repeated backward") {
  Tensor x = Tensor::scalar(1.5, true);

  // Two branches summed: grad = d(x^2)/dx + d(3x)/dx = 2x + 3.
  x.zero_grad();
  backward(add(mul(x, x), mul(x, 3.0)));
  const double both = x.grad()[0];

  x.zero_grad();
  backward(mul(x, x));
  const double branch_a = x.grad()[0];
  x.zero_grad();
  backward(mul(x, 3.0));
  const double branch_b = x.grad()[0];
  CHECK(both == doctest::Approx(branch_a + branch_b));

  // Without a reset, a second backward over a fresh graph accumulates.
  x.zero_grad();
  backward(mul(x, x));
  backward(mul(x, x));
  CHECK(x.grad()[0] == doctest::Approx(2.0 * branch_a));
}

TEST_CASE("two-layer MLP composite loss matches finite differences") {
  Rng rng(21);
  auto rand = [&rng](Shape s) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
    for (auto& x : v) x = rng.uniform(-1.5, 1.5);
    return Tensor(std::move(s), std::move(v), true);
  };
  Tensor w1 = rand({3, 5});
  Tensor w2 = rand({5, 2});
  Tensor input = rand({4, 3});
  Tensor target = rand({4, 2});

  auto loss = [w1, w2, input, target]() {
    const Tensor out = matmul(sigmoid(matmul(input, w1)), w2);
    const Tensor err = sub(out, target);
    return mean(mul(err, err));
  };

  for (Tensor t : {w1, w2, input}) {
    GradCheck check{"mlp", loss, t};
    CHECK(run_gradcheck(check).max_rel_error < 1e-5);
  }
}

TEST_CASE("determinism: identical graphs give bit-identical values and grads") {
  auto build = []() {
    Rng rng(77);
    std::vector<double> v(24);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    Tensor a({4, 6}, v, true);
    Tensor loss = sum(mul(softmax_lastaxis(a), sigmoid(a)));
    backward(loss);
    return std::make_pair(loss.item(), a.grad());
  };
  const auto [loss1, grad1] = build();
  const auto [loss2, grad2] = build();
  CHECK(loss1 == loss2);
  CHECK(grad1 == grad2);
}

TEST_CASE("patchify and unpatchify invert each other") {
  Rng rng(5);
  std::vector<double> v(16 * 16);
  for (auto& x : v) x = rng.uniform(0.0, 1.0);
  const Tensor image({16, 16}, v);
  const Tensor round_trip = unpatchify(patchify(image, 8), 16, 16, 8);
  CHECK(round_trip.values() == image.values());

  CHECK_THROWS_AS(patchify(image, 5), ShapeError);
}

TEST_CASE("no-grad guard suppresses graph recording") {
  Tensor x = Tensor::scalar(2.0, true);
  NoGradGuard guard;
  const Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

#include <doctest.h>

#include <cmath>

#include "blofin/gradcheck.hpp"
#include "blofin/losses.hpp"
#include "blofin/rng.hpp"

using namespace blofin;

namespace {

Tensor checker_mask(std::int64_t n) {
  std::vector<double> v(static_cast<std::size_t>(n * n));
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t c = 0; c < n; ++c) v[r * n + c] = (r + c) % 2 == 0 ? 1.0 : 0.0;
  }
  return Tensor({n, n}, std::move(v));
}

}  // namespace

TEST_CASE("bce at zero logits is ln 2 for any mask") {
  const Tensor logits = Tensor::zeros({4, 4});
  CHECK(bce_loss(logits, checker_mask(4)).item() == doctest::Approx(std::log(2.0)));
  CHECK(bce_loss(logits, Tensor::zeros({4, 4})).item() == doctest::Approx(std::log(2.0)));
}

TEST_CASE("bce vanishes for saturated correct predictions") {
  const Tensor mask = checker_mask(4);
  std::vector<double> z(16);
  for (std::size_t i = 0; i < 16; ++i) z[i] = mask.values()[i] == 1.0 ? 50.0 : -50.0;
  CHECK(bce_loss(Tensor({4, 4}, z), mask).item() < 1e-8);
}

TEST_CASE("bce rejects non-binary masks") {
  CHECK_THROWS_AS(bce_loss(Tensor::zeros({2, 2}), Tensor::full({2, 2}, 0.5)),
                  ContractError);
}

TEST_CASE("dice loss frozen values") {
  // p == m on 4 foreground pixels: score (8+1)/(8+1) = 1, loss 0.
  std::vector<double> mask_v(16, 0.0);
  mask_v[0] = mask_v[1] = mask_v[2] = mask_v[3] = 1.0;
  const Tensor mask({4, 4}, mask_v);
  std::vector<double> sat(16);
  for (std::size_t i = 0; i < 16; ++i) sat[i] = mask_v[i] == 1.0 ? 1e4 : -1e4;
  CHECK(dice_loss(Tensor({4, 4}, sat), mask).item() == doctest::Approx(0.0).epsilon(1e-9));

  // p == 0 against 4 foreground pixels: score (0+1)/(0+4+1), loss 0.8.
  const Tensor all_off = Tensor::full({4, 4}, -1e4);
  CHECK(dice_loss(all_off, mask).item() == doctest::Approx(0.8).epsilon(1e-9));

  // Empty mask with p == 0: smoothing resolves 0/0, loss 0.
  CHECK(dice_loss(all_off, Tensor::zeros({4, 4})).item() ==
        doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("composite loss endpoints and mixing") {
  Rng rng(9);
  std::vector<double> z(16);
  for (auto& v : z) v = rng.uniform(-2.0, 2.0);
  const Tensor logits({4, 4}, z);
  const Tensor mask = checker_mask(4);

  LossConfig cfg;
  cfg.lambda_tradeoff = 0.0;
  CHECK(composite_loss(logits, mask, cfg).item() == bce_loss(logits, mask).item());
  cfg.lambda_tradeoff = 1.0;
  CHECK(composite_loss(logits, mask, cfg).item() == dice_loss(logits, mask).item());

  cfg.lambda_tradeoff = 0.8;
  const double ce = bce_loss(logits, mask).item();
  const double dc = dice_loss(logits, mask).item();
  CHECK(composite_loss(logits, mask, cfg).item() ==
        doctest::Approx(0.2 * ce + 0.8 * dc));

  // Convex combination stays between the two endpoints.
  for (const double lambda : {0.0, 0.2, 0.5, 0.8, 1.0}) {
    cfg.lambda_tradeoff = lambda;
    const double v = composite_loss(logits, mask, cfg).item();
    CHECK(v >= std::min(ce, dc) - 1e-12);
    CHECK(v <= std::max(ce, dc) + 1e-12);
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(31);
  std::vector<double> z(36);
  for (auto& v : z) v = rng.uniform(-2.0, 2.0);
  Tensor logits({6, 6}, z, true);
  const Tensor mask = checker_mask(6);
  LossConfig cfg;

  GradCheck bce{"bce", [logits, mask]() { return bce_loss(logits, mask); }, logits};
  CHECK(run_gradcheck(bce).max_rel_error < 1e-5);
  GradCheck dice{"dice", [logits, mask]() { return dice_loss(logits, mask); }, logits};
  CHECK(run_gradcheck(dice).max_rel_error < 1e-5);
  GradCheck comp{"composite",
                 [logits, mask, cfg]() { return composite_loss(logits, mask, cfg); },
                 logits};
  CHECK(run_gradcheck(comp).max_rel_error < 1e-5);
}

TEST_CASE("losses stay finite at extreme logits") {
  const Tensor mask = checker_mask(4);
  LossConfig cfg;
  for (const double extreme : {1e4, -1e4}) {
    const Tensor logits = Tensor::full({4, 4}, extreme);
    CHECK(std::isfinite(bce_loss(logits, mask).item()));
    CHECK(std::isfinite(dice_loss(logits, mask).item()));
    CHECK(std::isfinite(composite_loss(logits, mask, cfg).item()));
  }
}

TEST_CASE("dice loss decreases as predictions sharpen toward the mask") {
  const Tensor mask = checker_mask(4);
  double previous = 1.0;
  for (const double scale : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    std::vector<double> z(16);
    for (std::size_t i = 0; i < 16; ++i) {
      z[i] = (mask.values()[i] == 1.0 ? scale : -scale);
    }
    const double loss = dice_loss(Tensor({4, 4}, z), mask).item();
    CHECK(loss < previous);
    previous = loss;
  }
}

TEST_CASE("dice score cases and symmetry") {
  std::vector<double> a(16, 0.0), b(16, 0.0);
  a[0] = a[1] = 1.0;
  b[1] = b[2] = 1.0;
  const Tensor ta({4, 4}, a), tb({4, 4}, b);
  CHECK(dice_score(ta, ta) == doctest::Approx(1.0));
  CHECK(dice_score(ta, tb) == doctest::Approx(0.5));  // |A|=|B|=2, overlap 1
  CHECK(dice_score(ta, tb) == dice_score(tb, ta));

  std::vector<double> c(16, 0.0);
  c[10] = c[11] = 1.0;
  CHECK(dice_score(ta, Tensor({4, 4}, c)) == doctest::Approx(0.0));

  CHECK(dice_score(Tensor::zeros({4, 4}), Tensor::zeros({4, 4})) == doctest::Approx(1.0));
  CHECK_THROWS_AS(dice_score(ta, Tensor::zeros({2, 2})), ShapeError);
}

TEST_CASE("dice score is invariant under a joint pixel permutation") {
  Rng rng(44);
  std::vector<double> a(25), b(25);
  for (auto& v : a) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  for (auto& v : b) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  std::vector<std::size_t> perm(25);
  for (std::size_t i = 0; i < 25; ++i) perm[i] = i;
  shuffle_in_place(perm, rng);
  std::vector<double> pa(25), pb(25);
  for (std::size_t i = 0; i < 25; ++i) {
    pa[perm[i]] = a[i];
    pb[perm[i]] = b[i];
  }
  CHECK(dice_score(Tensor({5, 5}, a), Tensor({5, 5}, b)) ==
        doctest::Approx(dice_score(Tensor({5, 5}, pa), Tensor({5, 5}, pb))));
}

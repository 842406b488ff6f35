#include <doctest.h>

#include <cmath>

#include "blofin/optimizer.hpp"

using namespace blofin;

TEST_CASE("polynomial schedule endpoints and midpoint") {
  const ScheduleConfig cfg{5e-3, 100};
  CHECK(lr_at(cfg, 0) == doctest::Approx(5e-3).epsilon(1e-15));
  CHECK(lr_at(cfg, 100) == 0.0);
  CHECK(lr_at(cfg, 150) == 0.0);  // clamps past iter_max
  CHECK(std::abs(lr_at(cfg, 50) - 5e-3 * std::pow(0.5, 0.9)) < 1e-12);
  CHECK_THROWS_AS(lr_at(cfg, -1), ContractError);
}

TEST_CASE("schedule is monotonically non-increasing") {
  const ScheduleConfig cfg{5e-3, 100};
  double previous = lr_at(cfg, 0);
  for (std::int64_t i = 1; i <= 100; ++i) {
    const double lr = lr_at(cfg, i);
    CHECK(lr <= previous);
    previous = lr;
  }
}

TEST_CASE("adamw first step with bias correction") {
  // w = 1, g = 0.5, lr = 0.01, wd = 0: corrected m/sqrt(v) = 1, so w -> 0.99.
  Tensor w = Tensor::scalar(1.0, true);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg, {w});
  w.set_grad({0.5});
  opt.step(0.01);
  CHECK(w.values()[0] == doctest::Approx(0.99).epsilon(1e-6));
}

TEST_CASE("adamw zero gradient leaves parameters unchanged without decay") {
  Tensor w = Tensor::scalar(1.0, true);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg, {w});
  w.zero_grad();
  opt.step(0.01);
  CHECK(w.values()[0] == 1.0);
}

TEST_CASE("adamw pure decoupled decay") {
  Tensor w = Tensor::scalar(1.0, true);
  AdamWConfig cfg;
  cfg.weight_decay = 0.1;
  AdamW opt(cfg, {w});
  w.zero_grad();
  opt.step(0.01);
  CHECK(w.values()[0] == doctest::Approx(0.999).epsilon(1e-12));
}

TEST_CASE("adamw normalized step is bounded by lr") {
  Tensor w = Tensor::scalar(0.0, true);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg, {w});
  double previous = 0.0;
  for (int t = 0; t < 50; ++t) {
    w.set_grad({3.7});  // constant gradient
    opt.step(0.01);
    CHECK(std::abs(w.values()[0] - previous) <= 0.01 * (1.0 + 1e-9));
    previous = w.values()[0];
  }
}

TEST_CASE("two identical optimizers apply bit-identical updates") {
  auto run = []() {
    Tensor w({3}, {0.3, -0.7, 1.1}, true);
    AdamW opt(AdamWConfig{}, {w});
    for (int t = 1; t <= 10; ++t) {
      w.set_grad({0.1 * t, -0.2, 0.05 * t});
      opt.step(5e-3 * std::pow(1.0 - t / 100.0, 0.9));
    }
    return w.values();
  };
  CHECK(run() == run());
}

TEST_CASE("adamw rejects mismatched gradient shapes") {
  Tensor w({2}, {1.0, 2.0}, true);
  AdamW opt(AdamWConfig{}, {w});
  CHECK_THROWS_AS(w.set_grad({1.0}), ShapeError);
}

TEST_CASE("config validation") {
  AdamWConfig bad;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = AdamWConfig{};
  bad.lr0 = 0.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

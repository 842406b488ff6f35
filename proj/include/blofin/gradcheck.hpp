#pragma once

#include <functional>
#include <string>
#include <vector>

#include "blofin/losses.hpp"
#include "blofin/model.hpp"
#include "blofin/rng.hpp"
#include "blofin/tensor.hpp"

namespace blofin {

// Central finite differences of a scalar-valued map over one input tensor.
// The oracle touches only tensor values, never the adjoint code it checks.
inline std::vector<double> fd_gradient(const std::function<double()>& value,
                                       Tensor input, double h = 1e-6) {
  std::vector<double> grad(input.values().size());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double original = input.values()[i];
    input.values()[i] = original + h;
    const double plus = value();
    input.values()[i] = original - h;
    const double minus = value();
    input.values()[i] = original;
    grad[i] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

// max_i |analytic_i - fd_i| / max(1, |fd_i|)
inline double max_relative_error(const std::vector<double>& analytic,
                                 const std::vector<double>& fd) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(1.0, std::abs(fd[i]));
    worst = std::max(worst, std::abs(analytic[i] - fd[i]) / denom);
  }
  return worst;
}

struct GradCheckResult {
  std::string op;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheck {
  std::string name;
  // Builds the scalar loss; the tensor whose gradient is checked must have
  // requires_grad set.
  std::function<Tensor()> loss;
  Tensor input;
};

inline GradCheckResult run_gradcheck(const GradCheck& check, double tolerance = 1e-5,
                                     double h = 1e-6) {
  Tensor input = check.input;
  input.zero_grad();
  backward(check.loss());
  const std::vector<double> analytic = input.grad();
  const std::vector<double> fd = fd_gradient(
      [&]() {
        NoGradGuard guard;
        return check.loss().item();
      },
      input, h);
  GradCheckResult result;
  result.op = check.name;
  result.max_rel_error = max_relative_error(analytic, fd);
  result.passed = result.max_rel_error < tolerance;
  return result;
}

namespace detail {

inline Tensor random_tensor(Shape shape, double lo, double hi, Rng& rng,
                            bool requires_grad = true) {
  const auto n = shape_numel(shape);
  std::vector<double> values(static_cast<std::size_t>(n));
  for (double& v : values) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

inline Tensor random_mask(Shape shape, Rng& rng) {
  const auto n = shape_numel(shape);
  std::vector<double> values(static_cast<std::size_t>(n));
  for (double& v : values) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace detail

// The standard suite: every differentiable op plus both loss terms and a
// model path through the LoRA adapters and the prompt embedding.
inline std::vector<GradCheck> standard_gradchecks(std::uint64_t seed = 1234) {
  Rng rng(seed);
  std::vector<GradCheck> checks;

  auto add_check = [&checks](std::string name, Tensor input,
                             std::function<Tensor()> loss) {
    checks.push_back({std::move(name), std::move(loss), std::move(input)});
  };

  {
    Tensor a = detail::random_tensor({3, 4}, -2.0, 2.0, rng);
    Tensor b = detail::random_tensor({4, 5}, -2.0, 2.0, rng, false);
    add_check("matmul_lhs", a, [a, b]() { return sum(matmul(a, b)); });
  }
  {
    Tensor a = detail::random_tensor({3, 4}, -2.0, 2.0, rng, false);
    Tensor b = detail::random_tensor({4, 5}, -2.0, 2.0, rng);
    add_check("matmul_rhs", b, [a, b]() { return sum(matmul(a, b)); });
  }
  {
    Tensor a = detail::random_tensor({2, 6}, -2.0, 2.0, rng);
    Tensor b = detail::random_tensor({2, 6}, -2.0, 2.0, rng, false);
    add_check("add", a, [a, b]() { return sum(mul(add(a, b), add(a, b))); });
  }
  {
    Tensor a = detail::random_tensor({2, 6}, -2.0, 2.0, rng);
    Tensor b = detail::random_tensor({2, 6}, -2.0, 2.0, rng, false);
    add_check("sub", a, [a, b]() { return sum(mul(sub(a, b), sub(a, b))); });
  }
  {
    Tensor a = detail::random_tensor({12}, -2.0, 2.0, rng);
    Tensor b = detail::random_tensor({12}, -2.0, 2.0, rng, false);
    add_check("mul", a, [a, b]() { return sum(mul(a, b)); });
  }
  {
    Tensor a = detail::random_tensor({12}, -2.0, 2.0, rng);
    Tensor b = detail::random_tensor({12}, 1.0, 3.0, rng, false);
    add_check("div", a, [a, b]() { return sum(div(a, b)); });
    Tensor c = detail::random_tensor({12}, 1.0, 3.0, rng);
    Tensor d = detail::random_tensor({12}, -2.0, 2.0, rng, false);
    add_check("div_denominator", c, [c, d]() { return sum(div(d, c)); });
  }
  {
    Tensor a = detail::random_tensor({9}, -2.0, 2.0, rng);
    add_check("neg", a, [a]() { return sum(mul(neg(a), neg(a))); });
  }
  {
    Tensor a = detail::random_tensor({9}, -2.0, 2.0, rng);
    add_check("sigmoid", a, [a]() { return sum(sigmoid(a)); });
  }
  {
    Tensor a = detail::random_tensor({9}, 0.5, 2.5, rng);
    add_check("log", a, [a]() { return sum(log(a)); });
  }
  {
    Tensor a = detail::random_tensor({9}, 0.5, 2.0, rng);
    add_check("pow", a, [a]() { return sum(pow(a, 1.7)); });
  }
  {
    Tensor a = detail::random_tensor({3, 5}, -2.0, 2.0, rng);
    Tensor b = detail::random_tensor({3, 5}, -2.0, 2.0, rng, false);
    add_check("softmax_lastaxis", a,
              [a, b]() { return sum(mul(softmax_lastaxis(a), b)); });
  }
  {
    Tensor a = detail::random_tensor({4, 3}, -2.0, 2.0, rng);
    add_check("sum_axis", a, [a]() { return sum(mul(sum(a, 0), sum(a, 0))); });
  }
  {
    Tensor a = detail::random_tensor({4, 3}, -2.0, 2.0, rng);
    add_check("mean_axis", a, [a]() { return sum(mul(mean(a, 1), mean(a, 1))); });
  }
  {
    Tensor a = detail::random_tensor({4, 3}, -2.0, 2.0, rng);
    Tensor b = detail::random_tensor({3, 4}, -2.0, 2.0, rng, false);
    add_check("transpose", a, [a, b]() { return sum(mul(transpose(a), b)); });
  }
  {
    Tensor a = detail::random_tensor({2, 6}, -2.0, 2.0, rng);
    Tensor row = detail::random_tensor({6}, -1.0, 1.0, rng, false);
    add_check("add_rowvec_matrix", a,
              [a, row]() { return sum(sigmoid(add_rowvec(a, row))); });
    Tensor m = detail::random_tensor({2, 6}, -2.0, 2.0, rng, false);
    Tensor r = detail::random_tensor({6}, -1.0, 1.0, rng);
    add_check("add_rowvec_row", r, [m, r]() { return sum(sigmoid(add_rowvec(m, r))); });
  }
  {
    Tensor a = detail::random_tensor({16, 16}, -1.0, 1.0, rng);
    add_check("patchify", a, [a]() {
      const Tensor p = patchify(a, 8);
      return sum(mul(p, p));
    });
  }
  {
    Tensor a = detail::random_tensor({4, 64}, -1.0, 1.0, rng);
    add_check("unpatchify", a, [a]() {
      const Tensor img = unpatchify(a, 16, 16, 8);
      return sum(sigmoid(img));
    });
  }
  {
    Tensor a = detail::random_tensor({5, 4}, -2.0, 2.0, rng);
    add_check("slice_rows", a, [a]() {
      const Tensor s = slice_rows(a, 1, 3);
      return sum(mul(s, s));
    });
  }
  {
    Tensor logits = detail::random_tensor({6, 6}, -2.0, 2.0, rng);
    Tensor mask = detail::random_mask({6, 6}, rng);
    add_check("bce_loss", logits, [logits, mask]() { return bce_loss(logits, mask); });
  }
  {
    Tensor logits = detail::random_tensor({6, 6}, -2.0, 2.0, rng);
    Tensor mask = detail::random_mask({6, 6}, rng);
    add_check("dice_loss", logits, [logits, mask]() { return dice_loss(logits, mask); });
  }
  {
    Tensor logits = detail::random_tensor({6, 6}, -2.0, 2.0, rng);
    Tensor mask = detail::random_mask({6, 6}, rng);
    LossConfig cfg;
    add_check("composite_loss", logits,
              [logits, mask, cfg]() { return composite_loss(logits, mask, cfg); });
  }
  {
    // Full model path: composite loss against a LoRA up matrix and against
    // the prompt embedding.
    ModelConfig mc;
    mc.image_size = 16;
    mc.seed = 7;
    auto model = std::make_shared<SegModel>(make_model(mc));
    Rng data_rng(seed + 99);
    // Zero-initialized up matrices would make the down gradients vanish
    // identically, so nudge them off the init point first.
    for (auto& block : model->blocks) {
      for (AttentionBlock* attn :
           {&block.self_attn, &block.token_to_image, &block.image_to_token}) {
        for (double& v : attn->lora_q->up.values()) v = data_rng.uniform(-0.05, 0.05);
        for (double& v : attn->lora_v->up.values()) v = data_rng.uniform(-0.05, 0.05);
      }
    }
    Tensor image = detail::random_tensor({16, 16}, 0.0, 1.0, data_rng, false);
    Tensor mask = detail::random_mask({16, 16}, data_rng);
    LossConfig cfg;
    auto model_loss = [model, image, mask, cfg]() {
      return composite_loss(forward(*model, image), mask, cfg);
    };
    add_check("model_loss_lora_up", model->blocks[0].token_to_image.lora_v->up, model_loss);
    add_check("model_loss_lora_down", model->blocks[0].self_attn.lora_q->down, model_loss);
    add_check("model_loss_prompt", model->prompt.tokens, model_loss);
    add_check("model_loss_upsampler", model->head.upsampler, model_loss);
  }

  return checks;
}

struct GradCheckReport {
  std::vector<GradCheckResult> results;
  bool all_passed = true;
};

inline GradCheckReport run_all_gradchecks(double tolerance = 1e-5) {
  GradCheckReport report;
  for (const GradCheck& check : standard_gradchecks()) {
    const GradCheckResult r = run_gradcheck(check, tolerance);
    report.all_passed = report.all_passed && r.passed;
    report.results.push_back(r);
  }
  return report;
}

}  // namespace blofin

#pragma once

#include <cmath>
#include <string>

#include "blofin/tensor.hpp"

namespace blofin {

struct LossConfig {
  double lambda_tradeoff = 0.8;
  double dice_smoothing = 1.0;

  void validate() const {
    if (!(lambda_tradeoff >= 0.0 && lambda_tradeoff <= 1.0)) {
      throw ContractError("loss config: lambda " + std::to_string(lambda_tradeoff) +
                          " outside [0,1]");
    }
    if (!(dice_smoothing > 0.0)) {
      throw ContractError("loss config: dice smoothing must be positive");
    }
  }
};

namespace detail {

inline void check_binary_mask(const Tensor& mask, const char* who) {
  for (const double v : mask.values()) {
    if (v != 0.0 && v != 1.0) {
      throw ContractError(std::string(who) + ": mask entries must be 0 or 1");
    }
  }
}

}  // namespace detail

// Mean binary cross-entropy on raw logits. Evaluated in the shifted
// softplus form max(z,0) - z*m + log1p(exp(-|z|)) so it stays finite for
// arbitrarily large logits; the adjoint is (sigmoid(z) - m) / N.
inline Tensor bce_loss(const Tensor& logits, const Tensor& mask) {
  if (logits.shape() != mask.shape()) {
    throw ShapeError("bce_loss: logits " + shape_str(logits.shape()) + " vs mask " +
                     shape_str(mask.shape()));
  }
  detail::check_binary_mask(mask, "bce_loss");
  const std::size_t n = static_cast<std::size_t>(logits.numel());
  const double* z = logits.values().data();
  const double* m = mask.values().data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += std::max(z[i], 0.0) - z[i] * m[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  auto zn = logits.node();
  auto mn = mask.node();
  return detail::make_result(
      Shape{}, {total * inv_n}, {logits, mask},
      [zn, mn, n, inv_n](detail::TensorNode& self) {
        if (zn->requires_grad) {
          std::vector<double> gz(n);
          for (std::size_t i = 0; i < n; ++i) {
            gz[i] = (sigmoid_scalar(zn->values[i]) - mn->values[i]) * inv_n * self.grad[0];
          }
          zn->add_grad(gz);
        }
        if (mn->requires_grad) {
          std::vector<double> gm(n);
          for (std::size_t i = 0; i < n; ++i) gm[i] = -zn->values[i] * inv_n * self.grad[0];
          mn->add_grad(gm);
        }
      });
}

// Soft Dice loss 1 - (2*sum(p*m) + s) / (sum(p) + sum(m) + s) with p = sigmoid(logits).
inline Tensor dice_loss(const Tensor& logits, const Tensor& mask, double smoothing = 1.0) {
  if (logits.shape() != mask.shape()) {
    throw ShapeError("dice_loss: logits " + shape_str(logits.shape()) + " vs mask " +
                     shape_str(mask.shape()));
  }
  if (!(smoothing > 0.0)) {
    throw ContractError("dice_loss: smoothing must be positive");
  }
  detail::check_binary_mask(mask, "dice_loss");
  const Tensor p = sigmoid(logits);
  const Tensor numer = 2.0 * sum(p * mask) + smoothing;
  const Tensor denom = sum(p) + sum(mask) + smoothing;
  return 1.0 - numer / denom;
}

inline Tensor composite_loss(const Tensor& logits, const Tensor& mask,
                             const LossConfig& cfg) {
  cfg.validate();
  const double lambda = cfg.lambda_tradeoff;
  if (lambda == 0.0) return bce_loss(logits, mask);
  if (lambda == 1.0) return dice_loss(logits, mask, cfg.dice_smoothing);
  return (1.0 - lambda) * bce_loss(logits, mask) +
         lambda * dice_loss(logits, mask, cfg.dice_smoothing);
}

// Overlap metric 2|A∩B| / (|A|+|B|) between binary masks. Two empty masks
// count as a perfect match.
inline double dice_score(const Tensor& pred_mask, const Tensor& gt_mask) {
  if (pred_mask.shape() != gt_mask.shape()) {
    throw ShapeError("dice_score: masks " + shape_str(pred_mask.shape()) + " vs " +
                     shape_str(gt_mask.shape()));
  }
  detail::check_binary_mask(pred_mask, "dice_score");
  detail::check_binary_mask(gt_mask, "dice_score");
  double inter = 0.0, total = 0.0;
  const double* a = pred_mask.values().data();
  const double* b = gt_mask.values().data();
  const std::size_t n = static_cast<std::size_t>(pred_mask.numel());
  for (std::size_t i = 0; i < n; ++i) {
    inter += a[i] * b[i];
    total += a[i] + b[i];
  }
  if (total == 0.0) return 1.0;
  return 2.0 * inter / total;
}

// Predicted mask at the sigmoid decision boundary: foreground where logit > 0.
inline Tensor binarize_logits(const Tensor& logits) {
  std::vector<double> out(static_cast<std::size_t>(logits.numel()));
  const double* z = logits.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z[i] > 0.0 ? 1.0 : 0.0;
  return Tensor(logits.shape(), std::move(out));
}

}  // namespace blofin

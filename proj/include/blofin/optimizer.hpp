#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "blofin/tensor.hpp"

namespace blofin {

struct AdamWConfig {
  double lr0 = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.1;
  double eps = 1e-8;

  void validate() const {
    if (!(lr0 > 0.0)) throw ContractError("adamw: lr0 must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ContractError("adamw: betas must lie in [0,1)");
    }
    if (!(eps > 0.0)) throw ContractError("adamw: eps must be positive");
    if (weight_decay < 0.0) throw ContractError("adamw: weight decay must be >= 0");
  }
};

// Polynomial decay lr_i = lr0 * (1 - i/iter_max)^0.9, clamped to 0 past
// iter_max.
struct ScheduleConfig {
  double lr0 = 5e-3;
  std::int64_t iter_max = 100;
  static constexpr double exponent = 0.9;
};

inline double lr_at(const ScheduleConfig& cfg, std::int64_t i) {
  if (i < 0) throw ContractError("lr_at: negative iteration index");
  if (i >= cfg.iter_max) return 0.0;
  const double frac = 1.0 - static_cast<double>(i) / static_cast<double>(cfg.iter_max);
  return cfg.lr0 * std::pow(frac, ScheduleConfig::exponent);
}

// AdamW with decoupled weight decay. State is aligned with the parameter
// list given at construction; the list order must stay stable for the
// lifetime of the optimizer.
class AdamW {
 public:
  AdamW(AdamWConfig cfg, std::vector<Tensor> params)
      : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
      v_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
    }
  }

  const AdamWConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return t_; }

  // One update from the gradients currently stored on the parameters.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
      Tensor& param = params_[p];
      const std::vector<double>& g = param.grad();
      if (g.size() != m_[p].size()) {
        throw ContractError("adamw: gradient for parameter " + std::to_string(p) +
                            " has " + std::to_string(g.size()) + " entries, state has " +
                            std::to_string(m_[p].size()));
      }
      double* w = param.values().data();
      double* m = m_[p].data();
      double* v = v_[p].data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        w[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * w[i]);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t t_ = 0;
};

}  // namespace blofin

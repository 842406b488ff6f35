#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "blofin/tensor.hpp"

namespace blofin {

using LossBuilder = std::function<Tensor()>;
using GradList = std::vector<std::vector<double>>;

namespace detail {

inline void zero_grads(const std::vector<Tensor>& params) {
  for (Tensor p : params) p.zero_grad();
}

inline GradList collect_grads(const std::vector<Tensor>& params) {
  GradList out;
  out.reserve(params.size());
  for (const Tensor& p : params) out.push_back(p.grad());
  return out;
}

inline GradList snapshot_values(const std::vector<Tensor>& params) {
  GradList out;
  out.reserve(params.size());
  for (const Tensor& p : params) out.push_back(p.values());
  return out;
}

inline void restore_values(const std::vector<Tensor>& params, const GradList& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    p.values() = saved[i];
  }
}

inline void axpy_values(const std::vector<Tensor>& params, double alpha,
                        const GradList& direction) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    double* w = p.values().data();
    const double* d = direction[i].data();
    for (std::size_t j = 0; j < direction[i].size(); ++j) w[j] += alpha * d[j];
  }
}

inline double flat_norm(const GradList& g) {
  double s = 0.0;
  for (const auto& v : g) {
    for (const double x : v) s += x * x;
  }
  return std::sqrt(s);
}

}  // namespace detail

inline GradList grad_list_axpby(const GradList& a, double beta, const GradList& b) {
  GradList out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < out[i].size(); ++j) out[i][j] += beta * b[i][j];
  }
  return out;
}

// Gradients of a freshly built loss with respect to one or two parameter
// lists, from a single backward pass.
inline GradList grads_of(const LossBuilder& loss, const std::vector<Tensor>& params) {
  detail::zero_grads(params);
  backward(loss());
  return detail::collect_grads(params);
}

inline void grads_of2(const LossBuilder& loss, const std::vector<Tensor>& params_a,
                      const std::vector<Tensor>& params_b, GradList& out_a,
                      GradList& out_b) {
  detail::zero_grads(params_a);
  detail::zero_grads(params_b);
  backward(loss());
  out_a = detail::collect_grads(params_a);
  out_b = detail::collect_grads(params_b);
}

// Central-difference estimate of the mixed term
//   d^2 L1 / (dA dW) . g  ~=  (grad_A L1(W + eps g) - grad_A L1(W - eps g)) / (2 eps)
// with eps = 0.01 / ||g||. The weights are restored from an exact copy, so
// they end bit-identical to how they started.
inline GradList mixed_fd_term(const std::vector<Tensor>& w_params,
                              const std::vector<Tensor>& a_params,
                              const LossBuilder& lower_loss, const GradList& g,
                              double* eps_out = nullptr) {
  const double norm = detail::flat_norm(g);
  if (eps_out) *eps_out = 0.0;
  if (norm == 0.0) {
    GradList zeros;
    for (const Tensor& p : a_params) {
      zeros.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
    return zeros;
  }
  const double eps = 0.01 / norm;
  if (eps_out) *eps_out = eps;

  const GradList saved = detail::snapshot_values(w_params);
  detail::axpy_values(w_params, eps, g);
  const GradList a_plus = grads_of(lower_loss, a_params);
  detail::restore_values(w_params, saved);
  detail::axpy_values(w_params, -eps, g);
  const GradList a_minus = grads_of(lower_loss, a_params);
  detail::restore_values(w_params, saved);

  GradList out = a_plus;
  const double inv = 1.0 / (2.0 * eps);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < out[i].size(); ++j) {
      out[i][j] = (out[i][j] - a_minus[i][j]) * inv;
    }
  }
  return out;
}

// A small bilevel instance: lower loss L1(W, A) and upper loss L2(W, A)
// built over shared parameter tensors. Used by the hypergradient oracles.
struct BilevelProblem {
  std::vector<Tensor> w;
  std::vector<Tensor> a;
  LossBuilder lower_loss;
  LossBuilder upper_loss;
};

// The unrolled one-step hypergradient estimate
//   h = grad_A L2(W*, A) - xi * (grad_A L1(W+, A) - grad_A L1(W-, A)) / (2 eps)
// where W* = W - xi grad_W L1(W, A) is a virtual plain-gradient step and
// W± = W ± eps grad_{W*} L2(W*, A). With xi = 0 this is exactly the plain
// validation gradient. W is restored before returning.
inline GradList approx_hypergradient(const BilevelProblem& prob, double xi) {
  if (xi == 0.0) {
    return grads_of(prob.upper_loss, prob.a);
  }
  const GradList saved = detail::snapshot_values(prob.w);
  const GradList g_lower = grads_of(prob.lower_loss, prob.w);
  detail::axpy_values(prob.w, -xi, g_lower);

  GradList g_upper_w, direct;
  grads_of2(prob.upper_loss, prob.w, prob.a, g_upper_w, direct);
  detail::restore_values(prob.w, saved);

  const GradList mixed = mixed_fd_term(prob.w, prob.a, prob.lower_loss, g_upper_w);
  return grad_list_axpby(direct, -xi, mixed);
}

// Oracle: d/dA of the fully composed map L2(W - xi grad_W L1(W, A), A) by
// central differences over A. Independent of the estimator above except for
// sharing the forward/backward engine.
inline GradList exact_hypergradient(const BilevelProblem& prob, double xi,
                                    double h = 1e-5) {
  auto composed_value = [&]() {
    const GradList saved = detail::snapshot_values(prob.w);
    const GradList g_lower = grads_of(prob.lower_loss, prob.w);
    detail::axpy_values(prob.w, -xi, g_lower);
    double value;
    {
      NoGradGuard guard;
      value = prob.upper_loss().item();
    }
    detail::restore_values(prob.w, saved);
    return value;
  };

  GradList out;
  for (Tensor a : prob.a) {
    std::vector<double> grad(a.values().size());
    for (std::size_t j = 0; j < grad.size(); ++j) {
      const double original = a.values()[j];
      a.values()[j] = original + h;
      const double plus = composed_value();
      a.values()[j] = original - h;
      const double minus = composed_value();
      a.values()[j] = original;
      grad[j] = (plus - minus) / (2.0 * h);
    }
    out.push_back(std::move(grad));
  }
  return out;
}

inline double cosine_similarity(const GradList& a, const GradList& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      dot += a[i][j] * b[i][j];
      na += a[i][j] * a[i][j];
      nb += b[i][j] * b[i][j];
    }
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double relative_norm_error(const GradList& approx, const GradList& exact) {
  const double ne = detail::flat_norm(exact);
  if (ne == 0.0) return detail::flat_norm(approx);
  const GradList diff = grad_list_axpby(approx, -1.0, exact);
  return detail::flat_norm(diff) / ne;
}

}  // namespace blofin

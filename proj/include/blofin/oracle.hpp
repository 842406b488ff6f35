#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "blofin/hypergrad.hpp"
#include "blofin/rng.hpp"
#include "blofin/tensor.hpp"

namespace blofin {

// L1 = (W - A)^2, L2 = (W - c)^2. At W0 = 0, A = 1, xi = 0.25, c = 1 the
// virtual step lands at W' = 0.5 and d L2 / d A = 2 (W' - c) * 2 xi = -0.5.
inline BilevelProblem quadratic_problem(double w0 = 0.0, double a0 = 1.0,
                                        double c = 1.0) {
  BilevelProblem prob;
  Tensor w = Tensor::scalar(w0, true);
  Tensor a = Tensor::scalar(a0, true);
  prob.w = {w};
  prob.a = {a};
  prob.lower_loss = [w, a]() {
    const Tensor d = sub(w, a);
    return mul(d, d);
  };
  prob.upper_loss = [w, c]() {
    const Tensor d = sub(w, c);
    return mul(d, d);
  };
  return prob;
}

inline double quadratic_closed_form_hypergradient(double w0, double a0, double c,
                                                  double xi) {
  const double w_star = w0 - xi * 2.0 * (w0 - a0);
  return 2.0 * (w_star - c) * 2.0 * xi;
}

// A small smooth bilevel instance: a one-hidden-layer sigmoid network where
// the prompt vector A shifts every input. Both losses are squared errors on
// disjoint point sets, so L1 and L2 each depend on both W and A.
inline BilevelProblem tiny_mlp_problem(std::uint64_t seed, std::int64_t in_dim = 3,
                                       std::int64_t hidden = 4,
                                       std::int64_t n_points = 3) {
  Rng rng(seed);
  auto rand_tensor = [&rng](Shape shape, double scale, bool requires_grad) {
    const auto n = shape_numel(shape);
    std::vector<double> values(static_cast<std::size_t>(n));
    for (double& v : values) v = rng.normal(0.0, scale);
    return Tensor(std::move(shape), std::move(values), requires_grad);
  };

  Tensor w1 = rand_tensor({in_dim, hidden}, 0.8, true);
  Tensor w2 = rand_tensor({hidden, 1}, 0.8, true);
  Tensor a = rand_tensor({in_dim}, 0.5, true);
  Tensor x1 = rand_tensor({n_points, in_dim}, 1.0, false);
  Tensor t1 = rand_tensor({n_points, 1}, 1.0, false);
  Tensor x2 = rand_tensor({n_points, in_dim}, 1.0, false);
  Tensor t2 = rand_tensor({n_points, 1}, 1.0, false);

  auto loss_on = [w1, w2, a](const Tensor& x, const Tensor& t) {
    const Tensor pred = matmul(sigmoid(matmul(add_rowvec(x, a), w1)), w2);
    const Tensor err = sub(pred, t);
    return mean(mul(err, err));
  };

  BilevelProblem prob;
  prob.w = {w1, w2};
  prob.a = {a};
  prob.lower_loss = [loss_on, x1, t1]() { return loss_on(x1, t1); };
  prob.upper_loss = [loss_on, x2, t2]() { return loss_on(x2, t2); };
  return prob;
}

struct OracleInstanceResult {
  double cosine = 0.0;
  double rel_norm_error = 0.0;
};

struct OracleReport {
  double quadratic_h = 0.0;
  double quadratic_expected = 0.0;
  double quadratic_abs_error = 0.0;
  bool quadratic_passed = false;

  std::vector<OracleInstanceResult> instances;
  double min_cosine = 1.0;
  double max_rel_norm_error = 0.0;
  bool instances_passed = false;

  bool xi_zero_exact = false;
  std::vector<double> xi_limit_diffs;  // over shrinking xi values
  bool xi_limit_monotone = false;

  bool all_passed = false;
};

// Checks the second-order estimate three ways: against the closed form on
// the quadratic instance, against the exact unrolled oracle on random MLP
// instances, and for exact collapse to the first-order gradient at xi = 0.
inline OracleReport run_oracle_suite(int n_instances = 20, std::uint64_t seed = 2024,
                                     double quad_tol = 1e-6, double cos_tol = 0.999,
                                     double norm_tol = 0.05) {
  OracleReport report;

  {
    BilevelProblem quad = quadratic_problem();
    const GradList h = approx_hypergradient(quad, 0.25);
    report.quadratic_h = h[0][0];
    report.quadratic_expected = quadratic_closed_form_hypergradient(0.0, 1.0, 1.0, 0.25);
    report.quadratic_abs_error = std::abs(report.quadratic_h - report.quadratic_expected);
    report.quadratic_passed = report.quadratic_abs_error < quad_tol;

    const GradList exact = exact_hypergradient(quad, 0.25);
    report.quadratic_passed =
        report.quadratic_passed &&
        std::abs(exact[0][0] - report.quadratic_expected) < quad_tol;
  }

  for (int i = 0; i < n_instances; ++i) {
    BilevelProblem prob = tiny_mlp_problem(seed + static_cast<std::uint64_t>(i));
    const double xi = 0.1;
    const GradList approx = approx_hypergradient(prob, xi);
    const GradList exact = exact_hypergradient(prob, xi);
    OracleInstanceResult r;
    r.cosine = cosine_similarity(approx, exact);
    r.rel_norm_error = relative_norm_error(approx, exact);
    report.min_cosine = std::min(report.min_cosine, r.cosine);
    report.max_rel_norm_error = std::max(report.max_rel_norm_error, r.rel_norm_error);
    report.instances.push_back(r);
  }
  report.instances_passed =
      report.min_cosine > cos_tol && report.max_rel_norm_error < norm_tol;

  {
    BilevelProblem prob = tiny_mlp_problem(seed + 777);
    const GradList first = grads_of(prob.upper_loss, prob.a);
    const GradList via_zero = approx_hypergradient(prob, 0.0);
    report.xi_zero_exact = first == via_zero;

    for (const double xi : {1e-2, 1e-4, 1e-6}) {
      const GradList h = approx_hypergradient(prob, xi);
      const GradList diff = grad_list_axpby(h, -1.0, first);
      report.xi_limit_diffs.push_back(detail::flat_norm(diff));
    }
    report.xi_limit_monotone = true;
    for (std::size_t i = 1; i < report.xi_limit_diffs.size(); ++i) {
      report.xi_limit_monotone =
          report.xi_limit_monotone &&
          report.xi_limit_diffs[i] < report.xi_limit_diffs[i - 1];
    }
  }

  report.all_passed = report.quadratic_passed && report.instances_passed &&
                      report.xi_zero_exact && report.xi_limit_monotone;
  return report;
}

}  // namespace blofin

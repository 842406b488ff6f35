#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "blofin/data.hpp"
#include "blofin/hypergrad.hpp"
#include "blofin/losses.hpp"
#include "blofin/model.hpp"
#include "blofin/optimizer.hpp"

namespace blofin {

class NumericalError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class BloMode { blo_first, blo_second, joint };

inline const char* blo_mode_name(BloMode m) {
  switch (m) {
    case BloMode::blo_first: return "blo_first";
    case BloMode::blo_second: return "blo_second";
    case BloMode::joint: return "joint";
  }
  return "?";
}

enum class Alternation { paired, epoch_level };

struct BloConfig {
  BloMode mode = BloMode::blo_first;
  AdamWConfig opt_lower;  // eta_1, trains W
  AdamWConfig opt_upper;  // eta_2, trains A
  std::int64_t epochs = 100;
  std::int64_t steps_per_epoch = 20;  // paired lower/upper iterations per epoch
  LossConfig loss;
  // Virtual inner-step size xi for the second-order mode; by default it
  // tracks the lower level's scheduled learning rate at the same iteration.
  bool xi_follows_lower_lr = true;
  double xi_fixed = 0.0;
  Alternation alternation = Alternation::paired;

  void validate() const {
    opt_lower.validate();
    opt_upper.validate();
    loss.validate();
    if (epochs < 1) throw ContractError("blo config: epochs must be >= 1");
    if (steps_per_epoch < 1) throw ContractError("blo config: steps_per_epoch must be >= 1");
    if (mode == BloMode::blo_second && !xi_follows_lower_lr && !(xi_fixed > 0.0)) {
      throw ContractError("blo config: second-order mode needs xi > 0");
    }
  }
};

// Which examples fed which applied gradient. Lower steps consume examples
// into the W update; upper steps consume examples into the prompt update,
// split into the direct validation term and the finite-difference term of
// the second-order estimator.
struct StepProvenance {
  enum class Level { lower, upper, joint };
  Level level = Level::lower;
  std::int64_t epoch = 0;
  std::vector<std::int64_t> w_examples;
  std::vector<std::int64_t> a_direct_examples;
  std::vector<std::int64_t> a_mixed_examples;
};

struct ProvenanceLog {
  std::vector<StepProvenance> steps;

  std::int64_t count_w_from(const std::set<std::int64_t>& ids) const {
    std::int64_t n = 0;
    for (const auto& s : steps) {
      for (const auto id : s.w_examples) n += ids.count(id) ? 1 : 0;
    }
    return n;
  }

  std::int64_t count_a_direct_from(const std::set<std::int64_t>& ids) const {
    std::int64_t n = 0;
    for (const auto& s : steps) {
      for (const auto id : s.a_direct_examples) n += ids.count(id) ? 1 : 0;
    }
    return n;
  }
};

struct TrainState {
  SegModel model;
  ParamPartition part;
  AdamW opt_w;
  AdamW opt_a;
  ScheduleConfig sched_lower;
  ScheduleConfig sched_upper;
  std::int64_t lower_steps = 0;
  std::int64_t upper_steps = 0;
  double last_lower_lr = 0.0;
  BloConfig cfg;
  ProvenanceLog provenance;
  std::set<std::int64_t> d1_ids;
  std::set<std::int64_t> d2_ids;

  TrainState(SegModel m, const BloConfig& config, std::int64_t steps_per_level)
      : model(std::move(m)),
        part(parameter_partition(model)),
        opt_w(config.opt_lower, part.weight_tensors()),
        opt_a(config.opt_upper, part.prompt_tensors()),
        sched_lower{config.opt_lower.lr0, steps_per_level},
        sched_upper{config.opt_upper.lr0, steps_per_level},
        cfg(config) {}

  double current_xi() const {
    return cfg.xi_follows_lower_lr ? last_lower_lr : cfg.xi_fixed;
  }
};

namespace detail {

inline std::vector<std::int64_t> batch_ids(const std::vector<Sample>& batch) {
  std::vector<std::int64_t> ids;
  ids.reserve(batch.size());
  for (const Sample& s : batch) ids.push_back(s.id);
  return ids;
}

inline void check_subset(const std::vector<std::int64_t>& ids,
                         const std::set<std::int64_t>& allowed, const char* what) {
  for (const auto id : ids) {
    if (!allowed.count(id)) {
      throw ContractError(std::string("data hygiene violated: example ") +
                          std::to_string(id) + " reached " + what);
    }
  }
}

}  // namespace detail

inline Tensor batch_composite_loss(const SegModel& model,
                                   const std::vector<Sample>& batch,
                                   const LossConfig& cfg) {
  if (batch.empty()) throw ContractError("loss over an empty batch");
  Tensor total = composite_loss(forward(model, batch[0].image), batch[0].mask, cfg);
  for (std::size_t i = 1; i < batch.size(); ++i) {
    total = total + composite_loss(forward(model, batch[i].image), batch[i].mask, cfg);
  }
  return total * (1.0 / static_cast<double>(batch.size()));
}

// One AdamW update of W on the composite loss over a D1 batch; A untouched.
inline double lower_step(TrainState& state, const std::vector<Sample>& batch,
                         std::int64_t epoch) {
  if (batch.empty()) throw ContractError("lower_step: empty batch");
  const std::vector<Tensor> w = state.part.weight_tensors();
  const std::vector<Tensor> a = state.part.prompt_tensors();
  detail::zero_grads(w);
  detail::zero_grads(a);
  const Tensor loss = batch_composite_loss(state.model, batch, state.cfg.loss);
  backward(loss);
  const double lr = lr_at(state.sched_lower, state.lower_steps);
  state.opt_w.step(lr);
  ++state.lower_steps;
  state.last_lower_lr = lr;

  StepProvenance rec;
  rec.level = StepProvenance::Level::lower;
  rec.epoch = epoch;
  rec.w_examples = detail::batch_ids(batch);
  if (state.cfg.mode != BloMode::joint) {
    detail::check_subset(rec.w_examples, state.d1_ids, "a W update");
  }
  state.provenance.steps.push_back(std::move(rec));
  return loss.item();
}

// First-order prompt update: grad_A of the validation loss with the current
// W held fixed.
inline double upper_step_first_order(TrainState& state, const std::vector<Sample>& batch,
                                     std::int64_t epoch) {
  if (batch.empty()) throw ContractError("upper_step_first_order: empty batch");
  const std::vector<Tensor> w = state.part.weight_tensors();
  const std::vector<Tensor> a = state.part.prompt_tensors();
  detail::zero_grads(w);
  detail::zero_grads(a);
  const Tensor loss = batch_composite_loss(state.model, batch, state.cfg.loss);
  backward(loss);
  const double lr = lr_at(state.sched_upper, state.upper_steps);
  state.opt_a.step(lr);
  ++state.upper_steps;

  StepProvenance rec;
  rec.level = StepProvenance::Level::upper;
  rec.epoch = epoch;
  rec.a_direct_examples = detail::batch_ids(batch);
  if (state.cfg.mode != BloMode::joint) {
    detail::check_subset(rec.a_direct_examples, state.d2_ids, "a prompt update");
  }
  state.provenance.steps.push_back(std::move(rec));
  return loss.item();
}

// Second-order prompt update. The current W plays the unrolled W*(A); the
// mixed term is estimated by central differences over W perturbed along
// g = grad_W L_D2 with eps = 0.01 / ||g||, and W is restored bit-exactly:
//   h = grad_A L_D2(W, A) - xi (grad_A L_D1(W+, A) - grad_A L_D1(W-, A)) / (2 eps)
inline double upper_step_second_order(TrainState& state,
                                      const std::vector<Sample>& batch_d2,
                                      const std::vector<Sample>& batch_d1,
                                      std::int64_t epoch) {
  if (batch_d2.empty() || batch_d1.empty()) {
    throw ContractError("upper_step_second_order: empty batch");
  }
  const std::vector<Tensor> w = state.part.weight_tensors();
  const std::vector<Tensor> a = state.part.prompt_tensors();
  const double xi = state.current_xi();

  const auto upper_builder = [&]() {
    return batch_composite_loss(state.model, batch_d2, state.cfg.loss);
  };
  const auto lower_builder = [&]() {
    return batch_composite_loss(state.model, batch_d1, state.cfg.loss);
  };

  detail::zero_grads(w);
  detail::zero_grads(a);
  const Tensor loss = upper_builder();
  backward(loss);
  const GradList g = detail::collect_grads(w);
  GradList h = detail::collect_grads(a);

  const GradList saved_w = detail::snapshot_values(w);
  const GradList mixed = mixed_fd_term(w, a, lower_builder, g);
  detail::restore_values(w, saved_w);
  h = grad_list_axpby(h, -xi, mixed);

  for (std::size_t i = 0; i < a.size(); ++i) {
    Tensor p = a[i];
    p.set_grad(h[i]);
  }
  const double lr = lr_at(state.sched_upper, state.upper_steps);
  state.opt_a.step(lr);
  ++state.upper_steps;

  StepProvenance rec;
  rec.level = StepProvenance::Level::upper;
  rec.epoch = epoch;
  rec.a_direct_examples = detail::batch_ids(batch_d2);
  rec.a_mixed_examples = detail::batch_ids(batch_d1);
  detail::check_subset(rec.a_direct_examples, state.d2_ids, "a prompt update");
  detail::check_subset(rec.a_mixed_examples, state.d1_ids,
                       "the mixed-term estimate from outside D1");
  state.provenance.steps.push_back(std::move(rec));
  return loss.item();
}

// Joint baseline: both partitions updated from one backward pass over the
// combined batch.
inline double joint_step(TrainState& state, const std::vector<Sample>& batch,
                         std::int64_t epoch) {
  if (batch.empty()) throw ContractError("joint_step: empty batch");
  const std::vector<Tensor> w = state.part.weight_tensors();
  const std::vector<Tensor> a = state.part.prompt_tensors();
  detail::zero_grads(w);
  detail::zero_grads(a);
  const Tensor loss = batch_composite_loss(state.model, batch, state.cfg.loss);
  backward(loss);
  const double lr_w = lr_at(state.sched_lower, state.lower_steps);
  const double lr_a = lr_at(state.sched_upper, state.upper_steps);
  state.opt_w.step(lr_w);
  state.opt_a.step(lr_a);
  ++state.lower_steps;
  ++state.upper_steps;
  state.last_lower_lr = lr_w;

  StepProvenance rec;
  rec.level = StepProvenance::Level::joint;
  rec.epoch = epoch;
  rec.w_examples = detail::batch_ids(batch);
  rec.a_direct_examples = detail::batch_ids(batch);
  state.provenance.steps.push_back(std::move(rec));
  return loss.item();
}

struct EpochEval {
  double train_dice = 0.0, train_loss = 0.0;
  double test_dice = 0.0, test_loss = 0.0;
  double d2_dice = 0.0, d2_loss = 0.0;
};

namespace detail {

inline std::pair<double, double> eval_split(const SegModel& model,
                                            const std::vector<Sample>& samples,
                                            const LossConfig& cfg) {
  NoGradGuard guard;
  double dice = 0.0, loss = 0.0;
  for (const Sample& s : samples) {
    const Tensor logits = forward(model, s.image);
    dice += dice_score(binarize_logits(logits), s.mask);
    loss += composite_loss(logits, s.mask, cfg).item();
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  return {dice * inv, loss * inv};
}

}  // namespace detail

inline EpochEval evaluate_model(const SegModel& model, const DataSplit& data,
                                const LossConfig& cfg) {
  std::vector<Sample> train = data.d1;
  train.insert(train.end(), data.d2.begin(), data.d2.end());
  EpochEval ev;
  std::tie(ev.train_dice, ev.train_loss) = detail::eval_split(model, train, cfg);
  std::tie(ev.test_dice, ev.test_loss) = detail::eval_split(model, data.test, cfg);
  std::tie(ev.d2_dice, ev.d2_loss) = detail::eval_split(model, data.d2, cfg);
  return ev;
}

struct TrainResult {
  std::vector<EpochEval> history;
  SegModel best_model;
  std::int64_t best_epoch = 0;
  double best_d2_dice = 0.0;
  double best_test_dice = 0.0;
  ProvenanceLog provenance;
};

// Algorithm: per epoch, one pass of lower updates on D1 interleaved with
// upper updates on D2 (whole splits form single batches here), then a full
// evaluation. Joint mode folds both updates into one pass over D1 u D2. The
// returned checkpoint maximizes Dice on D2.
inline TrainResult run_training(const SegModel& init_model, const DataSplit& data,
                                const BloConfig& cfg) {
  cfg.validate();
  if (data.d1.empty() || data.d2.empty() || data.test.empty()) {
    throw ContractError("run_training: d1, d2, and test must all be non-empty");
  }

  TrainState state(clone_model(init_model), cfg, cfg.epochs * cfg.steps_per_epoch);
  for (const Sample& s : data.d1) state.d1_ids.insert(s.id);
  for (const Sample& s : data.d2) state.d2_ids.insert(s.id);
  for (const auto id : state.d2_ids) {
    if (state.d1_ids.count(id)) {
      throw ContractError("run_training: D1 and D2 share example " + std::to_string(id));
    }
  }

  std::vector<Sample> joint_batch;
  if (cfg.mode == BloMode::joint) {
    joint_batch = data.d1;
    joint_batch.insert(joint_batch.end(), data.d2.begin(), data.d2.end());
  }

  TrainResult result;
  result.best_d2_dice = -1.0;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    try {
      for (std::int64_t t = 0; t < cfg.steps_per_epoch; ++t) {
        switch (cfg.mode) {
          case BloMode::joint:
            joint_step(state, joint_batch, epoch);
            break;
          case BloMode::blo_first:
            lower_step(state, data.d1, epoch);
            upper_step_first_order(state, data.d2, epoch);
            break;
          case BloMode::blo_second:
            lower_step(state, data.d1, epoch);
            upper_step_second_order(state, data.d2, data.d1, epoch);
            break;
        }
      }
    } catch (const DomainError& e) {
      throw NumericalError("epoch " + std::to_string(epoch) + ", " +
                           blo_mode_name(cfg.mode) + " update: " + e.what());
    }

    EpochEval ev;
    try {
      ev = evaluate_model(state.model, data, cfg.loss);
    } catch (const DomainError& e) {
      throw NumericalError("epoch " + std::to_string(epoch) + ", evaluation: " + e.what());
    }
    result.history.push_back(ev);
    if (ev.d2_dice > result.best_d2_dice) {
      result.best_d2_dice = ev.d2_dice;
      result.best_test_dice = ev.test_dice;
      result.best_epoch = epoch;
      result.best_model = clone_model(state.model);
    }
  }
  result.provenance = std::move(state.provenance);
  return result;
}

}  // namespace blofin

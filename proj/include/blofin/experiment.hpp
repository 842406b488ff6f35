#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "blofin/checkpoint.hpp"
#include "blofin/config.hpp"
#include "blofin/gradcheck.hpp"
#include "blofin/metrics.hpp"
#include "blofin/oracle.hpp"
#include "blofin/svg.hpp"

namespace blofin {

// Exit codes shared by the CLI surface.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailure = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitNumericalFailure = 3;

struct SeedRun {
  std::int64_t seed = 0;
  TrainResult result;
  DataSplit data;
};

// One full training run for one seed; the data pool, split membership, and
// model init all derive from the seed so a rerun reproduces it bit-exactly.
inline SeedRun run_one_seed(const RunConfig& cfg, std::int64_t seed) {
  SeedRun run;
  run.seed = seed;
  const auto useed = static_cast<std::uint64_t>(seed);
  const TaskSpec task = cfg.task_spec(useed);
  const auto pool = generate(task, cfg.n_train + cfg.test_size);
  run.data = split(pool, cfg.n_train, Rng::derive(useed, "split"));
  const SegModel model = make_model(cfg.model_config(useed));
  run.result = run_training(model, run.data, cfg.blo_config());
  return run;
}

namespace detail {

inline void append_rows(std::vector<MetricsRecord>& rows, const SeedRun& run,
                        const std::string& mode) {
  for (std::size_t epoch = 0; epoch < run.result.history.size(); ++epoch) {
    const EpochEval& ev = run.result.history[epoch];
    const auto e = static_cast<std::int64_t>(epoch);
    rows.push_back({run.seed, mode, e, "d2_val", ev.d2_dice, ev.d2_loss});
    rows.push_back({run.seed, mode, e, "test", ev.test_dice, ev.test_loss});
    rows.push_back({run.seed, mode, e, "train", ev.train_dice, ev.train_loss});
  }
}

inline SeedSummary summarize_seed(const SeedRun& run) {
  SeedSummary s;
  s.seed = run.seed;
  s.best_epoch = run.result.best_epoch;
  s.best_d2_dice = run.result.best_d2_dice;
  s.best_test_dice = run.result.best_test_dice;
  const EpochEval& last = run.result.history.back();
  s.final_train_dice = last.train_dice;
  s.final_test_dice = last.test_dice;
  s.final_gap = last.train_dice - last.test_dice;
  return s;
}

inline nlohmann::ordered_json summary_json(const RunSummary& summary) {
  nlohmann::ordered_json j;
  j["mode"] = summary.mode;
  j["n_train"] = summary.n_train;
  j["d1_size"] = summary.d1_size;
  j["d2_size"] = summary.d2_size;
  j["test_size"] = summary.test_size;
  j["per_seed"] = nlohmann::ordered_json::array();
  for (const SeedSummary& s : summary.per_seed) {
    nlohmann::ordered_json e;
    e["seed"] = s.seed;
    e["best_epoch"] = s.best_epoch;
    e["best_d2_dice"] = s.best_d2_dice;
    e["best_test_dice"] = s.best_test_dice;
    e["final_train_dice"] = s.final_train_dice;
    e["final_test_dice"] = s.final_test_dice;
    e["final_gap"] = s.final_gap;
    j["per_seed"].push_back(e);
  }
  j["mean_best_test_dice"] = summary.mean_best_test_dice;
  j["std_best_test_dice"] = summary.std_best_test_dice;
  j["mean_final_gap"] = summary.mean_final_gap;
  j["std_final_gap"] = summary.std_final_gap;
  return j;
}

inline std::vector<double> mean_curve(const std::vector<SeedRun>& runs,
                                      double EpochEval::*field) {
  if (runs.empty()) return {};
  const std::size_t epochs = runs[0].result.history.size();
  std::vector<double> curve(epochs, 0.0);
  for (const SeedRun& run : runs) {
    for (std::size_t e = 0; e < epochs; ++e) curve[e] += run.result.history[e].*field;
  }
  for (double& v : curve) v /= static_cast<double>(runs.size());
  return curve;
}

}  // namespace detail

// train: one run per seed; emits metrics.csv, summary.json, curves.svg,
// config.resolved, and a best checkpoint per seed under out_dir.
inline int cmd_train(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream out(fs::path(cfg.out_dir) / "config.resolved", std::ios::binary);
    out << resolved_config_text(cfg);
  }

  std::vector<SeedRun> runs;
  std::vector<MetricsRecord> rows;
  RunSummary summary;
  summary.mode = cfg.mode;
  summary.n_train = cfg.n_train;

  // Rows must come out strictly ordered by (seed, epoch, split).
  std::vector<std::int64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());

  try {
    for (const std::int64_t seed : seeds) {
      SeedRun run = run_one_seed(cfg, seed);
      detail::append_rows(rows, run, cfg.mode);
      summary.per_seed.push_back(detail::summarize_seed(run));
      summary.d1_size = static_cast<std::int64_t>(run.data.d1.size());
      summary.d2_size = static_cast<std::int64_t>(run.data.d2.size());
      summary.test_size = static_cast<std::int64_t>(run.data.test.size());

      const fs::path seed_dir = fs::path(cfg.out_dir) / ("seed" + std::to_string(seed));
      fs::create_directories(seed_dir);
      save_checkpoint(run.result.best_model, (seed_dir / "checkpoint.blofin").string());
      for (std::int64_t i = 0; i < cfg.export_samples &&
                               i < static_cast<std::int64_t>(run.data.d1.size());
           ++i) {
        export_sample(run.data.d1[static_cast<std::size_t>(i)],
                      (seed_dir / ("d1_sample" + std::to_string(i))).string());
      }
      runs.push_back(std::move(run));
    }
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumericalFailure;
  }

  summary.finalize();
  write_metrics_csv(rows, (fs::path(cfg.out_dir) / "metrics.csv").string());
  {
    std::ofstream out(fs::path(cfg.out_dir) / "summary.json", std::ios::binary);
    out << detail::summary_json(summary).dump(2) << "\n";
  }
  write_line_chart((fs::path(cfg.out_dir) / "curves.svg").string(),
                   "Dice vs epoch (" + cfg.mode + ", mean over seeds)", "epoch", "Dice",
                   {{"train", "#d62728", detail::mean_curve(runs, &EpochEval::train_dice)},
                    {"test", "#1f77b4", detail::mean_curve(runs, &EpochEval::test_dice)}});

  std::printf("train: mode=%s seeds=%zu best test dice mean=%.4f final gap mean=%.4f\n",
              cfg.mode.c_str(), cfg.seeds.size(), summary.mean_best_test_dice,
              summary.mean_final_gap);
  return kExitOk;
}

// gradcheck: finite-difference validation of every differentiable op and
// the loss terms; prints one line per op.
inline int cmd_gradcheck() {
  const GradCheckReport report = run_all_gradchecks();
  for (const GradCheckResult& r : report.results) {
    std::printf("%-24s max rel err %.3e  %s\n", r.op.c_str(), r.max_rel_error,
                r.passed ? "ok" : "FAIL");
  }
  std::printf("gradcheck: %zu ops, %s\n", report.results.size(),
              report.all_passed ? "all passed" : "FAILURES");
  return report.all_passed ? kExitOk : kExitCheckFailure;
}

// oracle: closed-form quadratic check plus estimator-vs-unrolled-oracle
// comparison on random tiny MLP instances.
inline int cmd_oracle() {
  const OracleReport report = run_oracle_suite();
  std::printf("quadratic: h=%.9f expected=%.9f |err|=%.3e %s\n", report.quadratic_h,
              report.quadratic_expected, report.quadratic_abs_error,
              report.quadratic_passed ? "ok" : "FAIL");
  std::printf("tiny-mlp instances: %zu, min cosine=%.6f max rel norm err=%.4f %s\n",
              report.instances.size(), report.min_cosine, report.max_rel_norm_error,
              report.instances_passed ? "ok" : "FAIL");
  std::printf("xi=0 collapse exact: %s\n", report.xi_zero_exact ? "ok" : "FAIL");
  std::printf("xi -> 0 difference shrinks monotonically:");
  for (const double d : report.xi_limit_diffs) std::printf(" %.3e", d);
  std::printf(" %s\n", report.xi_limit_monotone ? "ok" : "FAIL");
  std::printf("oracle: %s\n", report.all_passed ? "all passed" : "FAILURES");
  return report.all_passed ? kExitOk : kExitCheckFailure;
}

// ablate: sweep over optimization order, lambda, or LoRA rank; emits a CSV
// and a grouped-bar SVG of the per-setting test Dice. No ordering between
// settings is asserted.
inline int cmd_ablate(const std::string& which, const RunConfig& base) {
  namespace fs = std::filesystem;
  base.validate();

  std::vector<std::pair<std::string, RunConfig>> settings;
  if (which == "order") {
    for (const char* mode : {"joint", "blo_first", "blo_second"}) {
      RunConfig cfg = base;
      cfg.mode = mode;
      settings.emplace_back(mode, cfg);
    }
  } else if (which == "lambda") {
    for (const double lambda : {0.0, 0.2, 0.5, 0.8, 1.0}) {
      RunConfig cfg = base;
      cfg.lambda = lambda;
      settings.emplace_back("lambda=" + detail::format_double(lambda), cfg);
    }
  } else if (which == "rank") {
    // The toy embedding dimension is 16 and adapters need rank < d, so the
    // sweep tops out at 8.
    for (const std::int64_t rank : {1, 4, 8}) {
      RunConfig cfg = base;
      cfg.rank = rank;
      settings.emplace_back("rank=" + std::to_string(rank), cfg);
    }
  } else {
    throw ConfigError("ablate: unknown sweep '" + which + "' (order|lambda|rank)");
  }

  fs::create_directories(base.out_dir);
  const std::string csv_path =
      (fs::path(base.out_dir) / ("ablate_" + which + ".csv")).string();
  std::ofstream csv(csv_path, std::ios::binary);
  csv << "setting,seed,best_test_dice,final_test_dice,final_gap\n";

  std::vector<SvgBarGroup> groups;
  try {
    for (const auto& [label, cfg] : settings) {
      SvgBarGroup group;
      group.label = label;
      double mean_best = 0.0;
      for (const std::int64_t seed : cfg.seeds) {
        const SeedRun run = run_one_seed(cfg, seed);
        const SeedSummary s = detail::summarize_seed(run);
        csv << label << ',' << seed << ',' << fixed6(s.best_test_dice) << ','
            << fixed6(s.final_test_dice) << ',' << fixed6(s.final_gap) << '\n';
        mean_best += s.best_test_dice;
      }
      mean_best /= static_cast<double>(cfg.seeds.size());
      group.values = {mean_best};
      groups.push_back(std::move(group));
      std::printf("ablate %s: %s mean best test dice %.4f\n", which.c_str(),
                  label.c_str(), mean_best);
    }
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumericalFailure;
  }

  write_bar_chart((fs::path(base.out_dir) / ("ablate_" + which + ".svg")).string(),
                  "Best test Dice by " + which, "Dice", {"best test dice"}, {"#1f77b4"},
                  groups);
  return kExitOk;
}

}  // namespace blofin

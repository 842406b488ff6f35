#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "blofin/data.hpp"

namespace blofin {

struct MetricsRecord {
  std::int64_t seed = 0;
  std::string mode;
  std::int64_t epoch = 0;
  std::string split;  // d2_val | test | train
  double dice = 0.0;
  double loss = 0.0;
};

// Fixed 6-decimal formatting via to_chars, which is locale-independent by
// definition (always a '.' separator).
inline std::string fixed6(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v,
                                       std::chars_format::fixed, 6);
  return std::string(buf, ptr);
}

// Rows are expected in (seed, epoch, split) order; this writer preserves the
// given order.
inline void write_metrics_csv(const std::vector<MetricsRecord>& rows,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << "seed,mode,epoch,split,dice,loss\n";
  for (const MetricsRecord& r : rows) {
    out << r.seed << ',' << r.mode << ',' << r.epoch << ',' << r.split << ','
        << fixed6(r.dice) << ',' << fixed6(r.loss) << '\n';
  }
}

struct SeedSummary {
  std::int64_t seed = 0;
  std::int64_t best_epoch = 0;
  double best_d2_dice = 0.0;
  double best_test_dice = 0.0;
  double final_train_dice = 0.0;
  double final_test_dice = 0.0;
  double final_gap = 0.0;
};

struct RunSummary {
  std::string mode;
  std::int64_t n_train = 0;
  std::int64_t d1_size = 0;
  std::int64_t d2_size = 0;
  std::int64_t test_size = 0;
  std::vector<SeedSummary> per_seed;

  double mean_best_test_dice = 0.0;
  double std_best_test_dice = 0.0;
  double mean_final_gap = 0.0;
  double std_final_gap = 0.0;

  void finalize() {
    const double n = static_cast<double>(per_seed.size());
    double sum_best = 0.0, sum_gap = 0.0;
    for (const auto& s : per_seed) {
      sum_best += s.best_test_dice;
      sum_gap += s.final_gap;
    }
    mean_best_test_dice = sum_best / n;
    mean_final_gap = sum_gap / n;
    double var_best = 0.0, var_gap = 0.0;
    for (const auto& s : per_seed) {
      var_best += (s.best_test_dice - mean_best_test_dice) *
                  (s.best_test_dice - mean_best_test_dice);
      var_gap += (s.final_gap - mean_final_gap) * (s.final_gap - mean_final_gap);
    }
    std_best_test_dice = std::sqrt(var_best / n);
    std_final_gap = std::sqrt(var_gap / n);
  }
};

}  // namespace blofin

#pragma once

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "blofin/blo.hpp"
#include "blofin/data.hpp"

namespace blofin {

// Flat key=value run configuration. Unknown keys are rejected; missing keys
// take the documented defaults.
struct RunConfig {
  std::string mode = "blo_first";
  std::int64_t n_train = 4;
  std::vector<std::int64_t> seeds = {0, 1, 2};
  std::int64_t epochs = 100;
  std::int64_t steps_per_epoch = 20;
  double lr0 = 5e-3;
  double lambda = 0.8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.1;
  double eps = 1e-8;
  std::int64_t rank = 4;
  std::string xi_policy = "lower-lr";  // or a positive number
  std::int64_t image_size = 32;
  std::string target_class = "ellipse";
  double noise_std = 0.03;
  double shape_scale_min = 0.08;
  double shape_scale_max = 0.15;
  std::int64_t test_size = 200;
  std::string alternation = "paired";
  double dice_smoothing = 1.0;
  std::int64_t export_samples = 0;
  std::string out_dir = "blofin-out";

  BloMode blo_mode() const {
    if (mode == "blo_first") return BloMode::blo_first;
    if (mode == "blo_second") return BloMode::blo_second;
    if (mode == "joint") return BloMode::joint;
    throw ConfigError("config: mode must be blo_first, blo_second, or joint, got '" +
                      mode + "'");
  }

  ShapeClass target() const {
    if (target_class == "ellipse") return ShapeClass::ellipse;
    if (target_class == "rectangle") return ShapeClass::rectangle;
    throw ConfigError("config: target_class must be ellipse or rectangle, got '" +
                      target_class + "'");
  }

  void validate() const {
    blo_mode();
    target();
    if (n_train < 2 || n_train % 2 != 0) {
      throw ConfigError("config: n_train must be even and >= 2");
    }
    if (seeds.empty()) throw ConfigError("config: seeds must be non-empty");
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      for (std::size_t j = i + 1; j < seeds.size(); ++j) {
        if (seeds[i] == seeds[j]) {
          throw ConfigError("config: duplicate seed " + std::to_string(seeds[i]));
        }
      }
    }
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (steps_per_epoch < 1) throw ConfigError("config: steps_per_epoch must be >= 1");
    if (!(lr0 > 0.0)) throw ConfigError("config: lr0 must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("config: lambda outside [0,1]");
    if (rank < 0 || rank >= 16) throw ConfigError("config: rank must satisfy 0 <= rank < 16");
    if (image_size != 32 && image_size != 64) {
      throw ConfigError("config: image_size must be 32 or 64");
    }
    if (test_size < 1) throw ConfigError("config: test_size must be >= 1");
    if (alternation != "paired" && alternation != "epoch") {
      throw ConfigError("config: alternation must be paired or epoch");
    }
    if (export_samples < 0) throw ConfigError("config: export_samples must be >= 0");
    if (xi_policy != "lower-lr") {
      double value = 0.0;
      const auto* begin = xi_policy.data();
      const auto* end = begin + xi_policy.size();
      const auto [ptr, ec] = std::from_chars(begin, end, value);
      if (ec != std::errc{} || ptr != end || !(value > 0.0)) {
        throw ConfigError("config: xi_policy must be 'lower-lr' or a positive number");
      }
    }
    if (out_dir.empty()) throw ConfigError("config: out_dir must be non-empty");
  }

  TaskSpec task_spec(std::uint64_t seed) const {
    TaskSpec task;
    task.image_size = image_size;
    task.target_class = target();
    task.noise_std = noise_std;
    task.shape_scale_min = shape_scale_min;
    task.shape_scale_max = shape_scale_max;
    task.seed = Rng::derive(seed, "data");
    return task;
  }

  ModelConfig model_config(std::uint64_t seed) const {
    ModelConfig mc;
    mc.image_size = image_size;
    mc.lora_rank = rank;
    mc.seed = Rng::derive(seed, "model");
    return mc;
  }

  BloConfig blo_config() const {
    BloConfig cfg;
    cfg.mode = blo_mode();
    cfg.epochs = epochs;
    cfg.steps_per_epoch = steps_per_epoch;
    cfg.opt_lower = AdamWConfig{lr0, beta1, beta2, weight_decay, eps};
    cfg.opt_upper = AdamWConfig{lr0, beta1, beta2, weight_decay, eps};
    cfg.loss = LossConfig{lambda, dice_smoothing};
    cfg.alternation = alternation == "paired" ? Alternation::paired : Alternation::epoch_level;
    if (xi_policy == "lower-lr") {
      cfg.xi_follows_lower_lr = true;
    } else {
      cfg.xi_follows_lower_lr = false;
      double value = 0.0;
      std::from_chars(xi_policy.data(), xi_policy.data() + xi_policy.size(), value);
      cfg.xi_fixed = value;
    }
    return cfg;
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

inline std::int64_t parse_int(const std::string& key, const std::string& value) {
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + value + "'");
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + value + "'");
  }
  return out;
}

inline std::vector<std::int64_t> parse_int_list(const std::string& key,
                                                const std::string& value) {
  std::vector<std::int64_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_int(key, item));
  }
  if (out.empty()) throw ConfigError("config: key '" + key + "' expects a list of integers");
  return out;
}

}  // namespace detail

inline void apply_config_entry(RunConfig& cfg, const std::string& key,
                               const std::string& value) {
  if (key == "mode") cfg.mode = value;
  else if (key == "n_train") cfg.n_train = detail::parse_int(key, value);
  else if (key == "seeds") cfg.seeds = detail::parse_int_list(key, value);
  else if (key == "epochs") cfg.epochs = detail::parse_int(key, value);
  else if (key == "steps_per_epoch") cfg.steps_per_epoch = detail::parse_int(key, value);
  else if (key == "lr0") cfg.lr0 = detail::parse_double(key, value);
  else if (key == "lambda") cfg.lambda = detail::parse_double(key, value);
  else if (key == "beta1") cfg.beta1 = detail::parse_double(key, value);
  else if (key == "beta2") cfg.beta2 = detail::parse_double(key, value);
  else if (key == "weight_decay") cfg.weight_decay = detail::parse_double(key, value);
  else if (key == "eps") cfg.eps = detail::parse_double(key, value);
  else if (key == "rank") cfg.rank = detail::parse_int(key, value);
  else if (key == "xi_policy") cfg.xi_policy = value;
  else if (key == "image_size") cfg.image_size = detail::parse_int(key, value);
  else if (key == "target_class") cfg.target_class = value;
  else if (key == "noise_std") cfg.noise_std = detail::parse_double(key, value);
  else if (key == "shape_scale_min") cfg.shape_scale_min = detail::parse_double(key, value);
  else if (key == "shape_scale_max") cfg.shape_scale_max = detail::parse_double(key, value);
  else if (key == "test_size") cfg.test_size = detail::parse_int(key, value);
  else if (key == "alternation") cfg.alternation = value;
  else if (key == "dice_smoothing") cfg.dice_smoothing = detail::parse_double(key, value);
  else if (key == "export_samples") cfg.export_samples = detail::parse_int(key, value);
  else if (key == "out_dir") cfg.out_dir = value;
  else throw ConfigError("config: unknown key '" + key + "'");
}

// Loads a config file (key=value lines, '#' comments), applies --set
// overrides, then the BLOFIN_OUT environment variable.
inline RunConfig load_run_config(const std::string& config_path,
                                 const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("config: cannot open '" + config_path + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config: " + config_path + ":" + std::to_string(line_no) +
                          ": expected key=value");
      }
      apply_config_entry(cfg, detail::trim(line.substr(0, eq)),
                         detail::trim(line.substr(eq + 1)));
    }
  }
  for (const std::string& entry : overrides) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: --set expects key=value, got '" + entry + "'");
    }
    apply_config_entry(cfg, detail::trim(entry.substr(0, eq)),
                       detail::trim(entry.substr(eq + 1)));
  }
  if (const char* env = std::getenv("BLOFIN_OUT"); env && *env) {
    cfg.out_dir = env;
  }
  cfg.validate();
  return cfg;
}

// Every effective setting, one per line, sorted by key; parsing this file
// back reproduces the run exactly.
inline std::string resolved_config_text(const RunConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["mode"] = cfg.mode;
  kv["n_train"] = std::to_string(cfg.n_train);
  {
    std::string seeds;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
      if (i) seeds += ',';
      seeds += std::to_string(cfg.seeds[i]);
    }
    kv["seeds"] = seeds;
  }
  kv["epochs"] = std::to_string(cfg.epochs);
  kv["steps_per_epoch"] = std::to_string(cfg.steps_per_epoch);
  kv["lr0"] = detail::format_double(cfg.lr0);
  kv["lambda"] = detail::format_double(cfg.lambda);
  kv["beta1"] = detail::format_double(cfg.beta1);
  kv["beta2"] = detail::format_double(cfg.beta2);
  kv["weight_decay"] = detail::format_double(cfg.weight_decay);
  kv["eps"] = detail::format_double(cfg.eps);
  kv["rank"] = std::to_string(cfg.rank);
  kv["xi_policy"] = cfg.xi_policy;
  kv["image_size"] = std::to_string(cfg.image_size);
  kv["target_class"] = cfg.target_class;
  kv["noise_std"] = detail::format_double(cfg.noise_std);
  kv["shape_scale_min"] = detail::format_double(cfg.shape_scale_min);
  kv["shape_scale_max"] = detail::format_double(cfg.shape_scale_max);
  kv["test_size"] = std::to_string(cfg.test_size);
  kv["alternation"] = cfg.alternation;
  kv["dice_smoothing"] = detail::format_double(cfg.dice_smoothing);
  kv["export_samples"] = std::to_string(cfg.export_samples);
  kv["out_dir"] = cfg.out_dir;

  std::string out;
  for (const auto& [key, value] : kv) {
    out += key;
    out += '=';
    out += value;
    out += '\n';
  }
  return out;
}

}  // namespace blofin

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "blofin/rng.hpp"
#include "blofin/tensor.hpp"

namespace blofin {

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ShapeClass { ellipse, rectangle };

inline const char* shape_class_name(ShapeClass c) {
  return c == ShapeClass::ellipse ? "ellipse" : "rectangle";
}

inline ShapeClass other_class(ShapeClass c) {
  return c == ShapeClass::ellipse ? ShapeClass::rectangle : ShapeClass::ellipse;
}

// Task generator: every image carries one target shape and one distractor of
// the other class, placed without overlap; the mask marks target pixels only.
// Two classes force the prompt embedding to carry which one to segment.
struct TaskSpec {
  std::int64_t image_size = 32;
  ShapeClass target_class = ShapeClass::ellipse;
  double noise_std = 0.03;
  double shape_scale_min = 0.08;  // fraction of image area per shape
  double shape_scale_max = 0.15;
  std::uint64_t seed = 0;

  ShapeClass distractor_class() const { return other_class(target_class); }

  void validate() const {
    if (image_size < 16) throw ConfigError("task: image size must be at least 16");
    if (!(shape_scale_min > 0.0 && shape_scale_max >= shape_scale_min &&
          shape_scale_max < 0.5)) {
      throw ConfigError("task: shape scale range must satisfy 0 < min <= max < 0.5");
    }
    if (noise_std < 0.0) throw ConfigError("task: noise std must be >= 0");
    // Largest half-extent a shape may need (ellipse at the widest aspect),
    // plus a one-pixel placement margin on each side.
    const double area = static_cast<double>(image_size * image_size);
    const double max_half =
        std::sqrt(shape_scale_max * area / 3.14159265358979323846) * std::sqrt(1.6);
    if (2.0 * (max_half + 1.0) > static_cast<double>(image_size)) {
      throw ConfigError("task: image size " + std::to_string(image_size) +
                        " too small for shape_scale_max " + std::to_string(shape_scale_max));
    }
  }
};

struct ShapeParams {
  ShapeClass cls = ShapeClass::ellipse;
  double cx = 0.0, cy = 0.0;  // center, pixel units
  double hx = 0.0, hy = 0.0;  // half extents (ellipse radii / rect half sides)
  double intensity = 0.0;
};

inline bool shape_contains(const ShapeParams& s, double x, double y) {
  if (s.cls == ShapeClass::ellipse) {
    const double u = (x - s.cx) / s.hx;
    const double v = (y - s.cy) / s.hy;
    return u * u + v * v <= 1.0;
  }
  return std::abs(x - s.cx) <= s.hx && std::abs(y - s.cy) <= s.hy;
}

// Pixel (row r, col c) is inside a shape if its center (c+0.5, r+0.5) is.
inline Tensor rasterize_mask(const ShapeParams& s, std::int64_t size) {
  std::vector<double> mask(static_cast<std::size_t>(size * size), 0.0);
  for (std::int64_t r = 0; r < size; ++r) {
    for (std::int64_t c = 0; c < size; ++c) {
      if (shape_contains(s, static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5)) {
        mask[r * size + c] = 1.0;
      }
    }
  }
  return Tensor({size, size}, std::move(mask));
}

struct Sample {
  std::int64_t id = -1;
  Tensor image;  // [H,W] in [0,1]
  Tensor mask;   // [H,W] binary, target pixels only
  ShapeParams target;
  ShapeParams distractor;
};

namespace detail {

inline ShapeParams draw_shape(ShapeClass cls, const TaskSpec& spec, Rng& rng) {
  const double area = static_cast<double>(spec.image_size * spec.image_size);
  const double frac = rng.uniform(spec.shape_scale_min, spec.shape_scale_max);
  const double aspect = rng.uniform(0.75, 1.33);
  ShapeParams s;
  s.cls = cls;
  // hx*hy*pi = frac*area for the ellipse, 4*hx*hy = frac*area for the rect.
  const double divisor = cls == ShapeClass::ellipse ? 3.14159265358979323846 : 4.0;
  const double base = std::sqrt(frac * area / divisor);
  s.hx = base * std::sqrt(aspect);
  s.hy = base / std::sqrt(aspect);
  const double margin_x = s.hx + 1.0;
  const double margin_y = s.hy + 1.0;
  s.cx = rng.uniform(margin_x, static_cast<double>(spec.image_size) - margin_x);
  s.cy = rng.uniform(margin_y, static_cast<double>(spec.image_size) - margin_y);
  s.intensity = rng.uniform(0.72, 0.92);
  return s;
}

inline bool boxes_overlap(const ShapeParams& a, const ShapeParams& b) {
  return std::abs(a.cx - b.cx) <= a.hx + b.hx + 1.0 &&
         std::abs(a.cy - b.cy) <= a.hy + b.hy + 1.0;
}

}  // namespace detail

inline std::vector<Sample> generate(const TaskSpec& spec, std::int64_t n) {
  spec.validate();
  if (n < 1) throw ConfigError("generate: sample count must be >= 1");
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(n));
  const std::int64_t size = spec.image_size;

  for (std::int64_t idx = 0; idx < n; ++idx) {
    Rng rng(Rng::derive(spec.seed, "sample-" + std::to_string(idx)));
    // The scene is drawn independently of which class is the target, so
    // swapping target and distractor relabels the same image.
    ShapeParams ellipse_shape, rect_shape;
    for (int attempt = 0;; ++attempt) {
      ellipse_shape = detail::draw_shape(ShapeClass::ellipse, spec, rng);
      rect_shape = detail::draw_shape(ShapeClass::rectangle, spec, rng);
      if (!detail::boxes_overlap(ellipse_shape, rect_shape)) break;
      if (attempt > 1000) {
        throw ConfigError("generate: cannot place two disjoint shapes; "
                          "shape_scale_range too large for image size");
      }
    }

    std::vector<double> image(static_cast<std::size_t>(size * size));
    for (std::int64_t r = 0; r < size; ++r) {
      for (std::int64_t c = 0; c < size; ++c) {
        const double x = static_cast<double>(c) + 0.5;
        const double y = static_cast<double>(r) + 0.5;
        double v = 0.12 + rng.normal(0.0, spec.noise_std);
        if (shape_contains(ellipse_shape, x, y)) {
          v = ellipse_shape.intensity + rng.normal(0.0, spec.noise_std);
        } else if (shape_contains(rect_shape, x, y)) {
          v = rect_shape.intensity + rng.normal(0.0, spec.noise_std);
        }
        image[r * size + c] = std::clamp(v, 0.0, 1.0);
      }
    }

    Sample s;
    s.id = idx;
    s.image = Tensor({size, size}, std::move(image));
    s.target = spec.target_class == ShapeClass::ellipse ? ellipse_shape : rect_shape;
    s.distractor = spec.target_class == ShapeClass::ellipse ? rect_shape : ellipse_shape;
    s.mask = rasterize_mask(s.target, size);
    samples.push_back(std::move(s));
  }
  return samples;
}

// The two training halves and the held-out test set. D1 trains the weights,
// D2 trains the prompt embedding.
struct DataSplit {
  std::vector<Sample> d1;
  std::vector<Sample> d2;
  std::vector<Sample> test;
};

inline DataSplit split(const std::vector<Sample>& samples, std::int64_t n_train,
                       std::uint64_t seed) {
  if (n_train < 2 || n_train % 2 != 0) {
    throw ConfigError("split: n_train must be even and >= 2, got " +
                      std::to_string(n_train));
  }
  if (n_train >= static_cast<std::int64_t>(samples.size())) {
    throw ConfigError("split: n_train " + std::to_string(n_train) +
                      " leaves no test examples out of " + std::to_string(samples.size()));
  }
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(Rng::derive(seed, "split"));
  shuffle_in_place(order, rng);

  DataSplit out;
  const std::int64_t half = n_train / 2;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Sample& s = samples[order[i]];
    if (static_cast<std::int64_t>(i) < half) {
      out.d1.push_back(s);
    } else if (static_cast<std::int64_t>(i) < n_train) {
      out.d2.push_back(s);
    } else {
      out.test.push_back(s);
    }
  }
  return out;
}

// Plain-text PGM/PBM export for eyeballing samples.
inline void write_pgm(const Tensor& image, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  const std::int64_t h = image.shape()[0];
  const std::int64_t w = image.shape()[1];
  out << "P2\n" << w << " " << h << "\n255\n";
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      const int v = static_cast<int>(std::clamp(image.values()[r * w + c], 0.0, 1.0) * 255.0);
      out << v << (c + 1 == w ? '\n' : ' ');
    }
  }
}

inline void write_pbm(const Tensor& mask, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  const std::int64_t h = mask.shape()[0];
  const std::int64_t w = mask.shape()[1];
  out << "P1\n" << w << " " << h << "\n";
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      out << (mask.values()[r * w + c] != 0.0 ? 1 : 0) << (c + 1 == w ? '\n' : ' ');
    }
  }
}

inline void export_sample(const Sample& sample, const std::string& base_path) {
  write_pgm(sample.image, base_path + ".pgm");
  write_pbm(sample.mask, base_path + ".pbm");
}

}  // namespace blofin

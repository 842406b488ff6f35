#include <doctest.h>

#include <filesystem>
#include <set>
#include <fstream>

#include "blofin/data.hpp"
#include "blofin/losses.hpp"

using namespace blofin;

TEST_CASE("generation is deterministic in (seed, n)") {
  TaskSpec spec;
  spec.seed = 7;
  const auto a = generate(spec, 4);
  const auto b = generate(spec, 4);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a[i].image.values() == b[i].image.values());
    CHECK(a[i].mask.values() == b[i].mask.values());
  }
  // A prefix of a longer run is identical.
  const auto longer = generate(spec, 6);
  CHECK(longer[2].image.values() == a[2].image.values());
}

TEST_CASE("mask foreground fraction stays inside the scale envelope") {
  TaskSpec spec;
  spec.seed = 11;
  spec.shape_scale_min = 0.03;
  spec.shape_scale_max = 0.20;
  const auto samples = generate(spec, 100);
  for (const auto& s : samples) {
    double fg = 0.0;
    for (const double v : s.mask.values()) fg += v;
    const double frac = fg / static_cast<double>(s.mask.numel());
    CHECK(frac >= 0.02);
    CHECK(frac <= 0.30);
  }
}

TEST_CASE("images stay in [0,1] and every sample has both shapes") {
  TaskSpec spec;
  spec.seed = 3;
  for (const auto& s : generate(spec, 20)) {
    for (const double v : s.image.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(s.target.cls == ShapeClass::ellipse);
    CHECK(s.distractor.cls == ShapeClass::rectangle);
  }
}

TEST_CASE("swapping target and distractor complements the masked shape") {
  TaskSpec spec;
  spec.seed = 19;
  TaskSpec swapped = spec;
  swapped.target_class = ShapeClass::rectangle;

  const auto a = generate(spec, 6);
  const auto b = generate(swapped, 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    // The scene is identical; only the labeling flips.
    CHECK(a[i].image.values() == b[i].image.values());
    CHECK(a[i].target.cls == b[i].distractor.cls);
    CHECK(b[i].target.cls == a[i].distractor.cls);
    CHECK(b[i].mask.values() ==
          rasterize_mask(a[i].distractor, spec.image_size).values());
    // And the two masks never overlap.
    for (std::size_t p = 0; p < a[i].mask.values().size(); ++p) {
      CHECK(a[i].mask.values()[p] * b[i].mask.values()[p] == 0.0);
    }
  }
}

TEST_CASE("masks re-rasterize bit-exactly from stored shape parameters") {
  TaskSpec spec;
  spec.seed = 5;
  for (const auto& s : generate(spec, 10)) {
    CHECK(s.mask.values() == rasterize_mask(s.target, spec.image_size).values());
  }
}

TEST_CASE("an all-background predictor scores near zero") {
  TaskSpec spec;
  spec.seed = 13;
  const auto samples = generate(spec, 100);
  const Tensor empty = Tensor::zeros({spec.image_size, spec.image_size});
  double mean_dice = 0.0;
  for (const auto& s : samples) mean_dice += dice_score(empty, s.mask);
  mean_dice /= static_cast<double>(samples.size());
  CHECK(mean_dice < 0.1);
}

TEST_CASE("split sizes and determinism") {
  TaskSpec spec;
  spec.seed = 2;
  const auto samples = generate(spec, 204);

  const DataSplit s4 = split(samples, 4, 99);
  CHECK(s4.d1.size() == 2);
  CHECK(s4.d2.size() == 2);
  CHECK(s4.test.size() == 200);

  const DataSplit s8 = split(samples, 8, 99);
  CHECK(s8.d1.size() == 4);
  CHECK(s8.d2.size() == 4);

  const DataSplit again = split(samples, 4, 99);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(s4.d1[i].id == again.d1[i].id);
    CHECK(s4.d2[i].id == again.d2[i].id);
  }

  // Membership is disjoint.
  std::set<std::int64_t> ids;
  for (const auto& s : s4.d1) ids.insert(s.id);
  for (const auto& s : s4.d2) CHECK_FALSE(ids.count(s.id));

  CHECK_THROWS_AS(split(samples, 3, 0), ConfigError);
  CHECK_THROWS_AS(split(samples, 204, 0), ConfigError);
}

TEST_CASE("task validation rejects shapes too large for the image") {
  TaskSpec spec;
  spec.image_size = 16;
  spec.shape_scale_max = 0.45;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("pgm/pbm export writes readable headers") {
  TaskSpec spec;
  spec.seed = 1;
  const auto samples = generate(spec, 1);
  const auto base = std::filesystem::temp_directory_path() / "blofin_sample";
  export_sample(samples[0], base.string());

  std::ifstream pgm(base.string() + ".pgm");
  std::string magic;
  pgm >> magic;
  CHECK(magic == "P2");
  std::ifstream pbm(base.string() + ".pbm");
  pbm >> magic;
  CHECK(magic == "P1");
  std::filesystem::remove(base.string() + ".pgm");
  std::filesystem::remove(base.string() + ".pbm");
}

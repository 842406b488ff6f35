#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "blofin/checkpoint.hpp"
#include "blofin/gradcheck.hpp"
#include "blofin/model.hpp"
#include "blofin/rng.hpp"

using namespace blofin;

namespace {

Tensor random_image(std::int64_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(size * size));
  for (auto& x : v) x = rng.uniform(0.0, 1.0);
  return Tensor({size, size}, std::move(v));
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.seed = 17;
  return cfg;
}

}  // namespace

TEST_CASE("forward shape arithmetic") {
  const ModelConfig cfg = small_config();
  const SegModel model = make_model(cfg);
  CHECK(cfg.n_image_tokens() == 16);

  const Tensor logits = forward(model, random_image(32, 1));
  CHECK(logits.shape() == Shape{32, 32});
  for (const double v : logits.values()) CHECK(std::isfinite(v));

  CHECK_THROWS_AS(forward(model, Tensor::zeros({30, 30})), ShapeError);
}

TEST_CASE("lora identity at initialization") {
  ModelConfig with_lora = small_config();
  ModelConfig without_lora = small_config();
  without_lora.lora_rank = 0;
  const SegModel adapted = make_model(with_lora);
  const SegModel frozen_only = make_model(without_lora);

  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor image = random_image(32, 100 + s);
    const auto a = forward(adapted, image).values();
    const auto b = forward(frozen_only, image).values();
    CHECK(a == b);
  }
}

TEST_CASE("lora_forward arithmetic") {
  // up = 0 reproduces the frozen output exactly.
  {
    LoraAdapter adapter{Tensor({2, 2}, {1, 0, 0, 1}, true), Tensor::zeros({2, 2}, true)};
    const Tensor frozen_out({1, 2}, {1.0, 2.0});
    const Tensor x({1, 2}, {3.0, 4.0});
    CHECK(lora_forward(adapter, frozen_out, x).values() == frozen_out.values());
  }
  // down = I, up = 0.1 I on x = [1,2] adds [0.1, 0.2].
  {
    LoraAdapter adapter{Tensor({2, 2}, {1, 0, 0, 1}, true),
                        Tensor({2, 2}, {0.1, 0, 0, 0.1}, true)};
    const Tensor frozen_out({1, 2}, {1.0, 2.0});
    const Tensor x({1, 2}, {1.0, 2.0});
    const auto out = lora_forward(adapter, frozen_out, x).values();
    CHECK(out[0] == doctest::Approx(1.1));
    CHECK(out[1] == doctest::Approx(2.2));
  }
  {
    LoraAdapter adapter{Tensor({2, 2}, {1, 0, 0, 1}, true), Tensor::zeros({2, 2}, true)};
    CHECK_THROWS_AS(lora_forward(adapter, Tensor::zeros({1, 3}), Tensor::zeros({1, 3})),
                    ShapeError);
  }
}

TEST_CASE("lora up gradient matches finite differences") {
  Rng rng(3);
  auto rand = [&rng](Shape s, bool grad) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor(std::move(s), std::move(v), grad);
  };
  LoraAdapter adapter{rand({4, 2}, true), rand({2, 4}, true)};
  const Tensor frozen_out = rand({3, 4}, false);
  const Tensor x = rand({3, 4}, false);
  auto loss = [adapter, frozen_out, x]() {
    const Tensor out = lora_forward(adapter, frozen_out, x);
    return sum(mul(out, out));
  };
  CHECK(run_gradcheck({"lora_up", loss, adapter.up}).max_rel_error < 1e-5);
  CHECK(run_gradcheck({"lora_down", loss, adapter.down}).max_rel_error < 1e-5);
}

TEST_CASE("parameter partition counts and disjointness") {
  const SegModel model = make_model(small_config());
  const ParamPartition part = parameter_partition(model);

  // 2 blocks x 3 attention blocks x 2 adapters x (16*4 + 4*16) scalars.
  std::int64_t lora_scalars = 0;
  for (const auto& e : part.weights) {
    if (e.name.find("lora") != std::string::npos) lora_scalars += e.tensor.numel();
  }
  CHECK(lora_scalars == 1536);

  CHECK(part.count(ParamGroup::prompt) == 4 * 16);

  // Disjoint and exhaustive by construction: no tensor appears twice, and
  // every tensor of the model is listed.
  std::set<const void*> seen;
  for (const auto& e : part.all()) {
    CHECK(seen.insert(e.tensor.node().get()).second);
  }
  const std::int64_t total =
      part.count(ParamGroup::frozen) + part.count(ParamGroup::weights) +
      part.count(ParamGroup::prompt);
  std::int64_t expected = 0;
  for (const auto& e : part.all()) expected += e.tensor.numel();
  CHECK(total == expected);

  for (const auto& e : part.frozen) CHECK_FALSE(e.tensor.requires_grad());
  for (const auto& e : part.weights) CHECK(e.tensor.requires_grad());
  for (const auto& e : part.prompt) CHECK(e.tensor.requires_grad());
}

TEST_CASE("gradient isolation: frozen parameters never receive gradients") {
  const SegModel model = make_model(small_config());
  const ParamPartition part = parameter_partition(model);
  for (const auto& e : part.all()) {
    Tensor t = e.tensor;
    t.zero_grad();
  }

  backward(sum(forward(model, random_image(32, 5))));

  for (const auto& e : part.frozen) {
    for (const double g : e.tensor.grad()) CHECK(g == 0.0);
  }
  double lora_grad_norm = 0.0;
  for (const auto& e : part.weights) {
    if (e.name.find("lora") == std::string::npos) continue;
    for (const double g : e.tensor.grad()) lora_grad_norm += g * g;
  }
  CHECK(lora_grad_norm > 0.0);
}

TEST_CASE("prompt self-attention is independent of the image") {
  const SegModel model = make_model(small_config());
  ForwardTrace trace_a, trace_b;
  forward(model, random_image(32, 8), &trace_a);
  forward(model, random_image(32, 9), &trace_b);
  REQUIRE(trace_a.self_attn_outputs.size() == trace_b.self_attn_outputs.size());
  // The first block's self-attention sees only the prompt, so two different
  // images cannot change it.
  CHECK(trace_a.self_attn_outputs[0].values() == trace_b.self_attn_outputs[0].values());
}

TEST_CASE("image-to-token attention is permutation equivariant") {
  const SegModel model = make_model(small_config());
  const AttentionBlock& block = model.blocks[0].image_to_token;
  Rng rng(12);
  auto rand = [&rng](Shape s) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor(std::move(s), std::move(v));
  };
  const Tensor image_tokens = rand({6, 16});
  const Tensor prompt_tokens = rand({4, 16});

  const auto base = attention_forward(block, image_tokens, prompt_tokens).values();

  std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  std::vector<double> permuted(6 * 16);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 16; ++c) {
      permuted[r * 16 + c] = image_tokens.values()[perm[r] * 16 + c];
    }
  }
  const auto out =
      attention_forward(block, Tensor({6, 16}, permuted), prompt_tokens).values();
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 16; ++c) {
      CHECK(out[r * 16 + c] == doctest::Approx(base[perm[r] * 16 + c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("same seed gives identical models, clones are independent") {
  const SegModel a = make_model(small_config());
  const SegModel b = make_model(small_config());
  CHECK(a.prompt.tokens.values() == b.prompt.tokens.values());
  CHECK(a.encoder.embed.values() == b.encoder.embed.values());

  SegModel c = clone_model(a);
  c.prompt.tokens.values()[0] += 1.0;
  CHECK(a.prompt.tokens.values()[0] != c.prompt.tokens.values()[0]);
}

TEST_CASE("checkpoint round-trips exactly") {
  SegModel model = make_model(small_config());
  // Perturb so we are not just testing the seeded init.
  Rng rng(23);
  const ParamPartition part = parameter_partition(model);
  for (const auto& e : part.weights) {
    Tensor t = e.tensor;
    for (auto& v : t.values()) v += rng.normal(0.0, 0.1);
  }

  const auto path = std::filesystem::temp_directory_path() / "blofin_ckpt_test.blofin";
  save_checkpoint(model, path.string());
  const SegModel loaded = load_checkpoint(path.string());

  const ParamPartition lpart = parameter_partition(loaded);
  const auto all_a = part.all();
  const auto all_b = lpart.all();
  REQUIRE(all_a.size() == all_b.size());
  for (std::size_t i = 0; i < all_a.size(); ++i) {
    CHECK(all_a[i].name == all_b[i].name);
    CHECK(all_a[i].tensor.values() == all_b[i].tensor.values());
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects a bad magic string") {
  const auto path = std::filesystem::temp_directory_path() / "blofin_bad_magic.blofin";
  {
    std::ofstream out(path);
    out << "NOTBLOFIN\n";
  }
  CHECK_THROWS_AS(load_checkpoint(path.string()), CheckpointError);
  std::filesystem::remove(path);
}

TEST_CASE("model config validation") {
  ModelConfig cfg;
  cfg.image_size = 30;
  CHECK_THROWS_AS(make_model(cfg), ShapeError);
  cfg = ModelConfig{};
  cfg.lora_rank = 16;
  CHECK_THROWS_AS(make_model(cfg), ContractError);
}

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blofin/rng.hpp"
#include "blofin/tensor.hpp"

namespace blofin {

struct ModelConfig {
  std::int64_t image_size = 32;
  std::int64_t patch_size = 8;
  std::int64_t embed_dim = 16;
  std::int64_t n_decoder_blocks = 2;
  std::int64_t n_prompt_tokens = 4;
  std::int64_t lora_rank = 4;  // 0 disables the adapters entirely
  std::int64_t head_hidden = 16;
  std::int64_t head_channels = 4;
  std::uint64_t seed = 42;

  std::int64_t n_image_tokens() const {
    return (image_size / patch_size) * (image_size / patch_size);
  }

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
      throw ShapeError("model config: image size " + std::to_string(image_size) +
                       " is not divisible by patch size " + std::to_string(patch_size));
    }
    if (lora_rank < 0 || lora_rank >= embed_dim) {
      throw ContractError("model config: lora rank must satisfy 0 <= r < d");
    }
    if (embed_dim <= 0 || n_decoder_blocks <= 0 || n_prompt_tokens <= 0 ||
        head_hidden <= 0 || head_channels <= 0) {
      throw ContractError("model config: dimensions must be positive");
    }
  }
};

// Low-rank adapter pair: down projects d -> r, up projects r -> d. The up
// matrix starts at zero so the adapted layer initially equals the frozen one.
struct LoraAdapter {
  Tensor down;
  Tensor up;
  std::int64_t rank() const { return down.shape()[1]; }
};

inline Tensor lora_forward(const LoraAdapter& adapter, const Tensor& frozen_out,
                           const Tensor& x) {
  if (x.rank() != 2 || x.shape()[1] != adapter.down.shape()[0]) {
    throw ShapeError("lora_forward: input " + shape_str(x.shape()) +
                     " does not match adapter down " + shape_str(adapter.down.shape()));
  }
  return frozen_out + matmul(matmul(x, adapter.down), adapter.up);
}

// Single-head scaled dot-product attention with frozen projections. Adapters
// sit on the query and value projections only.
struct AttentionBlock {
  Tensor wq, wk, wv, wo;  // frozen d x d
  std::optional<LoraAdapter> lora_q;
  std::optional<LoraAdapter> lora_v;
};

inline Tensor attention_forward(const AttentionBlock& block, const Tensor& query_in,
                                const Tensor& kv_in) {
  const std::int64_t d = block.wq.shape()[0];
  Tensor q = matmul(query_in, block.wq);
  if (block.lora_q) q = lora_forward(*block.lora_q, q, query_in);
  const Tensor k = matmul(kv_in, block.wk);
  Tensor v = matmul(kv_in, block.wv);
  if (block.lora_v) v = lora_forward(*block.lora_v, v, kv_in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Tensor weights = softmax_lastaxis(matmul(q, transpose(k)) * scale);
  return matmul(matmul(weights, v), block.wo);
}

// One two-way decoder layer: prompt self-attention, prompt-to-image
// cross-attention, a frozen feed-forward on the prompt stream, then
// image-to-prompt cross-attention updating the image stream.
struct TwoWayDecoderBlock {
  AttentionBlock self_attn;
  AttentionBlock token_to_image;
  AttentionBlock image_to_token;
  Tensor mlp_w1, mlp_w2;  // frozen
};

struct FrozenEncoder {
  std::int64_t patch_size = 8;
  std::uint64_t seed = 0;
  Tensor embed;       // [patch^2, d], frozen
  Tensor positional;  // [n_tokens, d], frozen
};

struct PromptEmbedding {
  Tensor tokens;  // [n_prompt_tokens, d], the upper-level variable
};

// Mask head: a learnable upsampler maps each image token to a patch block of
// per-pixel feature channels, and a two-layer MLP turns the final prompt
// token into the channel weights that score every pixel. The pixel logit is
// the dot product of the two, plus a global bias.
struct MaskHead {
  Tensor upsampler;  // [d, patch^2 * channels], pixel-major layout
  Tensor w1, b1;     // [d, hidden], [hidden]
  Tensor w2, b2;     // [hidden, channels], [channels]
  Tensor out_bias;   // [1]
};

struct SegModel {
  ModelConfig config;
  FrozenEncoder encoder;
  std::vector<TwoWayDecoderBlock> blocks;
  PromptEmbedding prompt;
  MaskHead head;
};

namespace detail {

inline Tensor gaussian_tensor(Shape shape, double stddev, bool requires_grad, Rng& rng) {
  const auto n = shape_numel(shape);
  std::vector<double> values(static_cast<std::size_t>(n));
  for (double& v : values) v = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

inline AttentionBlock make_attention(std::int64_t d, double frozen_std, Rng& rng) {
  AttentionBlock block;
  block.wq = gaussian_tensor({d, d}, frozen_std, false, rng);
  block.wk = gaussian_tensor({d, d}, frozen_std, false, rng);
  block.wv = gaussian_tensor({d, d}, frozen_std, false, rng);
  block.wo = gaussian_tensor({d, d}, frozen_std, false, rng);
  return block;
}

inline LoraAdapter make_adapter(std::int64_t d, std::int64_t r, Rng& rng) {
  LoraAdapter adapter;
  adapter.down = gaussian_tensor({d, r}, 0.02, true, rng);
  adapter.up = Tensor::zeros({r, d}, true);
  return adapter;
}

}  // namespace detail

// Builds a model whose frozen weights stand in for a pretrained backbone:
// every tensor is generated from the seed, so two models with the same
// config are identical. The pretrained, adapter, and prompt draws come from
// separate derived streams, so changing the LoRA rank (or removing the
// adapters) leaves the frozen base untouched.
inline SegModel make_model(const ModelConfig& cfg) {
  cfg.validate();
  SegModel model;
  model.config = cfg;
  const std::int64_t d = cfg.embed_dim;
  const std::int64_t ps = cfg.patch_size * cfg.patch_size;
  const double frozen_std = 1.0 / std::sqrt(static_cast<double>(d));

  Rng rng(Rng::derive(cfg.seed, "pretrained"));
  model.encoder.patch_size = cfg.patch_size;
  model.encoder.seed = cfg.seed;
  model.encoder.embed = detail::gaussian_tensor({ps, d}, frozen_std, false, rng);
  // Positional cues are kept small relative to content so tokens for the
  // same patch pattern stay similar across locations.
  model.encoder.positional =
      detail::gaussian_tensor({cfg.n_image_tokens(), d}, 0.25 * frozen_std, false, rng);

  model.blocks.reserve(static_cast<std::size_t>(cfg.n_decoder_blocks));
  for (std::int64_t b = 0; b < cfg.n_decoder_blocks; ++b) {
    TwoWayDecoderBlock block;
    block.self_attn = detail::make_attention(d, frozen_std, rng);
    block.token_to_image = detail::make_attention(d, frozen_std, rng);
    block.image_to_token = detail::make_attention(d, frozen_std, rng);
    block.mlp_w1 = detail::gaussian_tensor({d, d}, frozen_std, false, rng);
    block.mlp_w2 = detail::gaussian_tensor({d, d}, frozen_std, false, rng);
    model.blocks.push_back(std::move(block));
  }

  model.head.upsampler =
      detail::gaussian_tensor({d, ps * cfg.head_channels}, frozen_std, true, rng);
  model.head.w1 = detail::gaussian_tensor({d, cfg.head_hidden}, frozen_std, true, rng);
  model.head.b1 = Tensor::zeros({cfg.head_hidden}, true);
  model.head.w2 =
      detail::gaussian_tensor({cfg.head_hidden, cfg.head_channels}, frozen_std, true, rng);
  model.head.b2 = Tensor::zeros({cfg.head_channels}, true);
  model.head.out_bias = Tensor::zeros({1}, true);

  if (cfg.lora_rank > 0) {
    Rng lora_rng(Rng::derive(cfg.seed, "lora"));
    for (TwoWayDecoderBlock& block : model.blocks) {
      for (AttentionBlock* attn :
           {&block.self_attn, &block.token_to_image, &block.image_to_token}) {
        attn->lora_q = detail::make_adapter(d, cfg.lora_rank, lora_rng);
        attn->lora_v = detail::make_adapter(d, cfg.lora_rank, lora_rng);
      }
    }
  }

  Rng prompt_rng(Rng::derive(cfg.seed, "prompt"));
  model.prompt.tokens =
      detail::gaussian_tensor({cfg.n_prompt_tokens, d}, 0.02, true, prompt_rng);
  return model;
}

// Optional capture of intermediate streams for tests.
struct ForwardTrace {
  std::vector<Tensor> self_attn_outputs;
  Tensor final_prompt;
};

inline Tensor forward(const SegModel& model, const Tensor& image,
                      ForwardTrace* trace = nullptr) {
  const ModelConfig& cfg = model.config;
  if (image.rank() != 2) {
    throw ShapeError("forward: expects a rank-2 image, got " + shape_str(image.shape()));
  }
  const std::int64_t h = image.shape()[0];
  const std::int64_t w = image.shape()[1];
  if (h % cfg.patch_size != 0 || w % cfg.patch_size != 0) {
    throw ShapeError("forward: image " + shape_str(image.shape()) +
                     " is not divisible by patch size " + std::to_string(cfg.patch_size));
  }
  const std::int64_t tokens = (h / cfg.patch_size) * (w / cfg.patch_size);
  if (tokens != model.encoder.positional.shape()[0]) {
    throw ShapeError("forward: image yields " + std::to_string(tokens) +
                     " tokens but the encoder was built for " +
                     std::to_string(model.encoder.positional.shape()[0]));
  }

  Tensor img = add(matmul(patchify(image, cfg.patch_size), model.encoder.embed),
                   model.encoder.positional);
  Tensor prm = model.prompt.tokens;

  for (const TwoWayDecoderBlock& block : model.blocks) {
    const Tensor self_out = attention_forward(block.self_attn, prm, prm);
    if (trace) trace->self_attn_outputs.push_back(self_out);
    prm = prm + self_out;
    prm = prm + attention_forward(block.token_to_image, prm, img);
    prm = prm + matmul(sigmoid(matmul(prm, block.mlp_w1)), block.mlp_w2);
    img = img + attention_forward(block.image_to_token, img, prm);
  }
  if (trace) trace->final_prompt = prm;

  // Per-pixel feature channels from the image stream, scored against the
  // channel weights the head MLP derives from the final prompt token.
  const std::int64_t ps = cfg.patch_size * cfg.patch_size;
  const std::int64_t channels = cfg.head_channels;
  const Tensor features =
      reshape(matmul(img, model.head.upsampler), {tokens * ps, channels});
  const Tensor last_token = slice_rows(prm, cfg.n_prompt_tokens - 1, cfg.n_prompt_tokens);
  const Tensor hidden =
      sigmoid(add_rowvec(matmul(last_token, model.head.w1), model.head.b1));
  const Tensor channel_weights = add_rowvec(matmul(hidden, model.head.w2), model.head.b2);
  const Tensor scores =
      add_rowvec(matmul(features, transpose(channel_weights)), model.head.out_bias);
  return unpatchify(reshape(scores, {tokens, ps}), h, w, cfg.patch_size);
}

enum class ParamGroup { frozen, weights, prompt };

inline const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::frozen: return "frozen";
    case ParamGroup::weights: return "weights";
    case ParamGroup::prompt: return "prompt";
  }
  return "?";
}

struct ParamEntry {
  std::string name;
  Tensor tensor;
  ParamGroup group;
};

struct ParamPartition {
  std::vector<ParamEntry> frozen;
  std::vector<ParamEntry> weights;  // W: adapters + mask head
  std::vector<ParamEntry> prompt;   // A: prompt tokens

  std::vector<Tensor> weight_tensors() const {
    std::vector<Tensor> out;
    out.reserve(weights.size());
    for (const auto& e : weights) out.push_back(e.tensor);
    return out;
  }

  std::vector<Tensor> prompt_tensors() const {
    std::vector<Tensor> out;
    out.reserve(prompt.size());
    for (const auto& e : prompt) out.push_back(e.tensor);
    return out;
  }

  std::vector<ParamEntry> all() const {
    std::vector<ParamEntry> out;
    out.reserve(frozen.size() + weights.size() + prompt.size());
    out.insert(out.end(), frozen.begin(), frozen.end());
    out.insert(out.end(), weights.begin(), weights.end());
    out.insert(out.end(), prompt.begin(), prompt.end());
    return out;
  }

  std::int64_t count(ParamGroup g) const {
    const std::vector<ParamEntry>* set =
        g == ParamGroup::frozen ? &frozen : g == ParamGroup::weights ? &weights : &prompt;
    std::int64_t n = 0;
    for (const auto& e : *set) n += e.tensor.numel();
    return n;
  }
};

// Splits every parameter into exactly one of {frozen, W, A}, in a stable
// traversal order so optimizer state stays aligned across calls.
inline ParamPartition parameter_partition(const SegModel& model) {
  ParamPartition part;
  auto frozen = [&part](std::string name, const Tensor& t) {
    part.frozen.push_back({std::move(name), t, ParamGroup::frozen});
  };
  auto weight = [&part](std::string name, const Tensor& t) {
    part.weights.push_back({std::move(name), t, ParamGroup::weights});
  };

  frozen("encoder.embed", model.encoder.embed);
  frozen("encoder.positional", model.encoder.positional);
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const TwoWayDecoderBlock& block = model.blocks[b];
    const std::string prefix = "block" + std::to_string(b) + ".";
    const char* attn_names[3] = {"self_attn", "token_to_image", "image_to_token"};
    const AttentionBlock* attns[3] = {&block.self_attn, &block.token_to_image,
                                      &block.image_to_token};
    for (int a = 0; a < 3; ++a) {
      const std::string ap = prefix + attn_names[a] + ".";
      frozen(ap + "wq", attns[a]->wq);
      frozen(ap + "wk", attns[a]->wk);
      frozen(ap + "wv", attns[a]->wv);
      frozen(ap + "wo", attns[a]->wo);
      if (attns[a]->lora_q) {
        weight(ap + "lora_q.down", attns[a]->lora_q->down);
        weight(ap + "lora_q.up", attns[a]->lora_q->up);
      }
      if (attns[a]->lora_v) {
        weight(ap + "lora_v.down", attns[a]->lora_v->down);
        weight(ap + "lora_v.up", attns[a]->lora_v->up);
      }
    }
    frozen(prefix + "mlp_w1", block.mlp_w1);
    frozen(prefix + "mlp_w2", block.mlp_w2);
  }
  weight("head.upsampler", model.head.upsampler);
  weight("head.w1", model.head.w1);
  weight("head.b1", model.head.b1);
  weight("head.w2", model.head.w2);
  weight("head.b2", model.head.b2);
  weight("head.out_bias", model.head.out_bias);
  part.prompt.push_back({"prompt.tokens", model.prompt.tokens, ParamGroup::prompt});
  return part;
}

// Deep copy with fresh parameter leaves; used for per-seed clones and
// checkpoint snapshots.
inline SegModel clone_model(const SegModel& model) {
  SegModel out;
  out.config = model.config;
  out.encoder.patch_size = model.encoder.patch_size;
  out.encoder.seed = model.encoder.seed;
  out.encoder.embed = model.encoder.embed.clone();
  out.encoder.positional = model.encoder.positional.clone();
  auto clone_attn = [](const AttentionBlock& a) {
    AttentionBlock c;
    c.wq = a.wq.clone();
    c.wk = a.wk.clone();
    c.wv = a.wv.clone();
    c.wo = a.wo.clone();
    if (a.lora_q) c.lora_q = LoraAdapter{a.lora_q->down.clone(), a.lora_q->up.clone()};
    if (a.lora_v) c.lora_v = LoraAdapter{a.lora_v->down.clone(), a.lora_v->up.clone()};
    return c;
  };
  for (const TwoWayDecoderBlock& b : model.blocks) {
    TwoWayDecoderBlock c;
    c.self_attn = clone_attn(b.self_attn);
    c.token_to_image = clone_attn(b.token_to_image);
    c.image_to_token = clone_attn(b.image_to_token);
    c.mlp_w1 = b.mlp_w1.clone();
    c.mlp_w2 = b.mlp_w2.clone();
    out.blocks.push_back(std::move(c));
  }
  out.prompt.tokens = model.prompt.tokens.clone();
  out.head.upsampler = model.head.upsampler.clone();
  out.head.w1 = model.head.w1.clone();
  out.head.b1 = model.head.b1.clone();
  out.head.w2 = model.head.w2.clone();
  out.head.b2 = model.head.b2.clone();
  out.head.out_bias = model.head.out_bias.clone();
  return out;
}

}  // namespace blofin

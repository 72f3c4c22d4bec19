#pragma once

// Asymmetric ViT encoder-decoder for masked reconstruction, plus the
// encoder + MLP head classifier used for transfer.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dmim/image.hpp"
#include "dmim/patching.hpp"
#include "dmim/tensor.hpp"

namespace dmim {

struct ViTConfig {
  int image_size = 32;
  int patch_size = 8;
  int encoder_dim = 64;
  int encoder_depth = 2;
  int encoder_heads = 4;
  int mlp_ratio = 4;
  int decoder_dim = 32;
  int decoder_depth = 1;
  int decoder_heads = 2;

  void validate() const;
  PatchGrid grid() const { return PatchGrid::of(image_size, image_size, patch_size); }
  std::size_t num_patches() const { return grid().count(); }
  std::size_t patch_dim() const { return grid().patch_dim(); }
  // Transformer layers seen by layer-wise lr decay: embed + blocks, head last.
  int num_layers() const { return encoder_depth + 1; }

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct Norm {
  Tensor gain;
  Tensor bias;
};

struct Block {
  Norm norm1;
  Linear qkv;
  Linear proj;
  Norm norm2;
  Linear fc1;
  Linear fc2;
};

enum class ParamRole { kEncoder, kDecoder, kHead };

struct NamedParam {
  std::string name;
  Tensor tensor;
  ParamRole role;
  // Depth index for layer-wise lr decay (0 = patch embed, num_layers = head).
  int layer = 0;
  // False for biases, norm parameters and the mask token.
  bool decay = true;
};

struct Weights {
  ViTConfig config;
  Linear patch_embed;
  std::vector<Block> encoder;
  Norm encoder_norm;
  Linear decoder_embed;
  Tensor mask_token;  // [decoder_dim]
  std::vector<Block> decoder;
  Norm decoder_norm;
  Linear decoder_pred;
  Linear head_hidden;
  Linear head_out;

  // Fixed sin-cos tables; derived from config, not learned, not saved.
  Tensor encoder_pos;
  Tensor decoder_pos;

  std::vector<NamedParam> parameters() const;
  std::vector<NamedParam> parameters(ParamRole role) const;
  std::size_t parameter_count() const;
  Weights clone() const;
  void set_requires_grad(bool on);
  void zero_grad();
};

// Truncated-normal(0.02, cut at 2 std) projections and mask token; zero
// biases; unit norm gains. Bit-identical per seed.
Weights init_weights(const ViTConfig& cfg, std::uint64_t seed);
// Re-initializes only the classifier head.
void init_head(Weights& w, std::uint64_t seed);
void attach_position_tables(Weights& w);

// Batched forward passes. patches: [B, N, p*p]; every mask must hide the
// same number of patches.
Tensor encode(Graph& g, const Weights& w, const Tensor& patches, std::span<const PatchMask> masks);
Tensor decode(Graph& g, const Weights& w, const Tensor& latents, std::span<const PatchMask> masks);
// Mean-pooled encoder features over all patches, [B, encoder_dim].
Tensor pooled_features(Graph& g, const Weights& w, const Tensor& patches);
// Head applied to pooled features, [B].
Tensor head_logits(Graph& g, const Weights& w, const Tensor& features);
Tensor classify_logits(Graph& g, const Weights& w, const Tensor& patches);

// Single-sample conveniences.
Tensor encode_visible(Graph& g, const Weights& w, const Tensor& patches, const PatchMask& mask);
Tensor decode_full(Graph& g, const Weights& w, const Tensor& latents, const PatchMask& mask);
// Probability of class 1.
double classify(const Image& img_degraded, const Weights& w);

// Stacks per-image patch tensors into [B, N, p*p].
Tensor stack_patches(std::span<const Image> images, int patch);

}  // namespace dmim

#include "dmim/model.hpp"

#include <array>
#include <cmath>

namespace dmim {

void ViTConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("vit config: " + m); };
  if (image_size <= 0 || patch_size <= 0) fail("image and patch size must be positive");
  if (image_size % patch_size != 0) fail("patch size must divide image size");
  if (encoder_dim <= 0 || decoder_dim <= 0) fail("dims must be positive");
  if (encoder_depth < 0 || decoder_depth < 0) fail("depths must be >= 0");
  if (encoder_heads <= 0 || decoder_heads <= 0) fail("head counts must be positive");
  if (encoder_dim % encoder_heads != 0) fail("encoder dim must be divisible by encoder heads");
  if (decoder_dim % decoder_heads != 0) fail("decoder dim must be divisible by decoder heads");
  if (encoder_dim % 4 != 0 || decoder_dim % 4 != 0) fail("dims must be divisible by 4 for sin-cos embeddings");
  if (mlp_ratio <= 0) fail("mlp ratio must be positive");
}

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor trunc_normal(Shape shape, double std = 0.02) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
      double z;
      do {
        z = dist(rng_);
      } while (std::abs(z) > 2.0);
      x = z * std;
    }
    return Tensor(std::move(shape), std::move(v), true);
  }

  static Tensor filled(Shape shape, double value) { return Tensor(std::move(shape), value, true); }

  Linear linear(int in, int out) {
    const auto i = static_cast<std::size_t>(in);
    const auto o = static_cast<std::size_t>(out);
    return Linear{trunc_normal({i, o}), filled({o}, 0.0)};
  }

  static Norm norm(int dim) {
    const auto d = static_cast<std::size_t>(dim);
    return Norm{filled({d}, 1.0), filled({d}, 0.0)};
  }

  Block block(int dim, int mlp_ratio) {
    Block b;
    b.norm1 = norm(dim);
    b.qkv = linear(dim, 3 * dim);
    b.proj = linear(dim, dim);
    b.norm2 = norm(dim);
    b.fc1 = linear(dim, dim * mlp_ratio);
    b.fc2 = linear(dim * mlp_ratio, dim);
    return b;
  }

 private:
  Rng rng_;
};

void push_linear(std::vector<NamedParam>& out, const std::string& name, const Linear& l, ParamRole role, int layer) {
  out.push_back({name + ".weight", l.weight, role, layer, true});
  out.push_back({name + ".bias", l.bias, role, layer, false});
}

void push_norm(std::vector<NamedParam>& out, const std::string& name, const Norm& n, ParamRole role, int layer) {
  out.push_back({name + ".gain", n.gain, role, layer, false});
  out.push_back({name + ".bias", n.bias, role, layer, false});
}

void push_block(std::vector<NamedParam>& out, const std::string& name, const Block& b, ParamRole role, int layer) {
  push_norm(out, name + ".norm1", b.norm1, role, layer);
  push_linear(out, name + ".attn.qkv", b.qkv, role, layer);
  push_linear(out, name + ".attn.proj", b.proj, role, layer);
  push_norm(out, name + ".norm2", b.norm2, role, layer);
  push_linear(out, name + ".mlp.fc1", b.fc1, role, layer);
  push_linear(out, name + ".mlp.fc2", b.fc2, role, layer);
}

Linear clone_linear(const Linear& l) { return {l.weight.clone(), l.bias.clone()}; }
Norm clone_norm(const Norm& n) { return {n.gain.clone(), n.bias.clone()}; }
Block clone_block(const Block& b) {
  return {clone_norm(b.norm1), clone_linear(b.qkv), clone_linear(b.proj),
          clone_norm(b.norm2), clone_linear(b.fc1), clone_linear(b.fc2)};
}

Tensor linear(Graph& g, const Tensor& x, const Linear& l) { return g.add(g.matmul(x, l.weight), l.bias); }

// Multi-head self-attention over x: [B, T, D].
Tensor attention(Graph& g, const Tensor& x, const Block& b, int heads) {
  const std::size_t d = x.dim(2);
  const std::size_t hd = d / static_cast<std::size_t>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor qkv = linear(g, x, b.qkv);
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
    Tensor q = g.slice_last(qkv, h * hd, hd);
    Tensor k = g.slice_last(qkv, d + h * hd, hd);
    Tensor v = g.slice_last(qkv, 2 * d + h * hd, hd);
    Tensor scores = g.scale(g.matmul(q, g.transpose(k)), scale);
    outs.push_back(g.matmul(g.softmax_lastdim(scores), v));
  }
  Tensor merged = heads == 1 ? outs[0] : g.concat(outs, 2);
  return linear(g, merged, b.proj);
}

Tensor block_forward(Graph& g, const Tensor& x, const Block& b, int heads) {
  Tensor h = g.add(x, attention(g, g.layer_norm(x, b.norm1.gain, b.norm1.bias), b, heads));
  Tensor m = linear(g, g.gelu(linear(g, g.layer_norm(h, b.norm2.gain, b.norm2.bias), b.fc1)), b.fc2);
  return g.add(h, m);
}

void check_patches(const Weights& w, const Tensor& patches, std::size_t batch) {
  const Shape expect{batch, w.config.num_patches(), w.config.patch_dim()};
  if (patches.shape() != expect) throw ShapeError("encode", patches.shape(), expect);
}

// Runs the encoder over the selected tokens of each sample.
Tensor encode_tokens(Graph& g, const Weights& w, const Tensor& patches,
                     const std::vector<std::vector<std::size_t>>& tokens) {
  const std::size_t batch = tokens.size();
  const std::size_t n = w.config.num_patches();
  const std::size_t v = tokens.front().size();
  const auto e = static_cast<std::size_t>(w.config.encoder_dim);
  check_patches(w, patches, batch);

  Tensor flat = g.reshape(patches, {batch * n, w.config.patch_dim()});
  std::vector<std::size_t> rows;
  std::vector<std::size_t> pos_rows;
  rows.reserve(batch * v);
  bool all_tokens = true;
  for (std::size_t b = 0; b < batch; ++b) {
    if (tokens[b].size() != v) throw ShapeError("encode", "samples in a batch must keep the same number of visible patches");
    for (std::size_t j = 0; j < v; ++j) {
      rows.push_back(b * n + tokens[b][j]);
      pos_rows.push_back(tokens[b][j]);
      all_tokens = all_tokens && tokens[b][j] == j;
    }
  }
  all_tokens = all_tokens && v == n;
  Tensor selected = all_tokens ? flat : g.gather_rows(flat, rows);
  Tensor x = g.add(g.matmul(selected, w.patch_embed.weight), w.patch_embed.bias);
  x = g.add(x, g.gather_rows(w.encoder_pos, pos_rows));
  x = g.reshape(x, {batch, v, e});
  for (const auto& blk : w.encoder) x = block_forward(g, x, blk, w.config.encoder_heads);
  return g.layer_norm(x, w.encoder_norm.gain, w.encoder_norm.bias);
}

std::vector<std::vector<std::size_t>> all_tokens(std::size_t batch, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return std::vector<std::vector<std::size_t>>(batch, idx);
}

}  // namespace

// ---------------------------------------------------------------------------
// Weights

std::vector<NamedParam> Weights::parameters() const {
  std::vector<NamedParam> out;
  const int head_layer = config.num_layers();
  push_linear(out, "encoder.patch_embed", patch_embed, ParamRole::kEncoder, 0);
  for (std::size_t i = 0; i < encoder.size(); ++i)
    push_block(out, "encoder.blocks." + std::to_string(i), encoder[i], ParamRole::kEncoder, static_cast<int>(i) + 1);
  push_norm(out, "encoder.norm", encoder_norm, ParamRole::kEncoder, head_layer);
  push_linear(out, "decoder.embed", decoder_embed, ParamRole::kDecoder, 0);
  out.push_back({"decoder.mask_token", mask_token, ParamRole::kDecoder, 0, false});
  for (std::size_t i = 0; i < decoder.size(); ++i)
    push_block(out, "decoder.blocks." + std::to_string(i), decoder[i], ParamRole::kDecoder, 0);
  push_norm(out, "decoder.norm", decoder_norm, ParamRole::kDecoder, 0);
  push_linear(out, "decoder.pred", decoder_pred, ParamRole::kDecoder, 0);
  push_linear(out, "head.hidden", head_hidden, ParamRole::kHead, head_layer);
  push_linear(out, "head.out", head_out, ParamRole::kHead, head_layer);
  return out;
}

std::vector<NamedParam> Weights::parameters(ParamRole role) const {
  std::vector<NamedParam> out;
  for (auto& p : parameters())
    if (p.role == role) out.push_back(std::move(p));
  return out;
}

std::size_t Weights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

Weights Weights::clone() const {
  Weights w;
  w.config = config;
  w.patch_embed = clone_linear(patch_embed);
  for (const auto& b : encoder) w.encoder.push_back(clone_block(b));
  w.encoder_norm = clone_norm(encoder_norm);
  w.decoder_embed = clone_linear(decoder_embed);
  w.mask_token = mask_token.clone();
  for (const auto& b : decoder) w.decoder.push_back(clone_block(b));
  w.decoder_norm = clone_norm(decoder_norm);
  w.decoder_pred = clone_linear(decoder_pred);
  w.head_hidden = clone_linear(head_hidden);
  w.head_out = clone_linear(head_out);
  w.encoder_pos = encoder_pos;
  w.decoder_pos = decoder_pos;
  return w;
}

void Weights::set_requires_grad(bool on) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(on);
}

void Weights::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

void attach_position_tables(Weights& w) {
  const PatchGrid grid = w.config.grid();
  w.encoder_pos = sincos_pos_embed(grid.rows, grid.cols, static_cast<std::size_t>(w.config.encoder_dim));
  w.decoder_pos = sincos_pos_embed(grid.rows, grid.cols, static_cast<std::size_t>(w.config.decoder_dim));
}

Weights init_weights(const ViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Initializer init(seed);
  Weights w;
  w.config = cfg;
  const int pd = static_cast<int>(cfg.patch_dim());
  w.patch_embed = init.linear(pd, cfg.encoder_dim);
  for (int i = 0; i < cfg.encoder_depth; ++i) w.encoder.push_back(init.block(cfg.encoder_dim, cfg.mlp_ratio));
  w.encoder_norm = Initializer::norm(cfg.encoder_dim);
  w.decoder_embed = init.linear(cfg.encoder_dim, cfg.decoder_dim);
  w.mask_token = init.trunc_normal({static_cast<std::size_t>(cfg.decoder_dim)});
  for (int i = 0; i < cfg.decoder_depth; ++i) w.decoder.push_back(init.block(cfg.decoder_dim, cfg.mlp_ratio));
  w.decoder_norm = Initializer::norm(cfg.decoder_dim);
  w.decoder_pred = init.linear(cfg.decoder_dim, pd);
  w.head_hidden = init.linear(cfg.encoder_dim, cfg.encoder_dim);
  w.head_out = init.linear(cfg.encoder_dim, 1);
  attach_position_tables(w);
  return w;
}

void init_head(Weights& w, std::uint64_t seed) {
  Initializer init(seed ^ 0x68656164ULL);
  w.head_hidden = init.linear(w.config.encoder_dim, w.config.encoder_dim);
  w.head_out = init.linear(w.config.encoder_dim, 1);
}

// ---------------------------------------------------------------------------
// Forward passes

Tensor encode(Graph& g, const Weights& w, const Tensor& patches, std::span<const PatchMask> masks) {
  if (masks.empty()) throw ShapeError("encode", "empty batch");
  std::vector<std::vector<std::size_t>> tokens;
  tokens.reserve(masks.size());
  for (const auto& m : masks) {
    if (m.count() != w.config.num_patches())
      throw ShapeError("encode", "mask covers " + std::to_string(m.count()) + " patches, model expects " +
                                     std::to_string(w.config.num_patches()));
    tokens.push_back(m.visible);
  }
  return encode_tokens(g, w, patches, tokens);
}

Tensor decode(Graph& g, const Weights& w, const Tensor& latents, std::span<const PatchMask> masks) {
  const std::size_t batch = masks.size();
  const std::size_t n = w.config.num_patches();
  const auto dd = static_cast<std::size_t>(w.config.decoder_dim);
  if (batch == 0 || latents.ndim() != 3 || latents.dim(0) != batch)
    throw ShapeError("decode", latents.shape(), Shape{batch, masks.empty() ? 0 : masks[0].visible.size(),
                                                      static_cast<std::size_t>(w.config.encoder_dim)});
  const std::size_t v = latents.dim(1);
  for (const auto& m : masks)
    if (m.visible.size() != v || m.count() != n)
      throw ShapeError("decode", "mask with " + std::to_string(m.visible.size()) + " visible of " +
                                     std::to_string(m.count()) + " does not match " + std::to_string(v) + " latents of " +
                                     std::to_string(n) + " patches");
  const std::size_t hidden = n - v;

  Tensor x = g.reshape(latents, {batch * v, latents.dim(2)});
  x = g.add(g.matmul(x, w.decoder_embed.weight), w.decoder_embed.bias);

  // Rows [0, B*V) hold visible tokens, rows [B*V, B*N) the mask tokens; the
  // restore index scatters both back into grid order.
  std::vector<std::size_t> restore(batch * n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < v; ++j) restore[b * n + masks[b].visible[j]] = b * v + j;
    for (std::size_t j = 0; j < hidden; ++j) restore[b * n + masks[b].masked[j]] = batch * v + b * hidden + j;
  }
  if (hidden > 0) {
    Tensor token = g.reshape(w.mask_token, {1, dd});
    std::vector<std::size_t> zeros(batch * hidden, 0);
    std::array<Tensor, 2> parts{x, g.gather_rows(token, zeros)};
    x = g.concat(parts, 0);
  }
  x = g.gather_rows(x, restore);
  std::vector<std::size_t> pos_rows(batch * n);
  for (std::size_t i = 0; i < pos_rows.size(); ++i) pos_rows[i] = i % n;
  x = g.add(x, g.gather_rows(w.decoder_pos, pos_rows));
  x = g.reshape(x, {batch, n, dd});
  for (const auto& blk : w.decoder) x = block_forward(g, x, blk, w.config.decoder_heads);
  x = g.layer_norm(x, w.decoder_norm.gain, w.decoder_norm.bias);
  return linear(g, x, w.decoder_pred);
}

Tensor pooled_features(Graph& g, const Weights& w, const Tensor& patches) {
  if (patches.ndim() != 3) throw ShapeError("pooled_features", patches.shape(), Shape{0, w.config.num_patches(), w.config.patch_dim()});
  Tensor tokens = encode_tokens(g, w, patches, all_tokens(patches.dim(0), w.config.num_patches()));
  return g.mean_axis(tokens, 1);
}

Tensor head_logits(Graph& g, const Weights& w, const Tensor& features) {
  const auto e = static_cast<std::size_t>(w.config.encoder_dim);
  if (features.ndim() != 2 || features.dim(1) != e) throw ShapeError("head", features.shape(), Shape{0, e});
  Tensor h = g.gelu(linear(g, features, w.head_hidden));
  Tensor logits = linear(g, h, w.head_out);
  return g.reshape(logits, {features.dim(0)});
}

Tensor classify_logits(Graph& g, const Weights& w, const Tensor& patches) {
  return head_logits(g, w, pooled_features(g, w, patches));
}

Tensor encode_visible(Graph& g, const Weights& w, const Tensor& patches, const PatchMask& mask) {
  Tensor batched = g.reshape(patches, {1, patches.dim(0), patches.dim(1)});
  Tensor out = encode(g, w, batched, std::span<const PatchMask>(&mask, 1));
  return g.reshape(out, {out.dim(1), out.dim(2)});
}

Tensor decode_full(Graph& g, const Weights& w, const Tensor& latents, const PatchMask& mask) {
  Tensor batched = g.reshape(latents, {1, latents.dim(0), latents.dim(1)});
  Tensor out = decode(g, w, batched, std::span<const PatchMask>(&mask, 1));
  return g.reshape(out, {out.dim(1), out.dim(2)});
}

double classify(const Image& img_degraded, const Weights& w) {
  if (img_degraded.height != w.config.image_size || img_degraded.width != w.config.image_size)
    throw ShapeError("classify", Shape{static_cast<std::size_t>(img_degraded.height), static_cast<std::size_t>(img_degraded.width)},
                     Shape{static_cast<std::size_t>(w.config.image_size), static_cast<std::size_t>(w.config.image_size)});
  Graph g;
  return g.sigmoid(classify_logits(g, w, stack_patches(std::span<const Image>(&img_degraded, 1), w.config.patch_size))).item();
}

Tensor stack_patches(std::span<const Image> images, int patch) {
  if (images.empty()) throw ShapeError("stack_patches", "empty batch");
  std::vector<double> all;
  Shape one;
  for (const auto& img : images) {
    Tensor t = patchify(img, patch);
    if (one.empty()) one = t.shape();
    else if (t.shape() != one) throw ShapeError("stack_patches", one, t.shape());
    all.insert(all.end(), t.data().begin(), t.data().end());
  }
  return Tensor(Shape{images.size(), one[0], one[1]}, std::move(all));
}

}  // namespace dmim

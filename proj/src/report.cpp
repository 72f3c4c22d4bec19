#include "dmim/report.hpp"

#include <cstdio>
#include <fstream>

#include "dmim/config.hpp"
#include "dmim/patching.hpp"
#include "dmim/train.hpp"

namespace dmim {

Image reconstruction_grid(const Image& original, const Image& degraded, const Image& masked, const Image& recon) {
  const Image* panels[] = {&original, &degraded, &masked, &recon};
  for (const Image* p : panels)
    if (p->height != original.height || p->width != original.width) throw DataError("reconstruction_grid: panel sizes differ");
  Image grid(original.height, 4 * original.width);
  for (int k = 0; k < 4; ++k)
    for (int r = 0; r < original.height; ++r)
      for (int c = 0; c < original.width; ++c) grid.at(r, k * original.width + c) = panels[k]->at(r, c);
  return grid;
}

Image apply_mask(const Image& img, const PatchMask& mask, int patch) {
  const PatchGrid grid = PatchGrid::of(img.height, img.width, patch);
  Image out = img;
  for (std::size_t idx : mask.masked) {
    const int r0 = static_cast<int>(idx) / grid.cols * patch;
    const int c0 = static_cast<int>(idx) % grid.cols * patch;
    for (int r = r0; r < r0 + patch; ++r)
      for (int c = c0; c < c0 + patch; ++c) out.at(r, c) = 0.0;
  }
  return out;
}

namespace {

Image reconstruct_one(const Weights& w, const Image& degraded, const PatchMask& mask) {
  Graph g;
  const std::vector<Image> inputs{degraded};
  const std::vector<PatchMask> masks{mask};
  Tensor patches = stack_patches(inputs, w.config.patch_size);
  Tensor out = decode(g, w, encode(g, w, patches, masks), masks);
  return unpatchify(out.data(), w.config.grid());
}

}  // namespace

ReconstructionReport reconstruct_report(const Checkpoint& ckpt, const Dataset& images, const std::filesystem::path& out_dir,
                                        std::uint64_t seed) {
  if (images.items.empty()) throw DataError("reconstruct_report: no images");
  Weights w = ckpt.weights;
  const auto params = w.parameters();
  std::vector<bool> saved;
  for (const auto& p : params) saved.push_back(p.tensor.requires_grad());
  for (const auto& p : params) Tensor(p.tensor).set_requires_grad(false);
  struct Restore {
    const std::vector<NamedParam>& params;
    const std::vector<bool>& saved;
    ~Restore() {
      for (std::size_t i = 0; i < params.size(); ++i) Tensor(params[i].tensor).set_requires_grad(saved[i]);
    }
  } restore{params, saved};

  const int side = w.config.image_size;
  const std::size_t n = w.config.num_patches();
  const bool write = !out_dir.empty();
  std::ofstream jsonl;
  if (write) {
    std::filesystem::create_directories(out_dir);
    jsonl.open(out_dir / "report.jsonl", std::ios::trunc);
    if (!jsonl) throw IoError("cannot write '" + (out_dir / "report.jsonl").string() + "'");
  }

  ReconstructionReport report;
  for (std::size_t i = 0; i < images.items.size(); ++i) {
    const Item& item = images.items[i];
    Rng rng(seed * 0x9e3779b97f4a7c15ULL + i + 1);
    const Image x = item.image.height == side && item.image.width == side ? item.image : resize_bilinear(item.image, side, side);
    const Image xb = apply(ckpt.degrade, x, rng);
    const PatchMask mask = random_mask(n, ckpt.mask_ratio, rng);
    const Image recon_masked = reconstruct_one(w, xb, mask);
    const Image recon_full = reconstruct_one(w, xb, full_mask(n));

    ReconstructionRow row{item.source, mse(recon_masked, x), mse(recon_full, x), mse(xb, x)};
    report.mean_masked += row.mse_masked;
    report.mean_full += row.mse_full;
    report.mean_degraded += row.mse_degraded;
    if (write) {
      char name[32];
      std::snprintf(name, sizeof(name), "grid_%05zu.png", i);
      save_image(reconstruction_grid(x, xb, apply_mask(xb, mask, w.config.patch_size), recon_masked), out_dir / name);
      jsonl << Json{{"image", name},
                    {"source", row.source},
                    {"mse_masked", row.mse_masked},
                    {"mse_full", row.mse_full},
                    {"mse_degraded", row.mse_degraded}}
                   .dump()
            << '\n';
    }
    report.rows.push_back(std::move(row));
  }
  const auto count = static_cast<double>(report.rows.size());
  report.mean_masked /= count;
  report.mean_full /= count;
  report.mean_degraded /= count;
  if (write)
    jsonl << Json{{"mean", {{"mse_masked", report.mean_masked}, {"mse_full", report.mean_full}, {"mse_degraded", report.mean_degraded}}}}
                 .dump()
          << '\n';
  return report;
}

}  // namespace dmim

#pragma once

// Side-by-side reconstruction grids and per-image reconstruction error.

#include <filesystem>
#include <string>
#include <vector>

#include "dmim/checkpoint.hpp"
#include "dmim/data.hpp"

namespace dmim {

struct ReconstructionRow {
  std::string source;
  // Reconstruction from the masked input at the checkpoint's mask ratio.
  double mse_masked = 0.0;
  // Reconstruction with every patch visible.
  double mse_full = 0.0;
  // Degraded input against the original.
  double mse_degraded = 0.0;
};

struct ReconstructionReport {
  std::vector<ReconstructionRow> rows;
  double mean_masked = 0.0;
  double mean_full = 0.0;
  double mean_degraded = 0.0;
};

// original | degraded | masked | reconstruction, left to right. Masked
// patches are drawn black.
Image reconstruction_grid(const Image& original, const Image& degraded, const Image& masked, const Image& recon);

// Blacks out the masked patches of img.
Image apply_mask(const Image& img, const PatchMask& mask, int patch);

// Degradation and masking draw from a per-image stream derived from seed.
// When out_dir is empty nothing is written; otherwise it receives one
// grid_NNNNN.png per image and report.jsonl.
ReconstructionReport reconstruct_report(const Checkpoint& ckpt, const Dataset& images, const std::filesystem::path& out_dir,
                                        std::uint64_t seed = 0);

}  // namespace dmim

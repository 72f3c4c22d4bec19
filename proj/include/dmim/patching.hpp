#pragma once

#include <cstddef>
#include <vector>

#include "dmim/degrade.hpp"
#include "dmim/image.hpp"
#include "dmim/tensor.hpp"

namespace dmim {

struct PatchGrid {
  int patch = 0;
  int rows = 0;
  int cols = 0;

  static PatchGrid of(int height, int width, int patch);
  std::size_t count() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  std::size_t patch_dim() const { return static_cast<std::size_t>(patch) * static_cast<std::size_t>(patch); }
};

// visible and masked are sorted and partition [0, N).
struct PatchMask {
  std::vector<std::size_t> visible;
  std::vector<std::size_t> masked;
  double ratio = 0.0;
  // Patch index order drawn for this sample; the first |masked| are hidden.
  std::vector<std::size_t> permutation;

  std::size_t count() const { return visible.size() + masked.size(); }
};

// Row i is the flattened i-th patch in row-major grid order. Shape [N, p*p].
Tensor patchify(const Image& img, int patch);
Image unpatchify(std::span<const double> patches, const PatchGrid& grid);

std::size_t masked_count(std::size_t n, double ratio);
PatchMask random_mask(std::size_t n, double ratio, Rng& rng);
// Every patch visible.
PatchMask full_mask(std::size_t n);

// Unbiased integer in [0, bound) by rejection on the raw 64-bit stream.
std::size_t uniform_index(Rng& rng, std::size_t bound);

// Fixed 2-D sine-cosine embedding: the first half of dim encodes the grid
// row, the second half the grid column. Shape [rows*cols, dim].
Tensor sincos_pos_embed(int grid_rows, int grid_cols, std::size_t dim);

}  // namespace dmim

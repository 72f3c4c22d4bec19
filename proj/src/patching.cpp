#include "dmim/patching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dmim {

PatchGrid PatchGrid::of(int height, int width, int patch) {
  if (patch <= 0 || height % patch != 0 || width % patch != 0)
    throw ShapeError("patchify", "patch size " + std::to_string(patch) + " does not divide " + std::to_string(height) +
                                     "x" + std::to_string(width));
  return PatchGrid{patch, height / patch, width / patch};
}

Tensor patchify(const Image& img, int patch) {
  const PatchGrid grid = PatchGrid::of(img.height, img.width, patch);
  const std::size_t pd = grid.patch_dim();
  std::vector<double> out(grid.count() * pd);
  for (int gr = 0; gr < grid.rows; ++gr)
    for (int gc = 0; gc < grid.cols; ++gc) {
      const std::size_t base = (static_cast<std::size_t>(gr) * static_cast<std::size_t>(grid.cols) + static_cast<std::size_t>(gc)) * pd;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          out[base + static_cast<std::size_t>(y * patch + x)] = img.at(gr * patch + y, gc * patch + x);
    }
  return Tensor(Shape{grid.count(), pd}, std::move(out));
}

Image unpatchify(std::span<const double> patches, const PatchGrid& grid) {
  const std::size_t pd = grid.patch_dim();
  if (patches.size() != grid.count() * pd)
    throw ShapeError("unpatchify", "expected " + std::to_string(grid.count() * pd) + " values, got " + std::to_string(patches.size()));
  Image img(grid.rows * grid.patch, grid.cols * grid.patch);
  for (int gr = 0; gr < grid.rows; ++gr)
    for (int gc = 0; gc < grid.cols; ++gc) {
      const std::size_t base = (static_cast<std::size_t>(gr) * static_cast<std::size_t>(grid.cols) + static_cast<std::size_t>(gc)) * pd;
      for (int y = 0; y < grid.patch; ++y)
        for (int x = 0; x < grid.patch; ++x)
          img.at(gr * grid.patch + y, gc * grid.patch + x) = patches[base + static_cast<std::size_t>(y * grid.patch + x)];
    }
  return img;
}

std::size_t masked_count(std::size_t n, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("mask ratio must lie in [0, 1)");
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
}

std::size_t uniform_index(Rng& rng, std::size_t bound) {
  const std::uint64_t b = bound;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % b;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return static_cast<std::size_t>(v % b);
}

PatchMask random_mask(std::size_t n, double ratio, Rng& rng) {
  const std::size_t m = masked_count(n, ratio);
  PatchMask mask;
  mask.ratio = ratio;
  mask.permutation.resize(n);
  std::iota(mask.permutation.begin(), mask.permutation.end(), std::size_t{0});
  // Fisher-Yates
  for (std::size_t i = n; i > 1; --i) std::swap(mask.permutation[i - 1], mask.permutation[uniform_index(rng, i)]);
  mask.masked.assign(mask.permutation.begin(), mask.permutation.begin() + static_cast<std::ptrdiff_t>(m));
  mask.visible.assign(mask.permutation.begin() + static_cast<std::ptrdiff_t>(m), mask.permutation.end());
  std::sort(mask.masked.begin(), mask.masked.end());
  std::sort(mask.visible.begin(), mask.visible.end());
  return mask;
}

PatchMask full_mask(std::size_t n) {
  PatchMask mask;
  mask.visible.resize(n);
  std::iota(mask.visible.begin(), mask.visible.end(), std::size_t{0});
  mask.permutation = mask.visible;
  return mask;
}

Tensor sincos_pos_embed(int grid_rows, int grid_cols, std::size_t dim) {
  if (dim == 0 || dim % 4 != 0) throw ShapeError("sincos_pos_embed", "dim " + std::to_string(dim) + " is not divisible by 4");
  const std::size_t quarter = dim / 4;
  const std::size_t n = static_cast<std::size_t>(grid_rows) * static_cast<std::size_t>(grid_cols);
  std::vector<double> out(n * dim);
  std::vector<double> omega(quarter);
  for (std::size_t i = 0; i < quarter; ++i)
    omega[i] = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
  for (int r = 0; r < grid_rows; ++r)
    for (int c = 0; c < grid_cols; ++c) {
      double* row = out.data() + (static_cast<std::size_t>(r) * static_cast<std::size_t>(grid_cols) + static_cast<std::size_t>(c)) * dim;
      for (std::size_t i = 0; i < quarter; ++i) {
        row[i] = std::sin(r * omega[i]);
        row[quarter + i] = std::cos(r * omega[i]);
        row[2 * quarter + i] = std::sin(c * omega[i]);
        row[3 * quarter + i] = std::cos(c * omega[i]);
      }
    }
  return Tensor(Shape{n, dim}, std::move(out));
}

}  // namespace dmim

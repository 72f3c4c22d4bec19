#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmim/degrade.hpp"
#include "dmim/image.hpp"

namespace dmim {

class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class DataError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// 8-bit grayscale PNG or PGM (P2/P5, maxval 255); pixels map to [0,1] by /255.
Image load_image(const std::filesystem::path& path);
// Clamps to [0,1] and rounds to the 1/255 grid. Format follows the extension.
void save_image(const Image& img, const std::filesystem::path& path);

struct Spot {
  double row = 0.0;
  double col = 0.0;
};

struct Item {
  Image image;
  int label = -1;  // -1 when unlabeled
  std::string source;
  std::vector<Spot> spots;  // planted spots, synthetic data only
};

enum class SplitTag { kAll, kTrain, kVal, kTest };

struct Dataset {
  std::vector<Item> items;
  SplitTag split = SplitTag::kAll;

  std::size_t size() const { return items.size(); }
  bool labeled() const;
  std::size_t count_label(int label) const;
};

struct SynthSpec {
  int count = 256;
  int image_side = 32;
  // Number of averaged speckle looks; 1 gives fully developed speckle.
  int speckle_looks = 2;
  // Gaussian width of the complex-noise filter, i.e. the speckle grain size.
  double speckle_grain = 0.7;
  double brightness = 0.5;
  int spot_count_min = 1;
  int spot_count_max = 3;
  double spot_intensity = 0.5;
  double spot_radius = 1.2;
  std::uint64_t seed = 0;
  // When false the labels are dropped; spots are still planted on every
  // second image.
  bool labeled = true;

  void validate() const;
};

// Smooth low-frequency background times multiplicative speckle; label-1
// images additionally carry Gaussian bright spots. Labels alternate 0,1,0,...
Dataset synth_speckle(const SynthSpec& spec);

struct SplitRatios {
  double train = 3.0;
  double val = 1.0;
  double test = 1.0;
};

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Stratified by label when labels exist; val and test sizes are floored and
// the remainder goes to train.
Splits split(const Dataset& data, const SplitRatios& ratios, std::uint64_t seed);

// Accepts root/{class0,class1}/*, a flat directory of images (unlabeled), or
// a manifest file with "relative/path [label]" per line.
Dataset load_dataset(const std::filesystem::path& root);
// Writes root/{class0,class1}/NNNNN.png, or root/NNNNN.png when unlabeled.
void save_dataset(const Dataset& data, const std::filesystem::path& root);

// Throws DataError when any image of `a` also occurs in `b` (by content hash).
void check_disjoint(const Dataset& a, const Dataset& b, const std::string& what);
// Same check against precomputed content hashes of the first set.
void check_disjoint(std::span<const std::uint64_t> hashes, const Dataset& b, const std::string& what);

// Square crop covering a uniformly drawn fraction of the area in
// [scale_lo, scale_hi], bilinearly resized to out_side x out_side.
Image random_resized_crop(const Image& img, Rng& rng, double scale_lo, double scale_hi, int out_side);
Image resize_bilinear(const Image& img, int out_h, int out_w);

}  // namespace dmim

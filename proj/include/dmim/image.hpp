#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace dmim {

// Single-channel image, row-major f64 pixels nominally in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0) : height(h), width(w), pixels(checked_size(h, w), fill) {}
  Image(int h, int w, std::vector<double> px) : height(h), width(w), pixels(std::move(px)) {
    if (pixels.size() != checked_size(h, w)) throw std::invalid_argument("image: pixel count does not match dims");
  }

  double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)]; }
  double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)]; }
  std::size_t size() const { return pixels.size(); }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  static std::size_t checked_size(int h, int w) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("image: dimensions must be positive");
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
};

// FNV-1a over the dims and the 8-bit quantized pixels; used for leakage checks.
std::uint64_t content_hash(const Image& img);

double image_mean(const Image& img);
double image_variance(const Image& img);
double mse(const Image& a, const Image& b);

}  // namespace dmim

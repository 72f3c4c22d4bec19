#pragma once

// Image degradation operators: the blurs used as the pretraining corruption,
// the blur-method ablation family, and additive noise for the denoising
// baseline.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dmim/image.hpp"

namespace dmim {

class DegradeError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Square odd-sided convolution kernel.
struct Kernel {
  int radius = 0;
  std::vector<double> weights;  // (2r+1)^2, row-major

  int side() const { return 2 * radius + 1; }
  double at(int du, int dv) const { return weights[static_cast<std::size_t>((du + radius) * side() + (dv + radius))]; }
};

namespace degrade {

struct Identity {};
struct Gaussian { double sigma = 1.1; };
struct Srad { int iterations = 40; double dt = 0.1; };
struct Mean { int k = 5; };
struct Median { int k = 5; };
struct Motion { int k = 5; double angle_deg = 0.0; };
struct Defocus { int radius = 5; };
struct Noise { double sigma = 0.1; };

}  // namespace degrade

struct DegradeSpec {
  std::variant<degrade::Identity, degrade::Gaussian, degrade::Srad, degrade::Mean, degrade::Median,
               degrade::Motion, degrade::Defocus, degrade::Noise>
      variant;

  std::string method() const;
  // Throws DegradeError when a parameter is out of range.
  void validate() const;

  friend bool operator==(const DegradeSpec& a, const DegradeSpec& b);
};

// Parses a method name plus "key=value" parameters (CLI form). Unset keys keep
// their defaults: sigma=1.1, N=40, dt=0.1, k=5, angle=0, radius=5, noise sigma=0.1.
DegradeSpec make_degrade_spec(const std::string& method, const std::vector<std::pair<std::string, double>>& params);

// Normalized Gaussian with radius ceil(3 sigma), or the given radius when
// radius_override >= 0.
Kernel gaussian_kernel(double sigma, int radius_override = -1);
Kernel mean_kernel(int k);
Kernel motion_kernel(int k, double angle_deg);
Kernel disk_kernel(int radius);

// Mirror index without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …).
int reflect_index(int i, int n);

Image convolve(const Image& img, const Kernel& kernel);
Image gaussian_blur(const Image& img, double sigma);
Image srad(const Image& img, int iterations, double dt);
Image mean_blur(const Image& img, int k);
Image median_blur(const Image& img, int k);
Image motion_blur(const Image& img, int k, double angle_deg = 0.0);
Image defocus_blur(const Image& img, int radius);
Image additive_noise(const Image& img, double sigma, Rng& rng);

Image apply(const DegradeSpec& spec, const Image& img, Rng& rng);

}  // namespace dmim

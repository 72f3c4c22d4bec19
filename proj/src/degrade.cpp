#include "dmim/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

namespace dmim {

// ---------------------------------------------------------------------------
// Image helpers

std::uint64_t content_hash(const Image& img) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  for (int v : {img.height, img.width})
    for (int s = 0; s < 32; s += 8) mix(static_cast<std::uint8_t>((v >> s) & 0xff));
  for (double p : img.pixels) mix(static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)));
  return h;
}

double image_mean(const Image& img) {
  double s = 0.0;
  for (double p : img.pixels) s += p;
  return s / static_cast<double>(img.size());
}

double image_variance(const Image& img) {
  const double mu = image_mean(img);
  double s = 0.0;
  for (double p : img.pixels) s += (p - mu) * (p - mu);
  return s / static_cast<double>(img.size());
}

double mse(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width) throw std::invalid_argument("mse: image dims differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
  return s / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// DegradeSpec

std::string DegradeSpec::method() const {
  struct Name {
    std::string operator()(const degrade::Identity&) const { return "identity"; }
    std::string operator()(const degrade::Gaussian&) const { return "gaussian"; }
    std::string operator()(const degrade::Srad&) const { return "srad"; }
    std::string operator()(const degrade::Mean&) const { return "mean"; }
    std::string operator()(const degrade::Median&) const { return "median"; }
    std::string operator()(const degrade::Motion&) const { return "motion"; }
    std::string operator()(const degrade::Defocus&) const { return "defocus"; }
    std::string operator()(const degrade::Noise&) const { return "noise"; }
  };
  return std::visit(Name{}, variant);
}

namespace {

void check_odd(int k, const char* what) {
  if (k < 1 || k % 2 == 0) throw DegradeError(std::string(what) + ": kernel size must be odd and >= 1, got " + std::to_string(k));
}

}  // namespace

void DegradeSpec::validate() const {
  std::visit(
      [](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, degrade::Gaussian>) {
          if (!(v.sigma > 0.0)) throw DegradeError("gaussian: sigma must be positive");
        } else if constexpr (std::is_same_v<T, degrade::Srad>) {
          if (v.iterations < 0) throw DegradeError("srad: iteration count must be >= 0");
          if (!(v.dt > 0.0 && v.dt <= 0.25)) throw DegradeError("srad: dt must lie in (0, 0.25]");
        } else if constexpr (std::is_same_v<T, degrade::Mean> || std::is_same_v<T, degrade::Median>) {
          check_odd(v.k, "mean/median");
        } else if constexpr (std::is_same_v<T, degrade::Motion>) {
          check_odd(v.k, "motion");
        } else if constexpr (std::is_same_v<T, degrade::Defocus>) {
          if (v.radius < 1) throw DegradeError("defocus: radius must be >= 1");
        } else if constexpr (std::is_same_v<T, degrade::Noise>) {
          if (!(v.sigma >= 0.0)) throw DegradeError("noise: sigma must be >= 0");
        }
      },
      variant);
}

bool operator==(const DegradeSpec& a, const DegradeSpec& b) {
  if (a.variant.index() != b.variant.index()) return false;
  return std::visit(
      [&b](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        const auto& y = std::get<T>(b.variant);
        if constexpr (std::is_same_v<T, degrade::Identity>) return true;
        else if constexpr (std::is_same_v<T, degrade::Gaussian> || std::is_same_v<T, degrade::Noise>) return x.sigma == y.sigma;
        else if constexpr (std::is_same_v<T, degrade::Srad>) return x.iterations == y.iterations && x.dt == y.dt;
        else if constexpr (std::is_same_v<T, degrade::Mean> || std::is_same_v<T, degrade::Median>) return x.k == y.k;
        else if constexpr (std::is_same_v<T, degrade::Motion>) return x.k == y.k && x.angle_deg == y.angle_deg;
        else return x.radius == y.radius;
      },
      a.variant);
}

DegradeSpec make_degrade_spec(const std::string& method, const std::vector<std::pair<std::string, double>>& params) {
  std::set<std::string> allowed;
  DegradeSpec spec;
  if (method == "identity") {
    spec.variant = degrade::Identity{};
  } else if (method == "gaussian") {
    spec.variant = degrade::Gaussian{};
    allowed = {"sigma"};
  } else if (method == "srad") {
    spec.variant = degrade::Srad{};
    allowed = {"N", "iterations", "dt"};
  } else if (method == "mean") {
    spec.variant = degrade::Mean{};
    allowed = {"k"};
  } else if (method == "median") {
    spec.variant = degrade::Median{};
    allowed = {"k"};
  } else if (method == "motion") {
    spec.variant = degrade::Motion{};
    allowed = {"k", "angle"};
  } else if (method == "defocus") {
    spec.variant = degrade::Defocus{};
    allowed = {"radius"};
  } else if (method == "noise") {
    spec.variant = degrade::Noise{};
    allowed = {"sigma"};
  } else {
    throw DegradeError("unknown degradation method '" + method + "'");
  }
  for (const auto& [key, value] : params) {
    if (!allowed.contains(key)) throw DegradeError("method '" + method + "' has no parameter '" + key + "'");
    auto as_int = [&](const std::string& k) {
      if (value != std::floor(value)) throw DegradeError(method + ": parameter '" + k + "' must be an integer");
      return static_cast<int>(value);
    };
    std::visit(
        [&](auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, degrade::Gaussian> || std::is_same_v<T, degrade::Noise>) {
            v.sigma = value;
          } else if constexpr (std::is_same_v<T, degrade::Srad>) {
            if (key == "dt") v.dt = value;
            else v.iterations = as_int(key);
          } else if constexpr (std::is_same_v<T, degrade::Mean> || std::is_same_v<T, degrade::Median>) {
            v.k = as_int(key);
          } else if constexpr (std::is_same_v<T, degrade::Motion>) {
            if (key == "k") v.k = as_int(key);
            else v.angle_deg = value;
          } else if constexpr (std::is_same_v<T, degrade::Defocus>) {
            v.radius = as_int(key);
          }
        },
        spec.variant);
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Kernels

Kernel gaussian_kernel(double sigma, int radius_override) {
  if (!(sigma > 0.0)) throw DegradeError("gaussian_kernel: sigma must be positive");
  Kernel k;
  k.radius = radius_override >= 0 ? radius_override : static_cast<int>(std::ceil(3.0 * sigma));
  const int side = k.side();
  k.weights.resize(static_cast<std::size_t>(side * side));
  double total = 0.0;
  for (int u = -k.radius; u <= k.radius; ++u)
    for (int v = -k.radius; v <= k.radius; ++v) {
      const double w = std::exp(-(u * u + v * v) / (2.0 * sigma * sigma));
      k.weights[static_cast<std::size_t>((u + k.radius) * side + (v + k.radius))] = w;
      total += w;
    }
  for (auto& w : k.weights) w /= total;
  return k;
}

Kernel mean_kernel(int k) {
  check_odd(k, "mean_kernel");
  Kernel out;
  out.radius = k / 2;
  out.weights.assign(static_cast<std::size_t>(k * k), 1.0 / static_cast<double>(k * k));
  return out;
}

Kernel motion_kernel(int k, double angle_deg) {
  check_odd(k, "motion_kernel");
  Kernel out;
  out.radius = k / 2;
  const int side = out.side();
  out.weights.assign(static_cast<std::size_t>(side * side), 0.0);
  const double theta = angle_deg * std::numbers::pi / 180.0;
  for (int t = -out.radius; t <= out.radius; ++t) {
    // Rows grow downward, so a positive angle tilts the line upward.
    const int du = static_cast<int>(std::lround(-t * std::sin(theta)));
    const int dv = static_cast<int>(std::lround(t * std::cos(theta)));
    out.weights[static_cast<std::size_t>((du + out.radius) * side + (dv + out.radius))] = 1.0;
  }
  double total = 0.0;
  for (double w : out.weights) total += w;
  for (auto& w : out.weights) w /= total;
  return out;
}

Kernel disk_kernel(int radius) {
  if (radius < 1) throw DegradeError("disk_kernel: radius must be >= 1");
  Kernel out;
  out.radius = radius;
  const int side = out.side();
  out.weights.assign(static_cast<std::size_t>(side * side), 0.0);
  double total = 0.0;
  for (int u = -radius; u <= radius; ++u)
    for (int v = -radius; v <= radius; ++v)
      if (u * u + v * v <= radius * radius) {
        out.weights[static_cast<std::size_t>((u + radius) * side + (v + radius))] = 1.0;
        total += 1.0;
      }
  for (auto& w : out.weights) w /= total;
  return out;
}

// ---------------------------------------------------------------------------
// Filters

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Kernels here sum to one, so filtering is written as a correction to the
// center pixel: a constant image then comes back bit for bit.
Image convolve(const Image& img, const Kernel& kernel) {
  Image out(img.height, img.width);
  const int r = kernel.radius;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double center = img.at(y, x);
      double acc = 0.0;
      for (int u = -r; u <= r; ++u) {
        const int yy = reflect_index(y - u, img.height);
        for (int v = -r; v <= r; ++v) acc += kernel.at(u, v) * (img.at(yy, reflect_index(x - v, img.width)) - center);
      }
      out.at(y, x) = center + acc;
    }
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (!(sigma > 0.0)) throw DegradeError("gaussian_blur: sigma must be positive");
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> g(static_cast<std::size_t>(2 * r + 1));
  double total = 0.0;
  for (int u = -r; u <= r; ++u) {
    g[static_cast<std::size_t>(u + r)] = std::exp(-(u * u) / (2.0 * sigma * sigma));
    total += g[static_cast<std::size_t>(u + r)];
  }
  for (auto& w : g) w /= total;

  Image rows(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double center = img.at(y, x);
      double acc = 0.0;
      for (int v = -r; v <= r; ++v) acc += g[static_cast<std::size_t>(v + r)] * (img.at(y, reflect_index(x - v, img.width)) - center);
      rows.at(y, x) = center + acc;
    }
  Image out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double center = rows.at(y, x);
      double acc = 0.0;
      for (int u = -r; u <= r; ++u) acc += g[static_cast<std::size_t>(u + r)] * (rows.at(reflect_index(y - u, img.height), x) - center);
      out.at(y, x) = center + acc;
    }
  return out;
}

Image srad(const Image& img, int iterations, double dt) {
  if (iterations < 0) throw DegradeError("srad: iteration count must be >= 0");
  if (!(dt > 0.0 && dt <= 0.25)) throw DegradeError("srad: dt must lie in (0, 0.25]");
  if (iterations == 0) return img;

  const int h = img.height;
  const int w = img.width;
  // The update divides by intensity, so lift the image off zero and undo the
  // shift at the end.
  const double lo = *std::min_element(img.pixels.begin(), img.pixels.end());
  const double shift = lo <= 0.0 ? 1e-6 - lo : 0.0;
  Image cur = img;
  for (auto& p : cur.pixels) p += shift;

  std::vector<double> dn(cur.size()), ds(cur.size()), dw(cur.size()), de(cur.size()), c(cur.size());
  auto idx = [w](int y, int x) { return static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x); };

  for (int it = 0; it < iterations; ++it) {
    const double mu = image_mean(cur);
    const double var = image_variance(cur);
    if (var == 0.0) break;  // constant image: zero gradient everywhere
    const double q0sq = var / (mu * mu);

    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double center = cur.at(y, x);
        const std::size_t i = idx(y, x);
        dn[i] = cur.at(std::max(y - 1, 0), x) - center;
        ds[i] = cur.at(std::min(y + 1, h - 1), x) - center;
        dw[i] = cur.at(y, std::max(x - 1, 0)) - center;
        de[i] = cur.at(y, std::min(x + 1, w - 1)) - center;
        const double g2 = (dn[i] * dn[i] + ds[i] * ds[i] + dw[i] * dw[i] + de[i] * de[i]) / (center * center);
        const double lap = (dn[i] + ds[i] + dw[i] + de[i]) / center;
        const double num = 0.5 * g2 - lap * lap / 16.0;
        const double den = (1.0 + 0.25 * lap) * (1.0 + 0.25 * lap);
        const double qsq = num / den;
        const double cval = 1.0 / (1.0 + (qsq - q0sq) / (q0sq * (1.0 + q0sq)));
        c[i] = std::clamp(cval, 0.0, 1.0);
      }

    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = idx(y, x);
        const double c_s = c[idx(std::min(y + 1, h - 1), x)];
        const double c_e = c[idx(y, std::min(x + 1, w - 1))];
        const double div = c[i] * dn[i] + c_s * ds[i] + c[i] * dw[i] + c_e * de[i];
        const double v = cur.pixels[i] + dt * div;
        if (!std::isfinite(v)) {
          std::ostringstream os;
          os << "srad: non-finite value at iteration " << it << " pixel (" << y << "," << x << ")";
          throw DegradeError(os.str());
        }
        cur.pixels[i] = v;
      }
  }
  if (shift != 0.0)
    for (auto& p : cur.pixels) p -= shift;
  return cur;
}

Image mean_blur(const Image& img, int k) { return convolve(img, mean_kernel(k)); }

Image median_blur(const Image& img, int k) {
  check_odd(k, "median_blur");
  const int r = k / 2;
  Image out(img.height, img.width);
  std::vector<double> window(static_cast<std::size_t>(k * k));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      std::size_t n = 0;
      for (int u = -r; u <= r; ++u)
        for (int v = -r; v <= r; ++v)
          window[n++] = img.at(reflect_index(y + u, img.height), reflect_index(x + v, img.width));
      auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
      std::nth_element(window.begin(), mid, window.end());
      out.at(y, x) = *mid;
    }
  return out;
}

Image motion_blur(const Image& img, int k, double angle_deg) { return convolve(img, motion_kernel(k, angle_deg)); }

Image defocus_blur(const Image& img, int radius) { return convolve(img, disk_kernel(radius)); }

Image additive_noise(const Image& img, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw DegradeError("additive_noise: sigma must be >= 0");
  if (sigma == 0.0) return img;
  std::normal_distribution<double> dist(0.0, sigma);
  Image out = img;
  for (auto& p : out.pixels) p += dist(rng);
  return out;
}

Image apply(const DegradeSpec& spec, const Image& img, Rng& rng) {
  spec.validate();
  return std::visit(
      [&](const auto& v) -> Image {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, degrade::Identity>) return img;
        else if constexpr (std::is_same_v<T, degrade::Gaussian>) return gaussian_blur(img, v.sigma);
        else if constexpr (std::is_same_v<T, degrade::Srad>) return srad(img, v.iterations, v.dt);
        else if constexpr (std::is_same_v<T, degrade::Mean>) return mean_blur(img, v.k);
        else if constexpr (std::is_same_v<T, degrade::Median>) return median_blur(img, v.k);
        else if constexpr (std::is_same_v<T, degrade::Motion>) return motion_blur(img, v.k, v.angle_deg);
        else if constexpr (std::is_same_v<T, degrade::Defocus>) return defocus_blur(img, v.radius);
        else return additive_noise(img, v.sigma, rng);
      },
      spec.variant);
}

}  // namespace dmim

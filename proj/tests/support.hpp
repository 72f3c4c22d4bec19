#pragma once

// Shared test helpers: finite-difference gradient checking and small
// independent reference implementations.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "dmim/degrade.hpp"
#include "dmim/model.hpp"
#include "dmim/patching.hpp"
#include "dmim/tensor.hpp"

namespace dmim::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

inline Image random_image(int h, int w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(h, w);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

struct GradReport {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor); the floor keeps coordinates whose true
// gradient is ~0 from dominating through round-off.
inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

using LossFn = std::function<Tensor(Graph&)>;

// Compares the analytic gradient of loss() with central differences for the
// given parameters. When `per_tensor` is set, only that many randomly chosen
// coordinates of each tensor are perturbed.
inline GradReport check_gradients(const std::vector<Tensor>& params, const LossFn& loss, double h = 1e-5,
                                  std::size_t per_tensor = std::numeric_limits<std::size_t>::max(), std::uint64_t seed = 1) {
  std::vector<Tensor> ps = params;
  for (auto& p : ps) p.zero_grad();
  {
    Graph g;
    g.backward(loss(g));
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : ps) analytic.emplace_back(p.grad().begin(), p.grad().end());

  std::mt19937_64 rng(seed);
  GradReport rep;
  for (std::size_t t = 0; t < ps.size(); ++t) {
    std::vector<std::size_t> coords(ps[t].numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (per_tensor < coords.size()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(per_tensor);
    }
    for (std::size_t i : coords) {
      const double orig = ps[t][i];
      ps[t][i] = orig + h;
      double up;
      {
        Graph g;
        up = loss(g).item();
      }
      ps[t][i] = orig - h;
      double down;
      {
        Graph g;
        down = loss(g).item();
      }
      ps[t][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      rep.max_rel = std::max(rep.max_rel, rel_err(analytic[t][i], numeric));
      ++rep.checked;
    }
  }
  for (auto& p : ps) p.zero_grad();
  return rep;
}

// Weighted sum with fixed random weights, so every output element carries a
// distinct upstream gradient.
inline Tensor weighted_sum(Graph& g, const Tensor& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(y.shape(), rng, -1.0, 1.0, false);
  return g.sum(g.mul(y, w));
}

// Straight-line single SRAD step written directly from the diffusion
// coefficient formula, with replicated borders. Intentionally shares no code
// with the library.
inline Image srad_step_reference(const Image& in, double dt) {
  const int h = in.height, w = in.width;
  double mean = 0.0;
  for (double p : in.pixels) mean += p;
  mean /= static_cast<double>(in.pixels.size());
  double var = 0.0;
  for (double p : in.pixels) var += (p - mean) * (p - mean);
  var /= static_cast<double>(in.pixels.size());
  const double q0sq = var / (mean * mean);

  auto px = [&](int r, int c) {
    r = std::clamp(r, 0, h - 1);
    c = std::clamp(c, 0, w - 1);
    return in.pixels[static_cast<std::size_t>(r * w + c)];
  };
  std::vector<double> coef(in.pixels.size());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double i0 = px(r, c);
      const double dn = px(r - 1, c) - i0;
      const double ds = px(r + 1, c) - i0;
      const double dw = px(r, c - 1) - i0;
      const double de = px(r, c + 1) - i0;
      const double g2 = (dn * dn + ds * ds + dw * dw + de * de) / (i0 * i0);
      const double lap = (dn + ds + dw + de) / i0;
      const double num = 0.5 * g2 - (1.0 / 16.0) * lap * lap;
      const double den = (1.0 + 0.25 * lap) * (1.0 + 0.25 * lap);
      const double qsq = num / den;
      double cval = 1.0 / (1.0 + (qsq - q0sq) / (q0sq * (1.0 + q0sq)));
      coef[static_cast<std::size_t>(r * w + c)] = std::clamp(cval, 0.0, 1.0);
    }
  auto cf = [&](int r, int c) {
    r = std::clamp(r, 0, h - 1);
    c = std::clamp(c, 0, w - 1);
    return coef[static_cast<std::size_t>(r * w + c)];
  };
  Image out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double i0 = px(r, c);
      const double div = cf(r + 1, c) * (px(r + 1, c) - i0) + cf(r, c) * (px(r - 1, c) - i0) + cf(r, c + 1) * (px(r, c + 1) - i0) +
                         cf(r, c) * (px(r, c - 1) - i0);
      out.pixels[static_cast<std::size_t>(r * w + c)] = i0 + dt * div;
    }
  return out;
}

// Direct 2-D convolution with a sampled, renormalized Gaussian and
// mirror-without-edge-repeat borders.
inline Image gaussian_direct(const Image& in, double sigma) {
  const int rad = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k;
  double total = 0.0;
  for (int u = -rad; u <= rad; ++u)
    for (int v = -rad; v <= rad; ++v) {
      const double val = std::exp(-(u * u + v * v) / (2.0 * sigma * sigma));
      k.push_back(val);
      total += val;
    }
  for (auto& x : k) x /= total;
  auto mirror = [](int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
  };
  Image out(in.height, in.width);
  const int side = 2 * rad + 1;
  for (int r = 0; r < in.height; ++r)
    for (int c = 0; c < in.width; ++c) {
      double acc = 0.0;
      for (int u = -rad; u <= rad; ++u)
        for (int v = -rad; v <= rad; ++v)
          acc += k[static_cast<std::size_t>((u + rad) * side + (v + rad))] *
                 in.pixels[static_cast<std::size_t>(mirror(r - u, in.height) * in.width + mirror(c - v, in.width))];
      out.pixels[static_cast<std::size_t>(r * in.width + c)] = acc;
    }
  return out;
}

// Exhaustive pairwise AUROC: positives outranking negatives, ties counted half.
inline double auroc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Plain autoencoder error: every patch visible, one image at a time, mean
// squared pixel error against the target image.
inline double autoencoder_mse(const Weights& w, const std::vector<Image>& inputs, const std::vector<Image>& targets) {
  const PatchGrid grid = PatchGrid::of(w.config.image_size, w.config.image_size, w.config.patch_size);
  const PatchMask all = full_mask(grid.count());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Graph g;
    const Tensor out = decode_full(g, w, encode_visible(g, w, patchify(inputs[i], w.config.patch_size), all), all);
    const Image recon = unpatchify(out.data(), grid);
    for (std::size_t k = 0; k < recon.size(); ++k) {
      const double d = recon.pixels[k] - targets[i].pixels[k];
      total += d * d;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace dmim::testing

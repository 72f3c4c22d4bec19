#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmim/tensor.hpp"

namespace dmim {

class OptimError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One optimized tensor with its per-parameter multipliers. Gradients are read
// from param.grad(); a parameter without a grad buffer is treated as having a
// zero gradient.
struct ParamSlot {
  std::string name;
  Tensor param;
  double lr_scale = 1.0;
  double weight_decay = 0.0;
};

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

// Decoupled weight decay is applied first (w -= lr*wd*w), then the
// bias-corrected adaptive step.
void adamw_step(std::span<ParamSlot> params, AdamWState& state, double lr, const AdamWHyper& hyper);

struct LarsState {
  std::vector<std::vector<double>> velocity;
  std::uint64_t step = 0;
};

// ||w|| / (||g|| + wd*||w|| + eps), or 1 when either norm is zero.
double lars_trust_ratio(double weight_norm, double grad_norm, double weight_decay, double eps = 1e-9);

// Heavy-ball momentum on the trust-scaled direction:
//   u = trust * (g + wd*w);  v = momentum*v + u;  w -= lr*lr_scale*v
void lars_step(std::span<ParamSlot> params, LarsState& state, double lr, double momentum, double eps = 1e-9);

struct ScheduleSpec {
  double base_lr = 1.5e-4;
  int warmup_epochs = 40;
  int total_epochs = 400;
  double min_lr = 0.0;
  int steps_per_epoch = 1;

  void validate() const;
  std::int64_t total_steps() const { return static_cast<std::int64_t>(total_epochs) * steps_per_epoch; }
  std::int64_t warmup_steps() const { return static_cast<std::int64_t>(warmup_epochs) * steps_per_epoch; }
};

// Linear warmup from 0 to base_lr, then half-cosine down to min_lr. Steps
// past the end return min_lr.
double cosine_warmup_lr(const ScheduleSpec& schedule, std::int64_t step);

// decay^(num_layers - layer_index): the head (index num_layers) gets 1.
double layerwise_lr_scale(int layer_index, int num_layers, double decay);

// Linear scaling rule lr = base_lr * batch / 256.
double scaled_lr(double base_lr, int batch_size);

}  // namespace dmim

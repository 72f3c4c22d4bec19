#include "dmim/optim.hpp"

#include <cmath>
#include <numbers>

namespace dmim {

namespace {

void ensure_buffers(std::vector<std::vector<double>>& bufs, std::span<ParamSlot> params) {
  if (bufs.empty()) {
    for (const auto& p : params) bufs.emplace_back(p.param.numel(), 0.0);
    return;
  }
  if (bufs.size() != params.size()) throw OptimError("optimizer state tracks a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (bufs[i].size() != params[i].param.numel())
      throw OptimError("optimizer state shape mismatch for '" + params[i].name + "'");
}

void check_finite(const ParamSlot& slot) {
  if (!slot.param.has_grad()) return;
  for (double g : slot.param.grad())
    if (!std::isfinite(g)) throw OptimError("non-finite gradient in parameter '" + slot.name + "'");
}

double grad_at(const ParamSlot& slot, std::size_t i) { return slot.param.has_grad() ? slot.param.grad()[i] : 0.0; }

}  // namespace

void adamw_step(std::span<ParamSlot> params, AdamWState& state, double lr, const AdamWHyper& hyper) {
  for (const auto& p : params) check_finite(p);
  ensure_buffers(state.m, params);
  ensure_buffers(state.v, params);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hyper.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& slot = params[pi];
    auto w = slot.param.data();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    const double step_lr = lr * slot.lr_scale;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = grad_at(slot, i);
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
      if (step_lr == 0.0) continue;
      w[i] -= step_lr * slot.weight_decay * w[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= step_lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
}

double lars_trust_ratio(double weight_norm, double grad_norm, double weight_decay, double eps) {
  if (weight_norm == 0.0 || grad_norm == 0.0) return 1.0;
  return weight_norm / (grad_norm + weight_decay * weight_norm + eps);
}

void lars_step(std::span<ParamSlot> params, LarsState& state, double lr, double momentum, double eps) {
  for (const auto& p : params) check_finite(p);
  ensure_buffers(state.velocity, params);
  ++state.step;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& slot = params[pi];
    auto w = slot.param.data();
    auto& vel = state.velocity[pi];
    double wn = 0.0;
    double gn = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      wn += w[i] * w[i];
      const double g = grad_at(slot, i);
      gn += g * g;
    }
    const double trust = lars_trust_ratio(std::sqrt(wn), std::sqrt(gn), slot.weight_decay, eps);
    const double step_lr = lr * slot.lr_scale;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double u = trust * (grad_at(slot, i) + slot.weight_decay * w[i]);
      vel[i] = momentum * vel[i] + u;
    }
    if (step_lr == 0.0) continue;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= step_lr * vel[i];
  }
}

void ScheduleSpec::validate() const {
  if (!(base_lr >= 0.0)) throw OptimError("schedule: base_lr must be >= 0");
  if (warmup_epochs < 0 || total_epochs <= 0) throw OptimError("schedule: epochs must be positive");
  if (warmup_epochs >= total_epochs) throw OptimError("schedule: warmup must be shorter than the run");
  if (steps_per_epoch <= 0) throw OptimError("schedule: steps_per_epoch must be positive");
  if (min_lr < 0.0 || min_lr > base_lr) throw OptimError("schedule: min_lr must lie in [0, base_lr]");
}

double cosine_warmup_lr(const ScheduleSpec& s, std::int64_t step) {
  s.validate();
  if (step < 0) throw OptimError("schedule: negative step");
  const std::int64_t warm = s.warmup_steps();
  const std::int64_t total = s.total_steps();
  if (step >= total) return s.min_lr;
  if (step < warm) return s.base_lr * static_cast<double>(step) / static_cast<double>(warm);
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return s.min_lr + (s.base_lr - s.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double layerwise_lr_scale(int layer_index, int num_layers, double decay) {
  if (!(decay > 0.0 && decay <= 1.0)) throw OptimError("layer-wise lr decay must lie in (0, 1]");
  if (layer_index < 0 || layer_index > num_layers) throw OptimError("layer index out of range");
  return std::pow(decay, num_layers - layer_index);
}

double scaled_lr(double base_lr, int batch_size) { return base_lr * static_cast<double>(batch_size) / 256.0; }

}  // namespace dmim

#pragma once

// Multi-run harness: pretraining-arm comparisons over several seeds and
// one-axis ablation sweeps.

#include <optional>
#include <string>
#include <vector>

#include "dmim/train.hpp"

namespace dmim {

// Materializes a DataSource: generates the synthetic corpus or loads a
// directory.
Dataset load_source(const DataSource& src);

struct ArmSpec {
  std::string name;
  // Pretraining degradation; nullopt fine-tunes from random weights.
  std::optional<DegradeSpec> pretrain_degrade;
  // Transfer-time degradation when it differs from the pretraining one.
  std::optional<DegradeSpec> transfer_degrade;
};

// deblur (gaussian 1.1), vanilla (identity), denoise (additive noise, clean
// transfer inputs), scratch.
std::vector<ArmSpec> standard_arms();

struct ComparisonSpec {
  RunConfig pretrain;
  RunConfig finetune;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<ArmSpec> arms = standard_arms();
};

struct ArmOutcome {
  std::string name;
  std::vector<ClassificationMetrics> test;  // one per seed
  std::vector<double> pretrain_final_loss;  // empty for scratch arms
  MeanSd f1;
  MeanSd accuracy;
  MeanSd auroc;
};

struct ComparisonOutcome {
  std::vector<ArmOutcome> arms;
  double seconds = 0.0;

  const ArmOutcome& arm(const std::string& name) const;
};

// Every (arm, seed) pair pretrains then fine-tunes with the same budget.
// Verifies that no pretraining image occurs in any test split.
ComparisonOutcome compare_arms(const ComparisonSpec& spec, std::size_t threads = worker_threads());

enum class SweepAxis { kMaskRatio, kPatchSize, kSigma, kMethod };

SweepAxis parse_sweep_axis(const std::string& s);
std::string to_string(SweepAxis a);

struct SweepPoint {
  std::string value;
  double pretrain_final_loss = 0.0;
  double val_f1 = 0.0;
  ClassificationMetrics test;
};

// Applies one axis value to both stages.
void apply_sweep_value(SweepAxis axis, const std::string& value, RunConfig& pretrain, RunConfig& finetune);

std::vector<SweepPoint> run_sweep(const RunConfig& pretrain, const RunConfig& finetune, SweepAxis axis,
                                  const std::vector<std::string>& values, std::size_t threads = worker_threads());

// Fixed-width text table, one row per point.
std::string sweep_table(SweepAxis axis, const std::vector<SweepPoint>& points);

}  // namespace dmim

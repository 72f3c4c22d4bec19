#pragma once

// Experiment loops: masked (deblurring / denoising / vanilla) pretraining,
// end-to-end fine-tuning, linear probing, and evaluation.

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "dmim/checkpoint.hpp"
#include "dmim/config.hpp"
#include "dmim/data.hpp"
#include "dmim/metrics.hpp"

namespace dmim {

class TrainError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<ClassificationMetrics> val;
};

Json to_json(const EpochRecord& r);
// One JSON object per line.
void write_metrics(const std::filesystem::path& path, std::span<const EpochRecord> trace,
                   const std::optional<ClassificationMetrics>& test = std::nullopt);

// One pretraining example after augmentation and degradation.
struct PretrainSample {
  Image target;    // sharp (pre-degradation) image
  Image degraded;  // model input
  PatchMask mask;
};

PretrainSample make_pretrain_sample(const Image& source, const RunConfig& cfg, Rng& rng);

// Reconstruction x_hat for every patch, [B, N, p*p].
Tensor reconstruct_batch(Graph& g, const Weights& w, std::span<const PretrainSample> batch);
// MSE over all patches between the reconstruction and the patchified target.
Tensor pretrain_loss(Graph& g, const Weights& w, std::span<const PretrainSample> batch);

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> trace;
};

PretrainResult pretrain(const RunConfig& cfg, const Dataset& corpus);

struct TransferResult {
  Checkpoint checkpoint;
  std::vector<EpochRecord> trace;
  int best_epoch = 0;
  ClassificationMetrics best_val;
  ClassificationMetrics test;
};

// init == nullptr trains from scratch (cfg.scratch must be set).
TransferResult finetune(const RunConfig& cfg, const Splits& data, const Checkpoint* init);
TransferResult linear_probe(const RunConfig& cfg, const Splits& data, const Checkpoint& init);

// Degradation applied at transfer time: the checkpoint's pretraining
// degradation unless the run explicitly overrides it.
DegradeSpec transfer_degrade(const RunConfig& cfg, const Checkpoint* init);

// Degrades each image with a per-index stream derived from seed, then returns
// sigmoid(logit) per item.
std::vector<double> predict(const Weights& w, const DegradeSpec& degrade, const Dataset& data, std::uint64_t seed,
                            int batch_size = 64);
ClassificationMetrics evaluate(const Weights& w, const DegradeSpec& degrade, const Dataset& data, std::uint64_t seed = 0);

// Runs task(i) for i in [0, n) on up to `threads` workers.
void run_parallel(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& task);
// DEBLUR_MIM_THREADS when set and positive, else hardware concurrency.
std::size_t worker_threads();

}  // namespace dmim

#pragma once

// Run configuration: one experiment (pretrain / finetune / linprobe / eval)
// as a JSON document. Unknown keys are rejected.

#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "dmim/data.hpp"
#include "dmim/degrade.hpp"
#include "dmim/model.hpp"
#include "dmim/optim.hpp"

namespace dmim {

using Json = nlohmann::json;

class ConfigError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class Mode { kPretrain, kFinetune, kLinprobe, kEval };

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

struct DataSource {
  // "synth" generates the corpus from `synth`; "dir" loads `path`.
  std::string kind = "synth";
  std::string path;
  SynthSpec synth;
  std::uint64_t split_seed = 0;
};

struct OptimizerConfig {
  std::string name = "adamw";  // adamw | lars
  double base_lr = 1.5e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double momentum = 0.9;
  double layer_decay = 1.0;
  // Applies lr = base_lr * batch / 256.
  bool linear_scaling = true;
};

struct RunConfig {
  Mode mode = Mode::kPretrain;
  DataSource data;
  DegradeSpec degrade{degrade::Gaussian{1.1}};
  double mask_ratio = 0.75;
  ViTConfig model;
  OptimizerConfig optimizer;
  int warmup_epochs = 40;
  double min_lr = 0.0;
  int epochs = 400;
  int batch_size = 256;
  std::uint64_t seed = 0;
  double label_smoothing = 0.0;
  bool augment = true;
  double crop_scale_lo = 0.6;
  double crop_scale_hi = 1.0;
  std::string ckpt_in;
  std::string ckpt_out;
  std::string metrics_out;
  bool scratch = false;
  bool allow_degrade_override = false;

  void validate() const;
  // Checkpoint presence for transfer and eval modes, checked once flags are
  // applied.
  void require_inputs() const;
};

Json degrade_to_json(const DegradeSpec& spec);
DegradeSpec degrade_from_json(const Json& j);
Json vit_to_json(const ViTConfig& cfg);
ViTConfig vit_from_json(const Json& j);
Json synth_to_json(const SynthSpec& s);
SynthSpec synth_from_json(const Json& j);

Json to_json(const RunConfig& cfg);
// Fields absent from j keep the values of `base`.
RunConfig run_config_from_json(const Json& j, const RunConfig& base = RunConfig{});

// Built-in presets: "pretrain.default", "finetune.default", "linprobe.default".
bool is_preset(const std::string& name);
RunConfig preset(const std::string& name);
// Resolves a preset name or reads a JSON file (which may name a preset to
// extend under the key "extends").
RunConfig load_run_config(const std::string& name_or_path);

// FNV-1a 64 of the canonical JSON dump, hex encoded.
std::string config_hash(const Json& j);

}  // namespace dmim

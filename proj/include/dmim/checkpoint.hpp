#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   bytes 0..7   magic "DMIMCKPT"
//   u32          format version (1)
//   u64          header length H
//   H bytes      UTF-8 JSON header:
//                  {"model": {...}, "degrade": {...}, "mask_ratio": r,
//                   "stage": "pretrain|finetune|linprobe",
//                   "params": [{"name": s, "shape": [..]}, ...],
//                   "meta": {...}}
//   payload      each parameter's values as IEEE-754 f64, in header order
//
// Save followed by load reproduces every parameter bit for bit.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "dmim/degrade.hpp"
#include "dmim/model.hpp"

namespace dmim {

struct Checkpoint {
  Weights weights;
  DegradeSpec degrade;
  double mask_ratio = 0.75;
  std::string stage = "pretrain";
  nlohmann::json meta = nlohmann::json::object();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dmim

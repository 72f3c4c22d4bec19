#include "dmim/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

namespace dmim {

namespace {

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kPretrain: return "pretrain";
    case Mode::kFinetune: return "finetune";
    case Mode::kLinprobe: return "linprobe";
    case Mode::kEval: return "eval";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "pretrain") return Mode::kPretrain;
  if (s == "finetune") return Mode::kFinetune;
  if (s == "linprobe") return Mode::kLinprobe;
  if (s == "eval") return Mode::kEval;
  throw ConfigError("unknown mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// Component documents

Json degrade_to_json(const DegradeSpec& spec) {
  Json j{{"method", spec.method()}};
  std::visit(
      [&j](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, degrade::Gaussian> || std::is_same_v<T, degrade::Noise>) j["sigma"] = v.sigma;
        else if constexpr (std::is_same_v<T, degrade::Srad>) {
          j["N"] = v.iterations;
          j["dt"] = v.dt;
        } else if constexpr (std::is_same_v<T, degrade::Mean> || std::is_same_v<T, degrade::Median>) j["k"] = v.k;
        else if constexpr (std::is_same_v<T, degrade::Motion>) {
          j["k"] = v.k;
          j["angle"] = v.angle_deg;
        } else if constexpr (std::is_same_v<T, degrade::Defocus>) j["radius"] = v.radius;
      },
      spec.variant);
  return j;
}

DegradeSpec degrade_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("method") || !j["method"].is_string())
    throw ConfigError("degrade: expected an object with a string 'method'");
  std::vector<std::pair<std::string, double>> params;
  for (const auto& [key, value] : j.items()) {
    if (key == "method") continue;
    if (!value.is_number()) throw ConfigError("degrade." + key + ": expected a number");
    params.emplace_back(key, value.get<double>());
  }
  try {
    return make_degrade_spec(j["method"].get<std::string>(), params);
  } catch (const DegradeError& e) {
    throw ConfigError(std::string("degrade: ") + e.what());
  }
}

Json vit_to_json(const ViTConfig& c) {
  return Json{{"image_size", c.image_size},     {"patch_size", c.patch_size},       {"encoder_dim", c.encoder_dim},
              {"encoder_depth", c.encoder_depth}, {"encoder_heads", c.encoder_heads}, {"mlp_ratio", c.mlp_ratio},
              {"decoder_dim", c.decoder_dim},   {"decoder_depth", c.decoder_depth}, {"decoder_heads", c.decoder_heads}};
}

ViTConfig vit_from_json(const Json& j) {
  const std::string w = "model";
  check_keys(j, {"image_size", "patch_size", "encoder_dim", "encoder_depth", "encoder_heads", "mlp_ratio",
                 "decoder_dim", "decoder_depth", "decoder_heads"},
             w);
  ViTConfig c;
  read(j, "image_size", c.image_size, w);
  read(j, "patch_size", c.patch_size, w);
  read(j, "encoder_dim", c.encoder_dim, w);
  read(j, "encoder_depth", c.encoder_depth, w);
  read(j, "encoder_heads", c.encoder_heads, w);
  read(j, "mlp_ratio", c.mlp_ratio, w);
  read(j, "decoder_dim", c.decoder_dim, w);
  read(j, "decoder_depth", c.decoder_depth, w);
  read(j, "decoder_heads", c.decoder_heads, w);
  return c;
}

Json synth_to_json(const SynthSpec& s) {
  return Json{{"count", s.count},
              {"image_side", s.image_side},
              {"speckle_looks", s.speckle_looks},
              {"speckle_grain", s.speckle_grain},
              {"brightness", s.brightness},
              {"spot_count", {s.spot_count_min, s.spot_count_max}},
              {"spot_intensity", s.spot_intensity},
              {"spot_radius", s.spot_radius},
              {"seed", s.seed},
              {"labeled", s.labeled}};
}

SynthSpec synth_from_json(const Json& j) {
  const std::string w = "synth";
  check_keys(j, {"count", "image_side", "speckle_looks", "speckle_grain", "brightness", "spot_count", "spot_intensity",
                 "spot_radius", "seed", "labeled"},
             w);
  SynthSpec s;
  read(j, "count", s.count, w);
  read(j, "image_side", s.image_side, w);
  read(j, "speckle_looks", s.speckle_looks, w);
  read(j, "speckle_grain", s.speckle_grain, w);
  read(j, "brightness", s.brightness, w);
  if (j.contains("spot_count")) {
    const auto& r = j["spot_count"];
    if (!r.is_array() || r.size() != 2) throw ConfigError("synth.spot_count: expected [min, max]");
    s.spot_count_min = r[0].get<int>();
    s.spot_count_max = r[1].get<int>();
  }
  read(j, "spot_intensity", s.spot_intensity, w);
  read(j, "spot_radius", s.spot_radius, w);
  read(j, "seed", s.seed, w);
  read(j, "labeled", s.labeled, w);
  try {
    s.validate();
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("run config: " + m); };
  if (data.kind != "synth" && data.kind != "dir") fail("data.source must be 'synth' or 'dir'");
  if (data.kind == "dir" && data.path.empty()) fail("data.path is required for source 'dir'");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in [0, 1)");
  if (optimizer.name != "adamw" && optimizer.name != "lars") fail("optimizer.name must be 'adamw' or 'lars'");
  if (!(optimizer.base_lr >= 0.0)) fail("optimizer.base_lr must be >= 0");
  if (!(optimizer.layer_decay > 0.0 && optimizer.layer_decay <= 1.0)) fail("optimizer.layer_decay must lie in (0, 1]");
  if (epochs <= 0 || batch_size <= 0) fail("epochs and batch_size must be positive");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) fail("warmup_epochs must lie in [0, epochs)");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail("label_smoothing must lie in [0, 1)");
  if (!(crop_scale_lo > 0.0 && crop_scale_lo <= crop_scale_hi && crop_scale_hi <= 1.0)) fail("crop scale must lie in (0, 1]");
  if (mode == Mode::kLinprobe && scratch) fail("linprobe cannot run from scratch");
  try {
    model.validate();
    degrade.validate();
  } catch (const std::exception& e) {
    fail(e.what());
  }
}

Json to_json(const RunConfig& c) {
  return Json{
      {"mode", to_string(c.mode)},
      {"data", {{"source", c.data.kind}, {"path", c.data.path}, {"synth", synth_to_json(c.data.synth)}, {"split_seed", c.data.split_seed}}},
      {"degrade", degrade_to_json(c.degrade)},
      {"mask_ratio", c.mask_ratio},
      {"model", vit_to_json(c.model)},
      {"optimizer",
       {{"name", c.optimizer.name},
        {"base_lr", c.optimizer.base_lr},
        {"weight_decay", c.optimizer.weight_decay},
        {"betas", {c.optimizer.beta1, c.optimizer.beta2}},
        {"eps", c.optimizer.eps},
        {"momentum", c.optimizer.momentum},
        {"layer_decay", c.optimizer.layer_decay},
        {"linear_scaling", c.optimizer.linear_scaling}}},
      {"schedule", {{"warmup_epochs", c.warmup_epochs}, {"min_lr", c.min_lr}}},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"label_smoothing", c.label_smoothing},
      {"augment", {{"random_resized_crop", c.augment}, {"scale", {c.crop_scale_lo, c.crop_scale_hi}}}},
      {"checkpoint", {{"in", c.ckpt_in}, {"out", c.ckpt_out}}},
      {"metrics_out", c.metrics_out},
      {"scratch", c.scratch},
      {"allow_degrade_override", c.allow_degrade_override}};
}

RunConfig run_config_from_json(const Json& j, const RunConfig& base) {
  const std::string w = "config";
  check_keys(j, {"extends", "mode", "data", "degrade", "mask_ratio", "model", "optimizer", "schedule", "epochs", "batch_size",
                 "seed", "label_smoothing", "augment", "checkpoint", "metrics_out", "scratch", "allow_degrade_override"},
             w);
  RunConfig c = base;
  if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, {"source", "path", "synth", "split_seed"}, "data");
    read(d, "source", c.data.kind, "data");
    read(d, "path", c.data.path, "data");
    read(d, "split_seed", c.data.split_seed, "data");
    if (d.contains("synth")) {
      Json merged = synth_to_json(c.data.synth);
      merged.update(d["synth"]);
      c.data.synth = synth_from_json(merged);
    }
  }
  if (j.contains("degrade")) c.degrade = degrade_from_json(j["degrade"]);
  read(j, "mask_ratio", c.mask_ratio, w);
  if (j.contains("model")) {
    Json merged = vit_to_json(c.model);
    check_keys(j["model"], {"image_size", "patch_size", "encoder_dim", "encoder_depth", "encoder_heads", "mlp_ratio",
                            "decoder_dim", "decoder_depth", "decoder_heads"},
               "model");
    merged.update(j["model"]);
    c.model = vit_from_json(merged);
  }
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    const std::string ow = "optimizer";
    check_keys(o, {"name", "base_lr", "weight_decay", "betas", "eps", "momentum", "layer_decay", "linear_scaling"}, ow);
    read(o, "name", c.optimizer.name, ow);
    read(o, "base_lr", c.optimizer.base_lr, ow);
    read(o, "weight_decay", c.optimizer.weight_decay, ow);
    if (o.contains("betas")) {
      if (!o["betas"].is_array() || o["betas"].size() != 2) throw ConfigError("optimizer.betas: expected [beta1, beta2]");
      c.optimizer.beta1 = o["betas"][0].get<double>();
      c.optimizer.beta2 = o["betas"][1].get<double>();
    }
    read(o, "eps", c.optimizer.eps, ow);
    read(o, "momentum", c.optimizer.momentum, ow);
    read(o, "layer_decay", c.optimizer.layer_decay, ow);
    read(o, "linear_scaling", c.optimizer.linear_scaling, ow);
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    check_keys(s, {"warmup_epochs", "min_lr"}, "schedule");
    read(s, "warmup_epochs", c.warmup_epochs, "schedule");
    read(s, "min_lr", c.min_lr, "schedule");
  }
  read(j, "epochs", c.epochs, w);
  read(j, "batch_size", c.batch_size, w);
  read(j, "seed", c.seed, w);
  read(j, "label_smoothing", c.label_smoothing, w);
  if (j.contains("augment")) {
    const auto& a = j["augment"];
    check_keys(a, {"random_resized_crop", "scale"}, "augment");
    read(a, "random_resized_crop", c.augment, "augment");
    if (a.contains("scale")) {
      if (!a["scale"].is_array() || a["scale"].size() != 2) throw ConfigError("augment.scale: expected [lo, hi]");
      c.crop_scale_lo = a["scale"][0].get<double>();
      c.crop_scale_hi = a["scale"][1].get<double>();
    }
  }
  if (j.contains("checkpoint")) {
    const auto& k = j["checkpoint"];
    check_keys(k, {"in", "out"}, "checkpoint");
    read(k, "in", c.ckpt_in, "checkpoint");
    read(k, "out", c.ckpt_out, "checkpoint");
  }
  read(j, "metrics_out", c.metrics_out, w);
  read(j, "scratch", c.scratch, w);
  read(j, "allow_degrade_override", c.allow_degrade_override, w);
  return c;
}

// ---------------------------------------------------------------------------
// Presets

bool is_preset(const std::string& name) {
  return name == "pretrain.default" || name == "finetune.default" || name == "linprobe.default";
}

RunConfig preset(const std::string& name) {
  RunConfig c;
  c.data.synth.count = 256;
  c.data.synth.labeled = false;
  if (name == "pretrain.default") {
    // AdamW 1.5e-4, wd 0.05, betas 0.9/0.95, batch 256, cosine, warmup 40,
    // RandomResizedCrop, 12000 epochs.
    c.mode = Mode::kPretrain;
    c.degrade = DegradeSpec{degrade::Gaussian{1.1}};
    c.mask_ratio = 0.75;
    c.optimizer = OptimizerConfig{"adamw", 1.5e-4, 0.05, 0.9, 0.95, 1e-8, 0.9, 1.0, true};
    c.warmup_epochs = 40;
    c.epochs = 12000;
    c.batch_size = 256;
    c.augment = true;
    c.ckpt_out = "pretrain.ckpt";
  } else if (name == "finetune.default") {
    // AdamW 1e-3, wd 0.05, betas 0.9/0.999, layer decay 0.75, batch 256,
    // cosine, warmup 5, label smoothing 0.1.
    c.mode = Mode::kFinetune;
    c.data.synth.count = 400;
    c.data.synth.labeled = true;
    c.data.synth.seed = 1;
    c.optimizer = OptimizerConfig{"adamw", 1e-3, 0.05, 0.9, 0.999, 1e-8, 0.9, 0.75, true};
    c.warmup_epochs = 5;
    c.epochs = 50;
    c.batch_size = 256;
    c.label_smoothing = 0.1;
    c.augment = false;
    c.ckpt_out = "finetune.ckpt";
  } else if (name == "linprobe.default") {
    // LARS 0.1, wd 0, momentum 0.9, batch 1024, cosine, warmup 10,
    // RandomResizedCrop.
    c.mode = Mode::kLinprobe;
    c.data.synth.count = 400;
    c.data.synth.labeled = true;
    c.data.synth.seed = 1;
    c.optimizer = OptimizerConfig{"lars", 0.1, 0.0, 0.9, 0.999, 1e-8, 0.9, 1.0, true};
    c.warmup_epochs = 10;
    c.epochs = 90;
    c.batch_size = 1024;
    c.augment = true;
    c.ckpt_out = "linprobe.ckpt";
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

void RunConfig::require_inputs() const {
  if ((mode == Mode::kFinetune || mode == Mode::kLinprobe) && ckpt_in.empty() && !scratch)
    throw ConfigError("run config: " + to_string(mode) + " needs checkpoint.in or scratch=true");
  if (mode == Mode::kEval && ckpt_in.empty()) throw ConfigError("run config: eval needs checkpoint.in");
}

RunConfig load_run_config(const std::string& name_or_path) {
  if (is_preset(name_or_path)) return preset(name_or_path);
  std::ifstream in(name_or_path);
  if (!in) throw IoError("cannot open config '" + name_or_path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config '" + name_or_path + "' is not valid JSON: " + e.what());
  }
  RunConfig base;
  if (j.contains("extends")) {
    const auto parent = j["extends"].get<std::string>();
    if (!is_preset(parent)) throw ConfigError("extends: unknown preset '" + parent + "'");
    base = preset(parent);
  }
  return run_config_from_json(j, base);
}

std::string config_hash(const Json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dmim

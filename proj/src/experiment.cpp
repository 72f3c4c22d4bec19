#include "dmim/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>

namespace dmim {

Dataset load_source(const DataSource& src) {
  if (src.kind == "synth") return synth_speckle(src.synth);
  if (src.kind == "dir") return load_dataset(src.path);
  throw ConfigError("data.source must be 'synth' or 'dir', got '" + src.kind + "'");
}

std::vector<ArmSpec> standard_arms() {
  return {
      {"deblur", DegradeSpec{degrade::Gaussian{1.1}}, std::nullopt},
      {"vanilla", DegradeSpec{degrade::Identity{}}, std::nullopt},
      {"denoise", DegradeSpec{degrade::Noise{0.1}}, DegradeSpec{degrade::Identity{}}},
      {"scratch", std::nullopt, DegradeSpec{degrade::Identity{}}},
  };
}

const ArmOutcome& ComparisonOutcome::arm(const std::string& name) const {
  for (const auto& a : arms)
    if (a.name == name) return a;
  throw std::out_of_range("no arm named '" + name + "'");
}

namespace {

RunConfig transfer_config(const RunConfig& base, const ArmSpec& arm, std::uint64_t seed) {
  RunConfig f = base;
  f.mode = Mode::kFinetune;
  f.seed = seed;
  f.scratch = !arm.pretrain_degrade.has_value();
  if (arm.transfer_degrade) {
    f.degrade = *arm.transfer_degrade;
    f.allow_degrade_override = true;
  } else if (arm.pretrain_degrade) {
    f.degrade = *arm.pretrain_degrade;
  }
  return f;
}

}  // namespace

ComparisonOutcome compare_arms(const ComparisonSpec& spec, std::size_t threads) {
  if (spec.arms.empty() || spec.seeds.empty()) throw ConfigError("comparison needs at least one arm and one seed");
  const auto start = std::chrono::steady_clock::now();
  const Dataset corpus = load_source(spec.pretrain.data);
  const Splits splits = split(load_source(spec.finetune.data), SplitRatios{}, spec.finetune.data.split_seed);
  check_disjoint(corpus, splits.test, "pretraining corpus and test split");

  const std::size_t n_seeds = spec.seeds.size();
  const std::size_t runs = spec.arms.size() * n_seeds;
  std::vector<std::optional<Checkpoint>> ckpts(runs);
  std::vector<double> final_loss(runs, 0.0);
  run_parallel(runs, threads, [&](std::size_t k) {
    const ArmSpec& arm = spec.arms[k / n_seeds];
    if (!arm.pretrain_degrade) return;
    RunConfig p = spec.pretrain;
    p.mode = Mode::kPretrain;
    p.degrade = *arm.pretrain_degrade;
    p.seed = spec.seeds[k % n_seeds];
    PretrainResult r = pretrain(p, corpus);
    final_loss[k] = r.trace.back().loss;
    ckpts[k] = std::move(r.checkpoint);
  });

  std::vector<ClassificationMetrics> test(runs);
  run_parallel(runs, threads, [&](std::size_t k) {
    const ArmSpec& arm = spec.arms[k / n_seeds];
    const RunConfig f = transfer_config(spec.finetune, arm, spec.seeds[k % n_seeds]);
    test[k] = finetune(f, splits, ckpts[k] ? &*ckpts[k] : nullptr).test;
  });

  ComparisonOutcome out;
  for (std::size_t a = 0; a < spec.arms.size(); ++a) {
    ArmOutcome arm;
    arm.name = spec.arms[a].name;
    std::vector<double> f1, acc, auc;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const std::size_t k = a * n_seeds + s;
      arm.test.push_back(test[k]);
      if (spec.arms[a].pretrain_degrade) arm.pretrain_final_loss.push_back(final_loss[k]);
      f1.push_back(test[k].f1);
      acc.push_back(test[k].accuracy);
      auc.push_back(test[k].auroc);
    }
    arm.f1 = mean_sd(f1);
    arm.accuracy = mean_sd(acc);
    arm.auroc = mean_sd(auc);
    out.arms.push_back(std::move(arm));
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "mask_ratio") return SweepAxis::kMaskRatio;
  if (s == "patch_size") return SweepAxis::kPatchSize;
  if (s == "sigma") return SweepAxis::kSigma;
  if (s == "method") return SweepAxis::kMethod;
  throw ConfigError("unknown sweep axis '" + s + "' (expected mask_ratio|patch_size|sigma|method)");
}

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kMaskRatio: return "mask_ratio";
    case SweepAxis::kPatchSize: return "patch_size";
    case SweepAxis::kSigma: return "sigma";
    case SweepAxis::kMethod: return "method";
  }
  return "?";
}

namespace {

double parse_number(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ConfigError(what + ": '" + s + "' is not a number");
  return v;
}

}  // namespace

void apply_sweep_value(SweepAxis axis, const std::string& value, RunConfig& pretrain, RunConfig& finetune) {
  switch (axis) {
    case SweepAxis::kMaskRatio:
      pretrain.mask_ratio = parse_number(value, "mask_ratio");
      break;
    case SweepAxis::kPatchSize: {
      const double p = parse_number(value, "patch_size");
      if (p != static_cast<int>(p)) throw ConfigError("patch_size: '" + value + "' is not an integer");
      pretrain.model.patch_size = static_cast<int>(p);
      break;
    }
    case SweepAxis::kSigma:
      pretrain.degrade = DegradeSpec{degrade::Gaussian{parse_number(value, "sigma")}};
      break;
    case SweepAxis::kMethod:
      pretrain.degrade = make_degrade_spec(value, {});
      break;
  }
  finetune.model = pretrain.model;
  finetune.degrade = pretrain.degrade;
  pretrain.validate();
  finetune.validate();
}

std::vector<SweepPoint> run_sweep(const RunConfig& pretrain_cfg, const RunConfig& finetune_cfg, SweepAxis axis,
                                  const std::vector<std::string>& values, std::size_t threads) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<RunConfig> pre(values.size(), pretrain_cfg), fin(values.size(), finetune_cfg);
  for (std::size_t i = 0; i < values.size(); ++i) {
    pre[i].mode = Mode::kPretrain;
    fin[i].mode = Mode::kFinetune;
    fin[i].seed = pre[i].seed;
    apply_sweep_value(axis, values[i], pre[i], fin[i]);
  }
  const Dataset corpus = load_source(pretrain_cfg.data);
  const Splits splits = split(load_source(finetune_cfg.data), SplitRatios{}, finetune_cfg.data.split_seed);
  check_disjoint(corpus, splits.test, "pretraining corpus and test split");

  std::vector<SweepPoint> points(values.size());
  run_parallel(values.size(), threads, [&](std::size_t i) {
    PretrainResult p = pretrain(pre[i], corpus);
    TransferResult f = finetune(fin[i], splits, &p.checkpoint);
    points[i] = SweepPoint{values[i], p.trace.back().loss, f.best_val.f1, f.test};
  });
  return points;
}

std::string sweep_table(SweepAxis axis, const std::vector<SweepPoint>& points) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %12s %8s %8s %8s %8s\n", to_string(axis).c_str(), "pretrain_mse", "val_f1",
                "test_acc", "test_f1", "test_auc");
  os << line;
  for (const auto& p : points) {
    std::snprintf(line, sizeof(line), "%-12s %12.6f %8.4f %8.4f %8.4f %8.4f\n", p.value.c_str(), p.pretrain_final_loss, p.val_f1,
                  p.test.accuracy, p.test.f1, p.test.auroc);
    os << line;
  }
  return os.str();
}

}  // namespace dmim

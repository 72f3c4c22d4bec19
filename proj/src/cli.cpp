#include "dmim/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dmim/experiment.hpp"
#include "dmim/optim.hpp"
#include "dmim/report.hpp"

#ifndef DMIM_VERSION
#define DMIM_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace dmim {

std::string version() { return DMIM_VERSION; }

namespace {

class MissingFile : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_path(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) throw MissingFile(what + " '" + path + "' does not exist");
}

void write_json(const fs::path& path, const Json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

// Everything needed to repeat the run: the argument list, the resolved
// config and its hash, the seed, and the code version. No timestamps, so
// repeated runs produce identical manifests.
void write_manifest(const fs::path& path, const std::vector<std::string>& args, const Json& config, std::uint64_t seed,
                    const Json& outputs) {
  write_json(path, Json{{"version", version()},
                        {"args", args},
                        {"config_hash", config_hash(config)},
                        {"seed", seed},
                        {"config", config},
                        {"outputs", outputs}});
}

std::string sibling(const std::string& path, const std::string& suffix) { return path + suffix; }

Json metrics_json(const ClassificationMetrics& m) { return Json{{"acc", m.accuracy}, {"f1", m.f1}, {"auroc", m.auroc}}; }

std::string metrics_line(const ClassificationMetrics& m) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << "acc=" << m.accuracy << " f1=" << m.f1 << " auroc=" << m.auroc;
  return os.str();
}

RunConfig resolve_config(const std::string& name_or_path, Mode mode) {
  if (!is_preset(name_or_path)) require_path(name_or_path, "config");
  RunConfig cfg = load_run_config(name_or_path);
  if (cfg.mode != mode)
    throw ConfigError("config '" + name_or_path + "' is for mode '" + to_string(cfg.mode) + "', not '" + to_string(mode) + "'");
  return cfg;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  if (out.empty()) throw ConfigError("--values: empty list");
  return out;
}

std::vector<std::pair<std::string, double>> parse_params(const std::vector<std::string>& kvs) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& kv : kvs) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--param", "expected k=v, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(val, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != val.size()) throw CLI::ValidationError("--param", "value of '" + key + "' is not a number");
    out.emplace_back(key, v);
  }
  return out;
}

bool same_extension(const fs::path& a, const fs::path& b) {
  auto lower = [](std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  return lower(a.extension().string()) == lower(b.extension().string());
}

struct Options {
  std::string config;
  std::string finetune_config = "finetune.default";
  std::string ckpt;
  std::string data;
  std::string out;
  std::string spec;
  std::string method;
  std::string in;
  std::string axis;
  std::string values;
  std::vector<std::string> params;
  std::uint64_t seed = 0;
  bool scratch = false;
};

int cmd_synth(const Options& o, bool seed_given, const std::vector<std::string>& args, std::ostream& out) {
  require_path(o.spec, "spec");
  std::ifstream in(o.spec);
  if (!in) throw IoError("cannot read spec '" + o.spec + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("spec '" + o.spec + "' is not valid JSON: " + e.what());
  }
  SynthSpec spec = synth_from_json(j);
  if (seed_given) spec.seed = o.seed;
  const Dataset data = synth_speckle(spec);
  save_dataset(data, o.out);
  const Json cfg = synth_to_json(spec);
  write_manifest(fs::path(o.out) / "manifest.json", args, cfg, spec.seed, Json{{"images", data.items.size()}});
  out << "wrote " << data.items.size() << " images to " << o.out << '\n';
  return kExitOk;
}

int cmd_degrade(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  DegradeSpec spec;
  try {
    spec = make_degrade_spec(o.method, parse_params(o.params));
  } catch (const DegradeError& e) {
    throw ConfigError(e.what());
  }
  require_path(o.in, "input image");
  const Image img = load_image(o.in);
  if (std::holds_alternative<degrade::Identity>(spec.variant) && same_extension(o.in, o.out)) {
    if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
    if (fs::weakly_canonical(o.in) != fs::weakly_canonical(o.out)) fs::copy_file(o.in, o.out, fs::copy_options::overwrite_existing);
  } else {
    Rng rng(o.seed);
    save_image(apply(spec, img, rng), o.out);
  }
  write_manifest(sibling(o.out, ".manifest.json"), args, degrade_to_json(spec), o.seed, Json{{"image", o.out}});
  out << "wrote " << o.out << '\n';
  return kExitOk;
}

int cmd_pretrain(Options o, bool seed_given, const std::vector<std::string>& args, std::ostream& out) {
  RunConfig cfg = resolve_config(o.config, Mode::kPretrain);
  if (seed_given) cfg.seed = o.seed;
  if (!o.out.empty()) cfg.ckpt_out = o.out;
  if (cfg.metrics_out.empty()) cfg.metrics_out = sibling(cfg.ckpt_out, ".metrics.jsonl");
  cfg.validate();
  cfg.require_inputs();
  if (cfg.data.kind == "dir") require_path(cfg.data.path, "data");

  const PretrainResult r = pretrain(cfg, load_source(cfg.data));
  save_checkpoint(r.checkpoint, cfg.ckpt_out);
  write_metrics(cfg.metrics_out, r.trace);
  write_manifest(sibling(cfg.ckpt_out, ".manifest.json"), args, to_json(cfg), cfg.seed,
                 Json{{"checkpoint", cfg.ckpt_out}, {"metrics", cfg.metrics_out}});
  out << "pretrain epochs=" << r.trace.size() << " final_loss=" << r.trace.back().loss << " checkpoint=" << cfg.ckpt_out << '\n';
  return kExitOk;
}

int cmd_transfer(Options o, Mode mode, bool seed_given, const std::vector<std::string>& args, std::ostream& out) {
  RunConfig cfg = resolve_config(o.config, mode);
  if (seed_given) cfg.seed = o.seed;
  if (!o.ckpt.empty()) cfg.ckpt_in = o.ckpt;
  if (o.scratch) cfg.scratch = true;
  if (cfg.metrics_out.empty()) cfg.metrics_out = sibling(cfg.ckpt_out, ".metrics.jsonl");
  cfg.validate();
  cfg.require_inputs();
  if (cfg.data.kind == "dir") require_path(cfg.data.path, "data");

  std::optional<Checkpoint> init;
  if (!cfg.scratch) {
    require_path(cfg.ckpt_in, "checkpoint");
    init = load_checkpoint(cfg.ckpt_in);
  }
  const Splits splits = split(load_source(cfg.data), SplitRatios{}, cfg.data.split_seed);
  const TransferResult r = mode == Mode::kFinetune ? finetune(cfg, splits, init ? &*init : nullptr) : linear_probe(cfg, splits, *init);
  save_checkpoint(r.checkpoint, cfg.ckpt_out);
  write_metrics(cfg.metrics_out, r.trace, r.test);
  write_manifest(sibling(cfg.ckpt_out, ".manifest.json"), args, to_json(cfg), cfg.seed,
                 Json{{"checkpoint", cfg.ckpt_out}, {"metrics", cfg.metrics_out}, {"best_epoch", r.best_epoch}});
  out << to_string(mode) << " best_epoch=" << r.best_epoch << " val_f1=" << r.best_val.f1 << " test " << metrics_line(r.test)
      << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  require_path(o.ckpt, "checkpoint");
  require_path(o.data, "data");
  const Checkpoint ckpt = load_checkpoint(o.ckpt);
  const Dataset data = load_dataset(o.data);
  const ClassificationMetrics m = evaluate(ckpt.weights, ckpt.degrade, data, o.seed);
  const std::string report = o.out.empty() ? sibling(o.ckpt, ".eval.json") : o.out;
  write_json(report, Json{{"test", metrics_json(m)}, {"items", data.items.size()}});
  const Json cfg{{"checkpoint", o.ckpt}, {"data", o.data}, {"degrade", degrade_to_json(ckpt.degrade)}};
  write_manifest(sibling(report, ".manifest.json"), args, cfg, o.seed, Json{{"metrics", report}});
  out << metrics_line(m) << '\n';
  return kExitOk;
}

int cmd_reconstruct(const Options& o, const std::vector<std::string>& args, std::ostream& out) {
  require_path(o.ckpt, "checkpoint");
  require_path(o.data, "data");
  const Checkpoint ckpt = load_checkpoint(o.ckpt);
  const ReconstructionReport r = reconstruct_report(ckpt, load_dataset(o.data), o.out, o.seed);
  const Json cfg{{"checkpoint", o.ckpt}, {"data", o.data}, {"degrade", degrade_to_json(ckpt.degrade)}, {"mask_ratio", ckpt.mask_ratio}};
  write_manifest(fs::path(o.out) / "manifest.json", args, cfg, o.seed,
                 Json{{"grids", r.rows.size()}, {"report", (fs::path(o.out) / "report.jsonl").string()}});
  out << "images=" << r.rows.size() << " mse_masked=" << r.mean_masked << " mse_full=" << r.mean_full
      << " mse_degraded=" << r.mean_degraded << '\n';
  return kExitOk;
}

int cmd_sweep(Options o, bool seed_given, const std::vector<std::string>& args, std::ostream& out) {
  const SweepAxis axis = parse_sweep_axis(o.axis);
  RunConfig pre = resolve_config(o.config, Mode::kPretrain);
  RunConfig fin = resolve_config(o.finetune_config, Mode::kFinetune);
  if (seed_given) pre.seed = o.seed;
  fin.seed = pre.seed;
  fin.scratch = false;
  if (pre.data.kind == "dir") require_path(pre.data.path, "data");
  if (fin.data.kind == "dir") require_path(fin.data.path, "data");
  const std::vector<std::string> values = split_csv(o.values);
  for (const auto& v : values) {
    RunConfig p = pre, f = fin;
    apply_sweep_value(axis, v, p, f);
  }
  const auto points = run_sweep(pre, fin, axis, values);
  const std::string table = sweep_table(axis, points);
  const fs::path dir = o.out.empty() ? fs::path("sweep_" + to_string(axis)) : fs::path(o.out);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "summary.txt", std::ios::trunc);
    if (!f) throw IoError("cannot write '" + (dir / "summary.txt").string() + "'");
    f << table;
  }
  const Json cfg{{"pretrain", to_json(pre)}, {"finetune", to_json(fin)}, {"axis", to_string(axis)}, {"values", values}};
  write_manifest(dir / "manifest.json", args, cfg, pre.seed, Json{{"summary", (dir / "summary.txt").string()}});
  out << table;
  return kExitOk;
}

int fail(std::ostream& err, int code, const std::string& kind, const std::string& message) {
  err << "dmim-error code=" << code << " kind=" << kind << " message=" << Json(message).dump() << '\n';
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deblurring masked image modeling: pretraining, transfer, and evaluation", "deblur_mim"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic speckle corpus");
  synth->add_option("--spec", o.spec, "Synthetic corpus spec (JSON)")->required();
  synth->add_option("--out", o.out, "Output directory")->required();
  auto* synth_seed = synth->add_option("--seed", o.seed, "Overrides the spec seed");

  auto* deg = app.add_subcommand("degrade", "Apply one degradation operator to an image");
  deg->add_option("--method", o.method, "Operator")
      ->required()
      ->check(CLI::IsMember({"gaussian", "srad", "mean", "median", "motion", "defocus", "noise", "identity"}));
  deg->add_option("--param", o.params, "Operator parameter k=v (repeatable)");
  deg->add_option("--in", o.in, "Input image (.png or .pgm)")->required();
  deg->add_option("--out", o.out, "Output image")->required();
  deg->add_option("--seed", o.seed, "Seed for stochastic operators");

  auto* pre = app.add_subcommand("pretrain", "Masked-image-modeling pretraining");
  pre->add_option("--config", o.config, "Config file or preset name")->required();
  auto* pre_seed = pre->add_option("--seed", o.seed, "Run seed");
  pre->add_option("--out", o.out, "Checkpoint path");

  auto* ft = app.add_subcommand("finetune", "End-to-end fine-tuning");
  ft->add_option("--config", o.config, "Config file or preset name")->required();
  ft->add_option("--ckpt", o.ckpt, "Pretrained checkpoint");
  ft->add_flag("--scratch", o.scratch, "Start from random weights instead of a checkpoint");
  auto* ft_seed = ft->add_option("--seed", o.seed, "Run seed");

  auto* lp = app.add_subcommand("linprobe", "Linear probing on a frozen encoder");
  lp->add_option("--config", o.config, "Config file or preset name")->required();
  lp->add_option("--ckpt", o.ckpt, "Pretrained checkpoint")->required();
  auto* lp_seed = lp->add_option("--seed", o.seed, "Run seed");

  auto* ev = app.add_subcommand("eval", "Print ACC/F1/AUROC of a checkpoint on a labeled dataset");
  ev->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  ev->add_option("--data", o.data, "Labeled dataset directory or manifest")->required();
  ev->add_option("--seed", o.seed, "Seed for stochastic degradation");
  ev->add_option("--out", o.out, "Metrics report path (default <ckpt>.eval.json)");

  auto* rec = app.add_subcommand("reconstruct", "Reconstruction grids and MSE report");
  rec->add_option("--ckpt", o.ckpt, "Pretraining checkpoint")->required();
  rec->add_option("--data", o.data, "Image directory or manifest")->required();
  rec->add_option("--out", o.out, "Output directory")->required();
  rec->add_option("--seed", o.seed, "Seed for degradation and masking");

  auto* sw = app.add_subcommand("sweep", "Pretrain and fine-tune once per value of one axis");
  sw->add_option("--config", o.config, "Pretraining config file or preset name")->required();
  sw->add_option("--axis", o.axis, "Sweep axis")->required()->check(CLI::IsMember({"mask_ratio", "patch_size", "sigma", "method"}));
  sw->add_option("--values", o.values, "Comma-separated values")->required();
  sw->add_option("--finetune-config", o.finetune_config, "Fine-tuning config file or preset name");
  auto* sw_seed = sw->add_option("--seed", o.seed, "Run seed");
  sw->add_option("--out", o.out, "Output directory (default sweep_<axis>)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    if (msg.empty()) msg = e.get_name();
    return fail(err, kExitUsage, "usage", msg);
  }

  try {
    if (synth->parsed()) return cmd_synth(o, synth_seed->count() > 0, args, out);
    if (deg->parsed()) return cmd_degrade(o, args, out);
    if (pre->parsed()) return cmd_pretrain(o, pre_seed->count() > 0, args, out);
    if (ft->parsed()) {
      if (o.ckpt.empty() && !o.scratch) return fail(err, kExitUsage, "usage", "finetune: --ckpt is required unless --scratch is given");
      return cmd_transfer(o, Mode::kFinetune, ft_seed->count() > 0, args, out);
    }
    if (lp->parsed()) return cmd_transfer(o, Mode::kLinprobe, lp_seed->count() > 0, args, out);
    if (ev->parsed()) return cmd_eval(o, args, out);
    if (rec->parsed()) return cmd_reconstruct(o, args, out);
    if (sw->parsed()) return cmd_sweep(o, sw_seed->count() > 0, args, out);
    return fail(err, kExitUsage, "usage", "no subcommand");
  } catch (const CLI::ParseError& e) {
    return fail(err, kExitUsage, "usage", e.what());
  } catch (const MissingFile& e) {
    return fail(err, kExitMissingFile, "missing_file", e.what());
  } catch (const ConfigError& e) {
    return fail(err, kExitConfig, "config", e.what());
  } catch (const Json::exception& e) {
    return fail(err, kExitConfig, "config", e.what());
  } catch (const IoError& e) {
    return fail(err, kExitIo, "io", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(err, kExitIo, "io", e.what());
  } catch (const DataError& e) {
    return fail(err, kExitData, "data", e.what());
  } catch (const DegradeError& e) {
    return fail(err, kExitData, "data", e.what());
  } catch (const ShapeError& e) {
    return fail(err, kExitData, "shape", e.what());
  } catch (const MetricError& e) {
    return fail(err, kExitData, "metric", e.what());
  } catch (const TrainError& e) {
    return fail(err, kExitTrain, "train", e.what());
  } catch (const OptimError& e) {
    return fail(err, kExitTrain, "train", e.what());
  } catch (const std::exception& e) {
    return fail(err, kExitFailure, "internal", e.what());
  }
}

}  // namespace dmim

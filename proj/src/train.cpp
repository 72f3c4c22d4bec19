#include "dmim/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "dmim/optim.hpp"
#include "dmim/patching.hpp"

namespace dmim {

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent streams derived from the run seed.
enum Stream : std::uint64_t { kInit = 1, kShuffle, kSample, kHead, kEval };

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
}

Image fit_to(const Image& img, int side) {
  if (img.height == side && img.width == side) return img;
  return resize_bilinear(img, side, side);
}

std::vector<ParamSlot> make_slots(const std::vector<NamedParam>& params, double weight_decay,
                                  const std::function<double(const NamedParam&)>& lr_scale) {
  std::vector<ParamSlot> slots;
  for (const auto& p : params) slots.push_back({p.name, p.tensor, lr_scale(p), p.decay ? weight_decay : 0.0});
  return slots;
}

double effective_lr(const RunConfig& cfg, std::size_t batch) {
  return cfg.optimizer.linear_scaling ? scaled_lr(cfg.optimizer.base_lr, static_cast<int>(batch)) : cfg.optimizer.base_lr;
}

ScheduleSpec schedule_for(const RunConfig& cfg, double lr, int steps_per_epoch) {
  ScheduleSpec s;
  s.base_lr = lr;
  s.warmup_epochs = cfg.warmup_epochs;
  s.total_epochs = cfg.epochs;
  s.min_lr = std::min(cfg.min_lr, lr);
  s.steps_per_epoch = steps_per_epoch;
  return s;
}

void check_finite_loss(double loss, int epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "non-finite loss at epoch " << epoch << ", batch " << batch;
    throw TrainError(os.str());
  }
}

ClassificationMetrics metrics_from(const std::vector<double>& probs, const Dataset& data) {
  ScoredLabels s;
  s.scores = probs;
  for (const auto& it : data.items) s.labels.push_back(it.label);
  return all_metrics(s);
}

Dataset degrade_all(const Dataset& data, const DegradeSpec& degrade, int side, std::uint64_t seed) {
  Dataset out = data;
  for (std::size_t i = 0; i < out.items.size(); ++i) {
    Rng rng(mix_seed(seed, i));
    out.items[i].image = apply(degrade, fit_to(data.items[i].image, side), rng);
  }
  return out;
}

Json meta_for(const RunConfig& cfg, const Checkpoint* init = nullptr) {
  Json j = to_json(cfg);
  Json meta{{"config_hash", config_hash(j)}, {"seed", cfg.seed}, {"mode", to_string(cfg.mode)}};
  if (init != nullptr && init->meta.contains("corpus_hashes")) meta["corpus_hashes"] = init->meta["corpus_hashes"];
  return meta;
}

void check_leakage(const Checkpoint* init, const Splits& data) {
  if (init == nullptr || !init->meta.contains("corpus_hashes")) return;
  const auto hashes = init->meta["corpus_hashes"].get<std::vector<std::uint64_t>>();
  check_disjoint(hashes, data.test, "pretraining corpus and test split");
}

}  // namespace

// ---------------------------------------------------------------------------
// Reporting

Json to_json(const EpochRecord& r) {
  Json j{{"epoch", r.epoch}, {"lr", r.lr}, {"loss", r.loss}};
  if (r.val) j["val"] = {{"acc", r.val->accuracy}, {"f1", r.val->f1}, {"auroc", r.val->auroc}};
  return j;
}

void write_metrics(const std::filesystem::path& path, std::span<const EpochRecord> trace,
                   const std::optional<ClassificationMetrics>& test) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metrics '" + path.string() + "'");
  for (const auto& r : trace) out << to_json(r).dump() << '\n';
  if (test) out << Json{{"test", {{"acc", test->accuracy}, {"f1", test->f1}, {"auroc", test->auroc}}}}.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Pretraining

PretrainSample make_pretrain_sample(const Image& source, const RunConfig& cfg, Rng& rng) {
  PretrainSample s;
  const int side = cfg.model.image_size;
  s.target = cfg.augment ? random_resized_crop(source, rng, cfg.crop_scale_lo, cfg.crop_scale_hi, side) : fit_to(source, side);
  s.degraded = apply(cfg.degrade, s.target, rng);
  s.mask = random_mask(cfg.model.num_patches(), cfg.mask_ratio, rng);
  return s;
}

Tensor reconstruct_batch(Graph& g, const Weights& w, std::span<const PretrainSample> batch) {
  std::vector<Image> inputs;
  std::vector<PatchMask> masks;
  for (const auto& s : batch) {
    inputs.push_back(s.degraded);
    masks.push_back(s.mask);
  }
  Tensor patches = stack_patches(inputs, w.config.patch_size);
  Tensor latents = encode(g, w, patches, masks);
  return decode(g, w, latents, masks);
}

Tensor pretrain_loss(Graph& g, const Weights& w, std::span<const PretrainSample> batch) {
  std::vector<Image> targets;
  for (const auto& s : batch) targets.push_back(s.target);
  Tensor target = stack_patches(targets, w.config.patch_size);
  return g.mse_all_patches(reconstruct_batch(g, w, batch), target);
}

PretrainResult pretrain(const RunConfig& cfg, const Dataset& corpus) {
  cfg.validate();
  if (corpus.items.empty()) throw TrainError("pretrain: empty corpus");
  Weights w = init_weights(cfg.model, mix_seed(cfg.seed, kInit));
  auto params = w.parameters();
  std::erase_if(params, [](const NamedParam& p) { return p.role == ParamRole::kHead; });
  for (const auto& p : w.parameters(ParamRole::kHead)) Tensor(p.tensor).set_requires_grad(false);

  const std::size_t n = corpus.items.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  const int steps_per_epoch = static_cast<int>((n + batch - 1) / batch);
  const ScheduleSpec sched = schedule_for(cfg, effective_lr(cfg, batch), steps_per_epoch);
  auto slots = make_slots(params, cfg.optimizer.weight_decay, [](const NamedParam&) { return 1.0; });
  const AdamWHyper hyper{cfg.optimizer.beta1, cfg.optimizer.beta2, cfg.optimizer.eps};
  AdamWState adam;
  LarsState lars;

  Rng shuffle_rng(mix_seed(cfg.seed, kShuffle));
  Rng sample_rng(mix_seed(cfg.seed, kSample));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  PretrainResult result;
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t start = 0, bi = 0; start < n; start += batch, ++bi) {
      const std::size_t end = std::min(n, start + batch);
      std::vector<PretrainSample> samples;
      samples.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) samples.push_back(make_pretrain_sample(corpus.items[order[k]].image, cfg, sample_rng));

      Graph g;
      Tensor loss = pretrain_loss(g, w, samples);
      check_finite_loss(loss.item(), epoch, bi);
      g.backward(loss);
      lr = cosine_warmup_lr(sched, step++);
      if (cfg.optimizer.name == "lars") lars_step(slots, lars, lr, cfg.optimizer.momentum);
      else adamw_step(slots, adam, lr, hyper);
      for (auto& s : slots) s.param.zero_grad();
      loss_sum += loss.item() * static_cast<double>(end - start);
    }
    result.trace.push_back({epoch, lr, loss_sum / static_cast<double>(n), std::nullopt});
  }
  for (const auto& p : w.parameters(ParamRole::kHead)) Tensor(p.tensor).set_requires_grad(true);
  Json meta = meta_for(cfg);
  Json hashes = Json::array();
  for (const auto& item : corpus.items) hashes.push_back(content_hash(item.image));
  meta["corpus_hashes"] = std::move(hashes);
  result.checkpoint = Checkpoint{std::move(w), cfg.degrade, cfg.mask_ratio, "pretrain", std::move(meta)};
  return result;
}

// ---------------------------------------------------------------------------
// Transfer

DegradeSpec transfer_degrade(const RunConfig& cfg, const Checkpoint* init) {
  if (init == nullptr || init->stage != "pretrain") return init ? init->degrade : cfg.degrade;
  if (cfg.degrade == init->degrade) return init->degrade;
  if (!cfg.allow_degrade_override)
    throw TrainError("transfer degradation '" + cfg.degrade.method() + "' differs from the checkpoint's pretraining degradation '" +
                     init->degrade.method() + "'; set allow_degrade_override to proceed");
  return cfg.degrade;
}

std::vector<double> predict(const Weights& w, const DegradeSpec& degrade, const Dataset& data, std::uint64_t seed,
                            int batch_size) {
  const Dataset degraded = degrade_all(data, degrade, w.config.image_size, seed);
  std::vector<double> probs;
  probs.reserve(data.items.size());
  const auto bs = static_cast<std::size_t>(std::max(batch_size, 1));
  for (std::size_t start = 0; start < degraded.items.size(); start += bs) {
    const std::size_t end = std::min(degraded.items.size(), start + bs);
    std::vector<Image> imgs;
    for (std::size_t k = start; k < end; ++k) imgs.push_back(degraded.items[k].image);
    Graph g;
    Tensor logits = classify_logits(g, w, stack_patches(imgs, w.config.patch_size));
    Tensor prob = g.sigmoid(logits);
    probs.insert(probs.end(), prob.data().begin(), prob.data().end());
  }
  return probs;
}

ClassificationMetrics evaluate(const Weights& w, const DegradeSpec& degrade, const Dataset& data, std::uint64_t seed) {
  if (!data.labeled()) throw TrainError("evaluate: dataset must be labeled");
  Weights frozen = w;
  const auto params = frozen.parameters();
  std::vector<bool> saved;
  for (const auto& p : params) saved.push_back(p.tensor.requires_grad());
  for (const auto& p : params) Tensor(p.tensor).set_requires_grad(false);
  ClassificationMetrics m;
  try {
    m = metrics_from(predict(frozen, degrade, data, seed), data);
  } catch (...) {
    for (std::size_t i = 0; i < params.size(); ++i) Tensor(params[i].tensor).set_requires_grad(saved[i]);
    throw;
  }
  for (std::size_t i = 0; i < params.size(); ++i) Tensor(params[i].tensor).set_requires_grad(saved[i]);
  return m;
}

TransferResult finetune(const RunConfig& cfg, const Splits& data, const Checkpoint* init) {
  cfg.validate();
  if (init == nullptr && !cfg.scratch) throw TrainError("finetune: no checkpoint given and scratch not set");
  if (!data.train.labeled() || !data.val.labeled()) throw TrainError("finetune: train and val splits must be labeled");
  check_leakage(init, data);
  const DegradeSpec degrade = transfer_degrade(cfg, init);

  Weights w = init ? init->weights.clone() : init_weights(cfg.model, mix_seed(cfg.seed, kInit));
  init_head(w, mix_seed(cfg.seed, kHead));
  w.set_requires_grad(true);
  const int side = w.config.image_size;

  auto params = w.parameters();
  std::erase_if(params, [](const NamedParam& p) { return p.role == ParamRole::kDecoder; });
  for (const auto& p : w.parameters(ParamRole::kDecoder)) Tensor(p.tensor).set_requires_grad(false);
  const int layers = w.config.num_layers();
  const double decay = cfg.optimizer.layer_decay;
  auto slots = make_slots(params, cfg.optimizer.weight_decay,
                          [layers, decay](const NamedParam& p) { return layerwise_lr_scale(p.layer, layers, decay); });

  const std::size_t n = data.train.items.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  const int steps_per_epoch = static_cast<int>((n + batch - 1) / batch);
  const ScheduleSpec sched = schedule_for(cfg, effective_lr(cfg, batch), steps_per_epoch);
  const AdamWHyper hyper{cfg.optimizer.beta1, cfg.optimizer.beta2, cfg.optimizer.eps};
  AdamWState adam;
  LarsState lars;

  const bool noisy = std::holds_alternative<degrade::Noise>(degrade.variant);
  const bool cache = !cfg.augment && !noisy;
  const std::uint64_t eval_seed = mix_seed(cfg.seed, kEval);
  Dataset cached = cache ? degrade_all(data.train, degrade, side, mix_seed(cfg.seed, kSample)) : Dataset{};

  Rng shuffle_rng(mix_seed(cfg.seed, kShuffle));
  Rng sample_rng(mix_seed(cfg.seed, kSample));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  TransferResult result;
  Weights best = w.clone();
  double best_f1 = -1.0;
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t start = 0, bi = 0; start < n; start += batch, ++bi) {
      const std::size_t end = std::min(n, start + batch);
      std::vector<Image> imgs;
      std::vector<double> labels;
      for (std::size_t k = start; k < end; ++k) {
        const Item& item = data.train.items[order[k]];
        if (cache) {
          imgs.push_back(cached.items[order[k]].image);
        } else {
          Image x = cfg.augment ? random_resized_crop(item.image, sample_rng, cfg.crop_scale_lo, cfg.crop_scale_hi, side)
                                : fit_to(item.image, side);
          imgs.push_back(apply(degrade, x, sample_rng));
        }
        labels.push_back(item.label);
      }
      Graph g;
      Tensor prob = g.sigmoid(classify_logits(g, w, stack_patches(imgs, w.config.patch_size)));
      Tensor loss = g.binary_cross_entropy(prob, labels, cfg.label_smoothing);
      check_finite_loss(loss.item(), epoch, bi);
      g.backward(loss);
      lr = cosine_warmup_lr(sched, step++);
      if (cfg.optimizer.name == "lars") lars_step(slots, lars, lr, cfg.optimizer.momentum);
      else adamw_step(slots, adam, lr, hyper);
      for (auto& s : slots) s.param.zero_grad();
      loss_sum += loss.item() * static_cast<double>(end - start);
    }
    const ClassificationMetrics val = evaluate(w, degrade, data.val, eval_seed);
    result.trace.push_back({epoch, lr, loss_sum / static_cast<double>(n), val});
    if (val.f1 > best_f1) {
      best_f1 = val.f1;
      best = w.clone();
      result.best_epoch = epoch;
      result.best_val = val;
    }
  }
  if (!data.test.items.empty()) result.test = evaluate(best, degrade, data.test, eval_seed);
  best.set_requires_grad(true);
  result.checkpoint = Checkpoint{std::move(best), degrade, init ? init->mask_ratio : cfg.mask_ratio, "finetune", meta_for(cfg, init)};
  return result;
}

TransferResult linear_probe(const RunConfig& cfg, const Splits& data, const Checkpoint& init) {
  cfg.validate();
  if (!data.train.labeled() || !data.val.labeled()) throw TrainError("linear_probe: train and val splits must be labeled");
  check_leakage(&init, data);
  const DegradeSpec degrade = transfer_degrade(cfg, &init);

  Weights w = init.weights.clone();
  init_head(w, mix_seed(cfg.seed, kHead));
  for (const auto& p : w.parameters()) Tensor(p.tensor).set_requires_grad(p.role == ParamRole::kHead);
  const auto encoder = w.parameters(ParamRole::kEncoder);
  const int side = w.config.image_size;

  auto slots = make_slots(w.parameters(ParamRole::kHead), cfg.optimizer.weight_decay, [](const NamedParam&) { return 1.0; });
  const std::size_t n = data.train.items.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  const int steps_per_epoch = static_cast<int>((n + batch - 1) / batch);
  const ScheduleSpec sched = schedule_for(cfg, effective_lr(cfg, batch), steps_per_epoch);
  const AdamWHyper hyper{cfg.optimizer.beta1, cfg.optimizer.beta2, cfg.optimizer.eps};
  AdamWState adam;
  LarsState lars;

  const bool noisy = std::holds_alternative<degrade::Noise>(degrade.variant);
  const bool cache = !cfg.augment && !noisy;
  const std::uint64_t eval_seed = mix_seed(cfg.seed, kEval);

  auto features_of = [&w](const std::vector<Image>& imgs) {
    Graph g;
    return pooled_features(g, w, stack_patches(imgs, w.config.patch_size));
  };
  std::vector<std::vector<double>> cached_features;
  if (cache) {
    const Dataset degraded = degrade_all(data.train, degrade, side, mix_seed(cfg.seed, kSample));
    for (const auto& item : degraded.items) {
      Tensor f = features_of({item.image});
      cached_features.emplace_back(f.data().begin(), f.data().end());
    }
  }

  Rng shuffle_rng(mix_seed(cfg.seed, kShuffle));
  Rng sample_rng(mix_seed(cfg.seed, kSample));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const auto e = static_cast<std::size_t>(w.config.encoder_dim);

  TransferResult result;
  Weights best = w.clone();
  double best_f1 = -1.0;
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t start = 0, bi = 0; start < n; start += batch, ++bi) {
      const std::size_t end = std::min(n, start + batch);
      std::vector<double> labels;
      Tensor feats;
      if (cache) {
        std::vector<double> fv;
        for (std::size_t k = start; k < end; ++k) fv.insert(fv.end(), cached_features[order[k]].begin(), cached_features[order[k]].end());
        feats = Tensor(Shape{end - start, e}, std::move(fv));
      } else {
        std::vector<Image> imgs;
        for (std::size_t k = start; k < end; ++k) {
          const Image& src = data.train.items[order[k]].image;
          Image x = cfg.augment ? random_resized_crop(src, sample_rng, cfg.crop_scale_lo, cfg.crop_scale_hi, side) : fit_to(src, side);
          imgs.push_back(apply(degrade, x, sample_rng));
        }
        feats = features_of(imgs);
      }
      for (std::size_t k = start; k < end; ++k) labels.push_back(data.train.items[order[k]].label);

      Graph g;
      Tensor prob = g.sigmoid(head_logits(g, w, feats));
      Tensor loss = g.binary_cross_entropy(prob, labels, cfg.label_smoothing);
      check_finite_loss(loss.item(), epoch, bi);
      g.backward(loss);
      for (const auto& p : encoder)
        if (p.tensor.has_grad())
          for (double v : p.tensor.grad())
            if (v != 0.0) throw TrainError("linear_probe: encoder parameter '" + p.name + "' received a gradient");
      lr = cosine_warmup_lr(sched, step++);
      if (cfg.optimizer.name == "adamw") adamw_step(slots, adam, lr, hyper);
      else lars_step(slots, lars, lr, cfg.optimizer.momentum);
      for (auto& s : slots) s.param.zero_grad();
      loss_sum += loss.item() * static_cast<double>(end - start);
    }
    const ClassificationMetrics val = evaluate(w, degrade, data.val, eval_seed);
    result.trace.push_back({epoch, lr, loss_sum / static_cast<double>(n), val});
    if (val.f1 > best_f1) {
      best_f1 = val.f1;
      best = w.clone();
      result.best_epoch = epoch;
      result.best_val = val;
    }
  }
  if (!data.test.items.empty()) result.test = evaluate(best, degrade, data.test, eval_seed);
  best.set_requires_grad(true);
  result.checkpoint = Checkpoint{std::move(best), degrade, init.mask_ratio, "linprobe", meta_for(cfg, &init)};
  return result;
}

// ---------------------------------------------------------------------------
// Parallel helpers

std::size_t worker_threads() {
  if (const char* env = std::getenv("DEBLUR_MIM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void run_parallel(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& task) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace dmim

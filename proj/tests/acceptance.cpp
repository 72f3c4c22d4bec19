// Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails.

#include <chrono>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "dmim/cli.hpp"
#include "dmim/experiment.hpp"
#include "dmim/metrics.hpp"
#include "dmim/report.hpp"
#include "support.hpp"

using namespace dmim;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

int run_binary(const std::string& path, const std::string& filter) {
  const std::string cmd = "\"" + path + "\" --test-case=\"" + filter + "\" >/dev/null 2>&1";
  const int s = std::system(cmd.c_str());
  return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
  return m;
}

fs::path source_path(const std::string& rel) { return fs::path(DMIM_SOURCE_DIR) / rel; }

fs::path work_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dmim_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const int ops = run_binary(DMIM_TEST_TENSOR, "gradient check*");
  const int model = run_binary(DMIM_TEST_MODEL, "full-model gradient check*");
  const double secs = seconds_since(t0);
  return {ops == 0 && model == 0 && secs < 60.0,
          fmt("op checks %s (rel <= 1e-4), full-model checks %s (rel <= 1e-3), %.1f s (limit 60 s)", ops == 0 ? "ok" : "failed",
              model == 0 ? "ok" : "failed", secs)};
}

Outcome convolution_oracle() {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> side(6, 24);
  std::uniform_real_distribution<double> sig(0.3, 2.5);
  double worst_blur = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Image img = testing::random_image(side(rng), side(rng), rng);
    const double s = sig(rng);
    worst_blur = std::max(worst_blur, max_abs_diff(gaussian_blur(img, s), testing::gaussian_direct(img, s)));
  }
  double worst_srad = 0.0;
  std::mt19937_64 r2(5);
  for (int i = 0; i < 5; ++i) {
    const Image img = testing::random_image(12 + i, 9 + 2 * i, r2, 0.1, 1.0);
    for (double dt : {0.05, 0.1, 0.25}) worst_srad = std::max(worst_srad, max_abs_diff(srad(img, 1, dt), testing::srad_step_reference(img, dt)));
  }
  return {worst_blur <= 1e-9 && worst_srad <= 1e-12,
          fmt("separable vs direct max %.2e over 50 cases (limit 1e-9); SRAD step vs reference max %.2e (limit 1e-12)", worst_blur,
              worst_srad)};
}

Outcome degradation_invariants() {
  int constant_failures = 0, cases = 0;
  for (double v : {0.0, 0.37, 1.0, 0.123456789}) {
    Image c(13, 17, v);
    for (const DegradeSpec& spec :
         {DegradeSpec{degrade::Gaussian{1.1}}, DegradeSpec{degrade::Gaussian{2.3}}, DegradeSpec{degrade::Mean{5}},
          DegradeSpec{degrade::Median{5}}, DegradeSpec{degrade::Motion{5, 30.0}}, DegradeSpec{degrade::Defocus{5}},
          DegradeSpec{degrade::Srad{40, 0.1}}}) {
      Rng rng(0);
      ++cases;
      if (!(apply(spec, c, rng) == c)) ++constant_failures;
    }
  }
  std::mt19937_64 img_rng(3);
  const Image img = testing::random_image(9, 9, img_rng);
  const bool srad_zero = srad(img, 0, 0.1) == img;

  std::mt19937_64 meta(123);
  std::uniform_int_distribution<std::size_t> n_dist(1, 400);
  std::uniform_real_distribution<double> r_dist(0.0, 0.999);
  int mask_failures = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = n_dist(meta);
    const double ratio = r_dist(meta);
    Rng rng(meta());
    const PatchMask m = random_mask(n, ratio, rng);
    const auto expected = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
    std::vector<std::size_t> all;
    std::merge(m.masked.begin(), m.masked.end(), m.visible.begin(), m.visible.end(), std::back_inserter(all));
    std::vector<std::size_t> iota(n);
    std::iota(iota.begin(), iota.end(), 0);
    if (m.masked.size() != expected || all != iota) ++mask_failures;
  }
  return {constant_failures == 0 && srad_zero && mask_failures == 0,
          fmt("constant images preserved exactly in %d/%d cases; SRAD N=0 identity %s; mask count and partition held in %d/1000 triples",
              cases - constant_failures, cases, srad_zero ? "yes" : "no", 1000 - mask_failures)};
}

Outcome reduction() {
  RunConfig c = preset("pretrain.default");
  c.mask_ratio = 0.0;
  c.degrade = DegradeSpec{degrade::Identity{}};
  c.augment = false;
  SynthSpec s;
  s.count = 16;
  s.seed = 12;
  const Dataset d = synth_speckle(s);
  double worst = 0.0;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const Weights w = init_weights(c.model, seed);
    Rng rng(seed);
    std::vector<PretrainSample> batch;
    std::vector<Image> images;
    for (const auto& it : d.items) {
      batch.push_back(make_pretrain_sample(it.image, c, rng));
      images.push_back(it.image);
    }
    Graph g;
    worst = std::max(worst, std::abs(pretrain_loss(g, w, batch).item() - testing::autoencoder_mse(w, images, images)));
  }
  return {worst <= 1e-12, fmt("|pretrain loss - plain autoencoder MSE| max %.2e over 3 inits (limit 1e-12)", worst)};
}

// Shared between the efficacy and comparison criteria.
RunConfig smoke_pretrain_config() { return load_run_config(source_path("configs/pretrain_smoke.json").string()); }
RunConfig smoke_finetune_config() { return load_run_config(source_path("configs/finetune_smoke.json").string()); }

Outcome deblurring_efficacy() {
  const RunConfig cfg = smoke_pretrain_config();
  const auto t0 = Clock::now();
  const PretrainResult r = pretrain(cfg, load_source(cfg.data));
  const double secs = seconds_since(t0);
  SynthSpec held = cfg.data.synth;
  held.seed = 99;
  held.count = 32;
  const ReconstructionReport rep = reconstruct_report(r.checkpoint, synth_speckle(held), {}, 0);
  const double first = r.trace.front().loss, last = r.trace.back().loss;
  const bool pass = rep.mean_full < rep.mean_degraded && last < 0.5 * first && secs <= 600.0;
  return {pass, fmt("32 held-out images: MSE(x_hat, x) %.5f vs MSE(x_b, x) %.5f with all patches visible; masked-input MSE %.5f at "
                    "ratio %.2f (reported); loss %.4f -> %.4f over %d epochs; %.0f s (limit 600 s)",
                    rep.mean_full, rep.mean_degraded, rep.mean_masked, cfg.mask_ratio, first, last, cfg.epochs, secs)};
}

Outcome directional_ordering() {
  ComparisonSpec spec;
  spec.pretrain = smoke_pretrain_config();
  spec.finetune = smoke_finetune_config();
  const ComparisonOutcome out = compare_arms(spec);
  const double deblur = out.arm("deblur").f1.mean * 100.0, vanilla = out.arm("vanilla").f1.mean * 100.0,
               scratch = out.arm("scratch").f1.mean * 100.0, denoise = out.arm("denoise").f1.mean * 100.0;
  const double tol = 0.5;
  const bool pass = deblur + tol >= vanilla && vanilla + tol >= scratch && denoise <= deblur + tol && out.seconds < 3600.0;
  std::string seeds;
  for (const auto& a : out.arms) {
    seeds += " " + a.name + "[";
    for (std::size_t i = 0; i < a.test.size(); ++i) seeds += fmt(i ? " %.1f" : "%.1f", a.test[i].f1 * 100.0);
    seeds += "]";
  }
  return {pass, fmt("mean test F1 deblur %.2f, vanilla %.2f, scratch %.2f, denoise %.2f (3 seeds, tolerance 0.5); %.0f s (limit 3600 s);",
                    deblur, vanilla, scratch, denoise, out.seconds) +
                    seeds};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  int cases = 0;
  for (std::size_t n : {2u, 5u, 17u, 64u, 200u, 500u}) {
    for (int rep = 0; rep < 20; ++rep) {
      ScoredLabels s;
      std::uniform_int_distribution<int> coarse(0, 9);
      std::uniform_real_distribution<double> fine(0.0, 1.0);
      std::bernoulli_distribution pos(0.5);
      for (std::size_t i = 0; i < n; ++i) {
        s.scores.push_back(rep % 2 == 0 ? coarse(rng) / 10.0 : fine(rng));
        s.labels.push_back(pos(rng) ? 1 : 0);
      }
      s.labels[0] = 0;
      s.labels[1] = 1;
      worst = std::max(worst, std::abs(auroc(s) - testing::auroc_pairwise(s.scores, s.labels)));
      ++cases;
    }
  }
  const bool fixtures = auroc(ScoredLabels{{0.1, 0.4, 0.4, 0.8}, {0, 0, 1, 1}}) == 0.875 &&
                        accuracy(ScoredLabels{{0.6, 0.6, 0.4}, {1, 0, 1}}) == 1.0 / 3.0 &&
                        f1_score(ScoredLabels{{0.8, 0.7, 0.6, 0.1, 0.2}, {1, 1, 0, 1, 0}}) == 4.0 / 6.0 &&
                        f1_score(ScoredLabels{{0.9, 0.6, 0.3, 0.5, 0.49, 0.0}, {1, 0, 1, 1, 1, 0}}) == 4.0 / 7.0 &&
                        accuracy(ScoredLabels{{0.9, 0.1}, {1, 0}}) == 1.0;
  return {worst <= 1e-12 && fixtures,
          fmt("rank-sum vs pairwise AUROC max %.2e over %d cases up to n=500 (limit 1e-12); hand fixtures %s", worst, cases,
              fixtures ? "exact" : "mismatch")};
}

Outcome reproducibility() {
  const fs::path dir = work_dir("repro");
  auto cli = [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    return run_cli(args, out, err);
  };
  auto write = [](const fs::path& p, const std::string& text) { std::ofstream(p) << text; };
  write(dir / "spec.json", R"({"count": 8, "seed": 31})");
  write(dir / "pre.json", Json{{"extends", "pretrain.default"},
                               {"epochs", 3},
                               {"schedule", {{"warmup_epochs", 1}}},
                               {"batch_size", 8},
                               {"data", {{"synth", {{"count", 16}, {"seed", 30}}}}},
                               {"checkpoint", {{"out", (dir / "pre.ckpt").string()}}}}
                              .dump());
  const Json transfer{{"epochs", 3},
                      {"schedule", {{"warmup_epochs", 1}}},
                      {"batch_size", 8},
                      {"data", {{"synth", {{"count", 30}, {"seed", 32}}}}}};
  Json ft = transfer, scratch = transfer, lp = transfer;
  ft["extends"] = "finetune.default";
  ft["checkpoint"] = {{"out", (dir / "ft.ckpt").string()}};
  scratch["extends"] = "finetune.default";
  scratch["checkpoint"] = {{"out", (dir / "scratch.ckpt").string()}};
  lp["extends"] = "linprobe.default";
  lp["checkpoint"] = {{"out", (dir / "lp.ckpt").string()}};
  write(dir / "ft.json", ft.dump());
  write(dir / "scratch.json", scratch.dump());
  write(dir / "lp.json", lp.dump());

  const std::string d = dir.string();
  const std::vector<std::vector<std::string>> commands{
      {"synth", "--spec", d + "/spec.json", "--out", d + "/data"},
      {"degrade", "--method", "srad", "--param", "N=10", "--in", d + "/data/class1/00001.png", "--out", d + "/srad.png"},
      {"degrade", "--method", "noise", "--in", d + "/data/class0/00000.png", "--out", d + "/noise.png", "--seed", "4"},
      {"pretrain", "--config", d + "/pre.json", "--seed", "3"},
      {"finetune", "--config", d + "/ft.json", "--ckpt", d + "/pre.ckpt", "--seed", "3"},
      {"finetune", "--config", d + "/scratch.json", "--scratch", "--seed", "3"},
      {"linprobe", "--config", d + "/lp.json", "--ckpt", d + "/pre.ckpt", "--seed", "3"},
      {"eval", "--ckpt", d + "/ft.ckpt", "--data", d + "/data"},
      {"reconstruct", "--ckpt", d + "/pre.ckpt", "--data", d + "/data", "--out", d + "/recon"},
  };
  auto snapshot = [&] {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = bytes(e.path());
    return files;
  };
  std::map<std::string, std::string> first;
  int compared = 0, differing = 0;
  std::string which;
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& c : commands)
      if (cli(c) != kExitOk) return {false, "command failed: " + c[0]};
    const auto files = snapshot();
    if (pass == 0) {
      first = files;
      continue;
    }
    for (const auto& [name, content] : files) {
      ++compared;
      const auto it = first.find(name);
      if (it == first.end() || it->second != content) {
        ++differing;
        which += " " + name;
      }
    }
  }
  fs::remove_all(dir);
  return {differing == 0 && compared > 0,
          fmt("9 commands (synth, degrade x2, pretrain, finetune x2, linprobe, eval, reconstruct) run twice; %d/%d output files bit-identical",
              compared - differing, compared) +
              which};
}

Outcome leakage_guard() {
  const RunConfig pc = smoke_pretrain_config();
  const RunConfig fc = smoke_finetune_config();
  const Dataset corpus = load_source(pc.data);
  const Splits splits = split(load_source(fc.data), SplitRatios{}, fc.data.split_seed);
  std::size_t shared = 0;
  std::set<std::uint64_t> corpus_hashes;
  for (const auto& it : corpus.items) corpus_hashes.insert(content_hash(it.image));
  for (const auto& it : splits.test.items) shared += corpus_hashes.count(content_hash(it.image));

  // A planted duplicate must be refused at transfer time.
  RunConfig small = pc;
  small.epochs = 2;
  small.warmup_epochs = 1;
  Dataset leaky;
  leaky.items.assign(corpus.items.begin(), corpus.items.begin() + 8);
  leaky.items.push_back(splits.test.items[3]);
  const PretrainResult pre = pretrain(small, leaky);
  RunConfig ft = fc;
  ft.epochs = 1;
  ft.warmup_epochs = 0;
  ft.degrade = small.degrade;
  bool refused = false;
  try {
    finetune(ft, splits, &pre.checkpoint);
  } catch (const DataError&) {
    refused = true;
  }
  return {shared == 0 && refused,
          fmt("%zu of %zu test images occur in the %zu-image pretraining corpus; planted duplicate %s", shared, splits.test.size(),
              corpus.size(), refused ? "refused" : "NOT refused")};
}

}  // namespace

int main() {
  std::printf("deblur_mim %s acceptance\n", version().c_str());
  report(1, "gradient suite", gradient_suite);
  report(2, "convolution oracle", convolution_oracle);
  report(3, "degradation invariants", degradation_invariants);
  report(4, "reduction to a plain autoencoder", reduction);
  report(5, "deblurring efficacy", deblurring_efficacy);
  report(6, "directional ordering of pretraining arms", directional_ordering);
  report(7, "metric oracles", metric_oracles);
  report(8, "reproducibility", reproducibility);
  report(9, "leakage guard", leakage_guard);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

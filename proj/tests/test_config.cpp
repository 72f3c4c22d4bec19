#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "dmim/checkpoint.hpp"
#include "dmim/config.hpp"

using namespace dmim;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dmim_test_config_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("pretraining preset matches the published settings") {
  const RunConfig c = preset("pretrain.default");
  CHECK(c.mode == Mode::kPretrain);
  CHECK(c.optimizer.name == "adamw");
  CHECK(c.optimizer.base_lr == 1.5e-4);
  CHECK(c.optimizer.weight_decay == 0.05);
  CHECK(c.optimizer.beta1 == 0.9);
  CHECK(c.optimizer.beta2 == 0.95);
  CHECK(c.batch_size == 256);
  CHECK(c.warmup_epochs == 40);
  CHECK(c.epochs == 12000);
  CHECK(c.mask_ratio == 0.75);
  CHECK(c.augment);
  CHECK(c.degrade == DegradeSpec{degrade::Gaussian{1.1}});
}

TEST_CASE("fine-tuning preset matches the published settings") {
  const RunConfig c = preset("finetune.default");
  CHECK(c.mode == Mode::kFinetune);
  CHECK(c.optimizer.base_lr == 1e-3);
  CHECK(c.optimizer.weight_decay == 0.05);
  CHECK(c.optimizer.beta1 == 0.9);
  CHECK(c.optimizer.beta2 == 0.999);
  CHECK(c.optimizer.layer_decay == 0.75);
  CHECK(c.batch_size == 256);
  CHECK(c.warmup_epochs == 5);
  CHECK(c.label_smoothing == 0.1);
}

TEST_CASE("linear probing preset matches the published settings") {
  const RunConfig c = preset("linprobe.default");
  CHECK(c.mode == Mode::kLinprobe);
  CHECK(c.optimizer.name == "lars");
  CHECK(c.optimizer.base_lr == 0.1);
  CHECK(c.optimizer.weight_decay == 0.0);
  CHECK(c.optimizer.momentum == 0.9);
  CHECK(c.batch_size == 1024);
  CHECK(c.warmup_epochs == 10);
  CHECK_THROWS_AS(preset("nope"), ConfigError);
}

TEST_CASE("json round trip and hashing") {
  for (const char* name : {"pretrain.default", "finetune.default", "linprobe.default"}) {
    const RunConfig c = preset(name);
    const Json j = to_json(c);
    CHECK(to_json(run_config_from_json(j)) == j);
    CHECK(config_hash(j) == config_hash(to_json(run_config_from_json(j))));
  }
  Json a = to_json(preset("pretrain.default"));
  Json b = a;
  b["seed"] = 1;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(config_hash(a).size() == 16);
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(run_config_from_json(Json{{"epoch", 3}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(Json{{"optimizer", {{"lr", 0.1}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(Json{{"model", {{"width", 3}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(Json{{"degrade", {{"method", "gaussian"}, {"radius", 2}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(Json{{"mode", "train"}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(Json{{"epochs", "ten"}}), ConfigError);

  RunConfig c = preset("pretrain.default");
  c.mask_ratio = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = preset("finetune.default");
  c.label_smoothing = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = preset("finetune.default");
  CHECK_NOTHROW(c.validate());
  CHECK_THROWS_AS(c.require_inputs(), ConfigError);
  c.scratch = true;
  CHECK_NOTHROW(c.require_inputs());
}

TEST_CASE("config files extend presets") {
  const fs::path dir = scratch_dir("extends");
  std::ofstream(dir / "small.json") << R"({"extends": "pretrain.default", "epochs": 7, "batch_size": 32,
    "optimizer": {"base_lr": 0.005}, "degrade": {"method": "srad", "N": 10, "dt": 0.1}})";
  const RunConfig c = load_run_config((dir / "small.json").string());
  CHECK(c.epochs == 7);
  CHECK(c.batch_size == 32);
  CHECK(c.optimizer.base_lr == 0.005);
  CHECK(c.optimizer.beta2 == 0.95);
  CHECK(c.warmup_epochs == 40);
  CHECK(c.degrade == DegradeSpec{degrade::Srad{10, 0.1}});

  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK_THROWS_AS(load_run_config((dir / "broken.json").string()), ConfigError);
  std::ofstream(dir / "parent.json") << R"({"extends": "pretrain.large"})";
  CHECK_THROWS_AS(load_run_config((dir / "parent.json").string()), ConfigError);
  CHECK_THROWS_AS(load_run_config((dir / "absent.json").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("checkpoints round trip bit for bit") {
  const fs::path dir = scratch_dir("ckpt");
  Checkpoint ck;
  ck.weights = init_weights(ViTConfig{}, 3);
  init_head(ck.weights, 4);
  // Values that stress the encoding.
  ck.weights.patch_embed.weight[0] = -0.0;
  ck.weights.patch_embed.weight[1] = 1e-310;
  ck.weights.patch_embed.weight[2] = 0.1 + 0.2;
  ck.degrade = DegradeSpec{degrade::Motion{5, 30.0}};
  ck.mask_ratio = 0.5;
  ck.stage = "finetune";
  ck.meta = {{"seed", 9}};
  save_checkpoint(ck, dir / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.degrade == ck.degrade);
  CHECK(back.mask_ratio == 0.5);
  CHECK(back.stage == "finetune");
  CHECK(back.meta == ck.meta);
  const auto pa = ck.weights.parameters(), pb = back.weights.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(std::memcmp(pa[i].tensor.data().data(), pb[i].tensor.data().data(), pa[i].tensor.numel() * sizeof(double)) == 0);
  }
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const fs::path dir = scratch_dir("corrupt");
  Checkpoint ck;
  ck.weights = init_weights(ViTConfig{}, 0);
  save_checkpoint(ck, dir / "good.ckpt");
  const auto good = read_bytes(dir / "good.ckpt");

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
  auto bad = good;
  bad[0] = 'X';
  write_bytes(dir / "magic.ckpt", bad);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), IoError);
  bad = good;
  bad[8] = 7;
  write_bytes(dir / "version.ckpt", bad);
  CHECK_THROWS_AS(load_checkpoint(dir / "version.ckpt"), IoError);
  write_bytes(dir / "short.ckpt", std::vector<char>(good.begin(), good.end() - 16));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), IoError);
  bad = good;
  bad[30] = '@';
  write_bytes(dir / "header.ckpt", bad);
  CHECK_THROWS_AS(load_checkpoint(dir / "header.ckpt"), IoError);
  fs::remove_all(dir);
}

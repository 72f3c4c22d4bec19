#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dmim/data.hpp"
#include "support.hpp"

using namespace dmim;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("dmim_test_data_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_pgm(const fs::path& p, int h, int w, const std::vector<unsigned char>& px) {
  std::ofstream out(p, std::ios::binary);
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

Image on_grid(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> level(0, 255);
  Image img(h, w);
  for (auto& p : img.pixels) p = level(rng) / 255.0;
  return img;
}

std::multiset<std::uint64_t> hashes(const Dataset& d) {
  std::multiset<std::uint64_t> out;
  for (const auto& it : d.items) out.insert(content_hash(it.image));
  return out;
}

}  // namespace

TEST_CASE("png and pgm round trips on the 1/255 grid") {
  TempDir dir("roundtrip");
  const Image img = on_grid(7, 11, 3);
  for (const char* name : {"a.png", "a.pgm", "b.PNG"}) {
    save_image(img, dir.path / name);
    CHECK(load_image(dir.path / name) == img);
  }
  Image wild(2, 2, std::vector<double>{-0.5, 1.7, 0.5, 0.2});
  save_image(wild, dir.path / "w.png");
  const Image back = load_image(dir.path / "w.png");
  CHECK(back.pixels[0] == 0.0);
  CHECK(back.pixels[1] == 1.0);
  CHECK(back.pixels[2] == 128.0 / 255.0);
  CHECK(back.pixels[3] == 51.0 / 255.0);
}

TEST_CASE("hand-written pgm fixtures") {
  TempDir dir("pgm");
  write_pgm(dir.path / "black.pgm", 4, 4, std::vector<unsigned char>(16, 0));
  for (double p : load_image(dir.path / "black.pgm").pixels) CHECK(p == 0.0);

  std::vector<unsigned char> ramp(256);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) ramp[static_cast<std::size_t>(r * 16 + c)] = static_cast<unsigned char>(r * 16 + c);
  write_pgm(dir.path / "ramp.pgm", 16, 16, ramp);
  const Image img = load_image(dir.path / "ramp.pgm");
  for (int k = 0; k < 16; ++k) CHECK(img.at(0, k) == k / 255.0);
  CHECK(img.at(15, 15) == 1.0);

  std::ofstream(dir.path / "ascii.pgm") << "P2\n# comment\n3 1\n255\n0 128 255\n";
  const Image a = load_image(dir.path / "ascii.pgm");
  CHECK(a.pixels == std::vector<double>{0.0, 128.0 / 255.0, 1.0});
}

TEST_CASE("unreadable and unsupported images are reported") {
  TempDir dir("bad");
  CHECK_THROWS_AS(load_image(dir.path / "missing.png"), IoError);
  std::ofstream(dir.path / "junk.png") << "not an image";
  CHECK_THROWS_AS(load_image(dir.path / "junk.png"), IoError);
  std::ofstream(dir.path / "color.ppm") << "P6\n1 1\n255\nabc";
  CHECK_THROWS_AS(load_image(dir.path / "color.ppm"), IoError);
  std::ofstream(dir.path / "deep.pgm") << "P2\n1 1\n65535\n100\n";
  CHECK_THROWS_AS(load_image(dir.path / "deep.pgm"), IoError);
}

TEST_CASE("synthetic corpus is deterministic, balanced and in range") {
  SynthSpec spec;
  spec.count = 41;
  spec.seed = 17;
  const Dataset a = synth_speckle(spec);
  const Dataset b = synth_speckle(spec);
  REQUIRE(a.size() == 41);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.items[i].image == b.items[i].image);
    CHECK(a.items[i].label == static_cast<int>(i % 2));
    CHECK(a.items[i].spots.size() == (i % 2 == 1 ? a.items[i].spots.size() : 0));
    for (double p : a.items[i].image.pixels) CHECK((p >= 0.0 && p <= 1.0));
  }
  const auto ones = static_cast<long>(a.count_label(1));
  const auto zeros = static_cast<long>(a.count_label(0));
  CHECK(std::abs(ones - zeros) <= 1);

  spec.seed = 18;
  CHECK_FALSE(synth_speckle(spec).items[0].image == a.items[0].image);
  spec.labeled = false;
  const Dataset u = synth_speckle(spec);
  CHECK_FALSE(u.labeled());
  CHECK(u.items[1].spots.size() >= 1);
}

TEST_CASE("planted spots stand out from the local background") {
  SynthSpec spec;
  spec.count = 200;
  spec.seed = 4;
  const Dataset d = synth_speckle(spec);
  // Spot disc (radius r) against a surrounding ring (3r to 5r), averaged over spots.
  double inside = 0.0, ring = 0.0;
  std::size_t n_in = 0, n_ring = 0;
  const double r = spec.spot_radius;
  for (const auto& item : d.items)
    for (const Spot& s : item.spots)
      for (int y = 0; y < spec.image_side; ++y)
        for (int x = 0; x < spec.image_side; ++x) {
          const double dist = std::hypot(y - s.row, x - s.col);
          if (dist <= r) {
            inside += item.image.at(y, x);
            ++n_in;
          } else if (dist >= 3 * r && dist <= 5 * r) {
            ring += item.image.at(y, x);
            ++n_ring;
          }
        }
  REQUIRE(n_in > 0);
  CHECK(inside / static_cast<double>(n_in) - ring / static_cast<double>(n_ring) >= spec.spot_intensity / 2.0);
}

TEST_CASE("synth spec validation") {
  SynthSpec s;
  s.spot_radius = 8.0;
  CHECK_THROWS(s.validate());
  s = SynthSpec{};
  s.count = 0;
  CHECK_THROWS(s.validate());
  s = SynthSpec{};
  s.spot_count_min = 3;
  s.spot_count_max = 2;
  CHECK_THROWS(s.validate());
}

TEST_CASE("3:1:1 split is stratified, disjoint and exhaustive") {
  SynthSpec spec;
  spec.count = 100;
  const Dataset d = synth_speckle(spec);
  const Splits s = split(d, {}, 7);
  CHECK(s.train.size() == 60);
  CHECK(s.val.size() == 20);
  CHECK(s.test.size() == 20);
  CHECK(s.val.count_label(1) == 10);
  CHECK(s.test.count_label(0) == 10);

  auto all = hashes(s.train);
  for (auto h : hashes(s.val)) all.insert(h);
  for (auto h : hashes(s.test)) all.insert(h);
  CHECK(all == hashes(d));
  CHECK_NOTHROW(check_disjoint(s.train, s.test, "train/test"));
  CHECK_NOTHROW(check_disjoint(s.val, s.test, "val/test"));

  // Uneven classes: each split's share of positives stays within one item.
  SynthSpec odd = spec;
  odd.count = 37;
  const Dataset e = synth_speckle(odd);
  const Splits t = split(e, {}, 1);
  const double frac = static_cast<double>(e.count_label(1)) / static_cast<double>(e.size());
  for (const Dataset* part : {&t.train, &t.val, &t.test})
    CHECK(std::abs(static_cast<double>(part->count_label(1)) - frac * static_cast<double>(part->size())) <= 1.0);
  CHECK(t.train.size() + t.val.size() + t.test.size() == 37);

  CHECK(hashes(split(d, {}, 7).test) == hashes(s.test));
  CHECK_THROWS_AS(split(Dataset{}, {}, 0), DataError);
  CHECK_THROWS_AS(split(d, {3, 0, 1}, 0), DataError);
}

TEST_CASE("dataset layouts: class folders, flat directory and manifest") {
  TempDir dir("layout");
  SynthSpec spec;
  spec.count = 6;
  const Dataset d = synth_speckle(spec);
  save_dataset(d, dir.path / "labeled");
  CHECK(fs::is_directory(dir.path / "labeled" / "class0"));
  const Dataset back = load_dataset(dir.path / "labeled");
  CHECK(back.size() == 6);
  CHECK(back.count_label(1) == 3);
  CHECK(back.labeled());

  spec.labeled = false;
  save_dataset(synth_speckle(spec), dir.path / "flat");
  const Dataset flat = load_dataset(dir.path / "flat");
  CHECK(flat.size() == 6);
  CHECK_FALSE(flat.labeled());

  std::ofstream(dir.path / "list.txt") << "# comment\nlabeled/class0/00000.png 0\nflat/00001.png 1\n\nflat/00002.png\n";
  const Dataset m = load_dataset(dir.path / "list.txt");
  REQUIRE(m.size() == 3);
  CHECK(m.items[0].label == 0);
  CHECK(m.items[1].label == 1);
  CHECK(m.items[2].label == -1);

  std::ofstream(dir.path / "bad.txt") << "flat/00001.png 3\n";
  CHECK_THROWS_AS(load_dataset(dir.path / "bad.txt"), DataError);
  CHECK_THROWS_AS(load_dataset(dir.path / "nope"), IoError);
  fs::create_directories(dir.path / "empty");
  CHECK_THROWS_AS(load_dataset(dir.path / "empty"), DataError);
}

TEST_CASE("leakage check by content hash") {
  SynthSpec spec;
  spec.count = 10;
  const Dataset a = synth_speckle(spec);
  spec.seed = 99;
  Dataset b = synth_speckle(spec);
  CHECK_NOTHROW(check_disjoint(a, b, "pretrain/test"));
  b.items.push_back(a.items[4]);
  CHECK_THROWS_AS(check_disjoint(a, b, "pretrain/test"), DataError);
  std::vector<std::uint64_t> h;
  for (const auto& it : a.items) h.push_back(content_hash(it.image));
  CHECK_THROWS_AS(check_disjoint(h, b, "pretrain/test"), DataError);
}

TEST_CASE("bilinear resize and random resized crop") {
  const Image img = on_grid(12, 12, 5);
  CHECK(resize_bilinear(img, 12, 12) == img);
  Rng full(0);
  CHECK(random_resized_crop(img, full, 1.0, 1.0, 12) == img);

  Rng a(42), b(42);
  const Image ca = random_resized_crop(img, a, 0.6, 1.0, 8);
  CHECK(ca.height == 8);
  CHECK(ca.width == 8);
  CHECK(ca == random_resized_crop(img, b, 0.6, 1.0, 8));
  // Frozen output of this fixture and seed.
  CHECK(content_hash(ca) == 0xff825a6a6c12bf8cULL);

  Rng c(1);
  CHECK_THROWS_AS(random_resized_crop(img, c, 0.0, 1.0, 8), DataError);
  CHECK_THROWS_AS(random_resized_crop(img, c, 0.5, 1.2, 8), DataError);
}

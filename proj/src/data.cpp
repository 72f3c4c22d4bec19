#include "dmim/data.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dmim/patching.hpp"

namespace fs = std::filesystem;

namespace dmim {

// ---------------------------------------------------------------------------
// Image IO

namespace {

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

std::uint8_t to_byte(double p) { return static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)); }

Image load_png(const fs::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw IoError("cannot read PNG '" + path.string() + "': " + png.message);
  if (png.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA | PNG_FORMAT_FLAG_LINEAR)) {
    png_image_free(&png);
    throw IoError("'" + path.string() + "' is not an 8-bit grayscale PNG");
  }
  png.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr))
    throw IoError("cannot decode PNG '" + path.string() + "': " + png.message);
  Image img(static_cast<int>(png.height), static_cast<int>(png.width));
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = buf[i] / 255.0;
  return img;
}

void save_png(const Image& img, const fs::path& path) {
  std::vector<std::uint8_t> buf(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) buf[i] = to_byte(img.pixels[i]);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG '" + path.string() + "': " + png.message);
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

Image load_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::string magic = pgm_token(in);
  if (magic != "P5" && magic != "P2") throw IoError("'" + path.string() + "' is not a grayscale PGM (magic " + magic + ")");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pgm_token(in));
    h = std::stoi(pgm_token(in));
    maxval = std::stoi(pgm_token(in));
  } catch (const std::exception&) {
    throw IoError("malformed PGM header in '" + path.string() + "'");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("'" + path.string() + "' must be an 8-bit PGM with positive dims");
  Image img(h, w);
  if (magic == "P5") {
    std::vector<char> buf(img.size());
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw IoError("truncated PGM '" + path.string() + "'");
    for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<unsigned char>(buf[i]) / 255.0;
  } else {
    for (std::size_t i = 0; i < img.size(); ++i) {
      int v = -1;
      if (!(in >> v) || v < 0 || v > 255) throw IoError("bad sample in PGM '" + path.string() + "'");
      img.pixels[i] = v / 255.0;
    }
  }
  return img;
}

void save_pgm(const Image& img, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (double p : img.pixels) out.put(static_cast<char>(to_byte(p)));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

Image load_image(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("no such file '" + path.string() + "'");
  const std::string ext = lower_ext(path);
  if (ext == ".png") return load_png(path);
  if (ext == ".pgm") return load_pgm(path);
  throw IoError("unsupported image format '" + ext + "'");
}

void save_image(const Image& img, const fs::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return save_png(img, path);
  if (ext == ".pgm") return save_pgm(img, path);
  throw IoError("unsupported image format '" + ext + "'");
}

// ---------------------------------------------------------------------------
// Dataset

bool Dataset::labeled() const {
  return !items.empty() && std::all_of(items.begin(), items.end(), [](const Item& it) { return it.label >= 0; });
}

std::size_t Dataset::count_label(int label) const {
  return static_cast<std::size_t>(std::count_if(items.begin(), items.end(), [label](const Item& it) { return it.label == label; }));
}

void SynthSpec::validate() const {
  auto fail = [](const std::string& m) { throw DataError("synth spec: " + m); };
  if (count <= 0 || image_side <= 0 || speckle_looks <= 0) fail("count, image_side and speckle_looks must be positive");
  if (!(speckle_grain > 0.0) || !(brightness > 0.0)) fail("speckle_grain and brightness must be positive");
  if (spot_count_min <= 0 || spot_count_max < spot_count_min) fail("spot count range must be positive and ordered");
  if (!(spot_intensity > 0.0) || !(spot_radius > 0.0)) fail("spot intensity and radius must be positive");
  if (spot_radius >= image_side / 4.0) fail("spot radius must be below image_side / 4");
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Image smooth_background(int side, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Image bg(side, side, 0.55);
  for (int term = 0; term < 3; ++term) {
    const double amp = 0.12 * unit(rng);
    const double fy = 1.5 * unit(rng);
    const double fx = 1.5 * unit(rng);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        bg.at(y, x) += amp * std::cos(2.0 * std::numbers::pi * (fy * y + fx * x) / side + phase);
  }
  for (auto& p : bg.pixels) p = std::clamp(p, 0.15, 0.95);
  return bg;
}

// Mean-one speckle: squared magnitude of low-pass filtered complex Gaussian
// noise, averaged over independent looks.
Image speckle_field(int side, int looks, double grain, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Image acc(side, side, 0.0);
  for (int l = 0; l < looks; ++l) {
    Image re(side, side), im(side, side);
    for (auto& p : re.pixels) p = normal(rng);
    for (auto& p : im.pixels) p = normal(rng);
    re = gaussian_blur(re, grain);
    im = gaussian_blur(im, grain);
    Image mag(side, side);
    for (std::size_t i = 0; i < mag.size(); ++i) mag.pixels[i] = re.pixels[i] * re.pixels[i] + im.pixels[i] * im.pixels[i];
    const double mu = image_mean(mag);
    for (std::size_t i = 0; i < mag.size(); ++i) acc.pixels[i] += mag.pixels[i] / (mu * looks);
  }
  return acc;
}

}  // namespace

Dataset synth_speckle(const SynthSpec& spec) {
  spec.validate();
  Dataset out;
  out.items.reserve(static_cast<std::size_t>(spec.count));
  const int side = spec.image_side;
  for (int i = 0; i < spec.count; ++i) {
    Rng rng(splitmix(spec.seed * 0x100000001b3ULL + static_cast<std::uint64_t>(i)));
    const Image bg = smooth_background(side, rng);
    const Image sp = speckle_field(side, spec.speckle_looks, spec.speckle_grain, rng);
    Item item;
    item.image = Image(side, side);
    for (std::size_t k = 0; k < item.image.size(); ++k) item.image.pixels[k] = bg.pixels[k] * sp.pixels[k] * spec.brightness;

    const int label = i % 2;
    if (label == 1) {
      std::uniform_int_distribution<int> count(spec.spot_count_min, spec.spot_count_max);
      const double margin = 2.0 * spec.spot_radius + 1.0;
      std::uniform_real_distribution<double> pos(margin, side - 1 - margin);
      const int n = count(rng);
      for (int s = 0; s < n; ++s) {
        Spot spot{pos(rng), pos(rng)};
        for (int y = 0; y < side; ++y)
          for (int x = 0; x < side; ++x) {
            const double d2 = (y - spot.row) * (y - spot.row) + (x - spot.col) * (x - spot.col);
            item.image.at(y, x) += spec.spot_intensity * std::exp(-d2 / (2.0 * spec.spot_radius * spec.spot_radius));
          }
        item.spots.push_back(spot);
      }
    }
    for (auto& p : item.image.pixels) p = std::clamp(p, 0.0, 1.0);
    item.label = spec.labeled ? label : -1;
    item.source = "synth:" + std::to_string(spec.seed) + ":" + std::to_string(i);
    out.items.push_back(std::move(item));
  }
  return out;
}

Splits split(const Dataset& data, const SplitRatios& ratios, std::uint64_t seed) {
  if (data.items.empty()) throw DataError("split: empty dataset");
  if (!(ratios.train > 0.0 && ratios.val > 0.0 && ratios.test > 0.0)) throw DataError("split: ratios must be positive");
  const double total = ratios.train + ratios.val + ratios.test;
  Rng rng(seed);

  std::map<int, std::vector<std::size_t>> strata;
  const bool labeled = data.labeled();
  for (std::size_t i = 0; i < data.items.size(); ++i) strata[labeled ? data.items[i].label : -1].push_back(i);

  Splits out;
  out.train.split = SplitTag::kTrain;
  out.val.split = SplitTag::kVal;
  out.test.split = SplitTag::kTest;
  for (auto& [label, idx] : strata) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
    const auto n = static_cast<double>(idx.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * ratios.val / total));
    const auto n_test = static_cast<std::size_t>(std::floor(n * ratios.test / total));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Item& item = data.items[idx[k]];
      if (k < n_val) out.val.items.push_back(item);
      else if (k < n_val + n_test) out.test.items.push_back(item);
      else out.train.items.push_back(item);
    }
  }
  return out;
}

namespace {

bool is_image_file(const fs::path& p) {
  const std::string e = lower_ext(p);
  return e == ".png" || e == ".pgm";
}

std::vector<fs::path> sorted_images(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

Dataset load_dataset(const fs::path& root) {
  if (!fs::exists(root)) throw IoError("no such dataset '" + root.string() + "'");
  Dataset out;
  if (fs::is_regular_file(root)) {
    std::ifstream in(root);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string rel;
      ls >> rel;
      Item item;
      int label;
      if (ls >> label) {
        if (label != 0 && label != 1) throw DataError("manifest line " + std::to_string(lineno) + ": label must be 0 or 1");
        item.label = label;
      }
      const fs::path p = root.parent_path() / rel;
      item.image = load_image(p);
      item.source = p.string();
      out.items.push_back(std::move(item));
    }
  } else if (fs::is_directory(root / "class0") || fs::is_directory(root / "class1")) {
    for (int label : {0, 1}) {
      const fs::path dir = root / ("class" + std::to_string(label));
      if (!fs::is_directory(dir)) continue;
      for (const auto& p : sorted_images(dir)) out.items.push_back(Item{load_image(p), label, p.string(), {}});
    }
  } else {
    for (const auto& p : sorted_images(root)) out.items.push_back(Item{load_image(p), -1, p.string(), {}});
  }
  if (out.items.empty()) throw DataError("dataset '" + root.string() + "' holds no images");
  return out;
}

void save_dataset(const Dataset& data, const fs::path& root) {
  fs::create_directories(root);
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    const Item& item = data.items[i];
    fs::path dir = root;
    if (item.label >= 0) dir /= "class" + std::to_string(item.label);
    fs::create_directories(dir);
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu.png", i);
    save_image(item.image, dir / name);
  }
}

void check_disjoint(const Dataset& a, const Dataset& b, const std::string& what) {
  std::unordered_map<std::uint64_t, std::size_t> seen;
  for (std::size_t i = 0; i < a.items.size(); ++i) seen.emplace(content_hash(a.items[i].image), i);
  for (const auto& item : b.items) {
    auto it = seen.find(content_hash(item.image));
    if (it != seen.end() && a.items[it->second].image.pixels.size() == item.image.pixels.size())
      throw DataError("leakage: " + what + " share image '" + item.source + "'");
  }
}

void check_disjoint(std::span<const std::uint64_t> hashes, const Dataset& b, const std::string& what) {
  const std::unordered_set<std::uint64_t> seen(hashes.begin(), hashes.end());
  for (const auto& item : b.items)
    if (seen.contains(content_hash(item.image))) throw DataError("leakage: " + what + " share image '" + item.source + "'");
}

// ---------------------------------------------------------------------------
// Augmentation

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw DataError("resize: output dims must be positive");
  Image out(out_h, out_w);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      const double top = img.at(y0, x0) * (1.0 - wx) + img.at(y0, x1) * wx;
      const double bot = img.at(y1, x0) * (1.0 - wx) + img.at(y1, x1) * wx;
      out.at(y, x) = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

Image random_resized_crop(const Image& img, Rng& rng, double scale_lo, double scale_hi, int out_side) {
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi && scale_hi <= 1.0)) throw DataError("random_resized_crop: scale range must lie in (0, 1]");
  if (out_side <= 0) throw DataError("random_resized_crop: output side must be positive");
  const int base = std::min(img.height, img.width);
  std::uniform_real_distribution<double> scale(scale_lo, scale_hi);
  const double s = scale_lo == scale_hi ? scale_lo : scale(rng);
  const int side = std::clamp(static_cast<int>(std::lround(std::sqrt(s) * base)), 1, base);
  if (side > img.height || side > img.width) throw DataError("random_resized_crop: crop larger than image");
  const int top = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(img.height - side + 1)));
  const int left = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(img.width - side + 1)));
  Image crop(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) crop.at(y, x) = img.at(top + y, left + x);
  if (side == out_side) return crop;
  return resize_bilinear(crop, out_side, out_side);
}

}  // namespace dmim

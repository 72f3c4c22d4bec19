#include "dmim/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "dmim/config.hpp"
#include "dmim/data.hpp"

namespace dmim {

namespace {

constexpr char kMagic[8] = {'D', 'M', 'I', 'M', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated checkpoint '" + path + "'");
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto params = ckpt.weights.parameters();
  Json header;
  header["model"] = vit_to_json(ckpt.weights.config);
  header["degrade"] = degrade_to_json(ckpt.degrade);
  header["mask_ratio"] = ckpt.mask_ratio;
  header["stage"] = ckpt.stage;
  header["meta"] = ckpt.meta;
  Json plist = Json::array();
  for (const auto& p : params) plist.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  header["params"] = plist;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kCheckpointVersion);
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params)
    out.write(reinterpret_cast<const char*>(p.tensor.data().data()), static_cast<std::streamsize>(p.tensor.numel() * sizeof(double)));
  if (!out) throw IoError("write failed for checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + where + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("'" + where + "' is not a checkpoint");
  const auto version = read_pod<std::uint32_t>(in, where);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto len = read_pod<std::uint64_t>(in, where);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header in '" + where + "'");
  Json header;
  try {
    header = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw IoError("corrupt checkpoint header in '" + where + "': " + e.what());
  }

  Checkpoint ckpt;
  ckpt.weights = init_weights(vit_from_json(header.at("model")), 0);
  ckpt.degrade = degrade_from_json(header.at("degrade"));
  ckpt.mask_ratio = header.at("mask_ratio").get<double>();
  ckpt.stage = header.at("stage").get<std::string>();
  ckpt.meta = header.value("meta", Json::object());

  std::map<std::string, Tensor> by_name;
  for (const auto& p : ckpt.weights.parameters()) by_name.emplace(p.name, p.tensor);
  const auto& plist = header.at("params");
  if (plist.size() != by_name.size())
    throw IoError("checkpoint '" + where + "' holds " + std::to_string(plist.size()) + " parameters, model expects " +
                  std::to_string(by_name.size()));
  for (const auto& entry : plist) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint '" + where + "' has unexpected parameter '" + name + "'");
    Tensor t = it->second;
    if (t.shape() != shape) throw ShapeError("load_checkpoint:" + name, t.shape(), shape);
    in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint payload in '" + where + "'");
  }
  return ckpt;
}

}  // namespace dmim

#include "cigli/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace cigli::ckpt {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

std::string file_name_for(const std::string& param) {
  std::string out;
  for (char ch : param) out.push_back(ch == '/' ? '_' : ch);
  return out + ".bin";
}

}  // namespace

void save(const std::filesystem::path& dir, const std::string& kind, const json& config, const nn::ParamList& params,
          long step, std::uint64_t seed, const json& extra) {
  std::filesystem::create_directories(dir);
  json entries = json::array();
  for (const auto& p : params) {
    const auto data = p.tensor.data();
    std::vector<float> buf(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i])) throw CheckpointError("parameter '" + p.name + "' has a non-finite entry");
      buf[i] = static_cast<float>(data[i]);
    }
    const std::string file = file_name_for(p.name);
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + (dir / file).string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    entries.push_back({{"name", p.name},
                       {"shape", p.tensor.shape()},
                       {"dtype", "float32"},
                       {"file", file},
                       {"byte_offset", 0},
                       {"byte_length", buf.size() * sizeof(float)}});
  }
  json manifest{{"kind", kind}, {"config", config}, {"step", step}, {"seed", seed}, {"params", entries}, {"extra", extra}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw CheckpointError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(1) << '\n';
}

Manifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw CheckpointError("no checkpoint manifest at " + (dir / "manifest.json").string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  Manifest m;
  m.kind = j.at("kind").get<std::string>();
  m.config = j.at("config");
  m.step = j.at("step").get<long>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.params = j.at("params");
  m.extra = j.value("extra", json::object());
  return m;
}

Manifest load_into(const std::filesystem::path& dir, const std::string& kind, const nn::ParamList& params) {
  Manifest m = read_manifest(dir);
  if (m.kind != kind) throw CheckpointError(dir.string() + " holds a '" + m.kind + "' checkpoint, expected '" + kind + "'");
  std::map<std::string, json> entries;
  for (const auto& e : m.params) entries[e.at("name").get<std::string>()] = e;
  if (entries.size() != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(entries.size()) + " parameters, model expects " +
                          std::to_string(params.size()));
  }
  for (auto p : params) {
    const auto it = entries.find(p.name);
    if (it == entries.end()) throw CheckpointError("checkpoint is missing parameter '" + p.name + "'");
    const auto& e = it->second;
    if (e.at("shape").get<nn::Shape>() != p.tensor.shape()) {
      throw CheckpointError("shape mismatch for '" + p.name + "': checkpoint " + e.at("shape").dump() + ", model " +
                            nn::shape_str(p.tensor.shape()));
    }
    if (e.at("dtype").get<std::string>() != "float32") throw CheckpointError("unsupported dtype for '" + p.name + "'");
    const auto n = p.tensor.size();
    const auto offset = e.at("byte_offset").get<std::size_t>();
    const auto length = e.at("byte_length").get<std::size_t>();
    if (length != n * sizeof(float)) throw CheckpointError("byte length mismatch for '" + p.name + "'");
    std::ifstream in(dir / e.at("file").get<std::string>(), std::ios::binary);
    if (!in) throw CheckpointError("cannot read data for '" + p.name + "'");
    in.seekg(static_cast<std::streamoff>(offset));
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(length));
    if (in.gcount() != static_cast<std::streamsize>(length)) throw CheckpointError("truncated data for '" + p.name + "'");
    auto data = p.tensor.data();
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(buf[i]);
  }
  return m;
}

}  // namespace cigli::ckpt

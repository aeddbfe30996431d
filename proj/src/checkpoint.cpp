#include "pgasr/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "pgasr/error.hpp"

namespace pgasr::model {

namespace {
constexpr char kMagic[8] = {'P', 'G', 'A', 'S', 'R', 'C', 'K', 'P'};
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& state, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["config"] = state.config.to_json();
  header["nodes"] = state.nodes;
  header["window"] = state.window;
  header["meta"] = {{"phase", meta.phase},
                    {"fold_index", meta.fold_index},
                    {"epoch", meta.epoch},
                    {"validation_score", meta.validation_score}};
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : state.params.entries()) tensors.push_back({{"name", name}, {"shape", t.shape()}});
  header["tensors"] = std::move(tensors);
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling and rename so a crash never leaves a torn checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : state.params.entries())
      out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!out) throw Error("checkpoint write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw LoadError(path.string() + " is not a checkpoint");
  if (version != kCheckpointVersion)
    throw LoadError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  if (len > (1ULL << 30)) throw LoadError("corrupt checkpoint header in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw LoadError("truncated checkpoint header in " + path.string());

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.state.config = ModelConfig::from_json(header.at("config"));
    ck.state.nodes = header.at("nodes").get<int>();
    ck.state.window = header.at("window").get<int>();
    const auto& meta = header.at("meta");
    ck.meta.phase = meta.at("phase").get<std::string>();
    ck.meta.fold_index = meta.at("fold_index").get<int>();
    ck.meta.epoch = meta.at("epoch").get<int>();
    ck.meta.validation_score = meta.at("validation_score").get<double>();
    for (const auto& entry : header.at("tensors")) {
      ag::Tensor& t = ck.state.params.add(entry.at("name").get<std::string>(), entry.at("shape").get<ag::Shape>());
      auto buf = t.mutable_data();
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
      if (!in) throw LoadError("truncated tensor data in " + path.string());
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  return ck;
}

}  // namespace pgasr::model

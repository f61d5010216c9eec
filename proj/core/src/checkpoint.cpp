#include "mhad/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mhad {

namespace {

constexpr std::string_view kMagic = "MHADCKPT";
constexpr int kVersion = 1;

nlohmann::json model_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"embed_dim", c.embed_dim},
          {"hidden", c.hidden},
          {"heads", c.heads},
          {"scoring", std::string(to_string(c.scoring))},
          {"train_embeddings", c.train_embeddings}};
}

ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.scoring = parse_scoring(j.at("scoring").get<std::string>());
  c.train_embeddings = j.at("train_embeddings").get<bool>();
  return c;
}

void put_le32(std::string& buf, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int s = 0; s < 32; s += 8) buf.push_back(static_cast<char>((bits >> s) & 0xFF));
}

float get_le32(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace

void write_checkpoint(std::ostream& out, const ModelParams<float>& params, const CheckpointMeta& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string blob;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& t = params.tensors[i];
    tensors.push_back({{"name", params.names[i]},
                       {"shape", t.shape()},
                       {"dtype", "float32-le"},
                       {"offset", blob.size()},
                       {"bytes", t.size() * 4}});
    for (const float v : t.values()) put_le32(blob, v);
  }
  nlohmann::json manifest = {
      {"format", "mhad-checkpoint"},
      {"version", kVersion},
      {"variant", meta.variant},
      {"seed", meta.seed},
      {"vocab_seed", meta.vocab_seed},
      {"vocab_fingerprint", meta.vocab_fingerprint},
      {"config", meta.config},
      {"model", model_to_json(params.config)},
      {"tensors", tensors},
  };
  const std::string text = manifest.dump(2) + "\n";
  out << kMagic << ' ' << kVersion << ' ' << text.size() << '\n' << text;
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw CheckpointError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string magic;
  int version = 0;
  std::size_t manifest_bytes = 0;
  if (!(in >> magic >> version >> manifest_bytes) || magic != kMagic) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  if (in.get() != '\n') throw CheckpointError("malformed checkpoint header");
  std::string text(manifest_bytes, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(manifest_bytes))) {
    throw CheckpointError("truncated checkpoint manifest");
  }
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Checkpoint ck;
  try {
    const auto manifest = nlohmann::json::parse(text);
    ck.meta.variant = manifest.at("variant").get<std::string>();
    ck.meta.seed = manifest.at("seed").get<std::uint64_t>();
    ck.meta.vocab_seed = manifest.at("vocab_seed").get<std::uint64_t>();
    ck.meta.vocab_fingerprint = manifest.at("vocab_fingerprint").get<std::uint64_t>();
    ck.meta.config = manifest.at("config").get<std::map<std::string, std::string>>();
    ck.params.config = model_from_json(manifest.at("model"));
    for (const auto& entry : manifest.at("tensors")) {
      if (entry.at("dtype").get<std::string>() != "float32-le") throw CheckpointError("unsupported dtype");
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto bytes = entry.at("bytes").get<std::size_t>();
      if (shape.size() != 2 || bytes != shape[0] * shape[1] * 4 || offset + bytes > blob.size()) {
        throw CheckpointError("tensor '" + entry.at("name").get<std::string>() + "' has inconsistent layout");
      }
      Tensor<float> t(shape[0], shape[1]);
      const auto* p = reinterpret_cast<const unsigned char*>(blob.data()) + offset;
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_le32(p + 4 * i);
      ck.params.names.push_back(entry.at("name").get<std::string>());
      ck.params.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params, const CheckpointMeta& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  write_checkpoint(out, params, meta);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace mhad

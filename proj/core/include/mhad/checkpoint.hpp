#pragma once

// Checkpoint container:
//
//   MHADCKPT 1 <manifest bytes>\n
//   <JSON manifest>
//   <float32 little-endian blobs, back to back>
//
// The manifest lists each tensor's name, shape, dtype and byte offset
// (relative to the first blob) and echoes the model config, run config and
// seeds. Nothing time-dependent is written, so identical runs give identical
// files.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>

#include "mhad/model.hpp"

namespace mhad {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  std::string variant;
  std::uint64_t seed = 0;
  std::uint64_t vocab_seed = 0;
  std::uint64_t vocab_fingerprint = 0;
  std::map<std::string, std::string> config;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  ModelParams<float> params;
  CheckpointMeta meta;
};

void write_checkpoint(std::ostream& out, const ModelParams<float>& params, const CheckpointMeta& meta);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mhad

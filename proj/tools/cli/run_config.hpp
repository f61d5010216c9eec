#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mhad/hyperparams.hpp"

namespace mhad::cli {

enum class Variant { mha, mhad, tri1, tri2 };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

/// Everything a command needs: hyperparameters, file locations and seeds.
/// Serialized as flat `key = value` text, one key per field.
struct RunConfig {
  HyperParams hp;
  Variant variant = Variant::mhad;
  std::string train_path;
  std::string unlabeled_path;
  std::string test_path;
  std::string embeddings_path;
  std::string checkpoint_dir;  // empty: same as output_dir
  std::string output_dir = "runs";
  std::string source_name;     // empty: stem of train_path
  std::string target_name;     // empty: stem of test_path
  std::vector<std::uint64_t> seeds = {1};
  std::uint64_t vocab_seed = 1;  // draws the UNK embedding row
  bool balance = false;
  bool parallel = false;

  [[nodiscard]] std::filesystem::path checkpoint_root() const {
    return checkpoint_dir.empty() ? std::filesystem::path(output_dir) : std::filesystem::path(checkpoint_dir);
  }
  [[nodiscard]] std::string source_label() const;
  [[nodiscard]] std::string target_label() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// All recognised keys, in serialization order.
const std::vector<std::string>& config_keys();

std::map<std::string, std::string> to_map(const RunConfig& config);
/// Applies key/value pairs on top of `base`. Unknown keys and bad values throw ConfigError.
RunConfig apply_values(RunConfig base, const std::map<std::string, std::string>& values);

/// Parses `key = value` lines; `#` starts a comment.
std::map<std::string, std::string> parse_config_text(std::string_view text);
std::string serialize_config(const RunConfig& config);
RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {});

/// Checks hyperparameters, variant requirements and that referenced input files exist.
void validate(const RunConfig& config, bool require_train);

}  // namespace mhad::cli

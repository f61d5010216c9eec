#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

namespace mhad::cli {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::mha: return "mha";
    case Variant::mhad: return "mhad";
    case Variant::tri1: return "tri1";
    case Variant::tri2: return "tri2";
  }
  return "unknown";
}

Variant parse_variant(std::string_view text) {
  if (text == "mha") return Variant::mha;
  if (text == "mhad") return Variant::mhad;
  if (text == "tri1") return Variant::tri1;
  if (text == "tri2") return Variant::tri2;
  throw ConfigError("unknown variant '" + std::string(text) + "' (expected mha, mhad, tri1 or tri2)");
}

std::string RunConfig::source_label() const {
  if (!source_name.empty()) return source_name;
  return train_path.empty() ? "source" : std::filesystem::path(train_path).stem().string();
}

std::string RunConfig::target_label() const {
  if (!target_name.empty()) return target_name;
  return test_path.empty() ? "target" : std::filesystem::path(test_path).stem().string();
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("bad number for " + key + ": '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("bad integer for " + key + ": '" + v + "'");
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("bad integer for " + key + ": '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (const auto s : seeds) {
    if (!out.empty()) out += ',';
    out += std::to_string(s);
  }
  return out;
}

std::vector<std::uint64_t> split_seeds(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_u64(key, item));
  }
  if (out.empty()) throw ConfigError("seeds must list at least one seed");
  return out;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename M>
Field real(M member) {
  return {[member](const RunConfig& c) { return fmt::format("{}", c.hp.*member); },
          [member](RunConfig& c, const std::string& k, const std::string& v) { c.hp.*member = to_double(k, v); }};
}

template <typename M>
Field count(M member) {
  return {[member](const RunConfig& c) { return std::to_string(c.hp.*member); },
          [member](RunConfig& c, const std::string& k, const std::string& v) {
            c.hp.*member = static_cast<std::size_t>(to_u64(k, v));
          }};
}

template <typename M>
Field text(M member) {
  return {[member](const RunConfig& c) { return c.*member; },
          [member](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; }};
}

template <typename M>
Field flag(M member) {
  return {[member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = to_bool(k, v); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"variant", {[](const RunConfig& c) { return std::string(to_string(c.variant)); },
                   [](RunConfig& c, const std::string&, const std::string& v) { c.variant = parse_variant(v); }}},
      {"train", text(&RunConfig::train_path)},
      {"unlabeled", text(&RunConfig::unlabeled_path)},
      {"test", text(&RunConfig::test_path)},
      {"embeddings", text(&RunConfig::embeddings_path)},
      {"checkpoint_dir", text(&RunConfig::checkpoint_dir)},
      {"output_dir", text(&RunConfig::output_dir)},
      {"source", text(&RunConfig::source_name)},
      {"target", text(&RunConfig::target_name)},
      {"seeds", {[](const RunConfig& c) { return join_seeds(c.seeds); },
                 [](RunConfig& c, const std::string& k, const std::string& v) { c.seeds = split_seeds(k, v); }}},
      {"vocab_seed", {[](const RunConfig& c) { return std::to_string(c.vocab_seed); },
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.vocab_seed = to_u64(k, v); }}},
      {"balance", flag(&RunConfig::balance)},
      {"parallel", flag(&RunConfig::parallel)},
      {"gamma", real(&HyperParams::gamma)},
      {"alpha", real(&HyperParams::alpha)},
      {"beta", real(&HyperParams::beta)},
      {"heads", count(&HyperParams::heads)},
      {"max_len", count(&HyperParams::max_len)},
      {"tau", real(&HyperParams::tau)},
      {"dropout", real(&HyperParams::dropout)},
      {"lr", real(&HyperParams::lr)},
      {"lr_decay", real(&HyperParams::lr_decay)},
      {"adam_beta1", real(&HyperParams::adam_beta1)},
      {"adam_beta2", real(&HyperParams::adam_beta2)},
      {"adam_epsilon", real(&HyperParams::adam_epsilon)},
      {"batch", count(&HyperParams::batch)},
      {"max_epoch", count(&HyperParams::max_epoch)},
      {"patience", {[](const RunConfig& c) { return std::to_string(c.hp.patience); },
                    [](RunConfig& c, const std::string& k, const std::string& v) { c.hp.patience = to_int(k, v); }}},
      {"min_delta", real(&HyperParams::min_delta)},
      {"val_fraction", real(&HyperParams::val_fraction)},
      {"agreement_stop", real(&HyperParams::agreement_stop)},
      {"max_iters", count(&HyperParams::max_iters)},
      {"hidden", count(&HyperParams::hidden)},
      {"scoring", {[](const RunConfig& c) { return std::string(to_string(c.hp.scoring)); },
                   [](RunConfig& c, const std::string&, const std::string& v) { c.hp.scoring = parse_scoring(v); }}},
      {"train_embeddings", {[](const RunConfig& c) { return std::string(c.hp.train_embeddings ? "true" : "false"); },
                            [](RunConfig& c, const std::string& k, const std::string& v) {
                              c.hp.train_embeddings = to_bool(k, v);
                            }}},
      {"max_grad_norm", real(&HyperParams::max_grad_norm)},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

std::map<std::string, std::string> to_map(const RunConfig& config) {
  std::map<std::string, std::string> out;
  for (const auto& [name, field] : fields()) out[name] = field.get(config);
  return out;
}

RunConfig apply_values(RunConfig base, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(base, key, value);
  }
  return base;
}

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(std::string_view(stripped).substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(std::string_view(stripped).substr(eq + 1));
  }
  return out;
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.get(config) + "\n";
  return out;
}

RunConfig load_config_file(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return apply_values(std::move(base), parse_config_text(ss.str()));
}

void validate(const RunConfig& config, bool require_train) {
  config.hp.validate();
  if (config.seeds.empty()) throw ConfigError("at least one seed is required");
  auto require_file = [](const std::string& path, const char* what) {
    if (path.empty()) throw ConfigError(std::string(what) + " path is required");
    if (!std::filesystem::is_regular_file(path)) throw ConfigError(std::string(what) + " file not found: " + path);
  };
  require_file(config.embeddings_path, "embeddings");
  if (require_train) require_file(config.train_path, "train");
  if (config.variant == Variant::tri2 && require_train) require_file(config.unlabeled_path, "unlabeled");
  if (!config.unlabeled_path.empty() && require_train) require_file(config.unlabeled_path, "unlabeled");
  if (!config.test_path.empty()) require_file(config.test_path, "test");
}

}  // namespace mhad::cli

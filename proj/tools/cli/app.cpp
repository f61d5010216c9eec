#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "commands.hpp"
#include "mhad/checkpoint.hpp"
#include "mhad/corpus.hpp"
#include "mhad/log.hpp"
#include "mhad/trainer.hpp"

namespace mhad::cli {

namespace {

/// Config file, seed override and one flag per config key, shared by the run commands.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "flat key = value config file; flags override its values");
    app->add_option("--seed", seed, "single run seed; replaces the seeds list");
    for (const auto& key : config_keys()) options[key] = app->add_option("--" + key, values[key], "config key " + key);
  }

  [[nodiscard]] RunConfig resolve(std::optional<std::uint64_t> global_seed) const {
    RunConfig config;
    if (!config_path.empty()) config = load_config_file(config_path);
    std::map<std::string, std::string> given;
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) given[key] = values.at(key);
    }
    config = apply_values(std::move(config), given);
    if (seed) {
      config.seeds = {*seed};
    } else if (global_seed) {
      config.seeds = {*global_seed};
    }
    return config;
  }
};

/// Routes library warnings to `err` for the lifetime of the guard.
class WarningRedirect {
 public:
  explicit WarningRedirect(std::ostream& err)
      : previous_(set_warning_sink([&err](std::string_view msg) { err << "warning: " << msg << '\n'; })) {}
  WarningRedirect(const WarningRedirect&) = delete;
  WarningRedirect& operator=(const WarningRedirect&) = delete;
  ~WarningRedirect() { set_warning_sink(std::move(previous_)); }

 private:
  WarningSink previous_;
};

void write_file(const std::string& path, const std::string& text) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-head attention classifiers with head diversity and tri-training"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> global_seed;
  app.add_option("--seed", global_seed, "run seed for every command");

  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "train single models (variant mha or mhad)");
  train_flags.attach(train);

  ConfigFlags tri_flags;
  auto* tritrain = app.add_subcommand("tritrain", "tri-training (variant tri1 or tri2)");
  tri_flags.attach(tritrain);

  ConfigFlags eval_flags;
  std::vector<std::string> eval_checkpoints;
  std::string eval_output;
  auto* eval = app.add_subcommand("eval", "accuracy of checkpoints or ensemble directories on the test file");
  eval_flags.attach(eval);
  eval->add_option("--checkpoint", eval_checkpoints, "model.ckpt file or ensemble directory (repeatable)")->required();
  eval->add_option("--output", eval_output, "also write the CSV here");

  ConfigFlags attend_flags;
  std::string attend_checkpoint;
  std::string attend_input;
  std::string attend_output;
  std::size_t top_k = 3;
  auto* attend = app.add_subcommand("attend", "per-head top tokens for each input line");
  attend_flags.attach(attend);
  attend->add_option("--checkpoint", attend_checkpoint, "model.ckpt file or ensemble directory")->required();
  attend->add_option("--input", attend_input, "text file, one example per line")->required();
  attend->add_option("--top-k", top_k, "tokens listed per head")->capture_default_str();
  attend->add_option("--output", attend_output, "report path (default: stdout)");

  GradCheckSuiteOptions gc;
  std::optional<std::uint64_t> gc_seed;
  std::string gc_output;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every primitive, loss and model");
  gradcheck->add_option("--dim", gc.dim, "embedding size")->capture_default_str();
  gradcheck->add_option("--hidden", gc.hidden, "LSTM units per direction")->capture_default_str();
  gradcheck->add_option("--tx", gc.max_len, "sequence length")->capture_default_str();
  gradcheck->add_option("--ty", gc.heads, "attention heads")->capture_default_str();
  gradcheck->add_option("--batch", gc.batch, "batch size")->capture_default_str();
  gradcheck->add_option("--vocab", gc.vocab, "vocabulary size")->capture_default_str();
  gradcheck->add_option("--points", gc.points_per_primitive, "random points per primitive")->capture_default_str();
  gradcheck->add_option("--step", gc.step, "central-difference step")->capture_default_str();
  gradcheck->add_option("--tolerance", gc.tolerance, "max relative error")->capture_default_str();
  gradcheck->add_option("--seed", gc_seed, "sampling seed");
  gradcheck->add_flag("--inject-fault", gc.inject_fault, "use a square op with a wrong backward rule");
  gradcheck->add_option("--output", gc_output, "also write a CSV report here");

  ConfigFlags matrix_flags;
  std::string data_dir;
  std::vector<std::string> domains = {"books", "dvd", "electronics", "kitchen"};
  std::vector<std::string> variant_names = {"mha", "mhad", "tri1", "tri2"};
  auto* matrix = app.add_subcommand("matrix", "every source->target transfer over a set of domains");
  matrix_flags.attach(matrix);
  matrix->add_option("--data-dir", data_dir, "directory with <domain>.labeled.txt / <domain>.unlabeled.txt")
      ->required();
  matrix->add_option("--domains", domains, "comma-separated domain names")->delimiter(',')->capture_default_str();
  matrix->add_option("--variants", variant_names, "comma-separated variants")->delimiter(',')->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  WarningRedirect redirect(err);
  try {
    if (*train) {
      cmd_train(train_flags.resolve(global_seed), out);
    } else if (*tritrain) {
      cmd_tritrain(tri_flags.resolve(global_seed), out);
    } else if (*eval) {
      std::vector<std::filesystem::path> paths(eval_checkpoints.begin(), eval_checkpoints.end());
      std::ostringstream csv;
      cmd_eval(eval_flags.resolve(global_seed), paths, csv);
      out << csv.str();
      if (!eval_output.empty()) write_file(eval_output, csv.str());
    } else if (*attend) {
      if (top_k < 1) throw ConfigError("--top-k must be at least 1");
      const auto config = attend_flags.resolve(global_seed);
      std::ostringstream report;
      cmd_attend(config, attend_checkpoint, attend_input, top_k, report);
      if (attend_output.empty()) {
        out << report.str();
      } else {
        write_file(attend_output, report.str());
      }
    } else if (*gradcheck) {
      if (gc_seed) {
        gc.seed = *gc_seed;
      } else if (global_seed) {
        gc.seed = *global_seed;
      }
      std::optional<std::filesystem::path> csv;
      if (!gc_output.empty()) csv = gc_output;
      return cmd_gradcheck(gc, out, csv) ? 0 : 1;
    } else if (*matrix) {
      MatrixOptions opts{data_dir, domains, {}};
      for (const auto& v : variant_names) opts.variants.push_back(parse_variant(v));
      cmd_matrix(matrix_flags.resolve(global_seed), opts, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace mhad::cli

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mhad/gradcheck_suite.hpp"
#include "run_config.hpp"

namespace mhad::cli {

/// One line of an accuracy table. `seed` is a number, or `mean` / `stddev` for aggregates.
struct EvalRow {
  std::string source;
  std::string target;
  std::string variant;
  std::string seed;
  double accuracy = 0.0;
};

/// `source,target,variant,seed,accuracy`. With more than one row per
/// (source, target, variant) group, mean and sample stddev rows follow the group.
void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows);

/// Single-model training (variant mha or mhad), one run per seed.
/// Writes <checkpoint root>/seed_<s>/model.ckpt and <output>/seed_<s>/train_report.csv;
/// with a test path also <output>/results.csv.
std::vector<EvalRow> cmd_train(RunConfig config, std::ostream& log);

/// Tri-training (variant tri1 or tri2), one ensemble per seed.
/// Writes <checkpoint root>/seed_<s>/ensemble/ and <output>/seed_<s>/agreement.csv.
std::vector<EvalRow> cmd_tritrain(RunConfig config, std::ostream& log);

/// Accuracy of each checkpoint (a .ckpt file or an ensemble directory) on config.test_path.
std::vector<EvalRow> cmd_eval(const RunConfig& config, const std::vector<std::filesystem::path>& checkpoints,
                              std::ostream& log);

/// Plain-text attention report for every line of `input`.
void cmd_attend(const RunConfig& config, const std::filesystem::path& checkpoint, const std::filesystem::path& input,
                std::size_t top_k, std::ostream& out);

/// Returns true when every component passes. Prints one line per component.
bool cmd_gradcheck(const GradCheckSuiteOptions& options, std::ostream& out,
                   const std::optional<std::filesystem::path>& csv_path = std::nullopt);

struct MatrixOptions {
  std::filesystem::path data_dir;  // <domain>.labeled.txt and <domain>.unlabeled.txt
  std::vector<std::string> domains;
  std::vector<Variant> variants;
};

/// Every ordered (source, target) pair of distinct domains, every variant and seed.
/// Writes <output>/matrix_runs.csv and <output>/matrix_table.csv (percent, one column per variant).
void cmd_matrix(RunConfig config, const MatrixOptions& options, std::ostream& log);

/// Parses argv and dispatches. Returns the process exit code:
/// 0 success, 1 runtime failure, 2 usage or configuration error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mhad::cli

#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "mhad/checkpoint.hpp"
#include "mhad/corpus.hpp"
#include "mhad/log.hpp"
#include "mhad/model.hpp"
#include "mhad/rng.hpp"
#include "mhad/trainer.hpp"
#include "mhad/tritrain.hpp"

namespace mhad::cli {

namespace fs = std::filesystem;

namespace {

struct Inputs {
  Vocabulary vocab;
  std::shared_ptr<const Tensor<float>> embedding;
};

Inputs load_inputs(const RunConfig& config) {
  auto vocab = load_embeddings(config.embeddings_path, config.vocab_seed);
  auto embedding = std::make_shared<const Tensor<float>>(vocab.embeddings());
  return {std::move(vocab), std::move(embedding)};
}

EncodedCorpus load_test_corpus(const fs::path& path, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<RawExample> raw;
  try {
    raw = load_labeled(path);
  } catch (const CorpusError& e) {
    throw CorpusError("labels required for test data " + path.string() + ": " + e.what());
  }
  return encode(raw, vocab, max_len, Origin::target_test);
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

CheckpointMeta make_meta(const RunConfig& config, const Vocabulary& vocab, std::uint64_t seed) {
  CheckpointMeta meta;
  meta.variant = std::string(to_string(config.variant));
  meta.seed = seed;
  meta.vocab_seed = vocab.seed();
  meta.vocab_fingerprint = vocab.fingerprint();
  meta.config = to_map(config);
  meta.config["source"] = config.source_label();
  meta.config["seeds"] = std::to_string(seed);
  return meta;
}

/// Runs `fn(seed_index)` for every seed, concurrently when config.parallel is set.
template <typename Fn>
auto for_each_seed(const RunConfig& config, Fn fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<R> out(config.seeds.size());
  if (config.parallel && config.seeds.size() > 1) {
    std::vector<std::future<R>> jobs;
    for (std::size_t i = 0; i < config.seeds.size(); ++i) jobs.push_back(std::async(std::launch::async, fn, i));
    for (std::size_t i = 0; i < jobs.size(); ++i) out[i] = jobs[i].get();
  } else {
    for (std::size_t i = 0; i < config.seeds.size(); ++i) out[i] = fn(i);
  }
  return out;
}

void emit_results(const RunConfig& config, const std::vector<EvalRow>& rows, std::ostream& log) {
  if (rows.empty()) return;
  std::ostringstream csv;
  write_eval_csv(csv, rows);
  write_text_file(fs::path(config.output_dir) / "results.csv", csv.str());
  log << csv.str();
}

std::size_t checkpoint_max_len(const CheckpointMeta& meta, std::size_t fallback) {
  const auto it = meta.config.find("max_len");
  if (it == meta.config.end()) return fallback;
  const std::map<std::string, std::string> value{{"max_len", it->second}};
  return apply_values(RunConfig{}, value).hp.max_len;
}

std::string format_accuracy(double v) { return fmt::format("{:.6f}", v); }

}  // namespace

void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows) {
  out << "source,target,variant,seed,accuracy\n";
  std::size_t i = 0;
  while (i < rows.size()) {
    std::size_t j = i;
    while (j < rows.size() && rows[j].source == rows[i].source && rows[j].target == rows[i].target &&
           rows[j].variant == rows[i].variant) {
      ++j;
    }
    double sum = 0.0;
    for (std::size_t k = i; k < j; ++k) {
      const auto& r = rows[k];
      out << r.source << ',' << r.target << ',' << r.variant << ',' << r.seed << ',' << format_accuracy(r.accuracy)
          << '\n';
      sum += r.accuracy;
    }
    const std::size_t n = j - i;
    if (n > 1) {
      const double mean = sum / static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t k = i; k < j; ++k) ss += (rows[k].accuracy - mean) * (rows[k].accuracy - mean);
      const double stddev = std::sqrt(ss / static_cast<double>(n - 1));
      const auto& r = rows[i];
      out << r.source << ',' << r.target << ',' << r.variant << ",mean," << format_accuracy(mean) << '\n';
      out << r.source << ',' << r.target << ',' << r.variant << ",stddev," << format_accuracy(stddev) << '\n';
    }
    i = j;
  }
}

std::vector<EvalRow> cmd_train(RunConfig config, std::ostream& log) {
  if (config.variant != Variant::mha && config.variant != Variant::mhad) {
    throw ConfigError("train expects variant mha or mhad; use tritrain for " + std::string(to_string(config.variant)));
  }
  if (config.variant == Variant::mha && config.hp.gamma != 0.0) {
    warn(fmt::format("variant mha trains without the diversity term; gamma {} overridden to 0", config.hp.gamma));
    config.hp.gamma = 0.0;
  }
  validate(config, true);

  const auto inputs = load_inputs(config);
  const auto labeled = encode(load_labeled(config.train_path), inputs.vocab, config.hp.max_len, Origin::source_labeled);
  std::optional<EncodedCorpus> test;
  if (!config.test_path.empty()) test = load_test_corpus(config.test_path, inputs.vocab, config.hp.max_len);
  const auto model_config = make_model_config(config.hp, inputs.vocab);
  write_text_file(fs::path(config.output_dir) / "run_config.txt", serialize_config(config));

  auto rows = for_each_seed(config, [&](std::size_t index) {
    const auto seed = config.seeds[index];
    const auto pool = config.balance ? balance(labeled, derive_seed(seed, 30)) : labeled;
    const auto [train, val] = train_val_split(pool, config.hp.val_fraction, derive_seed(seed, 10));
    Classifier<float> model(
        init_params<float>(model_config, derive_seed(seed, 20), config.hp.train_embeddings ? inputs.embedding.get() : nullptr),
        inputs.embedding);
    const auto report = fit(model, train, val, config.hp, seed);

    const auto ckpt = config.checkpoint_root() / seed_dir(seed) / "model.ckpt";
    save_checkpoint(ckpt, model.params(), make_meta(config, inputs.vocab, seed));
    std::ostringstream csv;
    report.write_csv(csv);
    write_text_file(fs::path(config.output_dir) / seed_dir(seed) / "train_report.csv", csv.str());

    EvalRow row{config.source_label(), config.target_label(), std::string(to_string(config.variant)),
                std::to_string(seed), 0.0};
    if (test) row.accuracy = evaluate_accuracy(model, *test);
    return row;
  });
  for (std::size_t i = 0; i < config.seeds.size(); ++i) {
    log << fmt::format("trained {} seed {} -> {}\n", to_string(config.variant), config.seeds[i],
                       (config.checkpoint_root() / seed_dir(config.seeds[i]) / "model.ckpt").string());
  }
  if (!test) return {};
  emit_results(config, rows, log);
  return rows;
}

std::vector<EvalRow> cmd_tritrain(RunConfig config, std::ostream& log) {
  if (config.variant != Variant::tri1 && config.variant != Variant::tri2) {
    throw ConfigError("tritrain expects variant tri1 or tri2; use train for " + std::string(to_string(config.variant)));
  }
  if (config.variant == Variant::tri2 && config.unlabeled_path.empty()) {
    throw ConfigError("variant tri2 requires an unlabeled path");
  }
  validate(config, true);

  const auto inputs = load_inputs(config);
  const auto labeled = encode(load_labeled(config.train_path), inputs.vocab, config.hp.max_len, Origin::source_labeled);
  std::optional<EncodedCorpus> unlabeled;
  if (config.variant == Variant::tri2) {
    unlabeled = encode(load_unlabeled(config.unlabeled_path), inputs.vocab, config.hp.max_len, Origin::source_unlabeled);
  }
  std::optional<EncodedCorpus> test;
  if (!config.test_path.empty()) test = load_test_corpus(config.test_path, inputs.vocab, config.hp.max_len);
  const auto model_config = make_model_config(config.hp, inputs.vocab);
  write_text_file(fs::path(config.output_dir) / "run_config.txt", serialize_config(config));

  struct SeedResult {
    EvalRow row;
    std::string log;
  };
  auto results = for_each_seed(config, [&](std::size_t index) {
    const auto seed = config.seeds[index];
    std::ostringstream seed_log;
    TriTrainOptions options;
    options.seed = seed;
    options.parallel = config.parallel;
    options.on_iteration = [&](const IterationLog& it) {
      seed_log << fmt::format("seed {} iteration {}: agreement {:.6f}, pseudo-labels m1={} m2={} m3={}\n", seed,
                              it.iteration, it.agreement, it.pseudo_label_sizes[0], it.pseudo_label_sizes[1],
                              it.pseudo_label_sizes[2]);
    };
    const auto pool = config.balance ? balance(labeled, derive_seed(seed, 30)) : labeled;
    const auto ensemble = unlabeled ? tritrain_full(pool, *unlabeled, model_config, inputs.embedding, config.hp, options)
                                    : one_step_tritrain(pool, model_config, inputs.embedding, config.hp, options);

    save_ensemble(config.checkpoint_root() / seed_dir(seed) / "ensemble", ensemble,
                  make_meta(config, inputs.vocab, seed));
    std::string csv = "iteration,agreement,pl_m1,pl_m2,pl_m3\n";
    if (ensemble.initial_agreement) csv += fmt::format("0,{:.6f},,,\n", *ensemble.initial_agreement);
    for (std::size_t i = 0; i < ensemble.agreement_history.size(); ++i) {
      const auto& sizes = ensemble.pseudo_label_sizes[i];
      csv += fmt::format("{},{:.6f},{},{},{}\n", i + 1, ensemble.agreement_history[i], sizes[0], sizes[1], sizes[2]);
    }
    write_text_file(fs::path(config.output_dir) / seed_dir(seed) / "agreement.csv", csv);

    SeedResult r{{config.source_label(), config.target_label(), std::string(to_string(config.variant)),
                  std::to_string(seed), 0.0},
                 seed_log.str()};
    if (test) r.row.accuracy = ensemble_accuracy(ensemble, *test);
    return r;
  });

  std::vector<EvalRow> rows;
  for (std::size_t i = 0; i < results.size(); ++i) {
    log << results[i].log;
    log << fmt::format("trained {} seed {} -> {}\n", to_string(config.variant), config.seeds[i],
                       (config.checkpoint_root() / seed_dir(config.seeds[i]) / "ensemble").string());
    rows.push_back(results[i].row);
  }
  if (!test) return {};
  emit_results(config, rows, log);
  return rows;
}

std::vector<EvalRow> cmd_eval(const RunConfig& config, const std::vector<fs::path>& checkpoints, std::ostream& log) {
  if (checkpoints.empty()) throw ConfigError("eval needs at least one checkpoint");
  if (config.test_path.empty()) throw ConfigError("eval needs a test path");
  validate(config, false);
  for (const auto& c : checkpoints) {
    if (!fs::exists(c)) throw ConfigError("checkpoint not found: " + c.string());
  }

  std::map<std::uint64_t, std::shared_ptr<const Inputs>> vocab_cache;
  auto inputs_for = [&](std::uint64_t vocab_seed) {
    auto& slot = vocab_cache[vocab_seed];
    if (!slot) {
      RunConfig c = config;
      c.vocab_seed = vocab_seed;
      slot = std::make_shared<const Inputs>(load_inputs(c));
    }
    return slot;
  };
  auto check_vocab = [](const CheckpointMeta& meta, const Inputs& inputs, const fs::path& path) {
    if (meta.vocab_fingerprint != inputs.vocab.fingerprint()) {
      throw CheckpointError(fmt::format("vocabulary mismatch: checkpoint {} was trained with different embeddings "
                                        "(fingerprint {:016x}, embeddings file gives {:016x})",
                                        path.string(), meta.vocab_fingerprint, inputs.vocab.fingerprint()));
    }
  };
  auto max_len_of = [&](const CheckpointMeta& meta) { return checkpoint_max_len(meta, config.hp.max_len); };
  auto source_of = [&](const CheckpointMeta& meta) {
    const auto it = meta.config.find("source");
    return it == meta.config.end() || !config.source_name.empty() ? config.source_label() : it->second;
  };

  std::vector<EvalRow> rows;
  for (const auto& path : checkpoints) {
    CheckpointMeta meta;
    double accuracy = 0.0;
    if (fs::is_directory(path)) {
      auto ensemble = load_ensemble(path, nullptr, &meta);
      const auto inputs = inputs_for(meta.vocab_seed);
      check_vocab(meta, *inputs, path);
      for (auto& m : ensemble.models) m = Classifier<float>(std::move(m.params()), inputs->embedding);
      accuracy = ensemble_accuracy(ensemble, load_test_corpus(config.test_path, inputs->vocab, max_len_of(meta)));
    } else {
      auto ck = load_checkpoint(path);
      meta = ck.meta;
      const auto inputs = inputs_for(meta.vocab_seed);
      check_vocab(meta, *inputs, path);
      const Classifier<float> model(std::move(ck.params), inputs->embedding);
      accuracy = evaluate_accuracy(model, load_test_corpus(config.test_path, inputs->vocab, max_len_of(meta)));
    }
    rows.push_back({source_of(meta), config.target_label(), meta.variant, std::to_string(meta.seed), accuracy});
  }
  std::ostringstream csv;
  write_eval_csv(csv, rows);
  log << csv.str();
  return rows;
}

void cmd_attend(const RunConfig& config, const fs::path& checkpoint, const fs::path& input, std::size_t top_k,
                std::ostream& out) {
  if (config.embeddings_path.empty()) throw ConfigError("embeddings path is required");
  if (!fs::is_regular_file(config.embeddings_path)) {
    throw ConfigError("embeddings file not found: " + config.embeddings_path);
  }
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint.string());
  if (!fs::is_regular_file(input)) throw ConfigError("input file not found: " + input.string());

  std::vector<Classifier<float>> models;
  std::vector<std::string> names;
  CheckpointMeta meta;
  std::vector<ModelParams<float>> params;
  if (fs::is_directory(checkpoint)) {
    auto ensemble = load_ensemble(checkpoint, nullptr, &meta);
    for (std::size_t i = 0; i < 3; ++i) {
      params.push_back(std::move(ensemble.models[i].params()));
      names.push_back("m" + std::to_string(i + 1));
    }
  } else {
    auto ck = load_checkpoint(checkpoint);
    meta = ck.meta;
    params.push_back(std::move(ck.params));
    names.emplace_back("model");
  }
  RunConfig c = config;
  c.vocab_seed = meta.vocab_seed;
  const auto inputs = load_inputs(c);
  if (meta.vocab_fingerprint != inputs.vocab.fingerprint()) {
    throw CheckpointError("vocabulary mismatch between checkpoint " + checkpoint.string() + " and embeddings");
  }
  for (auto& p : params) models.emplace_back(std::move(p), inputs.embedding);

  // Accept labeled lines (the label is ignored) as well as plain text.
  std::vector<RawExample> raw;
  try {
    raw = load_labeled(input);
  } catch (const CorpusError&) {
    raw = load_unlabeled(input);
  }
  const std::size_t max_len = checkpoint_max_len(meta, config.hp.max_len);
  const auto corpus = encode(raw, inputs.vocab, max_len, Origin::target_test);
  const auto batch = make_batch(corpus, 0, corpus.size());

  out << fmt::format("# attention report: checkpoint={} top_k={} examples={}\n", checkpoint.filename().string(), top_k,
                     corpus.size());
  std::vector<std::vector<ExampleAttention>> reports;
  for (const auto& m : models) reports.push_back(attend_report(m, batch, inputs.vocab, top_k));
  for (std::size_t e = 0; e < corpus.size(); ++e) {
    out << fmt::format("\nexample {}\ntext: {}\n", e + 1, raw[e].text);
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto& r = reports[m][e];
      out << fmt::format("{}: prediction {} (p={:.6f})\n", names[m], threshold_label(r.prob), r.prob);
      for (std::size_t h = 0; h < r.heads.size(); ++h) {
        out << fmt::format("  head {}:", h + 1);
        for (const auto& t : r.heads[h]) out << fmt::format(" {} {:.6f}", t.token, t.weight);
        out << '\n';
      }
    }
  }
}

bool cmd_gradcheck(const GradCheckSuiteOptions& options, std::ostream& out,
                   const std::optional<fs::path>& csv_path) {
  const auto reports = run_gradcheck_suite(options);
  std::size_t passed = 0;
  std::string csv = "component,max_rel_error,tolerance,coordinates,passed\n";
  for (const auto& r : reports) {
    passed += r.passed() ? 1 : 0;
    out << fmt::format("{} {:<36} max_rel_error={:.3e} coordinates={}\n", r.passed() ? "PASS" : "FAIL", r.name,
                       r.max_rel_error, r.coordinates);
    csv += fmt::format("{},{:.6e},{:.1e},{},{}\n", r.name, r.max_rel_error, r.tolerance, r.coordinates,
                       r.passed() ? "true" : "false");
  }
  out << fmt::format("gradcheck: {}/{} components passed (tolerance {:.1e}, step {:.1e})\n", passed, reports.size(),
                     options.tolerance, options.step);
  if (csv_path) write_text_file(*csv_path, csv);
  return passed == reports.size();
}

void cmd_matrix(RunConfig config, const MatrixOptions& options, std::ostream& log) {
  if (options.domains.size() < 2) throw ConfigError("matrix needs at least two domains");
  if (options.variants.empty()) throw ConfigError("matrix needs at least one variant");
  auto labeled_path = [&](const std::string& d) { return options.data_dir / (d + ".labeled.txt"); };
  auto unlabeled_path = [&](const std::string& d) { return options.data_dir / (d + ".unlabeled.txt"); };
  const bool needs_unlabeled =
      std::find(options.variants.begin(), options.variants.end(), Variant::tri2) != options.variants.end();
  for (const auto& d : options.domains) {
    if (!fs::is_regular_file(labeled_path(d))) throw ConfigError("missing domain file " + labeled_path(d).string());
    if (needs_unlabeled && !fs::is_regular_file(unlabeled_path(d))) {
      throw ConfigError("missing domain file " + unlabeled_path(d).string());
    }
  }
  config.train_path.clear();
  config.test_path.clear();
  config.unlabeled_path.clear();
  validate(config, false);

  const auto inputs = load_inputs(config);
  const auto model_config = make_model_config(config.hp, inputs.vocab);
  std::map<std::string, EncodedCorpus> tests;
  for (const auto& d : options.domains) {
    tests.emplace(d, encode(load_labeled(labeled_path(d)), inputs.vocab, config.hp.max_len, Origin::target_test));
  }

  std::vector<EvalRow> runs;
  // (source, target, variant) -> accuracies across seeds
  std::map<std::tuple<std::string, std::string, Variant>, std::vector<double>> cells;
  for (const auto& source : options.domains) {
    const auto labeled =
        encode(load_labeled(labeled_path(source)), inputs.vocab, config.hp.max_len, Origin::source_labeled);
    std::optional<EncodedCorpus> unlabeled;
    if (needs_unlabeled) {
      unlabeled = encode(load_unlabeled(unlabeled_path(source)), inputs.vocab, config.hp.max_len,
                         Origin::source_unlabeled);
    }
    for (const auto variant : options.variants) {
      for (const auto seed : config.seeds) {
        HyperParams hp = config.hp;
        if (variant == Variant::mha) hp.gamma = 0.0;
        std::vector<std::pair<std::string, double>> accs;
        const auto pool = config.balance ? balance(labeled, derive_seed(seed, 30)) : labeled;
        if (variant == Variant::mha || variant == Variant::mhad) {
          const auto [train, val] = train_val_split(pool, hp.val_fraction, derive_seed(seed, 10));
          Classifier<float> model(
              init_params<float>(model_config, derive_seed(seed, 20), hp.train_embeddings ? inputs.embedding.get() : nullptr),
              inputs.embedding);
          fit(model, train, val, hp, seed);
          for (const auto& target : options.domains) {
            if (target != source) accs.emplace_back(target, evaluate_accuracy(model, tests.at(target)));
          }
        } else {
          TriTrainOptions to;
          to.seed = seed;
          to.parallel = config.parallel;
          const auto ensemble = variant == Variant::tri2
                                    ? tritrain_full(pool, *unlabeled, model_config, inputs.embedding, hp, to)
                                    : one_step_tritrain(pool, model_config, inputs.embedding, hp, to);
          for (const auto& target : options.domains) {
            if (target != source) accs.emplace_back(target, ensemble_accuracy(ensemble, tests.at(target)));
          }
        }
        for (const auto& [target, acc] : accs) {
          runs.push_back({source, target, std::string(to_string(variant)), std::to_string(seed), acc});
          cells[{source, target, variant}].push_back(acc);
          log << fmt::format("{} -> {} {} seed {}: {:.4f}\n", source, target, to_string(variant), seed, acc);
        }
      }
    }
  }

  // Group run rows by transfer and variant so aggregates follow each group.
  std::vector<EvalRow> ordered;
  for (const auto& source : options.domains) {
    for (const auto& target : options.domains) {
      if (source == target) continue;
      for (const auto variant : options.variants) {
        for (const auto& r : runs) {
          if (r.source == source && r.target == target && r.variant == to_string(variant)) ordered.push_back(r);
        }
      }
    }
  }
  std::ostringstream runs_csv;
  write_eval_csv(runs_csv, ordered);
  write_text_file(fs::path(config.output_dir) / "matrix_runs.csv", runs_csv.str());

  std::string table = "transfer";
  for (const auto v : options.variants) table += "," + std::string(to_string(v));
  table += '\n';
  std::vector<double> column_sum(options.variants.size(), 0.0);
  std::size_t transfers = 0;
  for (const auto& source : options.domains) {
    for (const auto& target : options.domains) {
      if (source == target) continue;
      ++transfers;
      table += source + "->" + target;
      for (std::size_t v = 0; v < options.variants.size(); ++v) {
        const auto& accs = cells.at({source, target, options.variants[v]});
        double mean = 0.0;
        for (const double a : accs) mean += a;
        mean = 100.0 * mean / static_cast<double>(accs.size());
        column_sum[v] += mean;
        table += fmt::format(",{:.2f}", mean);
      }
      table += '\n';
    }
  }
  table += "average";
  for (const double s : column_sum) table += fmt::format(",{:.2f}", s / static_cast<double>(transfers));
  table += '\n';
  write_text_file(fs::path(config.output_dir) / "matrix_table.csv", table);
  log << table;
}

}  // namespace mhad::cli

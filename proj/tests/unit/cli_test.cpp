#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "commands.hpp"
#include "mhad/checkpoint.hpp"
#include "mhad/synthetic.hpp"
#include "run_config.hpp"
#include "test_support.hpp"

namespace {

using namespace mhad;
using namespace mhad::cli;
namespace fs = std::filesystem;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "mhad");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines_starting(const std::string& text, const std::string& prefix) {
  std::size_t n = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) n += line.rfind(prefix, 0) == 0 ? 1 : 0;
  return n;
}

/// Tiny two-domain data set and a config file that trains in well under a second.
class CliData : public ::testing::Test {
 protected:
  void SetUp() override {
    TwoDomainSpec spec;
    spec.source_labeled = 48;
    spec.source_unlabeled = 48;
    spec.target_test = 30;
    spec.max_len = 8;
    spec.dim = 6;
    spec.filler_words = 12;
    spec.seed = 5;
    const auto task = make_two_domain_task(spec);
    test::write_embeddings(dir / "vectors.txt", task.vocab);
    test::write_examples(dir / "books.txt", task.source_labeled, true);
    test::write_examples(dir / "books_unlabeled.txt", task.source_unlabeled, false);
    test::write_examples(dir / "kitchen.txt", task.target_test, true);
    test::write_examples(dir / "kitchen_unlabeled.txt", task.target_test, false);
    test::write_file(dir / "run.cfg",
                        "# tiny run\n"
                        "embeddings = " + (dir / "vectors.txt").string() + "\n"
                        "train = " + (dir / "books.txt").string() + "  # source domain\n"
                        "test = " + (dir / "kitchen.txt").string() + "\n"
                        "heads = 3\nmax_len = 8\nhidden = 4\nbatch = 16\nmax_epoch = 6\n"
                        "lr = 0.05\ntau = 0.6\nmax_iters = 2\n");
  }

  std::string cfg() const { return (dir / "run.cfg").string(); }
  std::string path(const std::string& name) const { return (dir / name).string(); }

  test::TempDir dir;
};

TEST(RunConfig, RoundTripIsIdentity) {
  RunConfig c;
  c.hp.gamma = 0.1 + 0.2;  // not exactly representable in short decimal form
  c.hp.tau = 0.7;
  c.hp.patience = -1;
  c.variant = Variant::tri2;
  c.seeds = {5, 1, 99};
  c.train_path = "data/b.txt";
  c.balance = true;
  c.hp.scoring = AttentionScoring::dot;
  const auto text = serialize_config(c);
  const auto parsed = apply_values(RunConfig{}, parse_config_text(text));
  EXPECT_EQ(parsed, c);
  EXPECT_EQ(serialize_config(parsed), text);
}

TEST(RunConfigProperty, RandomConfigsRoundTrip) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    RunConfig c;
    c.hp.gamma = rng.uniform(0.0, 1.0);
    c.hp.alpha = rng.uniform(0.0, 1.0);
    c.hp.lr = rng.uniform(1e-5, 1e-1);
    c.hp.heads = 1 + rng.below(9);
    c.hp.batch = 1 + rng.below(64);
    c.hp.train_embeddings = rng.bernoulli(0.5);
    c.variant = static_cast<Variant>(rng.below(4));
    c.seeds.assign(1 + rng.below(4), 0);
    for (auto& s : c.seeds) s = rng.next_u64();
    c.output_dir = "out_" + std::to_string(trial);
    const auto once = apply_values(RunConfig{}, parse_config_text(serialize_config(c)));
    EXPECT_EQ(once, c);
    EXPECT_EQ(apply_values(RunConfig{}, parse_config_text(serialize_config(once))), once);
  }
}

TEST(RunConfig, ParsesCommentsAndWhitespace) {
  const auto m = parse_config_text("# header\n\n  gamma   =  0.5   # inline\nvariant=mha\r\n");
  EXPECT_EQ(m.at("gamma"), "0.5");
  EXPECT_EQ(m.at("variant"), "mha");
  EXPECT_EQ(m.size(), 2u);
}

TEST(RunConfig, RejectsBadInput) {
  EXPECT_THROW((void)parse_config_text("gamma 0.5\n"), ConfigError);
  EXPECT_THROW((void)apply_values(RunConfig{}, {{"gamm", "1"}}), ConfigError);
  EXPECT_THROW((void)apply_values(RunConfig{}, {{"gamma", "abc"}}), ConfigError);
  EXPECT_THROW((void)apply_values(RunConfig{}, {{"variant", "tri3"}}), ConfigError);
  EXPECT_THROW((void)apply_values(RunConfig{}, {{"seeds", ""}}), ConfigError);
}

TEST(RunConfig, DefaultsMatchReferenceSettings) {
  const RunConfig c;
  EXPECT_DOUBLE_EQ(c.hp.gamma, 0.01);
  EXPECT_DOUBLE_EQ(c.hp.alpha, 0.05);
  EXPECT_DOUBLE_EQ(c.hp.beta, 0.01);
  EXPECT_DOUBLE_EQ(c.hp.tau, 0.7);
  EXPECT_DOUBLE_EQ(c.hp.lr, 0.005);
  EXPECT_EQ(c.hp.batch, 32u);
  EXPECT_EQ(c.hp.max_epoch, 40u);
  EXPECT_EQ(c.hp.patience, 3);
  EXPECT_DOUBLE_EQ(c.hp.val_fraction, 0.15);
  EXPECT_DOUBLE_EQ(c.hp.agreement_stop, 0.85);
  EXPECT_EQ(c.hp.heads, 5u);
  EXPECT_EQ(c.hp.max_len, 200u);
  EXPECT_DOUBLE_EQ(c.hp.dropout, 0.4);
}

TEST(RunConfig, ValidationRequiresFilesAndUnlabeledForTri2) {
  test::TempDir dir;
  test::write_file(dir / "e.txt", "1 2\na 0 0\n");
  test::write_file(dir / "t.txt", "1\ta\n");
  RunConfig c;
  c.embeddings_path = (dir / "e.txt").string();
  c.train_path = (dir / "t.txt").string();
  EXPECT_NO_THROW(validate(c, true));
  c.variant = Variant::tri2;
  EXPECT_THROW(validate(c, true), ConfigError);
  c.unlabeled_path = (dir / "nope.txt").string();
  EXPECT_THROW(validate(c, true), ConfigError);
  c.variant = Variant::mhad;
  c.unlabeled_path.clear();
  c.test_path = (dir / "nope.txt").string();
  EXPECT_THROW(validate(c, true), ConfigError);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"train", "--gamma"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliData, TrainMhadAppliesDefaultGamma) {
  const auto r = run({"train", "--config", cfg(), "--output_dir", path("out")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ck = load_checkpoint(dir / "out/seed_1/model.ckpt");
  EXPECT_EQ(ck.meta.variant, "mhad");
  EXPECT_EQ(ck.meta.config.at("gamma"), "0.01");
  EXPECT_TRUE(fs::exists(dir / "out/seed_1/train_report.csv"));
  EXPECT_TRUE(fs::exists(dir / "out/results.csv"));
  EXPECT_NE(r.out.find("source,target,variant,seed,accuracy"), std::string::npos);
  EXPECT_NE(r.out.find("books,kitchen,mhad,1,"), std::string::npos);
  const auto report = test::read_file(dir / "out/seed_1/train_report.csv");
  EXPECT_EQ(report.rfind("epoch,train_loss,val_loss,train_acc,val_acc\n", 0), 0u);
}

TEST_F(CliData, TrainMhaForcesGammaToZeroWithWarning) {
  const auto r = run({"train", "--config", cfg(), "--variant", "mha", "--output_dir", path("out")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  EXPECT_NE(r.err.find("gamma"), std::string::npos);
  EXPECT_EQ(load_checkpoint(dir / "out/seed_1/model.ckpt").meta.config.at("gamma"), "0");
}

TEST_F(CliData, FlagsOverrideConfigFile) {
  const auto r = run({"train", "--config", cfg(), "--gamma", "0.5", "--heads", "2", "--output_dir", path("out")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ck = load_checkpoint(dir / "out/seed_1/model.ckpt");
  EXPECT_EQ(ck.meta.config.at("gamma"), "0.5");
  EXPECT_EQ(ck.params.config.heads, 2u);
  EXPECT_EQ(ck.meta.config.at("batch"), "16");
}

TEST_F(CliData, BadPathExitsTwoBeforeTraining) {
  const auto r = run({"train", "--config", cfg(), "--train", path("missing.txt"), "--output_dir", path("out")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing.txt"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "out"));
  EXPECT_EQ(run({"train", "--config", path("nope.cfg")}).code, 2);
}

TEST_F(CliData, TrainRejectsTriVariants) {
  EXPECT_EQ(run({"train", "--config", cfg(), "--variant", "tri1"}).code, 2);
  EXPECT_EQ(run({"tritrain", "--config", cfg(), "--variant", "mhad"}).code, 2);
}

TEST_F(CliData, FiveSeedsGiveFiveRunsAndAggregate) {
  const auto r = run({"train", "--config", cfg(), "--seeds", "1,2,3,4,5", "--output_dir", path("out")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = test::read_file(dir / "out/results.csv");
  EXPECT_EQ(count_lines_starting(csv, "books,kitchen,mhad,"), 7u);
  EXPECT_EQ(count_lines_starting(csv, "books,kitchen,mhad,mean,"), 1u);
  EXPECT_EQ(count_lines_starting(csv, "books,kitchen,mhad,stddev,"), 1u);
  for (int s = 1; s <= 5; ++s) EXPECT_TRUE(fs::exists(dir / ("out/seed_" + std::to_string(s) + "/model.ckpt")));
}

TEST_F(CliData, GlobalSeedReplacesSeedList) {
  const auto r = run({"--seed", "9", "train", "--config", cfg(), "--seeds", "1,2", "--output_dir", path("out")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "out/seed_9/model.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "out/seed_1"));
}

TEST_F(CliData, Tri1SucceedsWithoutUnlabeledData) {
  const auto r = run({"tritrain", "--config", cfg(), "--variant", "tri1", "--output_dir", path("out")});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"m1.ckpt", "m2.ckpt", "m3.ckpt", "ensemble.json"}) {
    EXPECT_TRUE(fs::exists(dir / "out/seed_1/ensemble" / f)) << f;
  }
  EXPECT_NE(r.out.find("books,kitchen,tri1,1,"), std::string::npos);
}

TEST_F(CliData, Tri2RequiresUnlabeledData) {
  const auto r = run({"tritrain", "--config", cfg(), "--variant", "tri2", "--output_dir", path("out")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unlabeled"), std::string::npos);
}

TEST_F(CliData, Tri2LogsAgreementPerIteration) {
  const auto r = run({"tritrain", "--config", cfg(), "--variant", "tri2", "--unlabeled", path("books_unlabeled.txt"),
                      "--output_dir", path("out")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("iteration 1: agreement"), std::string::npos);
  const auto csv = test::read_file(dir / "out/seed_1/agreement.csv");
  EXPECT_EQ(csv.rfind("iteration,agreement,pl_m1,pl_m2,pl_m3\n0,", 0), 0u);
  EXPECT_NE(csv.find("\n1,"), std::string::npos);
}

TEST_F(CliData, EvalSingleModelEnsembleAndAggregate) {
  ASSERT_EQ(run({"train", "--config", cfg(), "--seeds", "1,2", "--output_dir", path("single")}).code, 0);
  ASSERT_EQ(run({"tritrain", "--config", cfg(), "--variant", "tri1", "--output_dir", path("tri")}).code, 0);

  const auto one = run({"eval", "--config", cfg(), "--checkpoint", path("single/seed_1/model.ckpt")});
  ASSERT_EQ(one.code, 0) << one.err;
  EXPECT_EQ(count_lines_starting(one.out, "books,kitchen,mhad,1,"), 1u);
  EXPECT_EQ(count_lines_starting(one.out, "books,kitchen,mhad,mean"), 0u);

  // Matches the accuracy the train command reported for the same model.
  const auto train_csv = test::read_file(dir / "single/results.csv");
  const auto line = one.out.substr(one.out.find("books,kitchen,mhad,1,"));
  EXPECT_NE(train_csv.find(line.substr(0, line.find('\n'))), std::string::npos);

  const auto ens = run({"eval", "--config", cfg(), "--checkpoint", path("tri/seed_1/ensemble")});
  ASSERT_EQ(ens.code, 0) << ens.err;
  EXPECT_EQ(count_lines_starting(ens.out, "books,kitchen,tri1,1,"), 1u);

  const auto agg = run({"eval", "--config", cfg(), "--checkpoint", path("single/seed_1/model.ckpt"), "--checkpoint",
                        path("single/seed_2/model.ckpt"), "--output", path("eval.csv")});
  ASSERT_EQ(agg.code, 0) << agg.err;
  EXPECT_EQ(count_lines_starting(agg.out, "books,kitchen,mhad,mean,"), 1u);
  EXPECT_EQ(count_lines_starting(agg.out, "books,kitchen,mhad,stddev,"), 1u);
  EXPECT_EQ(test::read_file(dir / "eval.csv"), agg.out);
}

TEST_F(CliData, EvalRejectsUnlabeledTestFile) {
  ASSERT_EQ(run({"train", "--config", cfg(), "--output_dir", path("out")}).code, 0);
  const auto r = run({"eval", "--config", cfg(), "--test", path("kitchen_unlabeled.txt"), "--checkpoint",
                      path("out/seed_1/model.ckpt")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("labels required"), std::string::npos);
}

TEST_F(CliData, EvalRejectsVocabularyMismatch) {
  ASSERT_EQ(run({"train", "--config", cfg(), "--output_dir", path("out")}).code, 0);
  test::write_embeddings(dir / "other.txt", make_random_vocabulary(12, 6, 99));
  const auto r = run({"eval", "--config", cfg(), "--embeddings", path("other.txt"), "--checkpoint",
                      path("out/seed_1/model.ckpt")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("vocabulary mismatch"), std::string::npos);
}

TEST_F(CliData, AttendReportShapeAndDeterminism) {
  ASSERT_EQ(run({"train", "--config", cfg(), "--heads", "5", "--output_dir", path("out")}).code, 0);
  test::write_file(dir / "two.txt", "1\tsrcpos0 f1 sharedpos1 f2\n0\tf3 srcneg2 f4\n");
  const std::vector<std::string> args = {"attend", "--config", cfg(), "--checkpoint", path("out/seed_1/model.ckpt"),
                                         "--input", path("two.txt"), "--top-k", "3"};
  const auto a = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(count_lines_starting(a.out, "example "), 2u);
  EXPECT_EQ(count_lines_starting(a.out, "model: prediction "), 2u);
  EXPECT_EQ(count_lines_starting(a.out, "  head "), 10u);
  std::istringstream in(a.out);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("  head ", 0) != 0) continue;
    std::istringstream fields(line.substr(line.find(':') + 1));
    std::vector<std::string> parts;
    std::string p;
    while (fields >> p) parts.push_back(p);
    EXPECT_EQ(parts.size(), 6u) << line;  // three (token, weight) pairs
  }
  EXPECT_EQ(run(args).out, a.out);

  auto to_file = args;
  to_file.insert(to_file.end(), {"--output", path("attend.txt")});
  ASSERT_EQ(run(to_file).code, 0);
  EXPECT_EQ(test::read_file(dir / "attend.txt"), a.out);
  auto bad_k = args;
  bad_k.back() = "0";
  EXPECT_EQ(run(bad_k).code, 2);
}

TEST(CliGradcheck, PassesAndListsEveryComponent) {
  const auto r = run({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_GT(count_lines_starting(r.out, "PASS "), 20u);
  EXPECT_EQ(count_lines_starting(r.out, "FAIL "), 0u);
  EXPECT_NE(r.out.find("max_rel_error="), std::string::npos);
  EXPECT_NE(r.out.find("model/single_additive"), std::string::npos);
}

TEST(CliGradcheck, InjectedFaultFails) {
  test::TempDir dir;
  const auto r = run({"gradcheck", "--inject-fault", "--output", (dir / "gc.csv").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_GE(count_lines_starting(r.out, "FAIL "), 1u);
  const auto csv = test::read_file(dir / "gc.csv");
  EXPECT_EQ(csv.rfind("component,max_rel_error,tolerance,coordinates,passed\n", 0), 0u);
  EXPECT_NE(csv.find(",false\n"), std::string::npos);
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) files[fs::relative(entry.path(), root).string()] = test::read_file(entry.path());
  }
  return files;
}

TEST_F(CliData, RepeatedCommandsProduceIdenticalArtifacts) {
  std::vector<std::map<std::string, std::string>> runs;
  for (int attempt = 0; attempt < 2; ++attempt) {
    fs::remove_all(dir / "out");
    ASSERT_EQ(run({"train", "--config", cfg(), "--seeds", "3,4", "--output_dir", path("out/single")}).code, 0);
    ASSERT_EQ(run({"tritrain", "--config", cfg(), "--variant", "tri2", "--unlabeled", path("books_unlabeled.txt"),
                   "--output_dir", path("out/tri")})
                  .code,
              0);
    runs.push_back(snapshot(dir / "out"));
  }
  EXPECT_GE(runs[0].size(), 12u);
  EXPECT_EQ(runs[0], runs[1]);
  for (const char* f : {"single/seed_3/model.ckpt", "single/seed_4/train_report.csv", "tri/seed_1/ensemble/m1.ckpt",
                        "tri/seed_1/ensemble/ensemble.json", "tri/seed_1/agreement.csv", "tri/results.csv"}) {
    EXPECT_EQ(runs[0].count(f), 1u) << f;
  }
}

TEST_F(CliData, MatrixEmitsTableShapedCsv) {
  fs::create_directories(dir / "domains");
  fs::copy_file(dir / "books.txt", dir / "domains/books.labeled.txt");
  fs::copy_file(dir / "books_unlabeled.txt", dir / "domains/books.unlabeled.txt");
  fs::copy_file(dir / "kitchen.txt", dir / "domains/kitchen.labeled.txt");
  fs::copy_file(dir / "kitchen_unlabeled.txt", dir / "domains/kitchen.unlabeled.txt");
  const auto r = run({"matrix", "--config", cfg(), "--data-dir", path("domains"), "--domains", "books,kitchen",
                      "--variants", "mha,mhad,tri1,tri2", "--output_dir", path("m")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = test::read_file(dir / "m/matrix_table.csv");
  EXPECT_EQ(table.rfind("transfer,mha,mhad,tri1,tri2\n", 0), 0u);
  EXPECT_EQ(count_lines_starting(table, "books->kitchen,"), 1u);
  EXPECT_EQ(count_lines_starting(table, "kitchen->books,"), 1u);
  EXPECT_EQ(count_lines_starting(table, "average,"), 1u);
  const auto runs = test::read_file(dir / "m/matrix_runs.csv");
  EXPECT_EQ(count_lines_starting(runs, "books,kitchen,"), 4u);
  EXPECT_EQ(run({"matrix", "--config", cfg(), "--data-dir", path("domains"), "--domains", "books,dvd"}).code, 2);
}

}  // namespace

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "base_novel_triples.hpp"
#include "cli.hpp"
#include "provp/embeddings.hpp"
#include "provp/error.hpp"
#include "provp/metrics.hpp"
#include "provp/rng.hpp"
#include "provp/run_config.hpp"
#include "provp/table.hpp"
#include "provp/trainer.hpp"

using namespace provp;
namespace fs = std::filesystem;

namespace {

RunCoordinates coords(double lambda = 1.0) {
  RunCoordinates c;
  c.alpha = 0.1;
  c.lambda = lambda;
  c.layers = {1, 12};
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run_cli(std::vector<std::string> args, std::map<std::string, std::string> env = {}) {
  std::ostringstream out, err;
  const EnvLookup lookup = [env](const std::string& k) -> std::optional<std::string> {
    auto it = env.find(k);
    if (it == env.end()) return std::nullopt;
    return it->second;
  };
  const int code = cli::run(args, out, err, lookup);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("provp_evalcli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Accuracy, Examples) {
  const std::vector<int> labels{0, 1, 2, 3};
  EXPECT_EQ(accuracy(std::vector<int>{0, 1, 2, 3}, labels), 100.0);
  EXPECT_EQ(accuracy(std::vector<int>{1, 2, 3, 0}, labels), 0.0);
  EXPECT_EQ(accuracy(std::vector<int>{0, 1, 2, 0}, labels), 75.0);
  EXPECT_THROW(accuracy(std::vector<int>{}, std::vector<int>{}), EvaluationError);
  EXPECT_THROW(accuracy(std::vector<int>{0}, labels), EvaluationError);
}

TEST(HarmonicMean, Examples) {
  EXPECT_NEAR(harmonic_mean(85.20, 73.22).value, 78.76, 0.005);
  EXPECT_NEAR(harmonic_mean(82.69, 63.22).value, 71.66, 0.005);
  EXPECT_EQ(harmonic_mean(42.5, 42.5).value, 42.5);
  const HarmonicMean zero = harmonic_mean(0.0, 0.0);
  EXPECT_EQ(zero.value, 0.0);
  EXPECT_TRUE(zero.degenerate);
  EXPECT_FALSE(harmonic_mean(0.0, 10.0).degenerate);
  EXPECT_THROW(harmonic_mean(-1.0, 10.0), EvaluationError);
}

TEST(HarmonicMean, ReproducesEveryPrintedTriple) {
  for (const BaseNovelTriple& t : kBaseNovelTriples) {
    const double oracle = 2.0 * t.base * t.novel / (t.base + t.novel);
    const double h = harmonic_mean(t.base, t.novel).value;
    EXPECT_NEAR(h, oracle, 1e-12);
    EXPECT_LE(std::abs(h - t.harmonic), 0.01 + 1e-9) << t.group << " " << t.method;
  }
}

TEST(HarmonicMean, NeverExceedsArithmeticMean) {
  Rng rng(4);
  for (int i = 0; i < 10000; ++i) {
    const double b = 100.0 * rng.uniform();
    const double n = 100.0 * rng.uniform();
    EXPECT_LE(harmonic_mean(b, n).value, (b + n) / 2.0 + 1e-12);
  }
}

TEST(Report, InvariantsChecked) {
  EXPECT_NO_THROW(make_report(coords(), 1, 80.0, 60.0, 10).check());
  EvalReport bad = make_report(coords(), 1, 80.0, 60.0, 10);
  bad.base_accuracy = 101.0;
  EXPECT_THROW(bad.check(), InvariantError);
}

TEST(Aggregate, Examples) {
  const EvalReport one = make_report(coords(), 1, 70.0, 50.0, 8);
  const AggregateReport single = aggregate_seeds(std::span<const EvalReport>(&one, 1));
  EXPECT_EQ(single.base.mean, 70.0);
  EXPECT_EQ(single.base.stddev, 0.0);

  const std::vector<EvalReport> two{make_report(coords(), 1, 70.0, 50.0, 8),
                                    make_report(coords(), 2, 80.0, 50.0, 8)};
  const AggregateReport a = aggregate_seeds(two);
  EXPECT_DOUBLE_EQ(a.base.mean, 75.0);
  EXPECT_DOUBLE_EQ(a.base.stddev, 5.0);
  EXPECT_EQ(a.seed_count(), 2u);
  EXPECT_TRUE(a.coordinates == coords());

  const std::vector<double> runs{96.80, 96.40, 96.70};
  EXPECT_EQ(format_mean_std(mean_std(runs)), "96.63 ± 0.17");

  const std::vector<EvalReport> mixed{make_report(coords(0.0), 1, 70, 50, 8), make_report(coords(1.0), 1, 70, 50, 8)};
  EXPECT_THROW(aggregate_seeds(mixed), AggregationError);
  EXPECT_THROW(aggregate_seeds(std::span<const EvalReport>{}), AggregationError);
  EXPECT_EQ(aggregate_by_coordinates(mixed).size(), 2u);
}

TEST(Table, CsvShapeAndMarkdownPrecision) {
  const std::vector<EvalReport> reports{make_report(coords(0.0), 1, 70.126, 50.0, 8),
                                        make_report(coords(1.0), 1, 71.0, 52.5, 8)};
  std::vector<TableRow> rows;
  for (const auto& a : aggregate_by_coordinates(reports)) rows.push_back(to_table_row(a));
  const std::string csv = emit_table(rows, TableFormat::csv);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "strategy,alpha,loss,lambda,m,layers,shots,base,novel,H,params,seed_count,base_pstd,novel_pstd,H_pstd");
  const std::string md = emit_table(rows, TableFormat::markdown);
  EXPECT_NE(md.find("70.13 ± 0.00"), std::string::npos);
  EXPECT_NE(md.find(format_fixed(harmonic_mean(71.0, 52.5).value)), std::string::npos);
  EXPECT_THROW(emit_table(std::vector<TableRow>{}, TableFormat::csv), EvaluationError);
  EXPECT_THROW(write_table("/nonexistent-dir/x.csv", rows, TableFormat::csv), IoError);
}

TEST(Table, RoundTripAtPrintedPrecision) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<EvalReport> reports;
    for (int seed = 0; seed < 3; ++seed) {
      reports.push_back(make_report(coords(0.1 * (trial % 11)), static_cast<std::uint64_t>(seed),
                                    100.0 * rng.uniform(), 100.0 * rng.uniform(), 36864));
    }
    std::vector<TableRow> rows;
    for (const auto& a : aggregate_by_coordinates(reports)) rows.push_back(to_table_row(a));
    const std::string csv = emit_table(rows, TableFormat::csv);
    const std::vector<TableRow> back = parse_table_csv(csv);
    ASSERT_EQ(back.size(), rows.size());
    EXPECT_EQ(emit_table(back, TableFormat::csv), csv);
    const auto rounded = [](double v) { return std::round(v * 100.0) / 100.0; };
    EXPECT_DOUBLE_EQ(back[0].base.mean, rounded(rows[0].base.mean));
    EXPECT_DOUBLE_EQ(back[0].harmonic.stddev, rounded(rows[0].harmonic.stddev));
    EXPECT_EQ(back[0].trainable_params, 36864u);
    EXPECT_EQ(back[0].seed_count, 3u);
  }
}

TEST(Table, CsvQuoting) {
  const auto records = parse_csv("a,\"b,c\",\"say \"\"hi\"\"\"\n1,2,3\n");
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0][1], "b,c");
  EXPECT_EQ(records[0][2], "say \"hi\"");
  EXPECT_THROW(parse_csv("\"open"), ParseError);
}

TEST(Config, ParseSetAndRoundTrip) {
  RunConfig c = parse_config("# comment\nstrategy = deep\nm = 8\nlambda=0.4\nseeds = 4, 5\ngrid.alphas = 0.1,0.5\n");
  EXPECT_EQ(c.train.prompts.strategy, PromptStrategy::deep);
  EXPECT_EQ(c.train.prompts.length, 8u);
  EXPECT_EQ(c.train.loss.lambda, 0.4);
  EXPECT_EQ(c.train.seeds, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_EQ(c.grid.alphas.size(), 2u);
  const RunConfig back = parse_config(to_text(c));
  EXPECT_EQ(to_text(back), to_text(c));
  EXPECT_THROW(parse_config("unknown_key = 1\n"), ConfigError);
  try {
    parse_config("m = 4\nm = four\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Config, EnvironmentOverridesEveryKey) {
  EXPECT_EQ(env_name("grid.alphas"), "PROVP_GRID_ALPHAS");
  RunConfig c;
  apply_env_overrides(c, [](const std::string& k) -> std::optional<std::string> {
    if (k == "PROVP_SHOTS") return "4";
    if (k == "PROVP_STRATEGY") return "shallow";
    return std::nullopt;
  });
  EXPECT_EQ(c.setup.shots, 4u);
  EXPECT_EQ(c.train.prompts.strategy, PromptStrategy::shallow);
  for (const ConfigKey& key : config_keys()) EXPECT_EQ(env_name(key.name).rfind("PROVP_", 0), 0u);
}

TEST(Embeddings, RowCountsDeterminismAndTrainedDifference) {
  ExperimentSetup s;
  s.encoder.depth = 2;
  s.encoder.width = 16;
  s.encoder.patch_count = 4;
  s.encoder.patch_dim = 6;
  s.encoder.output_dim = 8;
  s.task.patch_count = 4;
  s.task.patch_dim = 6;
  s.task.classes = 5;
  s.task.samples_per_class = 4;
  s.shots = 2;
  const SampleStore store = generate_dataset(s.task, 0);
  std::vector<Sample> samples(store.samples.begin(), store.samples.begin() + 10);

  TrainConfig t;
  t.max_epochs = 5;
  t.prompts.length = 2;
  Encoder encoder = Encoder::create(s.encoder, t.prompts, 1);
  const Encoder untrained = encoder;
  train(sample_k_shot(store, s.shots, 1), encoder, make_bank(s, encoder), t, 1);

  const EmbeddingVariant variants[] = {{"frozen", &encoder, FeaturePath::frozen},
                                       {"prompted", &encoder, FeaturePath::prompted}};
  const std::string tsv = embeddings_tsv(variants, samples);
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 21);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')), "variant\tsample\tlabel\tf0\tf1\tf2\tf3\tf4\tf5\tf6\tf7");

  const EmbeddingVariant frozen_only[] = {{"frozen", &untrained, FeaturePath::frozen}};
  const EmbeddingVariant frozen_trained[] = {{"frozen", &encoder, FeaturePath::frozen}};
  EXPECT_EQ(embeddings_tsv(frozen_only, samples), embeddings_tsv(frozen_trained, samples));

  const Tensor a = encoder.features(images_of(samples), FeaturePath::prompted);
  const Tensor b = encoder.features(images_of(samples), FeaturePath::frozen);
  EXPECT_GT(max_abs_diff(a, b), 0.0);

  EncoderConfig wide = s.encoder;
  wide.output_dim = 12;
  const Encoder other(wide);
  const EmbeddingVariant mismatched[] = {{"a", &encoder, FeaturePath::frozen}, {"b", &other, FeaturePath::frozen}};
  EXPECT_THROW(embeddings_tsv(mismatched, samples), DimensionError);
}

TEST(Cli, ParamsCountsPromptTokens) {
  const CliResult r = run_cli({"params", "--strategy", "progressive", "--m", "16", "--layers", "1..12", "--d", "768"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "147456\n");
  EXPECT_EQ(run_cli({"params", "--strategy", "deep", "--m", "60", "--layers", "1", "--d", "512"}).out, "30720\n");
}

TEST(Cli, UsageAndRuntimeErrorsUseDistinctExitCodes) {
  EXPECT_EQ(run_cli({"train", "--no-such-flag"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({}).code, cli::kExitUsage);
  const CliResult missing = run_cli({"train", "--config", "/nonexistent/provp.cfg"});
  EXPECT_EQ(missing.code, cli::kExitFailure);
  EXPECT_NE(missing.err.find("error[io]"), std::string::npos) << missing.err;
  EXPECT_EQ(run_cli({"params", "--m", "zero"}).code, cli::kExitFailure);
}

TEST(Cli, GradCheckPasses) {
  const CliResult r = run_cli({"grad-check", "--config", "default"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("max relative error"), std::string::npos);
  EXPECT_EQ(r.out.substr(r.out.size() - 5), "PASS\n");
}

TEST(Cli, TrainSelectsEpochsFromShots) {
  const fs::path dir = scratch("epochs");
  const CliResult r = run_cli({"train", "--shots", "16", "--epochs", "1", "--set", "epochs=auto", "--set",
                               "samples_per_class=17", "--set", "classes=2", "--set", "depth=1",
                               "--out", dir.string(), "--seed", "1"});
  // --set is applied after flags, so epochs=auto wins and is reported.
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("strategy progressive  loss ref  shots 16  epochs 200\n", 0), 0u) << r.out;
  fs::remove_all(dir);
}

TEST(Cli, RepeatedInvocationsWriteIdenticalBytes) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  const std::vector<std::string> common{"--seed", "3", "--shots", "2", "--epochs", "3", "--set", "depth=2"};
  for (const fs::path& dir : {a, b}) {
    std::vector<std::string> args{"train", "--out", dir.string()};
    args.insert(args.end(), common.begin(), common.end());
    ASSERT_EQ(run_cli(args).code, 0);
  }
  for (const char* file : {"runs.jsonl", "summary.csv", "prompts_seed3.ckpt", "config.txt"}) {
    EXPECT_EQ(slurp(a / file), slurp(b / file)) << file;
    EXPECT_FALSE(slurp(a / file).empty()) << file;
  }

  const CliResult eval = run_cli({"eval", "--prompts", (a / "prompts_seed3.ckpt").string(), "--seed", "3",
                                  "--shots", "2", "--set", "depth=2", "--out", (a / "eval.csv").string()});
  EXPECT_EQ(eval.code, 0) << eval.err;
  EXPECT_EQ(parse_table_csv(slurp(a / "eval.csv")).size(), 1u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, MakeDataFeedsTrainingAndEnvOverridesApply) {
  const fs::path dir = scratch("data");
  fs::create_directories(dir);
  const std::string data = (dir / "d.bin").string();
  const CliResult made = run_cli({"make-data", "--classes", "4", "--shift", "2", "--seed", "9", "--out", data});
  EXPECT_EQ(made.code, 0) << made.err;
  EXPECT_NE(made.out.find("4 classes"), std::string::npos);
  EXPECT_EQ(import_dataset(data).seed, 9u);

  const CliResult trained = run_cli({"train", "--data", data, "--seed", "1", "--out", (dir / "run").string()},
                                    {{"PROVP_SHOTS", "2"}, {"PROVP_EPOCHS", "2"}, {"PROVP_DEPTH", "2"}});
  EXPECT_EQ(trained.code, 0) << trained.err;
  EXPECT_NE(trained.out.find("shots 2  epochs 2"), std::string::npos) << trained.out;

  const CliResult exported = run_cli({"export-embeddings", "--data", data, "--seed", "1", "--shots", "2", "--set",
                                      "depth=2", "--split", "train", "--out", (dir / "e.tsv").string()});
  EXPECT_EQ(exported.code, 0) << exported.err;
  const std::string tsv = slurp(dir / "e.tsv");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 1 + 2 * 8);
  fs::remove_all(dir);
}

TEST(Cli, GridWritesTableAndMarksFailures) {
  const fs::path dir = scratch("grid");
  const std::vector<std::string> base{"grid", "--seeds", "1,2", "--epochs", "2", "--shots", "2", "--set", "depth=2"};
  std::vector<std::string> ok = base;
  for (const std::string& s : std::vector<std::string>{"--lambdas", "0,1", "--out", (dir / "g.csv").string(), "--records", (dir / "r.jsonl").string()}) {
    ok.push_back(s);
  }
  const CliResult r = run_cli(ok);
  EXPECT_EQ(r.code, 0) << r.err;
  const auto rows = parse_table_csv(slurp(dir / "g.csv"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].seed_count, 2u);

  std::vector<std::string> bad = base;
  for (const std::string& s : std::vector<std::string>{"--alphas", "0.1,1.5", "--out", (dir / "b.csv").string()}) bad.push_back(s);
  const CliResult failed = run_cli(bad);
  EXPECT_EQ(failed.code, cli::kExitFailure);
  EXPECT_NE(failed.out.find("4 cells, 2 failed"), std::string::npos) << failed.out;
  EXPECT_EQ(parse_table_csv(slurp(dir / "b.csv")).size(), 1u);
  fs::remove_all(dir);
}

#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <utility>

#include "provp/checkpoint.hpp"
#include "provp/data.hpp"
#include "provp/embeddings.hpp"
#include "provp/error.hpp"
#include "provp/grad_check.hpp"
#include "provp/grid.hpp"
#include "provp/metrics.hpp"
#include "provp/table.hpp"
#include "provp/trainer.hpp"

namespace provp::cli {

namespace {

namespace fs = std::filesystem;

std::string scientific(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const DataError*>(&e)) return "data";
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const DegenerateInputError*>(&e)) return "degenerate-input";
  if (dynamic_cast<const EvaluationError*>(&e)) return "evaluation";
  if (dynamic_cast<const DivergenceError*>(&e)) return "divergence";
  if (dynamic_cast<const AggregationError*>(&e)) return "aggregation";
  if (dynamic_cast<const InvariantError*>(&e)) return "invariant";
  return "runtime";
}

// Options shared by every subcommand, resolved into a RunConfig in the order
// defaults < config file < PROVP_* environment < command-line flags.
struct Common {
  std::string config = "default";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "config file, or 'default'");
  app->add_option("--seed", c.seed, "run seed; replaces the configured seed list");
  app->add_option("--data", c.data, "dataset file written by make-data");
  app->add_option("--set", c.sets, "key=value config override, repeatable");
}

void add_key_flag(CLI::App* app, Common& c, const std::string& flag, const std::string& key,
                  const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&c, key](const std::string& value) { c.flags.emplace_back(key, value); }, help);
}

RunConfig resolve(const Common& c, const EnvLookup& env, bool validate = true) {
  RunConfig config = load_config(c.config);
  apply_env_overrides(config, env);
  for (const auto& [key, value] : c.flags) set_config_value(config, key, value);
  for (const std::string& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) config.train.seeds = {*c.seed};
  if (validate) config.validate();
  return config;
}

SampleStore load_store(const Common& c, RunConfig& config) {
  if (!c.data) return generate_dataset(config.setup.task, config.setup.data_seed);
  SampleStore store = import_dataset(*c.data);
  config.setup.task = store.spec;
  config.setup.data_seed = store.seed;
  config.setup.validate();
  return store;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string metrics_line(const EvalMetrics& m, TaskMode mode) {
  if (mode == TaskMode::base_to_novel) {
    return "base " + format_fixed(m.base_accuracy) + "  novel " + format_fixed(m.novel_accuracy) +
           "  H " + format_fixed(m.harmonic);
  }
  return "accuracy " + format_fixed(m.accuracy);
}

std::vector<TableRow> table_rows(std::span<const EvalReport> reports) {
  std::vector<TableRow> rows;
  for (const AggregateReport& a : aggregate_by_coordinates(reports)) rows.push_back(to_table_row(a));
  return rows;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  Common common;
  std::string out = "provp-out";
  bool timing = false;
};

int cmd_train(const TrainArgs& a, const EnvLookup& env, std::ostream& out) {
  RunConfig config = resolve(a.common, env);
  const SampleStore store = load_store(a.common, config);
  const ExperimentSetup& setup = config.setup;
  const fs::path dir = a.out;
  fs::create_directories(dir);

  out << "strategy " << to_string(config.train.prompts.strategy) << "  loss "
      << to_string(config.train.loss.mode) << "  shots " << setup.shots << "  epochs "
      << config.train.epochs(setup.shots, setup.mode) << "\n";

  std::string records;
  std::vector<EvalReport> reports;
  for (std::uint64_t seed : config.train.seeds) {
    const RunRecord r = run_experiment(setup, store, config.train, seed);
    records += to_json_line(r, a.timing) + "\n";
    r.prompts.save(dir / ("prompts_seed" + std::to_string(seed) + ".ckpt"));
    reports.push_back(r.report());
    out << "seed " << seed << "  train " << format_fixed(r.train_accuracy) << "  "
        << metrics_line(r.eval, setup.mode) << "  final loss " << scientific(r.epochs.back().total)
        << "\n";
  }
  const std::vector<TableRow> rows = table_rows(reports);
  write_text(dir / "runs.jsonl", records);
  write_table(dir / "summary.csv", rows, TableFormat::csv);
  write_text(dir / "config.txt", to_text(config));
  out << emit_table(rows, TableFormat::markdown);
  out << "wrote " << (dir / "runs.jsonl").string() << ", " << (dir / "summary.csv").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  Common common;
  std::optional<std::string> prompts;
  bool zero_shot = false;
  std::optional<std::string> out;
};

int cmd_eval(const EvalArgs& a, const EnvLookup& env, std::ostream& out) {
  if (!a.prompts && !a.zero_shot) throw ConfigError("eval needs --prompts or --zero-shot");
  RunConfig config = resolve(a.common, env);
  const SampleStore store = load_store(a.common, config);
  const ExperimentSetup& setup = config.setup;

  std::vector<EvalReport> reports;
  for (std::uint64_t seed : config.train.seeds) {
    Encoder encoder = Encoder::create(setup.encoder, config.train.prompts, seed);
    TrainConfig described = config.train;
    if (a.prompts) {
      encoder.load_prompts(Checkpoint::load(*a.prompts));
      const PromptStack& p = encoder.prompts();
      described.prompts.strategy = p.strategy();
      described.prompts.length = p.length();
      described.prompts.layers = p.layers();
      if (p.alpha()) described.prompts.alpha = *p.alpha();
    } else {
      described.prompts.strategy = PromptStrategy::none;
    }
    const ClassEmbeddingBank bank = make_bank(setup, encoder);
    const FewShotTask task = sample_k_shot(store, setup.shots, seed, setup.mode);
    const FeaturePath path = a.zero_shot ? FeaturePath::frozen : FeaturePath::prompted;
    const EvalMetrics m = evaluate(encoder, bank, task, path);
    const RunCoordinates coords = coordinates_of(described, setup.shots, setup.encoder.depth);
    reports.push_back(make_report(coords, seed, m.base_accuracy, m.novel_accuracy,
                                  a.zero_shot ? 0 : count_trainable_params(encoder)));
    out << "seed " << seed << "  " << metrics_line(m, setup.mode) << "\n";
  }
  const std::vector<TableRow> rows = table_rows(reports);
  if (a.out) write_table(*a.out, rows, TableFormat::csv);
  out << emit_table(rows, TableFormat::markdown);
  return kExitOk;
}

// ---------------------------------------------------------------- grid

struct GridArgs {
  Common common;
  std::string out = "grid.csv";
  std::string format = "csv";
  std::optional<std::string> records;
};

int cmd_grid(const GridArgs& a, const EnvLookup& env, std::ostream& out, std::ostream& err) {
  RunConfig config = resolve(a.common, env);
  const TableFormat format = parse_table_format(a.format);
  load_store(a.common, config);  // adopts the spec of --data; cells regenerate it
  if (config.grid.empty()) throw ConfigError("grid needs at least one grid.* axis");

  const std::vector<GridResult> results = run_grid(config.grid, config.setup, config.train, config.threads);
  std::string lines;
  std::vector<EvalReport> reports;
  std::size_t failed = 0;
  for (const GridResult& r : results) {
    lines += to_json_line(r.record) + "\n";
    if (r.record.error) {
      ++failed;
      err << "cell " << r.cell.index << " (" << r.record.coordinates.label() << ", seed " << r.cell.seed
          << ") failed: " << *r.record.error << "\n";
      continue;
    }
    reports.push_back(r.record.report());
  }
  if (a.records) write_text(*a.records, lines);
  if (!reports.empty()) {
    const std::vector<TableRow> rows = table_rows(reports);
    write_table(a.out, rows, format);
    out << emit_table(rows, TableFormat::markdown);
  }
  out << results.size() << " cells, " << failed << " failed\n";
  return failed == 0 ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------- grad-check

struct GradCheckArgs {
  Common common;
  double tolerance = 1e-4;
  double step = 1e-5;
};

int cmd_grad_check(const GradCheckArgs& a, const EnvLookup& env, std::ostream& out) {
  const RunConfig config = resolve(a.common, env);
  bool all = true;
  for (const LossGradCheck& c : grad_check_losses(config, config.train.seeds.front(), a.tolerance, a.step)) {
    out << to_string(c.mode) << "  max relative error " << scientific(c.max_rel_error) << "  "
        << (c.pass ? "PASS" : "FAIL") << "\n";
    all = all && c.pass;
  }
  out << (all ? "PASS" : "FAIL") << "\n";
  return all ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------- export-embeddings

struct ExportArgs {
  Common common;
  std::optional<std::string> prompts;
  std::string split = "test";
  std::string out = "embeddings.tsv";
};

int cmd_export(const ExportArgs& a, const EnvLookup& env, std::ostream& out) {
  RunConfig config = resolve(a.common, env);
  const SampleStore store = load_store(a.common, config);
  const std::uint64_t seed = config.train.seeds.front();
  Encoder encoder = Encoder::create(config.setup.encoder, config.train.prompts, seed);
  if (a.prompts) encoder.load_prompts(Checkpoint::load(*a.prompts));

  std::vector<Sample> samples;
  if (a.split == "all") {
    samples = store.samples;
  } else {
    const FewShotTask task = sample_k_shot(store, config.setup.shots, seed, config.setup.mode);
    if (a.split == "train") {
      samples = task.train;
    } else if (a.split == "test") {
      samples = task.test_all();
    } else {
      throw ConfigError("--split must be all, train or test, got '" + a.split + "'");
    }
  }
  const EmbeddingVariant variants[] = {
      {"frozen", &encoder, FeaturePath::frozen},
      {"prompted", &encoder, FeaturePath::prompted},
  };
  export_embeddings(variants, samples, a.out);
  out << "wrote " << samples.size() * 2 << " rows to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- make-data

struct MakeDataArgs {
  Common common;
  std::string out = "dataset.bin";
};

int cmd_make_data(const MakeDataArgs& a, const EnvLookup& env, std::ostream& out) {
  Common common = a.common;
  // For data generation the seed is the noise seed.
  std::optional<std::uint64_t> seed = common.seed;
  common.seed.reset();
  RunConfig config = resolve(common, env);
  if (seed) config.setup.data_seed = *seed;
  const SampleStore store = generate_dataset(config.setup.task, config.setup.data_seed);
  export_dataset(store, a.out);
  out << "wrote " << store.samples.size() << " samples (" << store.spec.classes << " classes, "
      << store.split.base_classes().size() << " base, " << store.split.novel_classes().size()
      << " novel) to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- params

int cmd_params(const Common& c, const EnvLookup& env, std::ostream& out) {
  // Counting needs no encoder, so a layer range deeper than the configured
  // encoder is counted as if the encoder were that deep.
  RunConfig config = resolve(c, env, false);
  const PromptConfig& p = config.train.prompts;
  if (p.layers && p.layers->last > static_cast<int>(config.setup.encoder.depth)) {
    config.setup.encoder.depth = static_cast<std::size_t>(p.layers->last);
  }
  config.validate();
  const LayerRange layers =
      p.layers.value_or(LayerRange{1, static_cast<int>(config.setup.encoder.depth)});
  const PromptStack stack =
      PromptStack::create(p.strategy, p.length, config.setup.encoder.width, layers, p.alpha, 0);
  out << count_trainable_params(stack) << "\n";
  return kExitOk;
}

void add_prompt_flags(CLI::App* app, Common& c) {
  add_key_flag(app, c, "--strategy", "strategy", "none, shallow, deep or progressive");
  add_key_flag(app, c, "--m", "m", "prompt tokens per layer");
  add_key_flag(app, c, "--alpha", "alpha", "progressive decay");
  add_key_flag(app, c, "--layers", "depth_range", "prompted layers, i..j or 'all'");
}

void add_run_flags(CLI::App* app, Common& c) {
  add_prompt_flags(app, c);
  add_key_flag(app, c, "--loss", "loss", "ce_only, ref or kd");
  add_key_flag(app, c, "--lambda", "lambda", "re-formation weight");
  add_key_flag(app, c, "--beta", "beta", "distillation weight");
  add_key_flag(app, c, "--shots", "shots", "samples per training class");
  add_key_flag(app, c, "--epochs", "epochs", "epoch count or 'auto'");
  add_key_flag(app, c, "--mode", "mode", "few_shot or base_to_novel");
  add_key_flag(app, c, "--seeds", "seeds", "comma-separated seed list");
  add_key_flag(app, c, "--bank", "bank", "generated or anchored");
  add_key_flag(app, c, "--shift", "shift", "novel prototype displacement");
}

}  // namespace

std::vector<LossGradCheck> grad_check_losses(const RunConfig& config, std::uint64_t seed,
                                             double tolerance, double step) {
  EncoderConfig ec;
  ec.depth = 2;
  ec.width = 16;
  ec.heads = 4;
  ec.patch_count = 4;
  ec.patch_dim = 6;
  ec.output_dim = 8;
  ec.seed = seed;
  PromptConfig pc = config.train.prompts;
  pc.layers.reset();
  if (pc.strategy == PromptStrategy::none) throw ConfigError("grad-check needs a prompted strategy");
  const Encoder encoder = Encoder::create(ec, pc, seed);

  SyntheticTaskSpec spec;
  spec.classes = 3;
  spec.patch_count = ec.patch_count;
  spec.patch_dim = ec.patch_dim;
  spec.samples_per_class = 1;
  spec.prototype_seed = seed;
  const SampleStore store = generate_dataset(spec, seed);
  const std::vector<Image> images = images_of(store.samples);
  const std::vector<int> labels = labels_of(store.samples);
  const ClassEmbeddingBank bank = ClassEmbeddingBank::generate(spec.classes, ec.output_dim, seed, 0.1);
  const Tensor frozen = encoder.features(images, FeaturePath::frozen);
  const std::vector<Tensor>& prompts = encoder.prompts().tensors();

  std::vector<LossGradCheck> results;
  for (LossMode mode : {LossMode::ce_only, LossMode::ref, LossMode::kd}) {
    LossConfig lc = config.train.loss;
    lc.mode = mode;
    LossGradCheck check{mode, 0.0, true};
    for (std::size_t block = 0; block < prompts.size(); ++block) {
      const auto f = [&](Graph& g, Var x) {
        std::vector<Var> blocks;
        for (std::size_t i = 0; i < prompts.size(); ++i) blocks.push_back(i == block ? x : g.constant_ref(prompts[i]));
        const EncodeResult r = encoder.forward(g, images, blocks);
        const Var probs = cosine_logits(r.features, bank);
        const Var frozen_features = g.constant_ref(frozen);
        std::optional<Var> ref, kd;
        if (mode == LossMode::ref) ref = reformation_loss(r.features, frozen_features, lc.ref_temperature);
        if (mode == LossMode::kd) kd = kd_loss(probs, cosine_logits(frozen_features, bank));
        return total_loss(cross_entropy(probs, labels), ref, kd, lc);
      };
      GradCheckOptions options;
      options.step = step;
      options.tolerance = tolerance;
      const GradCheckReport report = finite_difference_check(f, prompts[block], options);
      check.max_rel_error = std::max(check.max_rel_error, report.max_rel_error);
      check.pass = check.pass && report.pass;
    }
    results.push_back(check);
  }
  return results;
}

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err, const EnvLookup& env) {
  CLI::App app{"Progressive visual prompt lab"};
  app.name("provp");
  app.require_subcommand(1);

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "train prompts for every configured seed");
  add_common(train_cmd, train.common);
  add_run_flags(train_cmd, train.common);
  train_cmd->add_option("--out", train.out, "output directory");
  train_cmd->add_flag("--timing", train.timing, "include wall-clock seconds in runs.jsonl");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate trained prompts on the episode of each seed");
  add_common(eval_cmd, eval.common);
  add_run_flags(eval_cmd, eval.common);
  eval_cmd->add_option("--prompts", eval.prompts, "prompt checkpoint from train");
  eval_cmd->add_flag("--zero-shot", eval.zero_shot, "evaluate the frozen encoder without prompts");
  eval_cmd->add_option("--out", eval.out, "CSV table path");

  GridArgs grid;
  CLI::App* grid_cmd = app.add_subcommand("grid", "run the cartesian product of grid.* axes");
  add_common(grid_cmd, grid.common);
  add_run_flags(grid_cmd, grid.common);
  add_key_flag(grid_cmd, grid.common, "--strategies", "grid.strategies", "strategy axis");
  add_key_flag(grid_cmd, grid.common, "--alphas", "grid.alphas", "alpha axis");
  add_key_flag(grid_cmd, grid.common, "--lambdas", "grid.lambdas", "lambda axis");
  add_key_flag(grid_cmd, grid.common, "--layer-ranges", "grid.layers", "layer-range axis");
  add_key_flag(grid_cmd, grid.common, "--shots-axis", "grid.shots", "shot axis");
  add_key_flag(grid_cmd, grid.common, "--threads", "threads", "worker threads");
  grid_cmd->add_option("--out", grid.out, "table path");
  grid_cmd->add_option("--format", grid.format, "csv or markdown");
  grid_cmd->add_option("--records", grid.records, "per-run JSON lines path");

  GradCheckArgs grad;
  CLI::App* grad_cmd = app.add_subcommand("grad-check", "finite-difference check of the loss gradients");
  add_common(grad_cmd, grad.common);
  add_prompt_flags(grad_cmd, grad.common);
  grad_cmd->add_option("--tolerance", grad.tolerance, "maximum relative error");
  grad_cmd->add_option("--step", grad.step, "central-difference step");

  ExportArgs exp;
  CLI::App* export_cmd = app.add_subcommand("export-embeddings", "write frozen and prompted features as TSV");
  add_common(export_cmd, exp.common);
  add_run_flags(export_cmd, exp.common);
  export_cmd->add_option("--prompts", exp.prompts, "prompt checkpoint; fresh prompts from --seed otherwise");
  export_cmd->add_option("--split", exp.split, "all, train or test");
  export_cmd->add_option("--out", exp.out, "TSV path");

  MakeDataArgs data;
  CLI::App* data_cmd = app.add_subcommand("make-data", "generate a synthetic dataset file");
  add_common(data_cmd, data.common);
  add_key_flag(data_cmd, data.common, "--classes", "classes", "number of classes");
  add_key_flag(data_cmd, data.common, "--shift", "shift", "novel prototype displacement");
  add_key_flag(data_cmd, data.common, "--noise", "noise", "Gaussian noise std");
  add_key_flag(data_cmd, data.common, "--samples-per-class", "samples_per_class", "samples per class");
  data_cmd->add_option("--out", data.out, "dataset path");

  Common params;
  CLI::App* params_cmd = app.add_subcommand("params", "count trainable prompt parameters");
  add_common(params_cmd, params);
  add_prompt_flags(params_cmd, params);
  add_key_flag(params_cmd, params, "--d", "width", "token width");

  std::vector<const char*> argv{"provp"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    err << "run 'provp --help' for usage\n";
    return kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train, env, out);
    if (*eval_cmd) return cmd_eval(eval, env, out);
    if (*grid_cmd) return cmd_grid(grid, env, out, err);
    if (*grad_cmd) return cmd_grad_check(grad, env, out);
    if (*export_cmd) return cmd_export(exp, env, out);
    if (*data_cmd) return cmd_make_data(data, env, out);
    if (*params_cmd) return cmd_params(params, env, out);
  } catch (const std::exception& e) {
    err << "error[" << error_kind(e) << "]: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace provp::cli

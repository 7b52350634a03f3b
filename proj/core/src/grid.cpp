#include "provp/grid.hpp"

#include <atomic>
#include <mutex>
#include <string>
#include <thread>

#include "provp/error.hpp"

namespace provp {

std::string_view to_string(BankKind kind) {
  return kind == BankKind::anchored ? "anchored" : "generated";
}

BankKind parse_bank_kind(std::string_view text) {
  if (text == "generated") return BankKind::generated;
  if (text == "anchored") return BankKind::anchored;
  throw ConfigError("unknown class bank kind '" + std::string(text) + "'");
}

void ExperimentSetup::validate() const {
  encoder.validate();
  task.validate();
  if (task.patch_count != encoder.patch_count || task.patch_dim != encoder.patch_dim) {
    throw ConfigError("task patches " + std::to_string(task.patch_count) + "x" +
                      std::to_string(task.patch_dim) + " do not match the encoder's " +
                      std::to_string(encoder.patch_count) + "x" + std::to_string(encoder.patch_dim));
  }
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

ClassEmbeddingBank make_bank(const ExperimentSetup& setup, const Encoder& frozen_encoder) {
  if (setup.bank == BankKind::anchored) return anchored_bank(frozen_encoder, setup.task, setup.temperature);
  return ClassEmbeddingBank::generate(setup.task.classes, setup.encoder.output_dim, setup.bank_seed,
                                      setup.temperature, setup.min_angle_degrees);
}

RunRecord run_experiment(const ExperimentSetup& setup, const SampleStore& store,
                         const TrainConfig& config, std::uint64_t seed) {
  setup.validate();
  const FewShotTask task = sample_k_shot(store, setup.shots, seed, setup.mode);
  Encoder encoder = Encoder::create(setup.encoder, config.prompts, seed);
  const ClassEmbeddingBank bank = make_bank(setup, encoder);
  return train(task, encoder, bank, config, seed);
}

RunRecord run_experiment(const ExperimentSetup& setup, const TrainConfig& config, std::uint64_t seed) {
  setup.validate();
  return run_experiment(setup, generate_dataset(setup.task, setup.data_seed), config, seed);
}

bool GridAxes::empty() const noexcept {
  return strategies.empty() && alphas.empty() && lambdas.empty() && layers.empty() && shots.empty();
}

std::vector<GridCell> expand_grid(const GridAxes& axes, const TrainConfig& base, std::size_t base_shots) {
  if (axes.empty()) throw ConfigError("grid has no axes");
  if (base.seeds.empty()) throw ConfigError("grid seed list is empty");
  const auto strategies = axes.strategies.empty() ? std::vector{base.prompts.strategy} : axes.strategies;
  const auto alphas = axes.alphas.empty() ? std::vector{base.prompts.alpha} : axes.alphas;
  const auto lambdas = axes.lambdas.empty() ? std::vector{base.loss.lambda} : axes.lambdas;
  const auto layers = axes.layers.empty() ? std::vector{base.prompts.layers} : [&] {
    std::vector<std::optional<LayerRange>> out;
    for (const LayerRange& r : axes.layers) out.emplace_back(r);
    return out;
  }();
  const auto shots = axes.shots.empty() ? std::vector{base_shots} : axes.shots;

  std::vector<GridCell> cells;
  for (PromptStrategy strategy : strategies) {
    for (double alpha : alphas) {
      for (double lambda : lambdas) {
        for (const auto& range : layers) {
          for (std::size_t k : shots) {
            for (std::uint64_t seed : base.seeds) {
              GridCell cell;
              cell.index = cells.size();
              cell.config = base;
              cell.config.prompts.strategy = strategy;
              cell.config.prompts.alpha = alpha;
              cell.config.prompts.layers = range;
              cell.config.loss.lambda = lambda;
              cell.config.seeds = {seed};
              cell.shots = k;
              cell.seed = seed;
              cells.push_back(std::move(cell));
            }
          }
        }
      }
    }
  }
  return cells;
}

std::vector<GridResult> run_grid(const GridAxes& axes, const ExperimentSetup& setup,
                                 const TrainConfig& base, std::size_t threads,
                                 const GridProgress& progress) {
  setup.validate();
  const std::vector<GridCell> cells = expand_grid(axes, base, setup.shots);
  const SampleStore store = generate_dataset(setup.task, setup.data_seed);

  std::vector<GridResult> results(cells.size());
  std::mutex mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      GridResult result{cells[i], {}};
      ExperimentSetup cell_setup = setup;
      cell_setup.shots = cells[i].shots;
      try {
        result.record = run_experiment(cell_setup, store, cells[i].config, cells[i].seed);
      } catch (const std::exception& e) {
        result.record.seed = cells[i].seed;
        result.record.coordinates = coordinates_of(cells[i].config, cells[i].shots, setup.encoder.depth);
        result.record.error = e.what();
      }
      std::lock_guard lock(mutex);
      results[i] = std::move(result);
      if (progress) progress(results[i]);
    }
  };
  const std::size_t count = std::max<std::size_t>(1, std::min(threads, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < count; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  return results;
}

}  // namespace provp

#include "provp/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "provp/error.hpp"

namespace provp {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_list(std::string_view text) {
  std::vector<std::string_view> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = text.find(',', start);
    out.push_back(trim(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view text) {
  const std::string s(trim(text));
  if (s.empty() || s.front() == '-') throw ConfigError("'" + std::string(key) + "' needs a non-negative integer, got '" + s + "'");
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (errno != 0 || end != s.c_str() + s.size()) {
    throw ConfigError("'" + std::string(key) + "' needs a non-negative integer, got '" + s + "'");
  }
  return v;
}

double parse_double(std::string_view key, std::string_view text) {
  const std::string s(trim(text));
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || errno != 0 || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw ConfigError("'" + std::string(key) + "' needs a number, got '" + s + "'");
  }
  return v;
}

std::string number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F render) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += render(items[i]);
  }
  return out;
}

const std::vector<ConfigKey> kKeys = {
    {"strategy", "prompt strategy: none, shallow, deep, progressive"},
    {"m", "prompt tokens per layer"},
    {"alpha", "progressive decay"},
    {"depth_range", "prompted layers, i..j or 'all'"},
    {"loss", "ce_only, ref or kd"},
    {"lambda", "re-formation weight"},
    {"beta", "distillation weight"},
    {"ref_temperature", "optional temperature on re-formation similarities, 'none' to disable"},
    {"lr", "base learning rate"},
    {"wd", "weight decay"},
    {"momentum", "SGD momentum"},
    {"schedule", "constant or cosine"},
    {"batch_size", "minibatch size"},
    {"epochs", "epoch count, 'auto' to derive from shots"},
    {"shots", "samples per training class"},
    {"seeds", "comma-separated run seeds"},
    {"mode", "few_shot or base_to_novel"},
    {"track_eval_from", "evaluate every epoch from this 0-based epoch, 'none' to disable"},
    {"classes", "number of classes"},
    {"samples_per_class", "generated samples per class"},
    {"noise", "per-entry Gaussian noise std"},
    {"shift", "novel-class prototype displacement"},
    {"data_seed", "noise seed for dataset generation"},
    {"prototype_seed", "class prototype and split seed"},
    {"bank", "generated or anchored class bank"},
    {"bank_seed", "seed for generated class banks"},
    {"temperature", "classifier temperature"},
    {"min_angle", "minimum pairwise angle of generated banks, degrees"},
    {"depth", "encoder layers"},
    {"width", "token width"},
    {"heads", "attention heads"},
    {"patch_count", "patches per image"},
    {"patch_dim", "values per patch"},
    {"output_dim", "feature dimension"},
    {"mlp_ratio", "MLP hidden width / token width"},
    {"encoder_seed", "backbone weight seed"},
    {"grid.strategies", "grid axis: strategies"},
    {"grid.alphas", "grid axis: alpha values"},
    {"grid.lambdas", "grid axis: lambda values"},
    {"grid.layers", "grid axis: layer ranges"},
    {"grid.shots", "grid axis: shot counts"},
    {"threads", "worker threads for grids"},
};

}  // namespace

void RunConfig::validate() const {
  setup.validate();
  train.validate();
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (train.prompts.layers) {
    const LayerRange& r = *train.prompts.layers;
    if (r.first < 1 || r.last > static_cast<int>(setup.encoder.depth)) {
      throw ConfigError("depth_range " + r.to_string() + " outside 1.." + std::to_string(setup.encoder.depth));
    }
  }
}

const std::vector<ConfigKey>& config_keys() { return kKeys; }

std::string env_name(std::string_view key) {
  std::string out = "PROVP_";
  for (char c : key) out.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

void set_config_value(RunConfig& c, std::string_view key, std::string_view raw) {
  const std::string_view value = trim(raw);
  auto u64 = [&] { return parse_u64(key, value); };
  auto dbl = [&] { return parse_double(key, value); };
  auto size = [&] { return static_cast<std::size_t>(parse_u64(key, value)); };
  TrainConfig& t = c.train;
  ExperimentSetup& s = c.setup;

  if (key == "strategy") t.prompts.strategy = parse_strategy(value);
  else if (key == "m") t.prompts.length = size();
  else if (key == "alpha") t.prompts.alpha = dbl();
  else if (key == "depth_range") {
    if (value == "all") t.prompts.layers.reset();
    else t.prompts.layers = LayerRange::parse(value);
  } else if (key == "loss") t.loss.mode = parse_loss_mode(value);
  else if (key == "lambda") t.loss.lambda = dbl();
  else if (key == "beta") t.loss.beta = dbl();
  else if (key == "ref_temperature") {
    if (value == "none") t.loss.ref_temperature.reset();
    else t.loss.ref_temperature = dbl();
  } else if (key == "lr") t.learning_rate = dbl();
  else if (key == "wd") t.weight_decay = dbl();
  else if (key == "momentum") t.momentum = dbl();
  else if (key == "schedule") t.schedule = parse_schedule(value);
  else if (key == "batch_size") t.batch_size = size();
  else if (key == "epochs") {
    if (value == "auto") t.max_epochs.reset();
    else t.max_epochs = size();
  } else if (key == "shots") s.shots = size();
  else if (key == "seeds") {
    t.seeds.clear();
    for (std::string_view item : split_list(value)) t.seeds.push_back(parse_u64(key, item));
  } else if (key == "mode") {
    if (value == "few_shot") s.mode = TaskMode::few_shot;
    else if (value == "base_to_novel") s.mode = TaskMode::base_to_novel;
    else throw ConfigError("unknown mode '" + std::string(value) + "'");
  } else if (key == "track_eval_from") {
    if (value == "none") t.track_eval_from.reset();
    else t.track_eval_from = size();
  } else if (key == "classes") s.task.classes = size();
  else if (key == "samples_per_class") s.task.samples_per_class = size();
  else if (key == "noise") s.task.noise_std = dbl();
  else if (key == "shift") s.task.shift = dbl();
  else if (key == "data_seed") s.data_seed = u64();
  else if (key == "prototype_seed") s.task.prototype_seed = u64();
  else if (key == "bank") s.bank = parse_bank_kind(value);
  else if (key == "bank_seed") s.bank_seed = u64();
  else if (key == "temperature") s.temperature = dbl();
  else if (key == "min_angle") s.min_angle_degrees = dbl();
  else if (key == "depth") s.encoder.depth = size();
  else if (key == "width") s.encoder.width = size();
  else if (key == "heads") s.encoder.heads = size();
  else if (key == "patch_count") s.encoder.patch_count = s.task.patch_count = size();
  else if (key == "patch_dim") s.encoder.patch_dim = s.task.patch_dim = size();
  else if (key == "output_dim") s.encoder.output_dim = size();
  else if (key == "mlp_ratio") s.encoder.mlp_ratio = size();
  else if (key == "encoder_seed") s.encoder.seed = u64();
  else if (key == "grid.strategies") {
    c.grid.strategies.clear();
    for (std::string_view item : split_list(value)) c.grid.strategies.push_back(parse_strategy(item));
  } else if (key == "grid.alphas") {
    c.grid.alphas.clear();
    for (std::string_view item : split_list(value)) c.grid.alphas.push_back(parse_double(key, item));
  } else if (key == "grid.lambdas") {
    c.grid.lambdas.clear();
    for (std::string_view item : split_list(value)) c.grid.lambdas.push_back(parse_double(key, item));
  } else if (key == "grid.layers") {
    c.grid.layers.clear();
    for (std::string_view item : split_list(value)) c.grid.layers.push_back(LayerRange::parse(item));
  } else if (key == "grid.shots") {
    c.grid.shots.clear();
    for (std::string_view item : split_list(value)) c.grid.shots.push_back(static_cast<std::size_t>(parse_u64(key, item)));
  } else if (key == "threads") c.threads = size();
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t eol = text.find('\n', start);
    std::string_view line = text.substr(start, eol == std::string_view::npos ? text.npos : eol - start);
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (!line.empty()) {
      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
      }
      try {
        set_config_value(config, trim(line.substr(0, eq)), line.substr(eq + 1));
      } catch (const ConfigError& e) {
        throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (eol == std::string_view::npos) break;
    start = eol + 1;
  }
  return config;
}

RunConfig load_config(const std::string& name_or_path) {
  if (name_or_path.empty() || name_or_path == "default") return RunConfig{};
  std::ifstream in(name_or_path);
  if (!in) throw IoError("cannot open config file " + name_or_path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_config(buffer.str());
  } catch (const ConfigError& e) {
    throw ConfigError(name_or_path + ": " + e.what());
  }
}

void apply_env_overrides(RunConfig& config, const EnvLookup& lookup) {
  for (const ConfigKey& key : kKeys) {
    const std::string name = env_name(key.name);
    if (auto value = lookup(name)) {
      try {
        set_config_value(config, key.name, *value);
      } catch (const ConfigError& e) {
        throw ConfigError(name + ": " + e.what());
      }
    }
  }
}

void apply_env_overrides(RunConfig& config) {
  apply_env_overrides(config, [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  });
}

std::string to_text(const RunConfig& c) {
  const TrainConfig& t = c.train;
  const ExperimentSetup& s = c.setup;
  std::ostringstream out;
  out << "strategy = " << to_string(t.prompts.strategy) << "\n"
      << "m = " << t.prompts.length << "\n"
      << "alpha = " << number(t.prompts.alpha) << "\n"
      << "depth_range = " << (t.prompts.layers ? t.prompts.layers->to_string() : "all") << "\n"
      << "loss = " << to_string(t.loss.mode) << "\n"
      << "lambda = " << number(t.loss.lambda) << "\n"
      << "beta = " << number(t.loss.beta) << "\n"
      << "ref_temperature = " << (t.loss.ref_temperature ? number(*t.loss.ref_temperature) : "none") << "\n"
      << "lr = " << number(t.learning_rate) << "\n"
      << "wd = " << number(t.weight_decay) << "\n"
      << "momentum = " << number(t.momentum) << "\n"
      << "schedule = " << to_string(t.schedule) << "\n"
      << "batch_size = " << t.batch_size << "\n"
      << "epochs = " << (t.max_epochs ? std::to_string(*t.max_epochs) : "auto") << "\n"
      << "shots = " << s.shots << "\n"
      << "seeds = " << join(t.seeds, [](std::uint64_t v) { return std::to_string(v); }) << "\n"
      << "mode = " << (s.mode == TaskMode::few_shot ? "few_shot" : "base_to_novel") << "\n"
      << "track_eval_from = " << (t.track_eval_from ? std::to_string(*t.track_eval_from) : "none") << "\n"
      << "classes = " << s.task.classes << "\n"
      << "samples_per_class = " << s.task.samples_per_class << "\n"
      << "noise = " << number(s.task.noise_std) << "\n"
      << "shift = " << number(s.task.shift) << "\n"
      << "data_seed = " << s.data_seed << "\n"
      << "prototype_seed = " << s.task.prototype_seed << "\n"
      << "bank = " << to_string(s.bank) << "\n"
      << "bank_seed = " << s.bank_seed << "\n"
      << "temperature = " << number(s.temperature) << "\n"
      << "min_angle = " << number(s.min_angle_degrees) << "\n"
      << "depth = " << s.encoder.depth << "\n"
      << "width = " << s.encoder.width << "\n"
      << "heads = " << s.encoder.heads << "\n"
      << "patch_count = " << s.encoder.patch_count << "\n"
      << "patch_dim = " << s.encoder.patch_dim << "\n"
      << "output_dim = " << s.encoder.output_dim << "\n"
      << "mlp_ratio = " << s.encoder.mlp_ratio << "\n"
      << "encoder_seed = " << s.encoder.seed << "\n"
      << "grid.strategies = " << join(c.grid.strategies, [](PromptStrategy v) { return std::string(to_string(v)); }) << "\n"
      << "grid.alphas = " << join(c.grid.alphas, number) << "\n"
      << "grid.lambdas = " << join(c.grid.lambdas, number) << "\n"
      << "grid.layers = " << join(c.grid.layers, [](const LayerRange& r) { return r.to_string(); }) << "\n"
      << "grid.shots = " << join(c.grid.shots, [](std::size_t v) { return std::to_string(v); }) << "\n"
      << "threads = " << c.threads << "\n";
  return out.str();
}

}  // namespace provp

#include "cemb/pipeline/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "cemb/errors.hpp"
#include "cemb/json_util.hpp"

namespace cemb::pipeline {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kPretrain: return "pretrain";
    case Stage::kFinetune: return "finetune";
    case Stage::kMultitask: return "multitask";
  }
  throw ConfigError("unknown stage");
}

Stage parse_stage(const std::string& s) {
  if (s == "pretrain") return Stage::kPretrain;
  if (s == "finetune") return Stage::kFinetune;
  if (s == "multitask") return Stage::kMultitask;
  throw ConfigError("unknown stage '" + s + "'");
}

std::vector<Stage> parse_stage_list(const std::string& s) {
  std::vector<Stage> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_stage(item));
  }
  return out;
}

void StageConfig::validate() const {
  const std::string where = std::string(stage_name(stage)) + " stage config: ";
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw ConfigError(where + "learning_rate must be >= 0");
  if (batch_size == 0) throw ConfigError(where + "batch_size must be positive");
  if (max_length == 0) throw ConfigError(where + "max_length must be positive");
  if (max_steps.has_value() == epochs.has_value()) {
    throw ConfigError(where + "exactly one of max_steps and epochs must be set");
  }
  if (!(temperature > 0)) throw ConfigError(where + "temperature must be positive");
  if (!(weight_decay >= 0)) throw ConfigError(where + "weight_decay must be >= 0");
  if (!(grad_clip_norm > 0)) throw ConfigError(where + "grad_clip_norm must be positive");
  if (use_in_batch_for_retrieval && batch_size < 2) {
    throw ConfigError(where + "in-batch negatives need batch_size >= 2");
  }
}

objective::LossConfig StageConfig::loss_config() const {
  objective::LossConfig c;
  c.temperature = temperature;
  c.use_in_batch = use_in_batch_for_retrieval;
  c.cache_capacity_batches = cache_capacity;
  c.hard_negatives_per_query = hard_negatives;
  return c;
}

void to_json(nlohmann::json& j, const StageConfig& c) {
  j = {{"stage", stage_name(c.stage)},
       {"learning_rate", c.learning_rate},
       {"warmup_steps", c.warmup_steps},
       {"batch_size", c.batch_size},
       {"max_steps", c.max_steps ? nlohmann::json(*c.max_steps) : nlohmann::json(nullptr)},
       {"max_length", c.max_length},
       {"epochs", c.epochs ? nlohmann::json(*c.epochs) : nlohmann::json(nullptr)},
       {"temperature", c.temperature},
       {"weight_decay", c.weight_decay},
       {"hard_negatives", c.hard_negatives},
       {"use_in_batch_for_retrieval", c.use_in_batch_for_retrieval},
       {"cache_capacity", c.cache_capacity},
       {"grad_clip_norm", c.grad_clip_norm},
       {"remine_each_epoch", c.remine_each_epoch}};
}

namespace {

void read_optional_count(const nlohmann::json& j, const char* key, std::optional<std::size_t>& out,
                         const std::string& what) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (it->is_null()) {
    out.reset();
    return;
  }
  std::size_t v = 0;
  json_util::read_required(j, key, v, what);
  out = v;
}

}  // namespace

void from_json(const nlohmann::json& j, StageConfig& c) {
  const std::string what = "stage config";
  json_util::require_known_keys(j,
                                {"stage", "learning_rate", "warmup_steps", "batch_size", "max_steps",
                                 "max_length", "epochs", "temperature", "weight_decay", "hard_negatives",
                                 "use_in_batch_for_retrieval", "cache_capacity", "grad_clip_norm",
                                 "remine_each_epoch"},
                                what);
  if (j.contains("stage")) {
    std::string s;
    json_util::read_required(j, "stage", s, what);
    c.stage = parse_stage(s);
  }
  json_util::read_optional(j, "learning_rate", c.learning_rate, what);
  json_util::read_optional(j, "warmup_steps", c.warmup_steps, what);
  json_util::read_optional(j, "batch_size", c.batch_size, what);
  read_optional_count(j, "max_steps", c.max_steps, what);
  json_util::read_optional(j, "max_length", c.max_length, what);
  read_optional_count(j, "epochs", c.epochs, what);
  json_util::read_optional(j, "temperature", c.temperature, what);
  json_util::read_optional(j, "weight_decay", c.weight_decay, what);
  json_util::read_optional(j, "hard_negatives", c.hard_negatives, what);
  json_util::read_optional(j, "use_in_batch_for_retrieval", c.use_in_batch_for_retrieval, what);
  json_util::read_optional(j, "cache_capacity", c.cache_capacity, what);
  json_util::read_optional(j, "grad_clip_norm", c.grad_clip_norm, what);
  json_util::read_optional(j, "remine_each_epoch", c.remine_each_epoch, what);
}

std::array<StageConfig, 3> default_stage_configs() {
  StageConfig pretrain;
  pretrain.stage = Stage::kPretrain;
  pretrain.learning_rate = 1e-5;
  pretrain.warmup_steps = 1000;
  pretrain.batch_size = 16384;
  pretrain.max_steps = 6000;
  pretrain.epochs.reset();
  pretrain.max_length = 512;
  pretrain.temperature = 0.02;
  pretrain.weight_decay = 0.01;
  pretrain.hard_negatives = 0;
  pretrain.cache_capacity = objective::LossConfig{}.cache_capacity_batches;

  StageConfig finetune;
  finetune.stage = Stage::kFinetune;
  finetune.learning_rate = 1e-5;
  finetune.warmup_steps = 500;
  finetune.batch_size = 512;
  finetune.epochs = 3;
  finetune.max_length = 512;
  finetune.temperature = 0.02;
  finetune.weight_decay = 0.01;
  finetune.hard_negatives = 7;
  finetune.cache_capacity = 0;

  StageConfig multitask = finetune;
  multitask.stage = Stage::kMultitask;
  return {pretrain, finetune, multitask};
}

std::array<StageConfig, 3> desk_stage_configs() {
  auto c = default_stage_configs();
  c[0].batch_size = 64;
  c[0].max_steps = 100;
  c[0].warmup_steps = 20;
  c[1].batch_size = 32;
  c[1].warmup_steps = 20;
  c[2].batch_size = 32;
  c[2].warmup_steps = 20;
  for (auto& s : c) s.learning_rate = 1e-3;
  return c;
}

double lr_at(std::size_t step, const StageConfig& config) {
  if (step == 0) throw ArgumentError("lr_at: steps are 1-based");
  if (config.warmup_steps == 0 || step >= config.warmup_steps) return config.learning_rate;
  return config.learning_rate * double(step) / double(config.warmup_steps);
}

void to_json(nlohmann::json& j, const DataSource& s) {
  if (s.synthetic) {
    j = {{"synthetic", *s.synthetic}, {"holdout_fraction", s.holdout_fraction}};
  } else {
    j = s.path;
  }
}

void from_json(const nlohmann::json& j, DataSource& s) {
  s = DataSource{};
  if (j.is_string()) {
    s.path = j.get<std::string>();
    return;
  }
  json_util::require_known_keys(j, {"synthetic", "holdout_fraction"}, "data source");
  data::CorpusSpec spec;
  json_util::read_required(j, "synthetic", spec, "data source");
  s.synthetic = spec;
  json_util::read_optional(j, "holdout_fraction", s.holdout_fraction, "data source");
}

const std::vector<DataSource>& RunConfig::stage_data(Stage s) const {
  switch (s) {
    case Stage::kPretrain: return pretrain_data;
    case Stage::kFinetune: return finetune_data;
    case Stage::kMultitask: return multitask_data;
  }
  throw ConfigError("unknown stage");
}

void RunConfig::validate() const {
  if (model.vocab_size != 0) model.validate();
  else {
    model::ModelConfig probe = model;
    probe.vocab_size = 1;
    probe.validate();
  }
  if (output_dir.empty()) throw ConfigError("output_dir must be set");
  if (!(prune_fraction >= 0 && prune_fraction < 1)) throw ConfigError("prune_fraction must lie in [0, 1)");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      if (stages[k] == stages[i]) throw ConfigError(std::string("stage ") + stage_name(stages[i]) + " listed twice");
      if (stages[k] > stages[i]) throw ConfigError("stages must run in pretrain, finetune, multitask order");
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (stage_configs[i].stage != Stage(i)) {
      throw ConfigError(std::string("stage_configs.") + stage_name(Stage(i)) + " names stage " +
                        stage_name(stage_configs[i].stage));
    }
    stage_configs[i].validate();
  }
  for (Stage s : stages) {
    if (stage_data(s).empty()) throw ConfigError(std::string("no data for stage ") + stage_name(s));
    for (const auto& src : stage_data(s)) {
      if (src.synthetic) src.synthetic->validate();
      else if (src.path.empty()) throw ConfigError("data source without a path");
      if (!(src.holdout_fraction >= 0 && src.holdout_fraction < 1)) {
        throw ConfigError("holdout_fraction must lie in [0, 1)");
      }
    }
  }
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json stages = nlohmann::json::array();
  for (Stage s : c.stages) stages.push_back(stage_name(s));
  nlohmann::json stage_configs = nlohmann::json::object();
  for (const auto& s : c.stage_configs) stage_configs[stage_name(s.stage)] = s;
  j = {{"model", c.model},
       {"seed", c.seed},
       {"output_dir", c.output_dir},
       {"prompt_strategy", data::prompt_strategy_name(c.prompt_strategy)},
       {"prune_fraction", c.prune_fraction},
       {"stages", stages},
       {"stage_configs", stage_configs},
       {"data",
        {{"pretrain", c.pretrain_data},
         {"finetune", c.finetune_data},
         {"multitask", c.multitask_data},
         {"eval_tasks", c.eval_tasks}}},
       {"eval_initial", c.eval_initial}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  const std::string what = "run config";
  json_util::require_known_keys(j,
                                {"model", "seed", "output_dir", "prompt_strategy", "prune_fraction", "stages",
                                 "stage_configs", "data", "eval_initial"},
                                what);
  json_util::read_optional(j, "model", c.model, what);
  json_util::read_optional(j, "seed", c.seed, what);
  json_util::read_optional(j, "output_dir", c.output_dir, what);
  if (j.contains("prompt_strategy")) {
    std::string s;
    json_util::read_required(j, "prompt_strategy", s, what);
    c.prompt_strategy = data::parse_prompt_strategy(s);
  }
  json_util::read_optional(j, "prune_fraction", c.prune_fraction, what);
  if (j.contains("stages")) {
    std::vector<std::string> names;
    json_util::read_required(j, "stages", names, what);
    c.stages.clear();
    for (const auto& n : names) c.stages.push_back(parse_stage(n));
  }
  if (j.contains("stage_configs")) {
    const auto& sc = j.at("stage_configs");
    json_util::require_known_keys(sc, {"pretrain", "finetune", "multitask"}, "stage_configs");
    for (std::size_t i = 0; i < 3; ++i) {
      const char* name = stage_name(Stage(i));
      if (!sc.contains(name)) continue;
      nlohmann::json merged = c.stage_configs[i];
      merged.update(sc.at(name));
      c.stage_configs[i] = merged.get<StageConfig>();
    }
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    json_util::require_known_keys(d, {"pretrain", "finetune", "multitask", "eval_tasks"}, "data");
    json_util::read_optional(d, "pretrain", c.pretrain_data, "data");
    json_util::read_optional(d, "finetune", c.finetune_data, "data");
    json_util::read_optional(d, "multitask", c.multitask_data, "data");
    json_util::read_optional(d, "eval_tasks", c.eval_tasks, "data");
  }
  json_util::read_optional(j, "eval_initial", c.eval_initial, what);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return j.get<RunConfig>();
}

void apply_override(nlohmann::json& config, const std::string& key, const std::string& value) {
  if (key.empty()) throw ConfigError("override with an empty key");
  nlohmann::json* node = &config;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) {
      throw ConfigError("override key '" + key + "' does not exist in the config");
    }
    node = &(*node)[parts[i]];
  }
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    parsed = value;
  }
  *node = parsed;
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  apply_override(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

namespace {

void diff_into(const nlohmann::json& a, const nlohmann::json& b, const std::string& prefix,
               std::vector<std::string>& out) {
  if (a.is_object() && b.is_object()) {
    std::vector<std::string> keys;
    for (const auto& item : a.items()) keys.push_back(item.key());
    for (const auto& item : b.items()) {
      if (!a.contains(item.key())) keys.push_back(item.key());
    }
    for (const auto& k : keys) {
      const std::string path = prefix.empty() ? k : prefix + "." + k;
      if (!a.contains(k) || !b.contains(k)) {
        out.push_back(path);
        continue;
      }
      diff_into(a.at(k), b.at(k), path, out);
    }
    return;
  }
  if (a != b) out.push_back(prefix);
}

}  // namespace

std::vector<std::string> json_leaf_diff(const nlohmann::json& a, const nlohmann::json& b) {
  std::vector<std::string> out;
  diff_into(a, b, "", out);
  return out;
}

}  // namespace cemb::pipeline

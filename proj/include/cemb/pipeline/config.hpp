#ifndef CEMB_PIPELINE_CONFIG_HPP_
#define CEMB_PIPELINE_CONFIG_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cemb/data/corpus.hpp"
#include "cemb/data/example.hpp"
#include "cemb/model/config.hpp"
#include "cemb/objective/info_nce.hpp"
#include "json.hpp"

namespace cemb::pipeline {

enum class Stage { kPretrain, kFinetune, kMultitask };

const char* stage_name(Stage s);
Stage parse_stage(const std::string& s);
// Comma-separated, e.g. "finetune,multitask".
std::vector<Stage> parse_stage_list(const std::string& s);

struct StageConfig {
  Stage stage = Stage::kFinetune;
  double learning_rate = 1e-5;
  std::size_t warmup_steps = 500;
  std::size_t batch_size = 512;
  std::optional<std::size_t> max_steps;
  std::size_t max_length = 512;
  std::optional<std::size_t> epochs = 3;
  double temperature = 0.02;
  double weight_decay = 0.01;
  std::size_t hard_negatives = 7;
  bool use_in_batch_for_retrieval = true;
  std::size_t cache_capacity = 0;
  double grad_clip_norm = 1.0;
  // Mine hard negatives again with the current model before every epoch
  // after the first (epoch-based stages only).
  bool remine_each_epoch = false;

  // Throws ConfigError.
  void validate() const;
  objective::LossConfig loss_config() const;
  bool operator==(const StageConfig&) const = default;
};

void to_json(nlohmann::json& j, const StageConfig& c);
void from_json(const nlohmann::json& j, StageConfig& c);

// The published hyperparameter table, verbatim.
std::array<StageConfig, 3> default_stage_configs();
// Small batches and a larger learning rate for single-core runs.
std::array<StageConfig, 3> desk_stage_configs();

// Linear warmup from 0 to learning_rate over warmup_steps, then constant.
// Steps are 1-based.
double lr_at(std::size_t step, const StageConfig& config);

// Training data: a JSONL path or a synthetic corpus. A synthetic source may
// hold back a fraction of its examples as evaluation tasks.
struct DataSource {
  std::string path;
  std::optional<data::CorpusSpec> synthetic;
  double holdout_fraction = 0.0;
};

void to_json(nlohmann::json& j, const DataSource& s);
void from_json(const nlohmann::json& j, DataSource& s);

struct RunConfig {
  model::ModelConfig model;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  data::PromptStrategy prompt_strategy = data::PromptStrategy::kInstruct;
  double prune_fraction = 0.0;
  std::vector<Stage> stages{Stage::kPretrain, Stage::kFinetune, Stage::kMultitask};
  std::array<StageConfig, 3> stage_configs = desk_stage_configs();
  std::vector<DataSource> pretrain_data;
  std::vector<DataSource> finetune_data;
  std::vector<DataSource> multitask_data;
  // Eval task JSONL files, evaluated with the held-out synthetic tasks.
  std::vector<std::string> eval_tasks;
  // Also evaluate the freshly initialized model.
  bool eval_initial = false;

  const StageConfig& stage_config(Stage s) const { return stage_configs[std::size_t(s)]; }
  const std::vector<DataSource>& stage_data(Stage s) const;
  // Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::string& path);

// Sets a dotted key ("stage_configs.finetune.batch_size") on a fully
// populated config document. The key must already exist; the value is parsed
// as JSON and falls back to a plain string.
void apply_override(nlohmann::json& config, const std::string& key, const std::string& value);
// "key=value" form.
void apply_override(nlohmann::json& config, const std::string& assignment);

// Dotted paths of leaves (arrays count as leaves) whose values differ.
std::vector<std::string> json_leaf_diff(const nlohmann::json& a, const nlohmann::json& b);

}  // namespace cemb::pipeline

#endif  // CEMB_PIPELINE_CONFIG_HPP_

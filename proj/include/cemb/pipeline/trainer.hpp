#ifndef CEMB_PIPELINE_TRAINER_HPP_
#define CEMB_PIPELINE_TRAINER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cemb/data/example.hpp"
#include "cemb/data/tokenizer.hpp"
#include "cemb/model/encoder.hpp"
#include "cemb/objective/info_nce.hpp"
#include "cemb/pipeline/config.hpp"
#include "cemb/pipeline/optimizer.hpp"
#include "json.hpp"

namespace cemb::pipeline {

using Model = model::EncoderModel<float>;

struct StepRecord {
  std::size_t step = 0;  // 1-based within the stage
  Stage stage = Stage::kFinetune;
  double loss = 0;
  double lr = 0;

  bool operator==(const StepRecord&) const = default;
};

void to_json(nlohmann::json& j, const StepRecord& r);
void from_json(const nlohmann::json& j, StepRecord& r);

// Everything a stage carries between steps.
struct TrainerState {
  AdamState<float> optimizer;
  objective::CrossBatchCache<float> cache{0};
  std::size_t step = 0;  // steps completed in the current stage
  // Per query of the latest batch: 1 (the positive) plus the pool size.
  std::vector<std::size_t> last_logit_widths;
};

TrainerState fresh_trainer_state(const StageConfig& config);

// Throws ConfigError when a task type is not allowed in the stage.
void check_stage_tasks(Stage stage, const std::vector<data::TrainingExample>& examples);

// Checks stage legality and attaches exactly hard_negatives negatives to every
// example. Labeled examples keep the first ones they carry; retrieval and sts
// examples are mined with the current model against the distinct positives.
// A query for which the model leaves fewer than hard_negatives documents under
// the margin gets seeded uniform draws from the other documents instead.
std::vector<data::TrainingExample> prepare_stage_data(const Model& model, const data::Tokenizer& tokenizer,
                                                      const data::PromptTemplate& tpl, const StageConfig& config,
                                                      const std::vector<data::TrainingExample>& examples,
                                                      std::uint64_t seed);

struct MiningStats {
  std::size_t mined = 0;
  std::size_t random_fallback = 0;
};
// Counts from the most recent prepare_stage_data call on this thread.
MiningStats last_mining_stats();

// Batches for every step of the stage, in order.
std::vector<std::vector<std::size_t>> stage_schedule(const StageConfig& config,
                                                     const std::vector<data::TrainingExample>& examples,
                                                     std::uint64_t seed);

// One optimizer step on one batch of prepared examples. Returns the loss.
double train_step(Model& model, const StageConfig& config, const std::vector<data::TrainingExample>& examples,
                  const std::vector<std::size_t>& batch, const data::Tokenizer& tokenizer,
                  const data::PromptTemplate& tpl, TrainerState& state);

using StepCallback = std::function<void(const StepRecord&)>;

// Runs the schedule from state.step to the end, or for at most max_new_steps.
// `examples` must come from prepare_stage_data.
std::vector<StepRecord> train_stage(Model& model, const StageConfig& config,
                                    const std::vector<data::TrainingExample>& examples,
                                    const data::Tokenizer& tokenizer, const data::PromptTemplate& tpl,
                                    std::uint64_t seed, TrainerState& state, const StepCallback& on_step = {},
                                    std::optional<std::size_t> max_new_steps = std::nullopt);

struct Checkpoint {
  Model model;
  data::Tokenizer tokenizer;
  TrainerState state;
  nlohmann::json run_manifest;
};

// Directory layout: the model archive (manifest.json, weights.bin,
// config.json), vocab.txt, run_manifest.json and a trainer/ archive with the
// optimizer moments and cached embeddings.
void save_checkpoint(const std::filesystem::path& dir, const Model& model, const data::Tokenizer& tokenizer,
                     const TrainerState& state, const nlohmann::json& run_manifest);
// Throws CorruptionError when any part fails verification.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

std::string manifest_hash(const nlohmann::json& run_manifest);

}  // namespace cemb::pipeline

#endif  // CEMB_PIPELINE_TRAINER_HPP_

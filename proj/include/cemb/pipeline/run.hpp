#ifndef CEMB_PIPELINE_RUN_HPP_
#define CEMB_PIPELINE_RUN_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cemb/data/example.hpp"
#include "cemb/data/tokenizer.hpp"
#include "cemb/eval/evaluate.hpp"
#include "cemb/pipeline/config.hpp"
#include "cemb/pipeline/trainer.hpp"
#include "json.hpp"

namespace cemb::pipeline {

// Exclusive ownership of an output directory through a .lock file.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Training examples per stage plus the evaluation tasks held out of them.
struct RunData {
  std::vector<data::TrainingExample> pretrain;
  std::vector<data::TrainingExample> finetune;
  std::vector<data::TrainingExample> multitask;
  std::vector<eval::EvalTask> eval_tasks;

  const std::vector<data::TrainingExample>& of(Stage s) const;
};

RunData load_run_data(const RunConfig& config);

// Vocabulary over every training and evaluation text plus the literal words
// of both prompt templates, so it does not depend on the prompt strategy.
data::Tokenizer build_run_tokenizer(const RunData& data);

struct RunResult {
  Model model;
  data::Tokenizer tokenizer;
  nlohmann::json manifest;
  std::vector<StepRecord> metric_log;
  std::optional<eval::EvalReport> initial_report;
  eval::EvalReport final_report;
  double wall_seconds = 0;
};

// Writes under config.output_dir: run_manifest.json, metrics.jsonl,
// checkpoints/<stage>/ after every stage, checkpoints/final/ and
// eval_report.json.
RunResult run_pipeline(const RunConfig& config);

enum class AblationVariant { kFullVsPruned, kPrefixVsInstruct, kWithVsWithoutPretrain };

const char* ablation_variant_name(AblationVariant v);
AblationVariant parse_ablation_variant(const std::string& s);

struct AblationArm {
  std::string name;
  RunConfig config;
};

// Two configs that differ from each other in exactly one field besides
// output_dir, which becomes <base output_dir>/<arm name>.
std::pair<AblationArm, AblationArm> ablation_arms(AblationVariant variant, const RunConfig& base);

// Runs both arms and writes <base output_dir>/ablation_<variant>.json.
nlohmann::json run_ablation(AblationVariant variant, const RunConfig& base);

data::PromptTemplate checkpoint_template(const Checkpoint& checkpoint);

}  // namespace cemb::pipeline

#endif  // CEMB_PIPELINE_RUN_HPP_

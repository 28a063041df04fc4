#ifndef CEMB_EVAL_EVALUATE_HPP_
#define CEMB_EVAL_EVALUATE_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cemb/data/example.hpp"
#include "cemb/data/tokenizer.hpp"
#include "cemb/model/encoder.hpp"
#include "json.hpp"

namespace cemb::eval {

using numerics::Tensor;

struct RetrievalTask {
  std::string name;
  std::string instruction;
  std::vector<std::string> queries;
  std::vector<std::string> documents;
  // Per query: document id -> relevance grade (> 0 is relevant).
  std::vector<std::map<std::size_t, double>> relevance;
};

struct ClassificationTask {
  std::string name;
  std::string instruction;
  std::vector<std::string> train_texts;
  std::vector<std::string> train_labels;
  std::vector<std::string> test_texts;
  std::vector<std::string> test_labels;
  std::size_t k = 5;
};

struct ClusteringTask {
  std::string name;
  std::string instruction;
  std::vector<std::string> texts;
  std::vector<std::string> labels;
  std::size_t n_clusters = 0;
  std::uint64_t seed = 0;
};

struct StsTask {
  std::string name;
  std::string instruction;
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<double> scores;
};

using EvalTask = std::variant<RetrievalTask, ClassificationTask, ClusteringTask, StsTask>;

const char* task_category(const EvalTask& task);
const std::string& task_name(const EvalTask& task);
// Throws ArgumentError on inconsistent gold structures.
void validate_task(const EvalTask& task);

void to_json(nlohmann::json& j, const EvalTask& task);
void from_json(const nlohmann::json& j, EvalTask& task);

// One task object per line, discriminated by "kind".
std::vector<EvalTask> load_tasks(const std::filesystem::path& path);
void write_tasks(const std::vector<EvalTask>& tasks, const std::filesystem::path& path);

struct TaskResult {
  std::string name;
  std::string category;
  double main_score = 0;
  std::map<std::string, double> metrics;
};

struct EvalReport {
  std::vector<TaskResult> tasks;
  std::map<std::string, double> category_means;
  // Mean of the category means; 0 with no tasks.
  double average = 0;
};

void to_json(nlohmann::json& j, const TaskResult& r);
void to_json(nlohmann::json& j, const EvalReport& r);
// Rebuilds category means and the average from the task results.
EvalReport summarize(std::vector<TaskResult> results);

// Maps already-rendered texts to embedding rows.
using Embedder = std::function<Tensor<float>(const std::vector<std::string>&)>;

// Retrieval queries get the query template, documents the document template.
// Symmetric tasks render every text with the query template.
EvalReport evaluate_with(const Embedder& embedder, const data::PromptTemplate& tpl,
                         const std::vector<EvalTask>& tasks);

// Tokenizes and embeds in chunks without recording gradients.
Tensor<float> embed_texts(const model::EncoderModel<float>& model, const data::Tokenizer& tokenizer,
                          const std::vector<std::string>& texts, std::size_t max_length = 512,
                          std::size_t chunk = 64);

EvalReport evaluate(const model::EncoderModel<float>& model, const data::Tokenizer& tokenizer,
                    const data::PromptTemplate& tpl, const std::vector<EvalTask>& tasks,
                    std::size_t max_length = 512);

}  // namespace cemb::eval

#endif  // CEMB_EVAL_EVALUATE_HPP_

#ifndef CEMB_DATA_EXAMPLE_HPP_
#define CEMB_DATA_EXAMPLE_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cemb/task_type.hpp"
#include "json.hpp"

namespace cemb::data {

struct TrainingExample {
  TaskType task_type = TaskType::kRetrieval;
  std::string instruction;
  std::string query;
  std::string positive;
  std::vector<std::string> hard_negatives;
  std::optional<std::string> label;

  // Throws ArgumentError on a broken invariant.
  void validate() const;
  bool operator==(const TrainingExample&) const = default;
};

void to_json(nlohmann::json& j, const TrainingExample& ex);
// Exactly the example fields; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainingExample& ex);

// One JSON object per line. Blank lines are skipped; any other malformed line
// raises ParseError naming the 1-based line number.
std::vector<TrainingExample> load_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::vector<TrainingExample>& examples, const std::filesystem::path& path);

enum class PromptStrategy { kPrefix, kInstruct };

const char* prompt_strategy_name(PromptStrategy s);
PromptStrategy parse_prompt_strategy(const std::string& s);

struct PromptTemplate {
  PromptStrategy strategy = PromptStrategy::kInstruct;
  std::string query_template;     // {instruction} and {text} slots
  std::string document_template;  // {text} slot only

  static PromptTemplate prefix();
  static PromptTemplate instruct();
  static PromptTemplate of(PromptStrategy s);

  std::string render_query(const std::string& instruction, const std::string& text) const;
  std::string render_document(const std::string& text) const;
};

struct FormattedExample {
  std::string query;
  std::string positive;
  std::vector<std::string> negatives;
};

FormattedExample format_example(const PromptTemplate& tpl, const TrainingExample& ex);

// Instruction used when a generated example needs one.
std::string default_instruction(TaskType t);

}  // namespace cemb::data

#endif  // CEMB_DATA_EXAMPLE_HPP_

#include "cemb/data/example.hpp"

#include <fstream>

#include "cemb/errors.hpp"
#include "cemb/json_util.hpp"

namespace cemb::data {

void TrainingExample::validate() const {
  if (positive.empty()) throw ArgumentError("example has an empty positive");
  if (query.empty()) throw ArgumentError("example has an empty query");
  for (const auto& n : hard_negatives) {
    if (n == positive) throw ArgumentError("hard negative duplicates the positive");
  }
  if (is_labeled(task_type) != label.has_value()) {
    throw ArgumentError(std::string("label must be present exactly for classification and clustering, got ") +
                        (label ? "a label" : "no label") + " on a " + task_type_name(task_type) +
                        " example");
  }
}

void to_json(nlohmann::json& j, const TrainingExample& ex) {
  j = {{"task_type", task_type_name(ex.task_type)},
       {"instruction", ex.instruction},
       {"query", ex.query},
       {"positive", ex.positive},
       {"hard_negatives", ex.hard_negatives}};
  if (ex.label) j["label"] = *ex.label;
}

void from_json(const nlohmann::json& j, TrainingExample& ex) {
  json_util::require_known_keys(
      j, {"task_type", "instruction", "query", "positive", "hard_negatives", "label"}, "example");
  std::string task;
  json_util::read_required(j, "task_type", task, "example");
  ex.task_type = parse_task_type(task);
  ex.instruction.clear();
  json_util::read_optional(j, "instruction", ex.instruction, "example");
  json_util::read_required(j, "query", ex.query, "example");
  json_util::read_required(j, "positive", ex.positive, "example");
  ex.hard_negatives.clear();
  json_util::read_optional(j, "hard_negatives", ex.hard_negatives, "example");
  ex.label.reset();
  if (j.contains("label")) {
    std::string label;
    json_util::read_required(j, "label", label, "example");
    ex.label = label;
  }
}

std::vector<TrainingExample> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TrainingExample> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      TrainingExample ex = nlohmann::json::parse(line).get<TrainingExample>();
      ex.validate();
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::vector<TrainingExample>& examples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& ex : examples) out << nlohmann::json(ex).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

const char* prompt_strategy_name(PromptStrategy s) {
  return s == PromptStrategy::kPrefix ? "prefix" : "instruct";
}

PromptStrategy parse_prompt_strategy(const std::string& s) {
  if (s == "prefix") return PromptStrategy::kPrefix;
  if (s == "instruct") return PromptStrategy::kInstruct;
  throw ConfigError("unknown prompt strategy '" + s + "'");
}

PromptTemplate PromptTemplate::prefix() {
  return {PromptStrategy::kPrefix, "query: {text}", "passage: {text}"};
}

PromptTemplate PromptTemplate::instruct() {
  return {PromptStrategy::kInstruct, "Instruct: {instruction}\nQuery: {text}", "{text}"};
}

PromptTemplate PromptTemplate::of(PromptStrategy s) {
  return s == PromptStrategy::kPrefix ? prefix() : instruct();
}

namespace {

void replace_all(std::string& s, const std::string& slot, const std::string& value) {
  for (std::size_t at = s.find(slot); at != std::string::npos; at = s.find(slot, at + value.size())) {
    s.replace(at, slot.size(), value);
  }
}

}  // namespace

std::string PromptTemplate::render_query(const std::string& instruction, const std::string& text) const {
  const bool wants_instruction = query_template.find("{instruction}") != std::string::npos;
  if (wants_instruction && instruction.empty()) {
    throw FormatError("query template needs an instruction but the example has none");
  }
  std::string out = query_template;
  if (wants_instruction) replace_all(out, "{instruction}", instruction);
  replace_all(out, "{text}", text);
  return out;
}

std::string PromptTemplate::render_document(const std::string& text) const {
  if (document_template.find("{instruction}") != std::string::npos) {
    throw FormatError("document template must not take an instruction");
  }
  std::string out = document_template;
  replace_all(out, "{text}", text);
  return out;
}

FormattedExample format_example(const PromptTemplate& tpl, const TrainingExample& ex) {
  FormattedExample f;
  f.query = tpl.render_query(ex.instruction, ex.query);
  f.positive = tpl.render_document(ex.positive);
  for (const auto& n : ex.hard_negatives) f.negatives.push_back(tpl.render_document(n));
  return f;
}

std::string default_instruction(TaskType t) {
  switch (t) {
    case TaskType::kRetrieval: return "Given a query, retrieve relevant passages";
    case TaskType::kClassification: return "Classify the topic of the given text";
    case TaskType::kClustering: return "Identify the topic cluster of the given text";
    case TaskType::kSts: return "Retrieve semantically similar text";
  }
  throw ConfigError("unknown task type");
}

}  // namespace cemb::data

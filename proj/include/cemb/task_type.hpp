#ifndef CEMB_TASK_TYPE_HPP_
#define CEMB_TASK_TYPE_HPP_

#include <string>
#include <string_view>

#include "cemb/errors.hpp"

namespace cemb {

enum class TaskType { kRetrieval, kClassification, kClustering, kSts };

inline const char* task_type_name(TaskType t) {
  switch (t) {
    case TaskType::kRetrieval: return "retrieval";
    case TaskType::kClassification: return "classification";
    case TaskType::kClustering: return "clustering";
    case TaskType::kSts: return "sts";
  }
  throw ConfigError("unknown task type");
}

inline TaskType parse_task_type(std::string_view s) {
  if (s == "retrieval") return TaskType::kRetrieval;
  if (s == "classification") return TaskType::kClassification;
  if (s == "clustering") return TaskType::kClustering;
  if (s == "sts") return TaskType::kSts;
  throw ConfigError("unknown task type '" + std::string(s) + "'");
}

// Labeled tasks carry a class or cluster id on every example.
inline bool is_labeled(TaskType t) {
  return t == TaskType::kClassification || t == TaskType::kClustering;
}

}  // namespace cemb

#endif  // CEMB_TASK_TYPE_HPP_

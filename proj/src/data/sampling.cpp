#include "cemb/data/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "cemb/errors.hpp"

namespace cemb::data {

template <typename T>
std::vector<std::size_t> mine_hard_negatives(std::span<const T> query, std::size_t positive_id,
                                             const numerics::Tensor<T>& corpus, std::size_t k,
                                             double margin) {
  const std::size_t n = corpus.rows(), d = corpus.cols();
  if (query.size() != d) {
    throw DimensionError("mine_hard_negatives: query width " + std::to_string(query.size()) +
                         " vs corpus width " + std::to_string(d));
  }
  if (positive_id >= n) {
    throw ArgumentError("mine_hard_negatives: positive id " + std::to_string(positive_id) +
                        " outside corpus of " + std::to_string(n));
  }
  double qn = 0;
  for (T v : query) qn += double(v) * v;
  qn = std::sqrt(qn);
  std::vector<double> cos(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = corpus.data().data() + r * d;
    double dot = 0, rn = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += double(query[j]) * row[j];
      rn += double(row[j]) * row[j];
    }
    const double denom = qn * std::sqrt(rn);
    if (!(denom > 0)) throw DegenerateInputError("mine_hard_negatives: zero-norm embedding");
    cos[r] = dot / denom;
  }
  const double ceiling = margin * cos[positive_id];
  std::vector<std::size_t> eligible;
  for (std::size_t r = 0; r < n; ++r) {
    if (r != positive_id && !(cos[r] > ceiling)) eligible.push_back(r);
  }
  if (eligible.size() < k) {
    throw InsufficientCorpusError("mine_hard_negatives: " + std::to_string(eligible.size()) +
                                  " eligible documents, " + std::to_string(k) + " requested");
  }
  std::partial_sort(eligible.begin(), eligible.begin() + std::ptrdiff_t(k), eligible.end(),
                    [&](std::size_t a, std::size_t b) {
                      return cos[a] != cos[b] ? cos[a] > cos[b] : a < b;
                    });
  eligible.resize(k);
  return eligible;
}

template std::vector<std::size_t> mine_hard_negatives(std::span<const float>, std::size_t,
                                                      const numerics::Tensor<float>&, std::size_t, double);
template std::vector<std::size_t> mine_hard_negatives(std::span<const double>, std::size_t,
                                                      const numerics::Tensor<double>&, std::size_t, double);

TrainingExample sample_class_pairs(const std::vector<LabeledItem>& pool, std::size_t query_index,
                                   std::size_t n_negatives, std::uint64_t seed, TaskType task,
                                   const std::string& instruction) {
  if (query_index >= pool.size()) {
    throw ArgumentError("sample_class_pairs: query index " + std::to_string(query_index) +
                        " outside pool of " + std::to_string(pool.size()));
  }
  if (!is_labeled(task)) {
    throw ArgumentError(std::string("sample_class_pairs: ") + task_type_name(task) + " is not a labeled task");
  }
  const std::string& label = pool[query_index].label;
  std::vector<std::size_t> same, other;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].label == label) {
      if (i != query_index) same.push_back(i);
    } else {
      other.push_back(i);
    }
  }
  if (same.empty()) throw SamplingError("sample_class_pairs: class '" + label + "' has a single member");
  if (other.size() < n_negatives) {
    throw SamplingError("sample_class_pairs: " + std::to_string(other.size()) +
                        " items outside class '" + label + "', " + std::to_string(n_negatives) +
                        " negatives requested");
  }
  std::mt19937_64 rng(seed);
  TrainingExample ex;
  ex.task_type = task;
  ex.instruction = instruction;
  ex.query = pool[query_index].text;
  ex.positive = pool[same[std::uniform_int_distribution<std::size_t>(0, same.size() - 1)(rng)]].text;
  for (std::size_t i = 0; i < n_negatives; ++i) {
    std::size_t j = std::uniform_int_distribution<std::size_t>(i, other.size() - 1)(rng);
    std::swap(other[i], other[j]);
    ex.hard_negatives.push_back(pool[other[i]].text);
  }
  ex.label = label;
  return ex;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<TrainingExample>& examples,
                                                   std::size_t batch_size, std::uint64_t seed,
                                                   bool stratify_by_task, bool in_batch_negatives) {
  if (batch_size == 0) throw ConfigError("make_batches: batch_size must be positive");
  if (batch_size < 2 && in_batch_negatives) {
    throw ConfigError("make_batches: in-batch negatives need batch_size >= 2");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> groups;
  if (stratify_by_task) {
    std::map<TaskType, std::vector<std::size_t>> by_task;
    for (std::size_t i : order) by_task[examples[i].task_type].push_back(i);
    for (auto& [task, ids] : by_task) groups.push_back(std::move(ids));
  } else {
    groups.push_back(std::move(order));
  }
  std::vector<std::vector<std::size_t>> batches;
  for (const auto& g : groups) {
    for (std::size_t at = 0; at + batch_size <= g.size(); at += batch_size) {
      batches.emplace_back(g.begin() + std::ptrdiff_t(at), g.begin() + std::ptrdiff_t(at + batch_size));
    }
  }
  if (stratify_by_task) std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

}  // namespace cemb::data

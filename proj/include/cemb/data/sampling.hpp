#ifndef CEMB_DATA_SAMPLING_HPP_
#define CEMB_DATA_SAMPLING_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cemb/data/example.hpp"
#include "cemb/numerics/tensor.hpp"

namespace cemb::data {

inline constexpr double kDefaultMiningMargin = 0.95;
inline constexpr std::size_t kDefaultHardNegatives = 7;

// Ranks corpus rows by cosine to the query (descending, ties by lower id),
// drops positive_id and every row with cosine above margin * cos(query,
// positive), and returns the first k survivors.
template <typename T>
std::vector<std::size_t> mine_hard_negatives(std::span<const T> query, std::size_t positive_id,
                                             const numerics::Tensor<T>& corpus, std::size_t k,
                                             double margin = kDefaultMiningMargin);

struct LabeledItem {
  std::string text;
  std::string label;
};

// Positive: uniform over the query's classmates. Negatives: uniform without
// replacement over items of other classes.
TrainingExample sample_class_pairs(const std::vector<LabeledItem>& pool, std::size_t query_index,
                                   std::size_t n_negatives, std::uint64_t seed,
                                   TaskType task = TaskType::kClassification,
                                   const std::string& instruction = "");

// Seeded shuffle into full batches of example indices; the short tail is
// dropped. Stratified batches hold one task type each.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<TrainingExample>& examples,
                                                   std::size_t batch_size, std::uint64_t seed,
                                                   bool stratify_by_task,
                                                   bool in_batch_negatives = true);

}  // namespace cemb::data

#endif  // CEMB_DATA_SAMPLING_HPP_

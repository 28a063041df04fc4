#ifndef CEMB_OBJECTIVE_INFO_NCE_HPP_
#define CEMB_OBJECTIVE_INFO_NCE_HPP_

#include <cstddef>
#include <deque>
#include <vector>

#include "cemb/numerics/tensor.hpp"
#include "cemb/task_type.hpp"
#include "json.hpp"

namespace cemb::objective {

using numerics::Tensor;

struct LossConfig {
  double temperature = 0.02;
  bool use_in_batch = true;
  std::size_t cache_capacity_batches = 4;
  std::size_t hard_negatives_per_query = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

// FIFO of detached embedding matrices from recent batches.
template <typename T>
class CrossBatchCache {
 public:
  explicit CrossBatchCache(std::size_t capacity = 4) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return batches_.size(); }
  bool empty() const { return batches_.empty(); }
  std::size_t total_rows() const;
  // Oldest first.
  const std::deque<Tensor<T>>& batches() const { return batches_; }
  void clear() { batches_.clear(); }

  // Appends a detached copy and evicts the oldest batch when over capacity.
  void push(const Tensor<T>& embeddings);

 private:
  std::size_t capacity_;
  std::deque<Tensor<T>> batches_;
};

template <typename T>
void update_cache(CrossBatchCache<T>& cache, const Tensor<T>& batch_pos_embeddings) {
  cache.push(batch_pos_embeddings);
}

enum class Provenance { kInBatch, kCrossBatch, kHard };

const char* provenance_name(Provenance p);

struct PoolEntry {
  Provenance provenance;
  // Row of the positives (in_batch), of cache_rows (cross_batch) or of hard.
  std::size_t index;
};

// Negatives per query. in_batch entries point into the positives passed to
// info_nce; hard entries point into `hard` ([B * h, d], query i owns rows
// i*h .. i*h+h-1); cross_batch entries point into the constant cache_rows.
template <typename T>
struct NegativePool {
  std::vector<std::vector<PoolEntry>> entries;
  Tensor<T> hard;
  Tensor<T> cache_rows;

  std::size_t batch_size() const { return entries.size(); }
  std::size_t size_of(std::size_t query) const { return entries.at(query).size(); }
  std::size_t count(std::size_t query, Provenance p) const;
};

// Retrieval: every other positive, the whole cache and the query's hard
// negatives. Classification, clustering and sts: hard negatives only.
// `hard` may be undefined when hard_negatives_per_query is 0.
template <typename T>
NegativePool<T> assemble_pool(std::size_t batch_size, const CrossBatchCache<T>& cache,
                              const Tensor<T>& hard, TaskType task, const LossConfig& config);

// Mean over queries of lse(s) - s_pos where s = cos / temperature over the
// positive followed by the pool. Inputs must be unit rows within 1e-4.
template <typename T>
Tensor<T> info_nce(const Tensor<T>& q, const Tensor<T>& pos, const NegativePool<T>& pool,
                   double temperature);

inline constexpr double kUnitTolerance = 1e-4;

}  // namespace cemb::objective

#endif  // CEMB_OBJECTIVE_INFO_NCE_HPP_

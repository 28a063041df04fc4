#include "cemb/objective/info_nce.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "cemb/errors.hpp"
#include "cemb/json_util.hpp"
#include "cemb/numerics/ops.hpp"

namespace cemb::objective {

using numerics::detail::Node;

void LossConfig::validate() const {
  if (!(temperature > 0) || !std::isfinite(temperature)) {
    throw ConfigError("loss temperature must be positive, got " + std::to_string(temperature));
  }
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"temperature", c.temperature},
       {"use_in_batch", c.use_in_batch},
       {"cache_capacity_batches", c.cache_capacity_batches},
       {"hard_negatives_per_query", c.hard_negatives_per_query}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  json_util::require_known_keys(
      j, {"temperature", "use_in_batch", "cache_capacity_batches", "hard_negatives_per_query"},
      "loss");
  json_util::read_optional(j, "temperature", c.temperature, "loss");
  json_util::read_optional(j, "use_in_batch", c.use_in_batch, "loss");
  json_util::read_optional(j, "cache_capacity_batches", c.cache_capacity_batches, "loss");
  json_util::read_optional(j, "hard_negatives_per_query", c.hard_negatives_per_query, "loss");
  c.validate();
}

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kInBatch: return "in_batch";
    case Provenance::kCrossBatch: return "cross_batch";
    case Provenance::kHard: return "hard";
  }
  return "?";
}

template <typename T>
std::size_t CrossBatchCache<T>::total_rows() const {
  std::size_t n = 0;
  for (const auto& b : batches_) n += b.rows();
  return n;
}

template <typename T>
void CrossBatchCache<T>::push(const Tensor<T>& embeddings) {
  if (capacity_ == 0) return;
  if (!batches_.empty() && batches_.front().cols() != embeddings.cols()) {
    throw DimensionError("cross-batch cache: width " + std::to_string(embeddings.cols()) +
                         " does not match cached width " + std::to_string(batches_.front().cols()));
  }
  batches_.push_back(embeddings.detach());
  while (batches_.size() > capacity_) batches_.pop_front();
}

template <typename T>
std::size_t NegativePool<T>::count(std::size_t query, Provenance p) const {
  std::size_t n = 0;
  for (const auto& e : entries.at(query)) n += e.provenance == p;
  return n;
}

template <typename T>
NegativePool<T> assemble_pool(std::size_t batch_size, const CrossBatchCache<T>& cache,
                              const Tensor<T>& hard, TaskType task, const LossConfig& config) {
  const std::size_t h = config.hard_negatives_per_query;
  if (h > 0) {
    if (!hard.defined() || hard.rows() != batch_size * h) {
      throw ContractError("assemble_pool: expected " + std::to_string(batch_size * h) +
                          " hard negative rows, got " +
                          std::to_string(hard.defined() ? hard.rows() : 0));
    }
  } else if (hard.defined() && hard.rows() != 0) {
    throw ContractError("assemble_pool: hard negatives given but hard_negatives_per_query is 0");
  }

  bool pooled = false;
  switch (task) {
    case TaskType::kRetrieval: pooled = true; break;
    case TaskType::kClassification:
    case TaskType::kClustering:
    case TaskType::kSts: pooled = false; break;
    default: throw ConfigError("assemble_pool: unknown task type");
  }

  NegativePool<T> pool;
  pool.entries.resize(batch_size);
  if (h > 0) pool.hard = hard;
  if (pooled && !cache.empty()) {
    pool.cache_rows = numerics::concat_rows(std::vector<Tensor<T>>(cache.batches().begin(),
                                                                   cache.batches().end()));
  }
  const std::size_t cached = pool.cache_rows.defined() ? pool.cache_rows.rows() : 0;
  for (std::size_t i = 0; i < batch_size; ++i) {
    auto& list = pool.entries[i];
    if (pooled && config.use_in_batch) {
      for (std::size_t j = 0; j < batch_size; ++j) {
        if (j != i) list.push_back({Provenance::kInBatch, j});
      }
    }
    for (std::size_t c = 0; c < cached; ++c) list.push_back({Provenance::kCrossBatch, c});
    for (std::size_t k = 0; k < h; ++k) list.push_back({Provenance::kHard, i * h + k});
  }
  return pool;
}

namespace {

template <typename T>
void check_unit_rows(const Tensor<T>& x, const char* what) {
  const std::size_t d = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += double(x.data()[r * d + j]) * x.data()[r * d + j];
    const double norm = std::sqrt(ss);
    if (!(std::abs(norm - 1.0) <= kUnitTolerance)) {
      throw ContractError(std::string("info_nce: ") + what + " row " + std::to_string(r) +
                          " has norm " + std::to_string(norm) + ", expected unit length");
    }
  }
}

template <typename T>
T dot(const T* a, const T* b, std::size_t d) {
  T s = 0;
  for (std::size_t j = 0; j < d; ++j) s += a[j] * b[j];
  return s;
}

}  // namespace

template <typename T>
Tensor<T> info_nce(const Tensor<T>& q, const Tensor<T>& pos, const NegativePool<T>& pool,
                   double temperature) {
  if (!(temperature > 0)) throw ConfigError("info_nce: temperature must be positive");
  if (q.rank() != 2 || pos.rank() != 2 || q.shape() != pos.shape()) {
    throw DimensionError("info_nce: queries " + numerics::shape_to_string(q.shape()) +
                         " and positives " + numerics::shape_to_string(pos.shape()) +
                         " must be matching matrices");
  }
  const std::size_t b = q.rows(), d = q.cols();
  if (b == 0) throw ArgumentError("info_nce: empty batch");
  if (pool.batch_size() != b) {
    throw ContractError("info_nce: pool built for " + std::to_string(pool.batch_size()) +
                        " queries, batch has " + std::to_string(b));
  }
  check_unit_rows(q, "query");
  check_unit_rows(pos, "positive");
  if (pool.hard.defined()) {
    if (pool.hard.cols() != d) throw DimensionError("info_nce: hard negative width mismatch");
    check_unit_rows(pool.hard, "hard negative");
  }
  if (pool.cache_rows.defined()) {
    if (pool.cache_rows.cols() != d) throw DimensionError("info_nce: cached negative width mismatch");
    check_unit_rows(pool.cache_rows, "cached negative");
  }

  const T inv_tau = T(1.0 / temperature);
  auto row_of = [&](const PoolEntry& e) -> const T* {
    switch (e.provenance) {
      case Provenance::kInBatch:
        if (e.index >= b) break;
        return pos.data().data() + e.index * d;
      case Provenance::kCrossBatch:
        if (!pool.cache_rows.defined() || e.index >= pool.cache_rows.rows()) break;
        return pool.cache_rows.data().data() + e.index * d;
      case Provenance::kHard:
        if (!pool.hard.defined() || e.index >= pool.hard.rows()) break;
        return pool.hard.data().data() + e.index * d;
    }
    throw ContractError(std::string("info_nce: ") + provenance_name(e.provenance) +
                        " index " + std::to_string(e.index) + " out of range");
  };

  // probs[i] holds the softmax over [positive, pool...] for query i.
  auto probs = std::make_shared<std::vector<std::vector<T>>>(b);
  T total = 0;
  std::vector<T> logits;
  for (std::size_t i = 0; i < b; ++i) {
    const T* qi = q.data().data() + i * d;
    const auto& list = pool.entries[i];
    logits.assign(1 + list.size(), T(0));
    logits[0] = dot(qi, pos.data().data() + i * d, d) * inv_tau;
    for (std::size_t k = 0; k < list.size(); ++k) {
      if (list[k].provenance == Provenance::kInBatch && list[k].index == i) {
        throw ContractError("info_nce: query " + std::to_string(i) + " has its own positive as a negative");
      }
      logits[k + 1] = dot(qi, row_of(list[k]), d) * inv_tau;
    }
    const T lse = numerics::stable_logsumexp<T>(logits);
    total += lse - logits[0];
    auto& p = (*probs)[i];
    p.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) p[k] = std::exp(logits[k] - lse);
  }
  const T loss = total / T(b);

  auto qn = q.node(), pn = pos.node();
  auto hn = pool.hard.defined() ? pool.hard.node() : nullptr;
  auto cache_rows = pool.cache_rows;
  auto entries = std::make_shared<std::vector<std::vector<PoolEntry>>>(pool.entries);
  std::vector<Tensor<T>> inputs{q, pos};
  if (pool.hard.defined()) inputs.push_back(pool.hard);
  return numerics::detail::make_result<T>(
      "info_nce", {1}, {loss}, inputs,
      [qn, pn, hn, cache_rows, entries, probs, b, d, inv_tau](Node<T>& self) {
        const T g = self.grad[0] / T(b) * inv_tau;
        const T* qv = qn->value.data();
        const T* pv = pn->value.data();
        T* gq = qn->requires_grad ? qn->grad_buffer().data() : nullptr;
        T* gp = pn->requires_grad ? pn->grad_buffer().data() : nullptr;
        T* gh = hn && hn->requires_grad ? hn->grad_buffer().data() : nullptr;
        for (std::size_t i = 0; i < b; ++i) {
          const auto& p = (*probs)[i];
          const auto& list = (*entries)[i];
          const T* qi = qv + i * d;
          // d loss / d s_0 = p_0 - 1, d loss / d s_k = p_k.
          const T c0 = g * (p[0] - T(1));
          const T* pi = pv + i * d;
          for (std::size_t j = 0; j < d; ++j) {
            if (gq) gq[i * d + j] += c0 * pi[j];
            if (gp) gp[i * d + j] += c0 * qi[j];
          }
          for (std::size_t k = 0; k < list.size(); ++k) {
            const T ck = g * p[k + 1];
            const PoolEntry& e = list[k];
            const T* row = nullptr;
            T* grow = nullptr;
            switch (e.provenance) {
              case Provenance::kInBatch:
                row = pv + e.index * d;
                grow = gp ? gp + e.index * d : nullptr;
                break;
              case Provenance::kCrossBatch:
                row = cache_rows.data().data() + e.index * d;
                break;
              case Provenance::kHard:
                row = hn->value.data() + e.index * d;
                grow = gh ? gh + e.index * d : nullptr;
                break;
            }
            for (std::size_t j = 0; j < d; ++j) {
              if (gq) gq[i * d + j] += ck * row[j];
              if (grow) grow[j] += ck * qi[j];
            }
          }
        }
      });
}

#define CEMB_INSTANTIATE(T)                                                                    \
  template class CrossBatchCache<T>;                                                           \
  template struct NegativePool<T>;                                                             \
  template NegativePool<T> assemble_pool(std::size_t, const CrossBatchCache<T>&,              \
                                         const Tensor<T>&, TaskType, const LossConfig&);       \
  template Tensor<T> info_nce(const Tensor<T>&, const Tensor<T>&, const NegativePool<T>&, double);

CEMB_INSTANTIATE(float)
CEMB_INSTANTIATE(double)

#undef CEMB_INSTANTIATE

}  // namespace cemb::objective

#ifndef CEMB_EVAL_METRICS_HPP_
#define CEMB_EVAL_METRICS_HPP_

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cemb/numerics/tensor.hpp"

namespace cemb::eval {

using Ranking = std::vector<std::size_t>;

// Document ids by descending cosine, ties to the lower id; at most `top` per
// query (0 keeps all).
template <typename T>
std::vector<Ranking> rank_by_cosine(const numerics::Tensor<T>& queries, const numerics::Tensor<T>& docs,
                                    std::size_t top = 0);

// Fraction of queries with a gold id among the first k.
double recall_at_k(const std::vector<Ranking>& rankings, const std::vector<std::set<std::size_t>>& gold,
                   std::size_t k);

// Mean over queries of DCG@k / IDCG@k with gain 2^grade - 1 and discount
// 1 / log2(rank + 1). A query with no positive grade scores 0.
double ndcg_at_k(const std::vector<Ranking>& rankings,
                 const std::vector<std::map<std::size_t, double>>& grades, std::size_t k);

// Cosine kNN majority vote. Among labels tied on votes, the one held by the
// nearest of the k neighbours wins.
template <typename T>
double knn_accuracy(const numerics::Tensor<T>& train, const std::vector<std::string>& train_labels,
                    const numerics::Tensor<T>& test, const std::vector<std::string>& test_labels,
                    std::size_t k);

// Sum over clusters of the largest label count, divided by N.
double purity(const std::vector<std::size_t>& assignment, const std::vector<std::string>& labels);

// Seeded k-means++ then Lloyd iterations (Euclidean).
template <typename T>
std::vector<std::size_t> kmeans(const numerics::Tensor<T>& points, std::size_t n_clusters,
                                std::uint64_t seed, std::size_t max_iterations = 50);

template <typename T>
double cluster_purity(const numerics::Tensor<T>& embeddings, const std::vector<std::string>& labels,
                      std::size_t n_clusters, std::uint64_t seed);

// 1-based ranks, ties share their average rank.
std::vector<double> average_ranks(const std::vector<double>& values);

// Rank correlation with average-rank ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace cemb::eval

#endif  // CEMB_EVAL_METRICS_HPP_

#include "cemb/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "cemb/errors.hpp"

namespace cemb::eval {

namespace {

template <typename T>
std::vector<double> unit_copy(const numerics::Tensor<T>& x, const char* what) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> out(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    double ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += double(x.data()[r * d + j]) * x.data()[r * d + j];
    const double norm = std::sqrt(ss);
    if (!(norm > 0)) throw DegenerateInputError(std::string(what) + " row " + std::to_string(r) + " has zero norm");
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.data()[r * d + j] / norm;
  }
  return out;
}

void check_k(std::size_t k) {
  if (k == 0) throw ArgumentError("k must be at least 1");
}

}  // namespace

template <typename T>
std::vector<Ranking> rank_by_cosine(const numerics::Tensor<T>& queries, const numerics::Tensor<T>& docs,
                                    std::size_t top) {
  if (queries.cols() != docs.cols()) throw DimensionError("rank_by_cosine: width mismatch");
  const std::size_t nq = queries.rows(), nd = docs.rows(), d = docs.cols();
  const auto q = unit_copy(queries, "query");
  const auto dv = unit_copy(docs, "document");
  const std::size_t keep = top == 0 ? nd : std::min(top, nd);
  std::vector<Ranking> out(nq);
  std::vector<double> score(nd);
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t r = 0; r < nd; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += q[i * d + j] * dv[r * d + j];
      score[r] = s;
    }
    Ranking ids(nd);
    std::iota(ids.begin(), ids.end(), std::size_t(0));
    std::partial_sort(ids.begin(), ids.begin() + std::ptrdiff_t(keep), ids.end(),
                      [&](std::size_t a, std::size_t b) { return score[a] != score[b] ? score[a] > score[b] : a < b; });
    ids.resize(keep);
    out[i] = std::move(ids);
  }
  return out;
}

double recall_at_k(const std::vector<Ranking>& rankings, const std::vector<std::set<std::size_t>>& gold,
                   std::size_t k) {
  check_k(k);
  if (rankings.size() != gold.size()) throw ArgumentError("recall_at_k: rankings and gold differ in length");
  if (rankings.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const std::size_t n = std::min(k, rankings[i].size());
    bool hit = false;
    for (std::size_t r = 0; r < n && !hit; ++r) hit = gold[i].count(rankings[i][r]) > 0;
    hits += hit;
  }
  return double(hits) / double(rankings.size());
}

double ndcg_at_k(const std::vector<Ranking>& rankings,
                 const std::vector<std::map<std::size_t, double>>& grades, std::size_t k) {
  check_k(k);
  if (rankings.size() != grades.size()) throw ArgumentError("ndcg_at_k: rankings and grades differ in length");
  if (rankings.empty()) return 0.0;
  double total = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    std::vector<double> ideal;
    for (const auto& [id, g] : grades[i]) {
      if (g < 0) throw ArgumentError("ndcg_at_k: negative grade");
      ideal.push_back(g);
    }
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0;
    for (std::size_t r = 0; r < std::min(k, ideal.size()); ++r) {
      idcg += (std::exp2(ideal[r]) - 1) / std::log2(double(r) + 2);
    }
    if (!(idcg > 0)) continue;
    double dcg = 0;
    for (std::size_t r = 0; r < std::min(k, rankings[i].size()); ++r) {
      auto it = grades[i].find(rankings[i][r]);
      if (it != grades[i].end()) dcg += (std::exp2(it->second) - 1) / std::log2(double(r) + 2);
    }
    total += dcg / idcg;
  }
  return total / double(rankings.size());
}

template <typename T>
double knn_accuracy(const numerics::Tensor<T>& train, const std::vector<std::string>& train_labels,
                    const numerics::Tensor<T>& test, const std::vector<std::string>& test_labels,
                    std::size_t k) {
  check_k(k);
  if (train.rows() != train_labels.size() || test.rows() != test_labels.size()) {
    throw ArgumentError("knn_accuracy: embeddings and labels differ in length");
  }
  if (train.rows() == 0) throw ArgumentError("knn_accuracy: empty training set");
  if (test.rows() == 0) return 0.0;
  const auto rankings = rank_by_cosine(test, train, k);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    std::map<std::string, std::size_t> votes;
    for (auto id : rankings[i]) ++votes[train_labels[id]];
    std::size_t best = 0;
    for (const auto& [label, v] : votes) best = std::max(best, v);
    // Nearest neighbour whose label is among the leaders.
    std::string winner;
    for (auto id : rankings[i]) {
      if (votes[train_labels[id]] == best) {
        winner = train_labels[id];
        break;
      }
    }
    correct += winner == test_labels[i];
  }
  return double(correct) / double(test.rows());
}

double purity(const std::vector<std::size_t>& assignment, const std::vector<std::string>& labels) {
  if (assignment.size() != labels.size()) throw ArgumentError("purity: assignment and labels differ in length");
  if (labels.empty()) throw ArgumentError("purity: no items");
  std::map<std::size_t, std::map<std::string, std::size_t>> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) ++counts[assignment[i]][labels[i]];
  std::size_t total = 0;
  for (const auto& [c, by_label] : counts) {
    std::size_t best = 0;
    for (const auto& [l, n] : by_label) best = std::max(best, n);
    total += best;
  }
  return double(total) / double(labels.size());
}

template <typename T>
std::vector<std::size_t> kmeans(const numerics::Tensor<T>& points, std::size_t n_clusters,
                                std::uint64_t seed, std::size_t max_iterations) {
  const std::size_t n = points.rows(), d = points.cols();
  if (n_clusters == 0 || n_clusters > n) {
    throw ArgumentError("kmeans: n_clusters " + std::to_string(n_clusters) + " for " + std::to_string(n) + " points");
  }
  std::vector<double> x(points.data().begin(), points.data().end());
  auto dist2 = [&](const double* a, const double* b) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
  };
  std::mt19937_64 rng(seed);
  std::vector<double> centers;
  centers.reserve(n_clusters * d);
  const std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  centers.insert(centers.end(), x.begin() + std::ptrdiff_t(first * d), x.begin() + std::ptrdiff_t(first * d + d));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < n_clusters; ++c) {
    const double* last = centers.data() + (c - 1) * d;
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], dist2(x.data() + i * d, last));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0) {
      double u = std::uniform_real_distribution<double>(0, total)(rng);
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (u < nearest[i]) {
          pick = i;
          break;
        }
        u -= nearest[i];
      }
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    centers.insert(centers.end(), x.begin() + std::ptrdiff_t(pick * d), x.begin() + std::ptrdiff_t(pick * d + d));
  }

  std::vector<std::size_t> assign(n, 0);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < n_clusters; ++c) {
        const double dd = dist2(x.data() + i * d, centers.data() + c * d);
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
    }
    if (!changed) break;
    std::vector<double> sum(n_clusters * d, 0.0);
    std::vector<std::size_t> count(n_clusters, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[assign[i]];
      for (std::size_t j = 0; j < d; ++j) sum[assign[i] * d + j] += x[i * d + j];
    }
    for (std::size_t c = 0; c < n_clusters; ++c) {
      if (count[c] == 0) continue;  // empty cluster keeps its centre
      for (std::size_t j = 0; j < d; ++j) centers[c * d + j] = sum[c * d + j] / double(count[c]);
    }
  }
  return assign;
}

template <typename T>
double cluster_purity(const numerics::Tensor<T>& embeddings, const std::vector<std::string>& labels,
                      std::size_t n_clusters, std::uint64_t seed) {
  if (embeddings.rows() != labels.size()) throw ArgumentError("cluster_purity: embeddings and labels differ in length");
  return purity(kmeans(embeddings, n_clusters, seed), labels);
}

std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = (double(i) + double(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ArgumentError("spearman: inputs differ in length");
  if (x.size() < 2) throw ArgumentError("spearman: need at least two pairs");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw NumericError("spearman: non-finite input");
  }
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = double(x.size());
  const double mean = (n + 1) / 2;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (!(sxx > 0 && syy > 0)) throw DegenerateInputError("spearman: constant input has no ranking");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

#define CEMB_INSTANTIATE(T)                                                                              \
  template std::vector<Ranking> rank_by_cosine(const numerics::Tensor<T>&, const numerics::Tensor<T>&,   \
                                               std::size_t);                                             \
  template double knn_accuracy(const numerics::Tensor<T>&, const std::vector<std::string>&,              \
                               const numerics::Tensor<T>&, const std::vector<std::string>&, std::size_t); \
  template std::vector<std::size_t> kmeans(const numerics::Tensor<T>&, std::size_t, std::uint64_t,       \
                                           std::size_t);                                                 \
  template double cluster_purity(const numerics::Tensor<T>&, const std::vector<std::string>&,            \
                                 std::size_t, std::uint64_t);

CEMB_INSTANTIATE(float)
CEMB_INSTANTIATE(double)

#undef CEMB_INSTANTIATE

}  // namespace cemb::eval

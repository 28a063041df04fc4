#include <cmath>
#include <deque>
#include <random>

#include "cemb/errors.hpp"
#include "cemb/numerics/grad_check.hpp"
#include "cemb/numerics/ops.hpp"
#include "cemb/objective/info_nce.hpp"
#include "doctest.h"

using namespace cemb;
using namespace cemb::objective;
using numerics::Shape;

namespace {

Tensor<double> unit_rows(std::size_t rows, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  std::vector<double> v(rows * d);
  for (auto& x : v) x = n(rng);
  return numerics::l2_normalize_rows(Tensor<double>::from({rows, d}, v)).detach();
}

Tensor<double> rows_of(std::vector<std::vector<double>> rows) {
  std::vector<double> v;
  for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
  return Tensor<double>::from({rows.size(), rows.front().size()}, v);
}

// Literal formula: phi = exp(cos / tau), loss_i = -log(phi+ / (phi+ + sum phi_n)).
double oracle(const std::vector<std::vector<double>>& q, const std::vector<std::vector<double>>& pos,
              const std::vector<std::vector<std::vector<double>>>& negatives, double tau) {
  auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      ab += a[j] * b[j];
      aa += a[j] * a[j];
      bb += b[j] * b[j];
    }
    return ab / std::sqrt(aa * bb);
  };
  double total = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double phi_pos = std::exp(cos(q[i], pos[i]) / tau);
    double denom = phi_pos;
    for (const auto& n : negatives[i]) denom += std::exp(cos(q[i], n) / tau);
    total += -std::log(phi_pos / denom);
  }
  return total / double(q.size());
}

std::vector<double> row_vec(const Tensor<double>& t, std::size_t r) {
  auto s = t.row(r);
  return {s.begin(), s.end()};
}

}  // namespace

TEST_CASE("info_nce closed forms") {
  LossConfig none;
  none.use_in_batch = false;
  CrossBatchCache<double> empty_cache(0);
  auto q = rows_of({{1, 0}});
  auto p = rows_of({{1, 0}});

  auto empty = assemble_pool<double>(1, empty_cache, {}, TaskType::kRetrieval, none);
  CHECK(info_nce(q, p, empty, 0.02).item() == 0.0);

  LossConfig one_hard = none;
  one_hard.hard_negatives_per_query = 1;
  auto pool = assemble_pool<double>(1, empty_cache, rows_of({{0, 1}}), TaskType::kRetrieval, one_hard);
  CHECK(info_nce(q, p, pool, 1.0).item() == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));
  CHECK(info_nce(q, p, pool, 1.0).item() == doctest::Approx(0.31326).epsilon(1e-5));

  auto same = assemble_pool<double>(1, empty_cache, rows_of({{1, 0}}), TaskType::kRetrieval, one_hard);
  CHECK(info_nce(q, p, same, 1.0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // tau = 0.02 pushes logits to +-50 without overflow, even in float.
  auto qf = Tensor<float>::from({1, 2}, {1, 0});
  auto pf = Tensor<float>::from({1, 2}, {-1, 0});
  CrossBatchCache<float> cf(0);
  auto poolf = assemble_pool<float>(1, cf, Tensor<float>::from({1, 2}, {1, 0}), TaskType::kRetrieval,
                                    one_hard);
  const float big = info_nce(qf, pf, poolf, 0.02).item();
  CHECK(std::isfinite(big));
  CHECK(big == doctest::Approx(100.0).epsilon(1e-5));
}

TEST_CASE("info_nce matches the float64 oracle") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t b = 1 + rng() % 8, d = 1 + rng() % 16;
    const std::size_t h = rng() % 4;
    const std::size_t cache_batches = rng() % 3;
    const double tau = trial % 2 ? 0.02 : 0.05 + double(rng() % 100) / 50.0;
    LossConfig cfg;
    cfg.hard_negatives_per_query = h;
    cfg.cache_capacity_batches = 2;
    CrossBatchCache<double> cache(2);
    for (std::size_t c = 0; c < cache_batches; ++c) cache.push(unit_rows(1 + rng() % 4, d, rng));
    auto q = unit_rows(b, d, rng);
    auto p = unit_rows(b, d, rng);
    Tensor<double> hard = h ? unit_rows(b * h, d, rng) : Tensor<double>{};
    const TaskType task = trial % 3 == 0 ? TaskType::kClassification : TaskType::kRetrieval;
    auto pool = assemble_pool(b, cache, hard, task, cfg);

    std::vector<std::vector<double>> qs, ps;
    std::vector<std::vector<std::vector<double>>> negs(b);
    for (std::size_t i = 0; i < b; ++i) {
      qs.push_back(row_vec(q, i));
      ps.push_back(row_vec(p, i));
      if (task == TaskType::kRetrieval) {
        for (std::size_t j = 0; j < b; ++j) {
          if (j != i) negs[i].push_back(row_vec(p, j));
        }
        for (const auto& cb : cache.batches()) {
          for (std::size_t r = 0; r < cb.rows(); ++r) negs[i].push_back(row_vec(cb, r));
        }
      }
      for (std::size_t k = 0; k < h; ++k) negs[i].push_back(row_vec(hard, i * h + k));
      REQUIRE(negs[i].size() <= 32);
      CHECK(pool.size_of(i) == negs[i].size());
    }
    const double got = info_nce(q, p, pool, tau).item();
    CHECK(std::abs(got - oracle(qs, ps, negs, tau)) < 1e-10);
  }
}

TEST_CASE("assemble_pool sizes and provenance") {
  LossConfig cfg;
  cfg.hard_negatives_per_query = 7;
  CrossBatchCache<float> cache(4);
  auto batch = Tensor<float>::full({512, 4}, 0.5f);
  cache.push(batch);
  cache.push(batch);
  auto hard = Tensor<float>::full({512 * 7, 4}, 0.5f);
  auto pool = assemble_pool(512, cache, hard, TaskType::kRetrieval, cfg);
  for (std::size_t i : {0u, 17u, 511u}) {
    CHECK(pool.size_of(i) == 1542);
    CHECK(pool.count(i, Provenance::kInBatch) == 511);
    CHECK(pool.count(i, Provenance::kCrossBatch) == 1024);
    CHECK(pool.count(i, Provenance::kHard) == 7);
  }
  for (std::size_t i = 0; i < 512; ++i) {
    for (const auto& e : pool.entries[i]) {
      if (e.provenance == Provenance::kInBatch) CHECK_FALSE(e.index == i);
    }
  }

  for (TaskType t : {TaskType::kClassification, TaskType::kClustering}) {
    auto labeled = assemble_pool(512, cache, hard, t, cfg);
    CHECK(labeled.size_of(3) == 7);
    CHECK(labeled.count(3, Provenance::kInBatch) == 0);
    CHECK(labeled.count(3, Provenance::kCrossBatch) == 0);
  }

  LossConfig pre;
  CrossBatchCache<float> none(4);
  auto small = assemble_pool<float>(4, none, {}, TaskType::kRetrieval, pre);
  for (std::size_t i = 0; i < 4; ++i) CHECK(small.size_of(i) == 3);

  CHECK_THROWS_AS(assemble_pool(512, cache, Tensor<float>::full({10, 4}, 0.5f), TaskType::kRetrieval, cfg),
                  ContractError);
  CHECK_THROWS_AS(assemble_pool(512, cache, hard, static_cast<TaskType>(99), cfg), ConfigError);
}

TEST_CASE("cross-batch cache is a FIFO of detached copies") {
  CrossBatchCache<double> zero(0);
  for (int k = 0; k < 5; ++k) zero.push(Tensor<double>::full({2, 3}, k));
  CHECK(zero.empty());

  for (std::size_t capacity = 1; capacity <= 5; ++capacity) {
    CrossBatchCache<double> cache(capacity);
    std::deque<double> model;
    for (int k = 0; k < 12; ++k) {
      cache.push(Tensor<double>::full({2, 3}, double(k)));
      model.push_back(k);
      if (model.size() > capacity) model.pop_front();
      REQUIRE(cache.size() == std::min<std::size_t>(k + 1, capacity));
      for (std::size_t i = 0; i < model.size(); ++i) CHECK(cache.batches()[i].data()[0] == model[i]);
    }
  }

  auto x = Tensor<double>::from({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}, true);
  auto y = numerics::scale(x, 0.37);
  CrossBatchCache<double> cache(2);
  update_cache(cache, y);
  const auto& stored = cache.batches().back();
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(stored.data()[i] == y.data()[i]);
  CHECK_FALSE(stored.requires_grad());
  CHECK(stored.node() != y.node());
}

TEST_CASE("info_nce monotonicity and scale invariance") {
  LossConfig cfg;
  cfg.use_in_batch = false;
  cfg.hard_negatives_per_query = 2;
  CrossBatchCache<double> cache(0);
  auto q = rows_of({{1, 0}});
  auto hard = rows_of({{0.6, 0.8}, {0, 1}});
  auto pool = assemble_pool(1, cache, hard, TaskType::kRetrieval, cfg);
  double prev = 1e300;
  for (double angle = 1.5; angle >= 0; angle -= 0.1) {
    auto p = rows_of({{std::cos(angle), std::sin(angle)}});
    const double loss = info_nce(q, p, pool, 0.5).item();
    CHECK(loss < prev);
    prev = loss;
  }

  auto p = rows_of({{0.8, 0.6}});
  LossConfig fewer = cfg;
  fewer.hard_negatives_per_query = 1;
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto extra = unit_rows(1, 2, rng);
    auto base = assemble_pool(1, cache, rows_of({{0.6, 0.8}}), TaskType::kRetrieval, fewer);
    auto grown = assemble_pool(1, cache, rows_of({{0.6, 0.8}, row_vec(extra, 0)}), TaskType::kRetrieval, cfg);
    CHECK(info_nce(q, p, grown, 0.1).item() > info_nce(q, p, base, 0.1).item());
  }

  auto raw_q = Tensor<double>::from({2, 3}, {1, 2, 3, -1, 0.5, 2});
  auto raw_d = Tensor<double>::from({2, 3}, {0.3, -2, 1, 4, 1, 1});
  auto c1 = numerics::cosine_matrix(raw_q, raw_d);
  auto c2 = numerics::cosine_matrix(numerics::scale(raw_q, 7.5), raw_d);
  for (std::size_t i = 0; i < 4; ++i) CHECK(c1.data()[i] == doctest::Approx(c2.data()[i]).epsilon(1e-14));
}

TEST_CASE("info_nce errors") {
  LossConfig cfg;
  CrossBatchCache<double> cache(0);
  auto pool = assemble_pool<double>(2, cache, {}, TaskType::kRetrieval, cfg);
  auto unit = rows_of({{1, 0}, {0, 1}});
  auto off = rows_of({{1.01, 0}, {0, 1}});
  CHECK_THROWS_AS(info_nce(off, unit, pool, 0.02), ContractError);
  CHECK_THROWS_AS(info_nce(unit, off, pool, 0.02), ContractError);
  auto tiny_off = rows_of({{1.00001, 0}, {0, 1}});
  CHECK_NOTHROW(info_nce(tiny_off, unit, pool, 0.02));
  auto pool1 = assemble_pool<double>(1, cache, {}, TaskType::kRetrieval, cfg);
  CHECK_THROWS_AS(info_nce(unit, unit, pool1, 0.02), ContractError);

  NegativePool<double> empty_pool;
  auto no_rows = Tensor<double>::zeros({1, 2});
  CHECK_THROWS_AS(info_nce(no_rows, no_rows, empty_pool, 0.02), ContractError);

  LossConfig bad;
  bad.temperature = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  nlohmann::json j = LossConfig{};
  CHECK(j.get<LossConfig>().temperature == 0.02);
  j["extra"] = true;
  CHECK_THROWS_AS(j.get<LossConfig>(), ConfigError);
}

TEST_CASE("info_nce gradient through cosine") {
  std::mt19937_64 rng(9);
  const std::size_t b = 3, d = 4, h = 2;
  std::normal_distribution<double> n(0, 1);
  auto random = [&](std::size_t rows) {
    std::vector<double> v(rows * d);
    for (auto& x : v) x = n(rng);
    return Tensor<double>::from({rows, d}, v, true);
  };
  auto q0 = random(b), p0 = random(b), h0 = random(b * h);
  LossConfig cfg;
  cfg.hard_negatives_per_query = h;
  CrossBatchCache<double> cache(1);
  cache.push(unit_rows(2, d, rng));

  for (double tau : {1.0, 0.5, 0.2}) {
    auto loss_of = [&](const Tensor<double>& q, const Tensor<double>& p, const Tensor<double>& hard) {
      auto hn = numerics::l2_normalize_rows(hard);
      auto pool = assemble_pool(b, cache, hn, TaskType::kRetrieval, cfg);
      return info_nce(numerics::l2_normalize_rows(q), numerics::l2_normalize_rows(p), pool, tau);
    };
    CHECK(numerics::grad_check([&](const Tensor<double>& x) { return loss_of(x, p0, h0); }, q0)
              .max_relative_error < 1e-6);
    CHECK(numerics::grad_check([&](const Tensor<double>& x) { return loss_of(q0, x, h0); }, p0)
              .max_relative_error < 1e-6);
    CHECK(numerics::grad_check([&](const Tensor<double>& x) { return loss_of(q0, p0, x); }, h0)
              .max_relative_error < 1e-6);
  }

  // At sharp temperatures some coordinates carry ~1e-8 gradients where central
  // differences are dominated by truncation error; compare absolutely there.
  {
    auto f = [&](const Tensor<double>& x) {
      auto pool = assemble_pool(b, cache, numerics::l2_normalize_rows(x), TaskType::kRetrieval, cfg);
      return info_nce(numerics::l2_normalize_rows(q0), numerics::l2_normalize_rows(p0), pool, 0.02);
    };
    h0.zero_grad();
    f(h0).backward();
    std::vector<double> g(h0.grad().begin(), h0.grad().end());
    h0.zero_grad();
    const double step = 1e-6;
    for (std::size_t i = 0; i < h0.numel(); ++i) {
      auto plus = h0.detach(), minus = h0.detach();
      plus.data()[i] += step;
      minus.data()[i] -= step;
      const double fd = (f(plus).item() - f(minus).item()) / (2 * step);
      CHECK(std::abs(fd - g[i]) < 1e-4 * std::max(1.0, std::abs(g[i])));
    }
  }

  // Cached rows are constants: no gradient reaches them.
  auto pool = assemble_pool(b, cache, numerics::l2_normalize_rows(h0), TaskType::kRetrieval, cfg);
  auto loss = info_nce(numerics::l2_normalize_rows(q0), numerics::l2_normalize_rows(p0), pool, 0.1);
  loss.backward();
  CHECK_FALSE(cache.batches().front().has_grad());
  CHECK(q0.has_grad());
}

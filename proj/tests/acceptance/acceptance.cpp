// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion ...]   (default: all twelve)
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cemb/data/corpus.hpp"
#include "cemb/errors.hpp"
#include "cemb/eval/metrics.hpp"
#include "cemb/model/encoder.hpp"
#include "cemb/numerics/grad_check.hpp"
#include "cemb/numerics/ops.hpp"
#include "cemb/objective/info_nce.hpp"
#include "cemb/pipeline/config.hpp"
#include "cemb/pipeline/run.hpp"
#include "cemb/pipeline/trainer.hpp"

using namespace cemb;
using numerics::Shape;
using numerics::Tensor;
namespace fs = std::filesystem;

namespace {

using TD = Tensor<double>;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cemb_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numerics::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return TD::from(shape, v);
}

std::vector<std::vector<double>> random_unit_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 1);
  std::vector<std::vector<double>> out(n, std::vector<double>(d));
  for (auto& r : out) {
    double s = 0;
    for (auto& x : r) {
      x = g(rng);
      s += x * x;
    }
    for (auto& x : r) x /= std::sqrt(s);
  }
  return out;
}

TD to_tensor(const std::vector<std::vector<double>>& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return TD::from({rows.size(), rows.empty() ? 0 : rows[0].size()}, flat);
}

double cos_of(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    ab += a[j] * b[j];
    aa += a[j] * a[j];
    bb += b[j] * b[j];
  }
  return ab / std::sqrt(aa * bb);
}

// ---- 1

Outcome loss_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = 1 + rng() % 8, d = 2 + rng() % 15;
    const std::size_t h = rng() % 4;
    const bool retrieval = rng() % 3 != 0;
    const double tau = trial % 2 ? 0.02 : 0.01 + double(rng() % 1000) / 500.0;
    std::vector<std::vector<std::vector<double>>> cache_batches;
    const std::size_t n_cache = rng() % 3;
    for (std::size_t c = 0; c < n_cache; ++c) cache_batches.push_back(random_unit_rows(1 + rng() % 4, d, rng));
    auto q = random_unit_rows(b, d, rng);
    auto p = random_unit_rows(b, d, rng);
    auto hard = random_unit_rows(b * h, d, rng);

    objective::LossConfig cfg;
    cfg.hard_negatives_per_query = h;
    cfg.cache_capacity_batches = 2;
    objective::CrossBatchCache<double> cache(2);
    for (const auto& cb : cache_batches) cache.push(to_tensor(cb));
    auto pool = objective::assemble_pool<double>(b, cache, h ? to_tensor(hard) : TD{},
                                                 retrieval ? TaskType::kRetrieval : TaskType::kClassification, cfg);
    const double got = objective::info_nce(to_tensor(q), to_tensor(p), pool, tau).item();

    // phi(a, b) = exp(cos(a, b) / tau); L = -mean log(phi+ / (phi+ + sum phi-)).
    const std::size_t first_kept = cache_batches.size() > 2 ? cache_batches.size() - 2 : 0;
    double total = 0;
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<std::vector<double>> negs;
      if (retrieval) {
        for (std::size_t j = 0; j < b; ++j) {
          if (j != i) negs.push_back(p[j]);
        }
        for (std::size_t c = first_kept; c < cache_batches.size(); ++c) {
          for (const auto& r : cache_batches[c]) negs.push_back(r);
        }
      }
      for (std::size_t k = 0; k < h; ++k) negs.push_back(hard[i * h + k]);
      if (negs.size() > 32 || pool.size_of(i) != negs.size()) return {false, "pool size mismatch"};
      const double phi_pos = std::exp(cos_of(q[i], p[i]) / tau);
      double denom = phi_pos;
      for (const auto& n : negs) denom += std::exp(cos_of(q[i], n) / tau);
      total += -std::log(phi_pos / denom);
    }
    worst = std::max(worst, std::abs(got - total / double(b)));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-10 && secs < 10,
          "1000 instances, max |d| = " + fmt("%.3g", worst) + ", " + fmt("%.2f", secs) + " s"};
}

// ---- 2

double weighted_scalar_check(const std::function<TD(const TD&)>& op, const TD& x, std::uint64_t seed) {
  // sum(op(v) * w) for a fixed random w
  auto probe = [&](const TD& v) {
    TD y = op(v);
    std::mt19937_64 rng(seed);
    return numerics::sum(numerics::mul(y, random_tensor(y.shape(), rng)));
  };
  return numerics::grad_check(probe, x).max_relative_error;
}

model::TokenBatch random_tokens(std::size_t batch, std::size_t length, std::size_t vocab, std::mt19937_64& rng) {
  model::TokenBatch t;
  t.batch = batch;
  t.length = length;
  for (std::size_t i = 0; i < batch * length; ++i) {
    t.ids.push_back(std::int32_t(1 + rng() % (vocab - 1)));
    t.pad.push_back(0);
  }
  return t;
}

Outcome gradient_correctness() {
  using namespace numerics;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2002);
  TD x = random_tensor({4, 6}, rng);
  TD w = random_tensor({6, 5}, rng);
  TD g = random_tensor({6}, rng, 0.5, 1.5);
  TD y = random_tensor({4, 6}, rng);
  TD other = random_tensor({3, 6}, rng);
  TD q = random_tensor({6, 4}, rng), k = random_tensor({6, 4}, rng), v = random_tensor({6, 4}, rng);
  TD lat = random_tensor({3, 4}, rng);
  const std::vector<double> pos{0, 1, 2, 3};
  const std::vector<std::int32_t> ids{3, 0, 3, 1, 2};
  const std::vector<std::uint8_t> pad{0, 0, 1, 0, 0, 1};
  const auto self_pat = AttentionPattern::self(2, 3, pad, false);
  const auto causal_pat = AttentionPattern::self(2, 3, pad, true);
  const auto dense = AttentionPattern::dense(6, 3);
  const std::vector<std::uint8_t> keep{1, 0, 1, 1};

  std::vector<std::pair<std::string, double>> ops;
  auto add_op = [&](const std::string& name, const std::function<TD(const TD&)>& f, const TD& at) {
    ops.emplace_back(name, weighted_scalar_check(f, at, 100 + ops.size()));
  };
  add_op("matmul/a", [&](const TD& t) { return matmul(t, w); }, x);
  add_op("matmul/b", [&](const TD& t) { return matmul(x, t); }, w);
  add_op("add", [&](const TD& t) { return add(t, y); }, x);
  add_op("mul", [&](const TD& t) { return mul(t, y); }, x);
  add_op("mul/self", [&](const TD& t) { return mul(t, t); }, x);
  add_op("scale", [&](const TD& t) { return scale(t, -3.0); }, x);
  add_op("sum", [&](const TD& t) { return reshape(sum(t), {1}); }, x);
  add_op("silu", [&](const TD& t) { return silu(t); }, x);
  add_op("gelu", [&](const TD& t) { return gelu(t); }, x);
  add_op("row_softmax", [&](const TD& t) { return row_softmax(t); }, x);
  add_op("rms_norm/x", [&](const TD& t) { return rms_norm(t, g, 1e-5); }, x);
  add_op("rms_norm/gain", [&](const TD& t) { return rms_norm(x, t, 1e-5); }, g);
  add_op("apply_rope", [&](const TD& t) { return apply_rope(t, pos, 2); }, x);
  add_op("gather_rows", [&](const TD& t) { return gather_rows(t, ids); }, x);
  for (const auto* pat : {&self_pat, &causal_pat}) {
    const std::string tag = pat == &self_pat ? "attention/bidir" : "attention/causal";
    add_op(tag + "/q", [&, pat](const TD& t) { return attention(t, k, v, *pat, 2); }, q);
    add_op(tag + "/k", [&, pat](const TD& t) { return attention(q, t, v, *pat, 2); }, k);
    add_op(tag + "/v", [&, pat](const TD& t) { return attention(q, k, t, *pat, 2); }, v);
  }
  add_op("attention/latent", [&](const TD& t) { return attention(q, t, t, dense, 1); }, lat);
  add_op("masked_mean", [&](const TD& t) { return masked_mean(t, 2, keep); }, x);
  add_op("l2_normalize_rows", [&](const TD& t) { return l2_normalize_rows(t); }, x);
  add_op("cosine_matrix/q", [&](const TD& t) { return cosine_matrix(t, other); }, x);
  add_op("cosine_matrix/d", [&](const TD& t) { return cosine_matrix(other, t); }, x);
  add_op("slice_rows", [&](const TD& t) { return slice_rows(t, 1, 3); }, x);
  add_op("concat_rows", [&](const TD& t) { return concat_rows<double>({t, other, t}); }, x);
  add_op("reshape", [&](const TD& t) { return reshape(t, {2, 12}); }, x);

  double op_worst = 0;
  std::string op_name;
  for (const auto& [name, err] : ops) {
    if (err >= op_worst) {
      op_worst = err;
      op_name = name;
    }
  }

  // End to end: InfoNCE over a 2-layer, d=16 encoder in float64.
  model::ModelConfig cfg;
  cfg.vocab_size = 24;
  cfg.d_model = 16;
  cfg.d_latent = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ff = 24;
  cfg.n_latents = 4;
  cfg.embedding_dim = 16;
  cfg.max_seq_len = 16;
  auto m = model::init_model<double>(cfg, 7);
  const std::size_t batch = 3;
  auto qt = random_tokens(batch, 5, cfg.vocab_size, rng);
  auto pt = random_tokens(batch, 6, cfg.vocab_size, rng);
  auto ht = random_tokens(batch, 4, cfg.vocab_size, rng);
  qt.pad[4] = 1;
  ht.pad[11] = ht.pad[10] = 1;
  objective::LossConfig lc;
  lc.hard_negatives_per_query = 1;
  objective::CrossBatchCache<double> cache(0);
  auto loss_of = [&]() {
    auto eq = model::embed(m, qt);
    auto ep = model::embed(m, pt);
    auto eh = model::embed(m, ht);
    auto pool = objective::assemble_pool(batch, cache, eh, TaskType::kRetrieval, lc);
    return objective::info_nce(eq, ep, pool, 0.1);
  };

  double e2e_worst = 0;
  std::string e2e_name;
  std::size_t coords = 0;
  std::vector<std::string> names;
  for (auto& [name, p] : m.parameters()) names.push_back(name);
  for (const auto& name : names) {
    TD saved = m.parameter(name);
    auto f = [&](const TD& val) {
      m.parameter(name) = val;
      TD l = loss_of();
      m.parameter(name) = saved;
      return l;
    };
    auto r = numerics::grad_check(f, saved.detach());
    coords += r.coordinates_checked;
    if (r.max_relative_error >= e2e_worst) {
      e2e_worst = r.max_relative_error;
      e2e_name = name;
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = op_worst < 1e-6 && e2e_worst < 1e-4 && secs < 60;
  return {pass, std::to_string(ops.size()) + " op checks max " + fmt("%.2g", op_worst) + " (" + op_name +
                    "); end to end " + std::to_string(coords) + " coords max " + fmt("%.2g", e2e_worst) + " (" +
                    e2e_name + "), " + fmt("%.1f", secs) + " s"};
}

// ---- 3, 4

model::ModelConfig probe_config(model::MaskMode mode) {
  model::ModelConfig c;
  c.vocab_size = 64;
  c.d_model = 16;
  c.d_latent = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 32;
  c.n_latents = 4;
  c.embedding_dim = 16;
  c.max_seq_len = 64;
  c.mask_mode = mode;
  return c;
}

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

Outcome mask_semantics() {
  std::mt19937_64 rng(3003);
  auto causal = model::init_model<float>(probe_config(model::MaskMode::kCausal), 31);
  auto bidir = model::init_model<float>(probe_config(model::MaskMode::kBidirectional), 31);
  int no_leak = 0, influenced = 0;
  for (int probe = 0; probe < 100; ++probe) {
    const std::size_t len = 3 + rng() % 12;
    const std::size_t at = 1 + rng() % (len - 1);
    auto t = random_tokens(1, len, 64, rng);
    auto u = t;
    u.ids[at] = std::int32_t(1 + (std::size_t(t.ids[at]) + rng() % 62) % 63);
    const std::size_t d = 16;

    auto ca = model::forward_encode(causal, t);
    auto cb = model::forward_encode(causal, u);
    no_leak += same_bits(ca.data().subspan(0, at * d), cb.data().subspan(0, at * d));

    auto ba = model::forward_encode(bidir, t);
    auto bb = model::forward_encode(bidir, u);
    influenced += !same_bits(ba.data().subspan(0, at * d), bb.data().subspan(0, at * d));
  }
  return {no_leak == 100 && influenced >= 99, "causal no-leak " + std::to_string(no_leak) +
                                                   "/100, bidirectional influence " + std::to_string(influenced) +
                                                   "/100"};
}

Outcome pad_isolation() {
  std::mt19937_64 rng(4004);
  auto m = model::init_model<float>(probe_config(model::MaskMode::kBidirectional), 41);
  int ok = 0;
  for (int probe = 0; probe < 100; ++probe) {
    const std::size_t batch = 1 + rng() % 4, len = 4 + rng() % 10;
    auto t = random_tokens(batch, len, 64, rng);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t real = 1 + rng() % len;
      for (std::size_t i = real; i < len; ++i) {
        t.pad[b * len + i] = 1;
        t.ids[b * len + i] = 0;
      }
    }
    auto base = model::embed(m, t);

    auto noisy = t;
    for (std::size_t i = 0; i < noisy.ids.size(); ++i) {
      if (noisy.pad[i]) noisy.ids[i] = std::int32_t(1 + rng() % 63);
    }
    const std::size_t extra = 1 + rng() % 6;
    model::TokenBatch longer;
    longer.batch = batch;
    longer.length = len + extra;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < len + extra; ++i) {
        const bool inside = i < len;
        longer.ids.push_back(inside ? t.ids[b * len + i] : std::int32_t(1 + rng() % 63));
        longer.pad.push_back(inside ? t.pad[b * len + i] : 1);
      }
    }
    ok += same_bits(base.data(), model::embed(m, noisy).data()) &&
          same_bits(base.data(), model::embed(m, longer).data());
  }
  return {ok == 100, std::to_string(ok) + "/100 probes bit-identical"};
}

// ---- 5

Outcome pruning_fidelity() {
  auto cfg = probe_config(model::MaskMode::kBidirectional);
  cfg.n_layers = 36;
  cfg.d_model = cfg.d_latent = cfg.embedding_dim = 8;
  cfg.d_ff = 8;
  auto full = model::init_model<float>(cfg, 5);
  auto pruned = model::prune_layers(full, 0.25);
  auto block_params = [](const pipeline::Model& m) {
    std::size_t n = 0;
    for (const auto& [name, p] : m.parameters()) {
      if (name.rfind("blocks.", 0) == 0) n += p->numel();
    }
    return n;
  };
  const std::size_t before = block_params(full), after = block_params(pruned);
  bool kept_prefix = true;
  for (std::size_t i = 0; i < pruned.blocks.size(); ++i) {
    kept_prefix = kept_prefix && same_bits(pruned.blocks[i].w_down.data(), full.blocks[i].w_down.data()) &&
                  same_bits(pruned.blocks[i].wq.data(), full.blocks[i].wq.data());
  }
  const bool pass = pruned.blocks.size() == 27 && pruned.config.n_layers == 27 && after * 36 == before * 27 &&
                    kept_prefix;
  return {pass, "36 -> " + std::to_string(pruned.blocks.size()) + " layers, block params " + std::to_string(after) +
                    " / " + std::to_string(before)};
}

// ---- 6

Outcome config_fidelity() {
  const auto c = pipeline::default_stage_configs();
  int cells = 0, ok = 0;
  auto cell = [&](bool b) {
    ++cells;
    ok += b;
  };
  const std::size_t warmup[3] = {1000, 500, 500}, batch[3] = {16384, 512, 512}, hard[3] = {0, 7, 7};
  for (std::size_t s = 0; s < 3; ++s) {
    cell(c[s].stage == pipeline::Stage(s));
    cell(c[s].temperature == 0.02);
    cell(c[s].learning_rate == 1e-5);
    cell(c[s].warmup_steps == warmup[s]);
    cell(c[s].batch_size == batch[s]);
    cell(c[s].max_length == 512);
    cell(c[s].weight_decay == 0.01);
    cell(c[s].hard_negatives == hard[s]);
    if (s == 0) {
      cell(c[s].max_steps == std::optional<std::size_t>(6000));
    } else {
      cell(c[s].epochs == std::optional<std::size_t>(3));
    }
  }
  return {ok == cells, std::to_string(ok) + "/" + std::to_string(cells) + " table cells"};
}

// ---- 7

pipeline::Model small_model(const data::Tokenizer& tok, std::uint64_t seed) {
  model::ModelConfig m;
  m.vocab_size = tok.size();
  m.d_model = m.d_latent = m.embedding_dim = 16;
  m.n_layers = 2;
  m.n_heads = 2;
  m.d_ff = 32;
  m.n_latents = 4;
  m.max_seq_len = 64;
  return model::init_model<float>(m, seed);
}

Outcome pool_policy() {
  data::CorpusSpec rspec;
  rspec.seed = 70;
  rspec.n_documents = 96;
  rspec.vocab_size = 128;
  data::CorpusSpec cspec = rspec;
  cspec.seed = 71;
  cspec.task_type = TaskType::kClassification;
  cspec.n_classes = 4;
  data::CorpusSpec kspec = cspec;
  kspec.seed = 72;
  kspec.task_type = TaskType::kClustering;
  auto r = data::generate_corpus(rspec), c = data::generate_corpus(cspec), k = data::generate_corpus(kspec);
  std::vector<data::TrainingExample> mix = r.examples;
  mix.insert(mix.end(), c.examples.begin(), c.examples.end());
  mix.insert(mix.end(), k.examples.begin(), k.examples.end());

  std::vector<std::string> texts = r.documents;
  texts.insert(texts.end(), c.documents.begin(), c.documents.end());
  texts.insert(texts.end(), k.documents.begin(), k.documents.end());
  const auto tpl = data::PromptTemplate::instruct();
  for (auto t : {TaskType::kRetrieval, TaskType::kClassification, TaskType::kClustering}) {
    texts.push_back(tpl.render_query(data::default_instruction(t), "x"));
  }
  auto tok = data::Tokenizer::build(texts);
  auto m = small_model(tok, 7);

  auto cfg = pipeline::desk_stage_configs()[2];
  cfg.batch_size = 8;
  cfg.epochs = 1;
  cfg.cache_capacity = 2;
  auto prepared = pipeline::prepare_stage_data(m, tok, tpl, cfg, mix, 3);
  auto sched = pipeline::stage_schedule(cfg, prepared, 4);
  auto state = pipeline::fresh_trainer_state(cfg);
  std::size_t labeled_steps = 0, retrieval_steps = 0, bad = 0, retrieval_seen = 0;
  for (const auto& batch : sched) {
    const auto task = prepared[batch[0]].task_type;
    const std::size_t cache_rows = state.cache.total_rows();
    pipeline::train_step(m, cfg, prepared, batch, tok, tpl, state);
    const std::size_t b = batch.size();
    const std::size_t expect = task == TaskType::kRetrieval ? 1 + (b - 1) + cache_rows + 7 : 1 + 7;
    for (auto w : state.last_logit_widths) bad += w != expect;
    if (state.last_logit_widths.size() != b) ++bad;
    if (task == TaskType::kRetrieval) {
      ++retrieval_steps;
      if (cache_rows != std::min<std::size_t>(retrieval_seen, 2) * b) ++bad;
      ++retrieval_seen;
    } else {
      ++labeled_steps;
    }
  }
  const bool pass = bad == 0 && labeled_steps > 0 && retrieval_steps > 2;
  return {pass, std::to_string(labeled_steps) + " labeled steps at width 8, " + std::to_string(retrieval_steps) +
                    " retrieval steps at 1+(B-1)+cache+7, " + std::to_string(bad) + " mismatches"};
}

// ---- 8

Outcome cache_fifo() {
  std::mt19937_64 rng(8008);
  const std::size_t capacity = 4;
  objective::CrossBatchCache<float> cache(capacity);
  std::deque<std::vector<float>> ref;
  std::size_t mismatches = 0;
  for (int push = 0; push < 1000; ++push) {
    const std::size_t rows = 1 + rng() % 5;
    std::vector<float> v(rows * 3);
    for (auto& x : v) x = float(rng() % 1000) / 7.0f;
    cache.push(Tensor<float>::from({rows, 3}, v));
    ref.push_back(v);
    if (ref.size() > capacity) ref.pop_front();
    bool same = cache.size() == ref.size();
    for (std::size_t i = 0; same && i < ref.size(); ++i) {
      const auto got = cache.batches()[i].data();
      same = std::equal(got.begin(), got.end(), ref[i].begin(), ref[i].end());
    }
    mismatches += !same;
  }
  return {mismatches == 0, "1000 pushes, capacity 4, " + std::to_string(mismatches) + " mismatches"};
}

// ---- 9

pipeline::RunConfig learning_signal_config(const fs::path& out) {
  pipeline::RunConfig c;
  c.output_dir = out.string();
  c.seed = 0;
  c.stages = {pipeline::Stage::kFinetune};
  data::CorpusSpec s;
  s.seed = 7;
  s.n_documents = 2000;
  s.vocab_size = 512;
  s.queries_per_document = 4;
  pipeline::DataSource src;
  src.synthetic = s;
  src.holdout_fraction = 0.1;
  c.finetune_data = {src};
  c.eval_initial = true;
  auto& f = c.stage_configs[1];
  f.epochs = 2;
  f.learning_rate = 1e-3;
  f.warmup_steps = 20;
  return c;
}

double held_out_recall(const eval::EvalReport& r) {
  for (const auto& t : r.tasks) {
    if (t.category == "retrieval") return t.metrics.at("recall@1");
  }
  return -1;
}

Outcome learning_signal() {
  const auto out = scratch("learning");
  const auto cfg = learning_signal_config(out);
  const auto t0 = Clock::now();
  auto r = pipeline::run_pipeline(cfg);
  const double secs = seconds_since(t0);
  const auto& log = r.metric_log;
  if (log.empty()) return {false, "no steps"};
  const std::size_t tail = std::min<std::size_t>(10, log.size());
  double tail_mean = 0;
  for (std::size_t i = log.size() - tail; i < log.size(); ++i) tail_mean += log[i].loss;
  tail_mean /= double(tail);
  const double first = log.front().loss;
  const double recall = held_out_recall(r.final_report);
  const double initial = r.initial_report ? held_out_recall(*r.initial_report) : -1;
  const bool pass = log.size() <= 500 && secs <= 600 && tail_mean <= 0.5 * first && recall >= 0.8 &&
                    initial >= 0 && initial <= 0.05;
  fs::remove_all(out);
  return {pass, std::to_string(log.size()) + " steps, " + fmt("%.0f", secs) + " s, loss " + fmt("%.3f", first) +
                    " -> " + fmt("%.3f", tail_mean) + " (last 10), held-out recall@1 " + fmt("%.3f", recall) +
                    " (untrained " + fmt("%.3f", initial) + ")"};
}

// ---- 10, 12

pipeline::RunConfig tiny_run(const fs::path& out) {
  pipeline::RunConfig c;
  c.model.d_model = c.model.d_latent = c.model.embedding_dim = 16;
  c.model.n_layers = 4;
  c.model.n_heads = 2;
  c.model.d_ff = 32;
  c.model.n_latents = 4;
  c.model.max_seq_len = 64;
  c.seed = 21;
  c.output_dir = out.string();
  data::CorpusSpec r;
  r.seed = 3;
  r.n_documents = 96;
  r.vocab_size = 96;
  data::CorpusSpec l = r;
  l.seed = 4;
  l.task_type = TaskType::kClassification;
  l.n_classes = 4;
  pipeline::DataSource rs, ls;
  rs.synthetic = r;
  rs.holdout_fraction = 0.1;
  ls.synthetic = l;
  ls.holdout_fraction = 0.2;
  c.pretrain_data = {rs};
  c.finetune_data = {rs};
  c.multitask_data = {rs, ls};
  c.stage_configs[0].batch_size = 16;
  c.stage_configs[0].max_steps = 4;
  c.stage_configs[0].warmup_steps = 2;
  c.stage_configs[0].cache_capacity = 2;
  for (std::size_t s = 1; s < 3; ++s) {
    c.stage_configs[s].batch_size = 8;
    c.stage_configs[s].epochs = 1;
    c.stage_configs[s].hard_negatives = 3;
    c.stage_configs[s].warmup_steps = 2;
  }
  return c;
}

Outcome determinism() {
  const auto a = scratch("det_a"), b = scratch("det_b");
  auto ra = pipeline::run_pipeline(tiny_run(a));
  auto rb = pipeline::run_pipeline(tiny_run(b));
  const std::string la = slurp(a / "metrics.jsonl"), lb = slurp(b / "metrics.jsonl");
  const bool pass = !ra.metric_log.empty() && ra.metric_log == rb.metric_log && la == lb && !la.empty();
  fs::remove_all(a);
  fs::remove_all(b);
  return {pass, std::to_string(ra.metric_log.size()) + " steps over 3 stages, metrics.jsonl " +
                    (la == lb ? "identical" : "different")};
}

Outcome ablation_harness() {
  const auto base_dir = scratch("ablate");
  auto base = tiny_run(base_dir);
  base.stages = {pipeline::Stage::kPretrain, pipeline::Stage::kFinetune};
  bool pass = true;
  std::string detail;
  const std::map<pipeline::AblationVariant, std::string> field{
      {pipeline::AblationVariant::kFullVsPruned, "prune_fraction"},
      {pipeline::AblationVariant::kPrefixVsInstruct, "prompt_strategy"},
      {pipeline::AblationVariant::kWithVsWithoutPretrain, "stages"}};
  for (const auto& [variant, expected] : field) {
    auto report = pipeline::run_ablation(variant, base);
    const auto& arms = report.at("arms");
    const bool one_field = report.at("manifest_diff") == nlohmann::json::array({expected});
    const bool written = fs::exists(base_dir / (std::string("ablation_") + pipeline::ablation_variant_name(variant) +
                                                ".json"));
    pass = pass && one_field && written && arms.size() == 2;
    if (arms.size() != 2) continue;
    const double a = arms[0].at("eval").at("average").get<double>();
    const double b = arms[1].at("eval").at("average").get<double>();
    if (!detail.empty()) detail += "; ";
    detail += std::string(pipeline::ablation_variant_name(variant)) + " [" + expected + "] " +
              arms[0].at("name").get<std::string>() + " " + fmt("%.3f", a) + " vs " +
              arms[1].at("name").get<std::string>() + " " + fmt("%.3f", b);
  }
  fs::remove_all(base_dir);
  return {pass, detail};
}

// ---- 11

std::vector<std::size_t> oracle_ranking(const std::vector<std::vector<double>>& docs, const std::vector<double>& q) {
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  // Selection sort: highest cosine first, lower id on ties.
  for (std::size_t i = 0; i < order.size(); ++i) {
    std::size_t best = i;
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const double cj = cos_of(q, docs[order[j]]), cb = cos_of(q, docs[order[best]]);
      if (cj > cb || (cj == cb && order[j] < order[best])) best = j;
    }
    std::swap(order[i], order[best]);
  }
  return order;
}

std::vector<double> counting_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double below = 0, equal = 0;
    for (double w : v) {
      below += w < v[i];
      equal += w == v[i];
    }
    r[i] = below + (equal + 1) / 2;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (a[i] - ma) * (b[i] - mb);
    aa += (a[i] - ma) * (a[i] - ma);
    bb += (b[i] - mb) * (b[i] - mb);
  }
  return ab / std::sqrt(aa * bb);
}

Outcome metric_oracles() {
  std::mt19937_64 rng(1111);
  double worst = 0;
  std::map<std::string, double> per;
  auto note = [&](const std::string& name, double got, double want) {
    const double d = std::abs(got - want);
    per[name] = std::max(per[name], d);
    worst = std::max(worst, d);
  };
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n_docs = 1 + rng() % 20, n_q = 1 + rng() % 20, d = 2 + rng() % 4;
    const auto docs = random_unit_rows(n_docs, d, rng);
    const auto qs = random_unit_rows(n_q, d, rng);
    const auto rankings = eval::rank_by_cosine(to_tensor(qs), to_tensor(docs));
    const std::size_t k = 1 + rng() % n_docs;

    std::vector<std::set<std::size_t>> gold(n_q);
    std::vector<std::map<std::size_t, double>> grades(n_q);
    for (std::size_t i = 0; i < n_q; ++i) {
      for (std::size_t j = 0; j < n_docs; ++j) {
        if (rng() % 4 == 0) gold[i].insert(j);
        if (rng() % 3 == 0) grades[i][j] = double(rng() % 4);
      }
    }
    double hits = 0, ndcg = 0;
    for (std::size_t i = 0; i < n_q; ++i) {
      const auto order = oracle_ranking(docs, qs[i]);
      bool hit = false;
      for (std::size_t r = 0; r < k; ++r) hit = hit || gold[i].count(order[r]);
      hits += hit;
      auto grade = [&](std::size_t id) {
        auto it = grades[i].find(id);
        return it == grades[i].end() ? 0.0 : it->second;
      };
      double dcg = 0;
      for (std::size_t r = 0; r < k; ++r) dcg += (std::pow(2.0, grade(order[r])) - 1) / std::log2(double(r) + 2);
      std::vector<double> ideal;
      for (std::size_t j = 0; j < n_docs; ++j) ideal.push_back(grade(j));
      std::sort(ideal.rbegin(), ideal.rend());
      double idcg = 0;
      for (std::size_t r = 0; r < k && r < ideal.size(); ++r) idcg += (std::pow(2.0, ideal[r]) - 1) / std::log2(double(r) + 2);
      ndcg += idcg > 0 ? dcg / idcg : 0;
    }
    note("recall", eval::recall_at_k(rankings, gold, k), hits / double(n_q));
    note("ndcg", eval::ndcg_at_k(rankings, grades, k), ndcg / double(n_q));

    // kNN: majority vote, ties to the label of the nearest neighbour.
    std::vector<std::string> train_labels, test_labels;
    for (std::size_t j = 0; j < n_docs; ++j) train_labels.push_back(std::string(1, char('a' + rng() % 3)));
    for (std::size_t i = 0; i < n_q; ++i) test_labels.push_back(std::string(1, char('a' + rng() % 3)));
    double correct = 0;
    for (std::size_t i = 0; i < n_q; ++i) {
      const auto order = oracle_ranking(docs, qs[i]);
      std::map<std::string, int> votes;
      for (std::size_t r = 0; r < k; ++r) ++votes[train_labels[order[r]]];
      int top = 0;
      for (const auto& [l, v] : votes) top = std::max(top, v);
      std::string pick;
      for (std::size_t r = 0; r < k && pick.empty(); ++r) {
        if (votes[train_labels[order[r]]] == top) pick = train_labels[order[r]];
      }
      correct += pick == test_labels[i];
    }
    note("knn", eval::knn_accuracy(to_tensor(docs), train_labels, to_tensor(qs), test_labels, k),
         correct / double(n_q));

    // Purity.
    const std::size_t clusters = 1 + rng() % 5;
    std::vector<std::size_t> assign;
    for (std::size_t j = 0; j < n_docs; ++j) assign.push_back(rng() % clusters);
    double total = 0;
    for (std::size_t c = 0; c < clusters; ++c) {
      double best = 0;
      for (char l = 'a'; l <= 'c'; ++l) {
        double count = 0;
        for (std::size_t j = 0; j < n_docs; ++j) count += assign[j] == c && train_labels[j][0] == l;
        best = std::max(best, count);
      }
      total += best;
    }
    note("purity", eval::purity(assign, train_labels), total / double(n_docs));

    // Spearman with ties.
    const std::size_t n = 3 + rng() % 18;
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = double(rng() % 6);
    for (auto& v : y) v = double(rng() % 6);
    x[0] = -1;
    y[1] = -1;
    note("spearman", eval::spearman(x, y), pearson(counting_ranks(x), counting_ranks(y)));
  }
  std::string detail = "300 instances:";
  for (const auto& [name, d] : per) detail += " " + name + " " + fmt("%.1g", d);
  return {worst < 1e-12, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"loss oracle", loss_oracle},
      {"gradient correctness", gradient_correctness},
      {"mask semantics", mask_semantics},
      {"pad isolation", pad_isolation},
      {"pruning fidelity", pruning_fidelity},
      {"config fidelity", config_fidelity},
      {"pool policy", pool_policy},
      {"cross-batch cache", cache_fifo},
      {"desk-scale learning signal", learning_signal},
      {"determinism", determinism},
      {"metric oracles", metric_oracles},
      {"ablation harness", ablation_harness},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) {
    const std::size_t n = std::strtoul(argv[i], nullptr, 10);
    if (n < 1 || n > criteria.size()) {
      std::cerr << "acceptance: no criterion " << argv[i] << "\n";
      return 2;
    }
    selected.insert(n);
  }
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}

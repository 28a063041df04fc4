#include "cemb/pipeline/trainer.hpp"

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "cemb/data/sampling.hpp"
#include "cemb/errors.hpp"
#include "cemb/eval/evaluate.hpp"
#include "cemb/json_util.hpp"
#include "cemb/model/archive.hpp"

namespace cemb::pipeline {

namespace fs = std::filesystem;
using data::TrainingExample;

void to_json(nlohmann::json& j, const StepRecord& r) {
  j = {{"step", r.step}, {"stage", stage_name(r.stage)}, {"loss", r.loss}, {"lr", r.lr}};
}

void from_json(const nlohmann::json& j, StepRecord& r) {
  json_util::require_known_keys(j, {"step", "stage", "loss", "lr"}, "metric record");
  std::string stage;
  json_util::read_required(j, "step", r.step, "metric record");
  json_util::read_required(j, "stage", stage, "metric record");
  json_util::read_required(j, "loss", r.loss, "metric record");
  json_util::read_required(j, "lr", r.lr, "metric record");
  r.stage = parse_stage(stage);
}

TrainerState fresh_trainer_state(const StageConfig& config) {
  TrainerState s;
  s.cache = objective::CrossBatchCache<float>(config.cache_capacity);
  return s;
}

void check_stage_tasks(Stage stage, const std::vector<TrainingExample>& examples) {
  if (stage == Stage::kMultitask) return;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].task_type != TaskType::kRetrieval) {
      throw ConfigError(std::string("example ") + std::to_string(i) + " has task " +
                        task_type_name(examples[i].task_type) + ", which the " + stage_name(stage) +
                        " stage does not accept (retrieval only)");
    }
  }
}

namespace {
thread_local MiningStats t_mining_stats;
}  // namespace

MiningStats last_mining_stats() { return t_mining_stats; }

std::vector<TrainingExample> prepare_stage_data(const Model& model, const data::Tokenizer& tokenizer,
                                                const data::PromptTemplate& tpl, const StageConfig& config,
                                                const std::vector<TrainingExample>& examples, std::uint64_t seed) {
  t_mining_stats = {};
  check_stage_tasks(config.stage, examples);
  const std::size_t k = config.hard_negatives;
  std::vector<TrainingExample> out = examples;
  std::vector<std::size_t> to_mine;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].validate();
    auto& negs = out[i].hard_negatives;
    if (negs.size() >= k) {
      negs.resize(k);
      continue;
    }
    if (is_labeled(out[i].task_type)) {
      throw ContractError("labeled example " + std::to_string(i) + " carries " + std::to_string(negs.size()) +
                          " negatives, the stage needs " + std::to_string(k));
    }
    to_mine.push_back(i);
  }
  if (to_mine.empty()) return out;

  std::vector<std::string> docs;
  std::map<std::string, std::size_t> doc_id;
  for (const auto& ex : out) {
    if (is_labeled(ex.task_type)) continue;
    if (doc_id.emplace(ex.positive, docs.size()).second) docs.push_back(ex.positive);
  }
  std::vector<std::string> rendered_docs;
  for (const auto& d : docs) rendered_docs.push_back(tpl.render_document(d));
  std::vector<std::string> rendered_queries;
  for (std::size_t i : to_mine) rendered_queries.push_back(tpl.render_query(out[i].instruction, out[i].query));

  const auto corpus = eval::embed_texts(model, tokenizer, rendered_docs, config.max_length);
  const auto queries = eval::embed_texts(model, tokenizer, rendered_queries, config.max_length);
  for (std::size_t r = 0; r < to_mine.size(); ++r) {
    auto& ex = out[to_mine[r]];
    const std::size_t pos_id = doc_id.at(ex.positive);
    std::vector<std::size_t> ids;
    try {
      ids = data::mine_hard_negatives<float>(queries.row(r), pos_id, corpus, k);
      ++t_mining_stats.mined;
    } catch (const InsufficientCorpusError&) {
      if (docs.size() <= k) throw;
      std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (to_mine[r] + 1)));
      std::uniform_int_distribution<std::size_t> pick(0, docs.size() - 1);
      std::set<std::size_t> chosen;
      while (ids.size() < k) {
        const std::size_t d = pick(rng);
        if (d != pos_id && chosen.insert(d).second) ids.push_back(d);
      }
      ++t_mining_stats.random_fallback;
    }
    ex.hard_negatives.clear();
    for (std::size_t id : ids) ex.hard_negatives.push_back(docs[id]);
  }
  return out;
}

std::vector<std::vector<std::size_t>> stage_schedule(const StageConfig& config,
                                                     const std::vector<TrainingExample>& examples,
                                                     std::uint64_t seed) {
  const bool stratify = config.stage == Stage::kMultitask;
  std::vector<std::vector<std::size_t>> schedule;
  if (config.epochs) {
    for (std::size_t e = 0; e < *config.epochs; ++e) {
      auto b = data::make_batches(examples, config.batch_size, seed + e, stratify, config.use_in_batch_for_retrieval);
      if (b.empty()) {
        throw InsufficientCorpusError(std::to_string(examples.size()) + " examples cannot fill one batch of " +
                                      std::to_string(config.batch_size));
      }
      schedule.insert(schedule.end(), b.begin(), b.end());
    }
    return schedule;
  }
  const std::size_t target = config.max_steps.value_or(0);
  for (std::size_t e = 0; schedule.size() < target; ++e) {
    auto b = data::make_batches(examples, config.batch_size, seed + e, stratify, config.use_in_batch_for_retrieval);
    if (b.empty()) {
      throw InsufficientCorpusError(std::to_string(examples.size()) + " examples cannot fill one batch of " +
                                    std::to_string(config.batch_size));
    }
    for (auto& batch : b) {
      if (schedule.size() == target) break;
      schedule.push_back(std::move(batch));
    }
  }
  return schedule;
}

double train_step(Model& model, const StageConfig& config, const std::vector<TrainingExample>& examples,
                  const std::vector<std::size_t>& batch, const data::Tokenizer& tokenizer,
                  const data::PromptTemplate& tpl, TrainerState& state) {
  if (batch.empty()) throw ArgumentError("train_step: empty batch");
  const TaskType task = examples.at(batch[0]).task_type;
  const std::size_t k = config.hard_negatives;
  std::vector<std::string> queries, positives, hard;
  for (std::size_t id : batch) {
    const auto& ex = examples.at(id);
    if (ex.task_type != task) throw ContractError("train_step: batch mixes task types");
    if (ex.hard_negatives.size() != k) {
      throw ContractError("train_step: example " + std::to_string(id) + " has " +
                          std::to_string(ex.hard_negatives.size()) + " negatives, expected " + std::to_string(k));
    }
    const auto f = data::format_example(tpl, ex);
    queries.push_back(f.query);
    positives.push_back(f.positive);
    hard.insert(hard.end(), f.negatives.begin(), f.negatives.end());
  }

  model.set_requires_grad(true);
  model.zero_grad();
  const auto q = model::embed(model, tokenizer.encode_batch(queries, config.max_length));
  const auto pos = model::embed(model, tokenizer.encode_batch(positives, config.max_length));
  Tensor<float> hard_emb;
  if (k > 0) hard_emb = model::embed(model, tokenizer.encode_batch(hard, config.max_length));
  auto pool = objective::assemble_pool(batch.size(), state.cache, hard_emb, task, config.loss_config());
  // An in-batch row carrying the query's own positive text is not a negative.
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto& entries = pool.entries[i];
    std::erase_if(entries, [&](const objective::PoolEntry& e) {
      return e.provenance == objective::Provenance::kInBatch && positives[e.index] == positives[i];
    });
  }
  state.last_logit_widths.clear();
  for (std::size_t i = 0; i < batch.size(); ++i) state.last_logit_widths.push_back(1 + pool.size_of(i));
  auto loss = objective::info_nce(q, pos, pool, config.temperature);
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("loss is not finite");
  loss.backward();

  std::vector<Tensor<float>*> params;
  for (auto& [name, p] : model.parameters()) params.push_back(p);
  clip_grad_norm(params, config.grad_clip_norm);
  std::vector<std::span<const float>> grads;
  for (auto* p : params) grads.push_back(p->grad());
  optimizer_step(params, grads, state.optimizer, lr_at(state.step + 1, config), config.weight_decay);
  model.zero_grad();

  if (task == TaskType::kRetrieval) objective::update_cache(state.cache, pos);
  state.step += 1;
  return value;
}

std::vector<StepRecord> train_stage(Model& model, const StageConfig& config,
                                    const std::vector<TrainingExample>& examples,
                                    const data::Tokenizer& tokenizer, const data::PromptTemplate& tpl,
                                    std::uint64_t seed, TrainerState& state, const StepCallback& on_step,
                                    std::optional<std::size_t> max_new_steps) {
  config.validate();
  check_stage_tasks(config.stage, examples);
  const auto schedule = stage_schedule(config, examples, seed);
  std::vector<StepRecord> log;
  while (state.step < schedule.size()) {
    if (max_new_steps && log.size() == *max_new_steps) break;
    const std::size_t step = state.step + 1;
    StepRecord rec;
    rec.step = step;
    rec.stage = config.stage;
    rec.lr = lr_at(step, config);
    try {
      rec.loss = train_step(model, config, examples, schedule[state.step], tokenizer, tpl, state);
    } catch (const NumericError& e) {
      throw NumericError(std::string(stage_name(config.stage)) + " step " + std::to_string(step) + ": " + e.what());
    }
    log.push_back(rec);
    if (on_step) on_step(rec);
  }
  return log;
}

std::string manifest_hash(const nlohmann::json& run_manifest) {
  return json_util::hex64(json_util::fnv1a64(run_manifest.dump()));
}

void save_checkpoint(const fs::path& dir, const Model& model, const data::Tokenizer& tokenizer,
                     const TrainerState& state, const nlohmann::json& run_manifest) {
  fs::create_directories(dir);
  model::save_model(model, dir, {{"run_manifest_hash", manifest_hash(run_manifest)}});
  tokenizer.save(dir / "vocab.txt");
  model::write_json_file(dir / "run_manifest.json", run_manifest);

  std::vector<Tensor<float>> owned;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < state.optimizer.m.size(); ++i) {
    owned.push_back(Tensor<float>::from({state.optimizer.m[i].size()}, state.optimizer.m[i]));
    names.push_back("m." + std::to_string(i));
    owned.push_back(Tensor<float>::from({state.optimizer.v[i].size()}, state.optimizer.v[i]));
    names.push_back("v." + std::to_string(i));
  }
  std::size_t c = 0;
  for (const auto& b : state.cache.batches()) {
    owned.push_back(b);
    names.push_back("cache." + std::to_string(c++));
  }
  model::NamedTensors<float> named;
  for (std::size_t i = 0; i < owned.size(); ++i) named.emplace_back(names[i], &owned[i]);
  model::write_archive<float>(dir / "trainer", named,
                              {{"optimizer_step", state.optimizer.step},
                               {"stage_step", state.step},
                               {"moment_buffers", state.optimizer.m.size()},
                               {"cache_capacity", state.cache.capacity()},
                               {"cache_batches", state.cache.size()},
                               {"run_manifest_hash", manifest_hash(run_manifest)}});
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("no checkpoint at " + dir.string());
  Checkpoint ck{model::load_model<float>(dir), data::Tokenizer::load(dir / "vocab.txt"), {},
                model::read_json_file(dir / "run_manifest.json")};
  const auto model_manifest = model::read_json_file(dir / "manifest.json");
  const std::string hash = manifest_hash(ck.run_manifest);
  if (model_manifest.value("run_manifest_hash", std::string()) != hash) {
    throw CorruptionError(dir.string() + ": run_manifest.json does not match the hash recorded with the weights");
  }
  const auto trainer = model::read_archive(dir / "trainer");
  const auto& m = trainer.manifest;
  try {
    if (m.at("run_manifest_hash").get<std::string>() != hash) {
      throw CorruptionError(dir.string() + ": trainer state belongs to a different run");
    }
    ck.state.optimizer.step = m.at("optimizer_step").get<std::size_t>();
    ck.state.step = m.at("stage_step").get<std::size_t>();
    const auto n = m.at("moment_buffers").get<std::size_t>();
    for (std::size_t i = 0; i < n; ++i) {
      auto mt = trainer.tensor<float>("m." + std::to_string(i));
      auto vt = trainer.tensor<float>("v." + std::to_string(i));
      ck.state.optimizer.m.emplace_back(mt.data().begin(), mt.data().end());
      ck.state.optimizer.v.emplace_back(vt.data().begin(), vt.data().end());
    }
    ck.state.cache = objective::CrossBatchCache<float>(m.at("cache_capacity").get<std::size_t>());
    const auto nc = m.at("cache_batches").get<std::size_t>();
    for (std::size_t i = 0; i < nc; ++i) ck.state.cache.push(trainer.tensor<float>("cache." + std::to_string(i)));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(dir.string() + ": trainer manifest: " + e.what());
  } catch (const ArgumentError& e) {
    throw CorruptionError(dir.string() + ": trainer archive: " + e.what());
  }
  if (ck.state.optimizer.m.size() != 0 && ck.state.optimizer.m.size() != ck.model.parameters().size()) {
    throw CorruptionError(dir.string() + ": optimizer state does not match the model");
  }
  return ck;
}

}  // namespace cemb::pipeline

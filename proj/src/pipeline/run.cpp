#include "cemb/pipeline/run.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "cemb/data/corpus.hpp"
#include "cemb/errors.hpp"
#include "cemb/json_util.hpp"
#include "cemb/model/archive.hpp"

namespace cemb::pipeline {

namespace fs = std::filesystem;
using data::TrainingExample;

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) throw IoError(dir.string() + " is locked by another process (" + path_.string() + " exists)");
  std::fclose(f);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

const std::vector<TrainingExample>& RunData::of(Stage s) const {
  switch (s) {
    case Stage::kPretrain: return pretrain;
    case Stage::kFinetune: return finetune;
    case Stage::kMultitask: return multitask;
  }
  throw ConfigError("unknown stage");
}

namespace {

std::vector<TrainingExample>& stage_examples(RunData& d, Stage s) {
  return const_cast<std::vector<TrainingExample>&>(d.of(s));
}

std::string spec_tag(const data::CorpusSpec& spec, double holdout) {
  nlohmann::json j = spec;
  j["holdout_fraction"] = holdout;
  return json_util::hex64(json_util::fnv1a64(j.dump())).substr(0, 8);
}

eval::EvalTask held_out_task(const data::CorpusSpec& spec, const data::Corpus& corpus,
                             const std::vector<std::size_t>& train, const std::vector<std::size_t>& held,
                             const std::string& name) {
  const std::string instruction =
      spec.instruction.empty() ? data::default_instruction(spec.task_type) : spec.instruction;
  switch (spec.task_type) {
    case TaskType::kRetrieval: {
      eval::RetrievalTask t{name, instruction, {}, corpus.documents, {}};
      for (std::size_t i : held) {
        t.queries.push_back(corpus.examples[i].query);
        t.relevance.push_back({{corpus.source_document[i], 1.0}});
      }
      return t;
    }
    case TaskType::kClassification: {
      eval::ClassificationTask t;
      t.name = name;
      t.instruction = instruction;
      for (std::size_t i : train) {
        t.train_texts.push_back(corpus.examples[i].query);
        t.train_labels.push_back(corpus.examples[i].label.value());
      }
      for (std::size_t i : held) {
        t.test_texts.push_back(corpus.examples[i].query);
        t.test_labels.push_back(corpus.examples[i].label.value());
      }
      return t;
    }
    case TaskType::kClustering: {
      eval::ClusteringTask t;
      t.name = name;
      t.instruction = instruction;
      t.n_clusters = spec.n_classes;
      t.seed = spec.seed;
      for (std::size_t i : held) {
        t.texts.push_back(corpus.examples[i].query);
        t.labels.push_back(corpus.examples[i].label.value());
      }
      return t;
    }
    case TaskType::kSts: {
      eval::StsTask t;
      t.name = name;
      t.instruction = instruction;
      std::mt19937_64 rng(spec.seed ^ 0x5354535354535354ULL);
      std::uniform_int_distribution<std::size_t> pick(0, corpus.documents.size() - 1);
      for (std::size_t i : held) {
        t.pairs.emplace_back(corpus.examples[i].query, corpus.examples[i].positive);
        t.scores.push_back(1.0);
        std::size_t other = pick(rng);
        if (other == corpus.source_document[i]) other = (other + 1) % corpus.documents.size();
        t.pairs.emplace_back(corpus.examples[i].query, corpus.documents[other]);
        t.scores.push_back(0.0);
      }
      return t;
    }
  }
  throw ConfigError("unknown task type");
}

}  // namespace

RunData load_run_data(const RunConfig& config) {
  RunData out;
  std::set<std::string> task_names;
  for (Stage s : config.stages) {
    auto& dst = stage_examples(out, s);
    for (const auto& src : config.stage_data(s)) {
      if (!src.synthetic) {
        auto ex = data::load_jsonl(src.path);
        dst.insert(dst.end(), ex.begin(), ex.end());
        continue;
      }
      const auto& spec = *src.synthetic;
      const auto corpus = data::generate_corpus(spec);
      // Hold out whole source documents.
      std::vector<std::size_t> order(corpus.documents.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::mt19937_64 rng(spec.seed ^ 0x686f6c646f7574ULL);
      std::shuffle(order.begin(), order.end(), rng);
      const auto n_held = std::size_t(src.holdout_fraction * double(order.size()));
      const std::set<std::size_t> held_docs(order.begin(), order.begin() + std::ptrdiff_t(n_held));
      std::vector<std::size_t> held, train;
      for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
        (held_docs.count(corpus.source_document[i]) ? held : train).push_back(i);
      }
      for (std::size_t i : train) dst.push_back(corpus.examples[i]);
      if (held.empty()) continue;
      const std::string name =
          std::string("synthetic-") + task_type_name(spec.task_type) + "-" + spec_tag(spec, src.holdout_fraction);
      if (!task_names.insert(name).second) continue;
      out.eval_tasks.push_back(held_out_task(spec, corpus, train, held, name));
    }
  }
  for (const auto& path : config.eval_tasks) {
    auto tasks = eval::load_tasks(path);
    out.eval_tasks.insert(out.eval_tasks.end(), tasks.begin(), tasks.end());
  }
  return out;
}

data::Tokenizer build_run_tokenizer(const RunData& d) {
  std::vector<std::string> texts;
  for (const auto* set : {&d.pretrain, &d.finetune, &d.multitask}) {
    for (const auto& ex : *set) {
      texts.push_back(ex.instruction);
      texts.push_back(ex.query);
      texts.push_back(ex.positive);
      texts.insert(texts.end(), ex.hard_negatives.begin(), ex.hard_negatives.end());
    }
  }
  for (const auto& task : d.eval_tasks) {
    std::visit(
        [&](const auto& t) {
          using T = std::decay_t<decltype(t)>;
          texts.push_back(t.instruction);
          if constexpr (std::is_same_v<T, eval::RetrievalTask>) {
            texts.insert(texts.end(), t.queries.begin(), t.queries.end());
            texts.insert(texts.end(), t.documents.begin(), t.documents.end());
          } else if constexpr (std::is_same_v<T, eval::ClassificationTask>) {
            texts.insert(texts.end(), t.train_texts.begin(), t.train_texts.end());
            texts.insert(texts.end(), t.test_texts.begin(), t.test_texts.end());
          } else if constexpr (std::is_same_v<T, eval::ClusteringTask>) {
            texts.insert(texts.end(), t.texts.begin(), t.texts.end());
          } else {
            for (const auto& [a, b] : t.pairs) {
              texts.push_back(a);
              texts.push_back(b);
            }
          }
        },
        task);
  }
  for (auto tpl : {data::PromptTemplate::prefix(), data::PromptTemplate::instruct()}) {
    texts.push_back(tpl.render_query("x", "x"));
    texts.push_back(tpl.render_document("x"));
  }
  return data::Tokenizer::build(texts);
}

namespace {

std::uint64_t stage_seed(std::uint64_t seed, Stage s) {
  return json_util::fnv1a64(std::string("stage:") + stage_name(s), seed * 0x9e3779b97f4a7c15ULL + 1);
}

nlohmann::json source_descriptor(const DataSource& s) {
  if (!s.synthetic) return {{"path", s.path}};
  return {{"synthetic", *s.synthetic}, {"holdout_fraction", s.holdout_fraction}};
}

std::string stage_checkpoint_name(Stage s) { return stage_name(s); }

}  // namespace

RunResult run_pipeline(const RunConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const fs::path out_dir = config.output_dir;
  DirectoryLock lock(out_dir);

  const RunData run_data = load_run_data(config);
  const data::Tokenizer tokenizer = build_run_tokenizer(run_data);
  model::ModelConfig mcfg = config.model;
  if (mcfg.vocab_size == 0) mcfg.vocab_size = tokenizer.size();
  if (mcfg.vocab_size < tokenizer.size()) {
    throw ConfigError("model vocab_size " + std::to_string(mcfg.vocab_size) + " is smaller than the " +
                      std::to_string(tokenizer.size()) + " tokens the data needs");
  }
  mcfg.validate();
  Model model = model::init_model<float>(mcfg, config.seed);
  if (config.prune_fraction > 0) model = model::prune_layers(model, config.prune_fraction);
  const data::PromptTemplate tpl = data::PromptTemplate::of(config.prompt_strategy);

  nlohmann::json manifest;
  manifest["config"] = config;
  manifest["model"] = model.config;
  manifest["parameter_count"] = model::count_parameters(model);
  manifest["tokenizer_size"] = tokenizer.size();
  manifest["output_dir"] = config.output_dir;
  manifest["metric_log"] = "metrics.jsonl";
  nlohmann::json stages = nlohmann::json::array(), seeds = {{"run", config.seed}}, datasets;
  for (Stage s : config.stages) {
    stages.push_back(stage_name(s));
    seeds[stage_name(s)] = stage_seed(config.seed, s);
    nlohmann::json srcs = nlohmann::json::array();
    for (const auto& src : config.stage_data(s)) srcs.push_back(source_descriptor(src));
    datasets[stage_name(s)] = srcs;
    datasets[std::string(stage_name(s)) + "_examples"] = run_data.of(s).size();
  }
  datasets["eval_tasks"] = config.eval_tasks;
  manifest["stages"] = stages;
  manifest["seeds"] = seeds;
  manifest["datasets"] = datasets;
  model::write_json_file(out_dir / "run_manifest.json", manifest);

  RunResult result{model, tokenizer, manifest, {}, std::nullopt, {}, 0};
  if (config.eval_initial) {
    result.initial_report = eval::evaluate(result.model, tokenizer, tpl, run_data.eval_tasks);
  }

  std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + (out_dir / "metrics.jsonl").string());
  TrainerState state;
  for (Stage s : config.stages) {
    const auto& sc = config.stage_config(s);
    const std::uint64_t seed = stage_seed(config.seed, s);
    auto prepared = prepare_stage_data(result.model, tokenizer, tpl, sc, run_data.of(s), seed);
    state = fresh_trainer_state(sc);
    const auto log_step = [&](const StepRecord& r) {
      metrics << nlohmann::json(r).dump() << '\n';
      metrics.flush();
      result.metric_log.push_back(r);
    };
    if (sc.remine_each_epoch && sc.epochs && *sc.epochs > 1 && sc.hard_negatives > 0) {
      const std::size_t per_epoch = stage_schedule(sc, prepared, seed).size() / *sc.epochs;
      for (std::size_t e = 0; e < *sc.epochs; ++e) {
        if (e > 0) prepared = prepare_stage_data(result.model, tokenizer, tpl, sc, run_data.of(s), seed + e);
        train_stage(result.model, sc, prepared, tokenizer, tpl, seed, state, log_step, per_epoch);
      }
    } else {
      train_stage(result.model, sc, prepared, tokenizer, tpl, seed, state, log_step);
    }
    save_checkpoint(out_dir / "checkpoints" / stage_checkpoint_name(s), result.model, tokenizer, state, manifest);
  }
  save_checkpoint(out_dir / "checkpoints" / "final", result.model, tokenizer, state, manifest);

  result.final_report = eval::evaluate(result.model, tokenizer, tpl, run_data.eval_tasks);
  nlohmann::json report = {{"final", result.final_report}};
  if (result.initial_report) report["initial"] = *result.initial_report;
  model::write_json_file(out_dir / "eval_report.json", report);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

const char* ablation_variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::kFullVsPruned: return "full_vs_pruned";
    case AblationVariant::kPrefixVsInstruct: return "prefix_vs_instruct";
    case AblationVariant::kWithVsWithoutPretrain: return "with_vs_without_pretrain";
  }
  throw ConfigError("unknown ablation variant");
}

AblationVariant parse_ablation_variant(const std::string& s) {
  for (auto v : {AblationVariant::kFullVsPruned, AblationVariant::kPrefixVsInstruct,
                 AblationVariant::kWithVsWithoutPretrain}) {
    if (s == ablation_variant_name(v)) return v;
  }
  throw ConfigError("unknown ablation variant '" + s + "'");
}

std::pair<AblationArm, AblationArm> ablation_arms(AblationVariant variant, const RunConfig& base) {
  AblationArm a{"", base}, b{"", base};
  switch (variant) {
    case AblationVariant::kFullVsPruned:
      a.name = "full";
      a.config.prune_fraction = 0.0;
      b.name = "pruned";
      b.config.prune_fraction = 0.25;
      break;
    case AblationVariant::kPrefixVsInstruct:
      a.name = "prefix";
      a.config.prompt_strategy = data::PromptStrategy::kPrefix;
      b.name = "instruct";
      b.config.prompt_strategy = data::PromptStrategy::kInstruct;
      break;
    case AblationVariant::kWithVsWithoutPretrain: {
      a.name = "with_pretrain";
      b.name = "without_pretrain";
      std::vector<Stage> with{Stage::kPretrain}, without;
      for (Stage s : base.stages) {
        if (s == Stage::kPretrain) continue;
        with.push_back(s);
        without.push_back(s);
      }
      a.config.stages = with;
      b.config.stages = without;
      break;
    }
  }
  a.config.output_dir = (fs::path(base.output_dir) / a.name).string();
  b.config.output_dir = (fs::path(base.output_dir) / b.name).string();
  return {a, b};
}

nlohmann::json run_ablation(AblationVariant variant, const RunConfig& base) {
  auto [a, b] = ablation_arms(variant, base);
  a.config.validate();
  b.config.validate();
  nlohmann::json ja = a.config, jb = b.config;
  ja.erase("output_dir");
  jb.erase("output_dir");

  nlohmann::json report;
  report["variant"] = ablation_variant_name(variant);
  report["manifest_diff"] = json_leaf_diff(ja, jb);
  report["arms"] = nlohmann::json::array();
  for (const auto* arm : {&a, &b}) {
    const auto r = run_pipeline(arm->config);
    nlohmann::json j;
    j["name"] = arm->name;
    j["output_dir"] = arm->config.output_dir;
    j["parameter_count"] = model::count_parameters(r.model);
    j["n_layers"] = r.model.config.n_layers;
    j["stages"] = r.manifest.at("stages");
    j["steps"] = r.metric_log.size();
    j["final_loss"] = r.metric_log.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.metric_log.back().loss);
    j["wall_seconds"] = r.wall_seconds;
    j["eval"] = r.final_report;
    report["arms"].push_back(j);
  }
  model::write_json_file(fs::path(base.output_dir) / (std::string("ablation_") + ablation_variant_name(variant) + ".json"),
                         report);
  return report;
}

data::PromptTemplate checkpoint_template(const Checkpoint& checkpoint) {
  const auto& cfg = checkpoint.run_manifest.at("config");
  return data::PromptTemplate::of(data::parse_prompt_strategy(cfg.at("prompt_strategy").get<std::string>()));
}

}  // namespace cemb::pipeline

#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "cemb/data/corpus.hpp"
#include "cemb/errors.hpp"
#include "cemb/eval/evaluate.hpp"
#include "cemb/model/archive.hpp"
#include "cemb/pipeline/run.hpp"

namespace cemb::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  std::string stages;
  double fraction = 0.25;
  std::string out;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string input;
  std::string tasks;
  std::string variant;
};

nlohmann::json read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

// Parsed config re-serialized with every field, flags and overrides applied,
// then parsed again.
pipeline::RunConfig build_run_config(const Options& o, const CLI::App& cmd) {
  nlohmann::json full = read_config(o.config).get<pipeline::RunConfig>();
  if (cmd.count("--seed")) full["seed"] = o.seed;
  if (cmd.count("--out")) full["output_dir"] = o.out;
  if (cmd.count("--stages")) {
    nlohmann::json names = nlohmann::json::array();
    for (auto s : pipeline::parse_stage_list(o.stages)) names.push_back(pipeline::stage_name(s));
    full["stages"] = names;
  }
  for (const auto& kv : o.overrides) pipeline::apply_override(full, kv);
  auto cfg = full.get<pipeline::RunConfig>();
  cfg.validate();
  return cfg;
}

int gen_data(const Options& o, const CLI::App& cmd, std::ostream& out) {
  nlohmann::json full = read_config(o.config).get<data::CorpusSpec>();
  if (cmd.count("--seed")) full["seed"] = o.seed;
  for (const auto& kv : o.overrides) pipeline::apply_override(full, kv);
  const auto spec = full.get<data::CorpusSpec>();
  const auto corpus = data::generate_corpus(spec);
  const fs::path path = o.out;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  data::write_jsonl(corpus.examples, path);
  const nlohmann::json manifest = {{"command", "gen-data"},
                                   {"spec", spec},
                                   {"output", path.string()},
                                   {"examples", corpus.examples.size()},
                                   {"documents", corpus.documents.size()}};
  model::write_json_file(path.string() + ".manifest.json", manifest);
  out << manifest.dump() << '\n';
  return 0;
}

int train(const Options& o, const CLI::App& cmd, std::ostream& out, std::ostream& err) {
  const auto cfg = build_run_config(o, cmd);
  err << "training " << cfg.stages.size() << " stage(s) into " << cfg.output_dir << '\n';
  const auto r = pipeline::run_pipeline(cfg);
  nlohmann::json summary = {{"output_dir", cfg.output_dir},
                            {"steps", r.metric_log.size()},
                            {"parameter_count", model::count_parameters(r.model)},
                            {"eval_average", r.final_report.average},
                            {"wall_seconds", r.wall_seconds}};
  summary["final_loss"] = r.metric_log.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.metric_log.back().loss);
  out << summary.dump() << '\n';
  return 0;
}

std::vector<std::string> read_embed_input(const std::string& path, const data::PromptTemplate& tpl) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> texts;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.is_string()) {
        texts.push_back(tpl.render_document(j.get<std::string>()));
        continue;
      }
      for (const auto& item : j.items()) {
        if (item.key() != "text" && item.key() != "instruction") {
          throw ParseError("unknown key '" + item.key() + "'");
        }
      }
      const auto text = j.at("text").get<std::string>();
      if (j.contains("instruction")) {
        texts.push_back(tpl.render_query(j.at("instruction").get<std::string>(), text));
      } else {
        texts.push_back(tpl.render_document(text));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(n) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return texts;
}

int embed(const Options& o, std::ostream& out) {
  const auto ck = pipeline::load_checkpoint(o.checkpoint);
  const auto tpl = pipeline::checkpoint_template(ck);
  const auto texts = read_embed_input(o.input, tpl);
  if (texts.empty()) throw ArgumentError(o.input + " holds no texts");
  pipeline::DirectoryLock lock(o.out);
  const auto e = eval::embed_texts(ck.model, ck.tokenizer, texts);
  const nlohmann::json extra = {{"command", "embed"},
                                {"checkpoint", o.checkpoint},
                                {"input", o.input},
                                {"rows", e.dim(0)},
                                {"run_manifest_hash", pipeline::manifest_hash(ck.run_manifest)}};
  model::write_archive<float>(o.out, {{"embeddings", &e}}, extra);
  out << extra.dump() << '\n';
  return 0;
}

int prune(const Options& o, std::ostream& out) {
  auto ck = pipeline::load_checkpoint(o.checkpoint);
  const auto before = ck.model.config.n_layers;
  auto pruned = model::prune_layers(ck.model, o.fraction);
  auto manifest = ck.run_manifest;
  manifest["pruned"] = {{"from", o.checkpoint},
                        {"fraction", o.fraction},
                        {"n_layers_before", before},
                        {"n_layers_after", pruned.config.n_layers}};
  pipeline::DirectoryLock lock(o.out);
  pipeline::save_checkpoint(o.out, pruned, ck.tokenizer, pipeline::TrainerState{}, manifest);
  out << nlohmann::json({{"output", o.out},
                         {"n_layers", pruned.config.n_layers},
                         {"parameter_count", model::count_parameters(pruned)}})
             .dump()
      << '\n';
  return 0;
}

int evaluate(const Options& o, const CLI::App& cmd, std::ostream& out) {
  const auto ck = pipeline::load_checkpoint(o.checkpoint);
  const auto tasks = eval::load_tasks(o.tasks);
  const auto report = eval::evaluate(ck.model, ck.tokenizer, pipeline::checkpoint_template(ck), tasks);
  nlohmann::json j = {{"checkpoint", o.checkpoint}, {"tasks_file", o.tasks}, {"report", report}};
  if (cmd.count("--out")) write_text(o.out, j.dump(2) + "\n");
  out << j.dump() << '\n';
  return 0;
}

int ablate(const Options& o, const CLI::App& cmd, std::ostream& out, std::ostream& err) {
  const auto variant = pipeline::parse_ablation_variant(o.variant);
  const auto cfg = build_run_config(o, cmd);
  err << "ablation " << o.variant << " under " << cfg.output_dir << '\n';
  const auto report = pipeline::run_ablation(variant, cfg);
  out << report.dump() << '\n';
  return 0;
}

int inspect(const Options& o, std::ostream& out) {
  const fs::path dir = o.checkpoint;
  nlohmann::json j;
  if (fs::exists(dir / "config.json")) {
    const auto ck = pipeline::load_checkpoint(dir);
    j["kind"] = "checkpoint";
    j["model"] = ck.model.config;
    j["parameter_count"] = model::count_parameters(ck.model);
    j["tokenizer_size"] = ck.tokenizer.size();
    j["run_manifest_hash"] = pipeline::manifest_hash(ck.run_manifest);
    j["stages"] = ck.run_manifest.value("stages", nlohmann::json::array());
    j["optimizer_step"] = ck.state.optimizer.step;
    j["stage_step"] = ck.state.step;
  } else {
    const auto a = model::read_archive(dir);
    j["kind"] = "archive";
    j["tensors"] = nlohmann::json::array();
    for (const auto& e : a.entries) {
      j["tensors"].push_back({{"name", e.name}, {"shape", e.shape}, {"dtype", numerics::dtype_name(e.dtype)}});
    }
    j["weights_hash"] = a.manifest.value("weights_hash", std::string());
  }
  out << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive text embedding trainer", "cemb"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic JSONL corpus from a corpus spec");
  gen->add_option("--config", o.config, "Corpus spec JSON")->required();
  gen->add_option("--out", o.out, "Output JSONL path")->required();
  gen->add_option("--seed", o.seed, "Override the spec seed");
  gen->add_option("--override", o.overrides, "key=value, repeatable");

  auto* tr = app.add_subcommand("train", "Run the training pipeline");
  tr->add_option("--config", o.config, "Run config JSON")->required();
  tr->add_option("--seed", o.seed, "Run seed");
  tr->add_option("--stages", o.stages, "Comma-separated stages, e.g. finetune,multitask");
  tr->add_option("--out", o.out, "Output directory");
  tr->add_option("--override", o.overrides, "key=value, repeatable");

  auto* em = app.add_subcommand("embed", "Embed texts with a checkpoint");
  em->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
  em->add_option("--input", o.input, "JSONL of {\"text\", \"instruction\"?} objects")->required();
  em->add_option("--out", o.out, "Output archive directory")->required();

  auto* pr = app.add_subcommand("prune", "Drop the deepest layers of a checkpoint");
  pr->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
  pr->add_option("--fraction", o.fraction, "Fraction of layers to remove")->required();
  pr->add_option("--out", o.out, "Output checkpoint directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a task file");
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
  ev->add_option("--tasks", o.tasks, "Task JSONL")->required();
  ev->add_option("--out", o.out, "Report JSON path");

  auto* ab = app.add_subcommand("ablate", "Train and evaluate the two arms of an ablation");
  ab->add_option("--variant", o.variant, "full_vs_pruned, prefix_vs_instruct or with_vs_without_pretrain")
      ->required();
  ab->add_option("--config", o.config, "Base run config JSON")->required();
  ab->add_option("--seed", o.seed, "Run seed");
  ab->add_option("--stages", o.stages, "Comma-separated stages");
  ab->add_option("--out", o.out, "Output directory");
  ab->add_option("--override", o.overrides, "key=value, repeatable");

  auto* in = app.add_subcommand("inspect", "Summarize a checkpoint or tensor archive");
  in->add_option("--checkpoint", o.checkpoint, "Checkpoint or archive directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) return gen_data(o, *gen, out);
    if (*tr) return train(o, *tr, out, err);
    if (*em) return embed(o, out);
    if (*pr) return prune(o, out);
    if (*ev) return evaluate(o, *ev, out);
    if (*ab) return ablate(o, *ab, out, err);
    if (*in) return inspect(o, out);
  } catch (const Error& e) {
    err << "cemb: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "cemb: unexpected error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace cemb::cli

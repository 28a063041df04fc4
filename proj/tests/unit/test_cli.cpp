#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cemb/data/corpus.hpp"
#include "cemb/errors.hpp"
#include "cemb/model/archive.hpp"
#include "cemb/pipeline/run.hpp"
#include "cli.hpp"
#include "doctest.h"

using namespace cemb;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cemb_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

data::CorpusSpec small_spec() {
  data::CorpusSpec s;
  s.seed = 5;
  s.n_documents = 60;
  s.vocab_size = 48;
  s.doc_length_min = 5;
  s.doc_length_max = 9;
  return s;
}

pipeline::RunConfig small_run(const fs::path& out) {
  pipeline::RunConfig c;
  c.model.d_model = c.model.d_latent = c.model.embedding_dim = 16;
  c.model.n_layers = 2;
  c.model.n_heads = 2;
  c.model.d_ff = 32;
  c.model.n_latents = 4;
  c.model.max_seq_len = 64;
  c.seed = 4;
  c.output_dir = out.string();
  c.stages = {pipeline::Stage::kFinetune};
  pipeline::DataSource src;
  src.synthetic = small_spec();
  src.holdout_fraction = 0.1;
  c.pretrain_data = c.finetune_data = {src};
  auto labeled = small_spec();
  labeled.task_type = TaskType::kClustering;
  labeled.n_classes = 3;
  pipeline::DataSource lsrc;
  lsrc.synthetic = labeled;
  lsrc.holdout_fraction = 0.2;
  c.multitask_data = {src, lsrc};
  for (auto& s : c.stage_configs) {
    s.batch_size = 8;
    s.hard_negatives = s.stage == pipeline::Stage::kPretrain ? 0 : 3;
    s.warmup_steps = 2;
    if (s.epochs) s.epochs = 1;
    else s.max_steps = 3;
  }
  return c;
}

fs::path write_run_config(const fs::path& dir, const pipeline::RunConfig& c) {
  const auto p = dir / "run.json";
  write(p, nlohmann::json(c).dump(2));
  return p;
}

}  // namespace

TEST_CASE("usage errors exit nonzero") {
  CHECK(run_cli({}).code != 0);
  CHECK(run_cli({"frobnicate"}).code != 0);
  auto r = run_cli({"train"});
  CHECK(r.code != 0);
  CHECK(r.err.find("--config") != std::string::npos);
  CHECK(run_cli({"--help"}).code == 0);
}

TEST_CASE("gen-data") {
  const auto dir = scratch("gen");
  write(dir / "spec.json", nlohmann::json(small_spec()).dump());
  auto a = run_cli({"gen-data", "--config", (dir / "spec.json").string(), "--out", (dir / "a.jsonl").string()});
  auto b = run_cli({"gen-data", "--config", (dir / "spec.json").string(), "--out", (dir / "b.jsonl").string()});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
  CHECK(fs::exists(dir / "a.jsonl.manifest.json"));
  const auto loaded = data::load_jsonl(dir / "a.jsonl");
  CHECK(loaded == data::generate_corpus(small_spec()).examples);

  auto c = run_cli({"gen-data", "--config", (dir / "spec.json").string(), "--out", (dir / "c.jsonl").string(), "--seed",
                "9"});
  REQUIRE(c.code == 0);
  CHECK(slurp(dir / "c.jsonl") != slurp(dir / "a.jsonl"));

  auto bad = small_spec();
  bad.vocab_size = 4;
  write(dir / "bad.json", nlohmann::json(bad).dump());
  auto r = run_cli({"gen-data", "--config", (dir / "bad.json").string(), "--out", (dir / "x.jsonl").string()});
  CHECK(r.code != 0);
  CHECK(r.err.find("spec error") != std::string::npos);
  CHECK(r.out.empty());

  r = run_cli({"gen-data", "--config", (dir / "spec.json").string(), "--out", (dir / "x.jsonl").string(), "--override",
           "n_docs=3"});
  CHECK(r.code != 0);
  fs::remove_all(dir);
}

TEST_CASE("train, embed, prune, eval, inspect") {
  const auto dir = scratch("train");
  auto cfg = small_run(dir / "run");
  const auto cfg_path = write_run_config(dir, cfg);

  SUBCASE("zero-step smoke config") {
    auto r = run_cli({"train", "--config", cfg_path.string(), "--override", "stage_configs.finetune.epochs=0"});
    CHECK(r.code == 0);
    CHECK(nlohmann::json::parse(r.out).at("steps") == 0);
    CHECK(slurp(dir / "run" / "metrics.jsonl").empty());
    CHECK(fs::exists(dir / "run" / "checkpoints" / "final" / "weights.bin"));
  }

  SUBCASE("stages flag skips pretraining and reruns reproduce the log") {
    auto r = run_cli({"train", "--config", cfg_path.string(), "--stages", "finetune,multitask"});
    REQUIRE(r.code == 0);
    const auto manifest = model::read_json_file(dir / "run" / "run_manifest.json");
    CHECK(manifest.at("stages") == nlohmann::json({"finetune", "multitask"}));
    const auto first = slurp(dir / "run" / "metrics.jsonl");
    CHECK(first.find("pretrain") == std::string::npos);
    CHECK(first.find("multitask") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "run" / "checkpoints" / "pretrain"));
    r = run_cli({"train", "--config", cfg_path.string(), "--stages", "finetune,multitask", "--out",
             (dir / "again").string()});
    REQUIRE(r.code == 0);
    CHECK(slurp(dir / "again" / "metrics.jsonl") == first);
  }

  SUBCASE("config errors") {
    auto r = run_cli({"train", "--config", cfg_path.string(), "--override", "stage_configs.finetune.lr=1"});
    CHECK(r.code != 0);
    CHECK(r.err.find("config error") != std::string::npos);
    auto j = nlohmann::json(cfg);
    j["colour"] = "red";
    write(dir / "bad.json", j.dump());
    CHECK(run_cli({"train", "--config", (dir / "bad.json").string()}).code != 0);
    CHECK(run_cli({"train", "--config", (dir / "missing.json").string()}).code != 0);
    CHECK(run_cli({"train", "--config", cfg_path.string(), "--stages", "finetune,stage9"}).code != 0);
  }

  SUBCASE("checkpoint commands") {
    REQUIRE(run_cli({"train", "--config", cfg_path.string()}).code == 0);
    const auto ck_dir = dir / "run" / "checkpoints" / "final";
    const auto ck = pipeline::load_checkpoint(ck_dir);
    const auto tpl = pipeline::checkpoint_template(ck);

    const auto corpus = data::generate_corpus(small_spec());
    std::string lines;
    std::vector<std::string> rendered;
    for (std::size_t i = 0; i < 10; ++i) {
      if (i % 2) {
        lines += nlohmann::json({{"text", corpus.documents[i]}}).dump() + "\n";
        rendered.push_back(tpl.render_document(corpus.documents[i]));
      } else {
        lines += nlohmann::json({{"text", corpus.examples[i].query}, {"instruction", "find it"}}).dump() + "\n";
        rendered.push_back(tpl.render_query("find it", corpus.examples[i].query));
      }
    }
    write(dir / "texts.jsonl", lines);
    auto r = run_cli({"embed", "--checkpoint", ck_dir.string(), "--input", (dir / "texts.jsonl").string(), "--out",
                  (dir / "emb").string()});
    REQUIRE(r.code == 0);
    const auto archive = model::read_archive(dir / "emb");
    const auto e = archive.tensor<float>("embeddings");
    CHECK(e.dim(0) == 10);
    for (std::size_t i = 0; i < 10; ++i) {
      double n = 0;
      for (float x : e.row(i)) n += double(x) * x;
      CHECK(std::abs(std::sqrt(n) - 1) < 1e-5);
    }
    const auto direct = model::embed(ck.model, ck.tokenizer.encode_batch(rendered));
    CHECK(std::equal(e.data().begin(), e.data().end(), direct.data().begin(), direct.data().end()));

    write(dir / "bad_texts.jsonl", "{\"txt\": \"a\"}\n");
    CHECK(run_cli({"embed", "--checkpoint", ck_dir.string(), "--input", (dir / "bad_texts.jsonl").string(), "--out",
               (dir / "emb2").string()})
              .code != 0);

    // eval against the in-process report
    eval::RetrievalTask t{"cli-retrieval", "find it", {}, corpus.documents, {}};
    for (std::size_t i = 0; i < 12; ++i) {
      t.queries.push_back(corpus.examples[i].query);
      t.relevance.push_back({{i, 1.0}});
    }
    eval::ClusteringTask cl;
    cl.name = "cli-clusters";
    cl.instruction = "group";
    cl.n_clusters = 2;
    for (std::size_t i = 0; i < 12; ++i) {
      cl.texts.push_back(corpus.documents[i]);
      cl.labels.push_back(i < 6 ? "a" : "b");
    }
    eval::write_tasks({t, cl}, dir / "tasks.jsonl");
    r = run_cli({"eval", "--checkpoint", ck_dir.string(), "--tasks", (dir / "tasks.jsonl").string(), "--out",
             (dir / "report.json").string()});
    REQUIRE(r.code == 0);
    const auto rep = nlohmann::json::parse(r.out).at("report");
    CHECK(rep == model::read_json_file(dir / "report.json").at("report"));
    CHECK(rep.at("tasks").size() == 2);
    for (const auto& task : rep.at("tasks")) {
      CHECK(task.contains("name"));
      CHECK(task.contains("category"));
      CHECK(task.at("main_score").is_number());
      CHECK(task.at("metrics").is_object());
    }
    CHECK(rep.at("category_means").contains("retrieval"));
    CHECK(rep.at("category_means").contains("clustering"));
    const nlohmann::json in_process = eval::evaluate(ck.model, ck.tokenizer, tpl, {t, cl});
    CHECK(rep == in_process);

    r = run_cli({"inspect", "--checkpoint", ck_dir.string()});
    REQUIRE(r.code == 0);
    const auto info = nlohmann::json::parse(r.out);
    CHECK(info.at("kind") == "checkpoint");
    CHECK(info.at("parameter_count") == model::count_parameters(ck.model));
    r = run_cli({"inspect", "--checkpoint", (dir / "emb").string()});
    REQUIRE(r.code == 0);
    CHECK(nlohmann::json::parse(r.out).at("tensors")[0].at("name") == "embeddings");

    r = run_cli({"prune", "--checkpoint", ck_dir.string(), "--fraction", "1.0", "--out", (dir / "p1").string()});
    CHECK(r.code != 0);
    CHECK(!r.err.empty());
    r = run_cli({"prune", "--checkpoint", ck_dir.string(), "--fraction", "0.5", "--out", (dir / "p").string()});
    REQUIRE(r.code == 0);
    const auto pruned = pipeline::load_checkpoint(dir / "p");
    CHECK(pruned.model.config.n_layers == 1);
    r = run_cli({"embed", "--checkpoint", (dir / "p").string(), "--input", (dir / "texts.jsonl").string(), "--out",
             (dir / "pemb").string()});
    CHECK(r.code == 0);
  }
  fs::remove_all(dir);
}

TEST_CASE("prune a 36-layer checkpoint to 27") {
  const auto dir = scratch("prune36");
  model::ModelConfig m;
  m.d_model = m.d_latent = m.embedding_dim = 8;
  m.n_heads = 2;
  m.d_ff = 8;
  m.n_latents = 2;
  m.n_layers = 36;
  m.max_seq_len = 16;
  auto tok = data::Tokenizer::build({"alpha beta gamma"});
  m.vocab_size = tok.size();
  const auto model = model::init_model<float>(m, 3);
  pipeline::save_checkpoint(dir / "ck", model, tok, pipeline::TrainerState{}, {{"config", {{"prompt_strategy", "instruct"}}}});
  auto r = run_cli({"prune", "--checkpoint", (dir / "ck").string(), "--fraction", "0.25", "--out", (dir / "out").string()});
  REQUIRE(r.code == 0);
  const auto ck = pipeline::load_checkpoint(dir / "out");
  CHECK(ck.model.config.n_layers == 27);
  CHECK(ck.run_manifest.at("pruned").at("n_layers_before") == 36);
  fs::remove_all(dir);
}

TEST_CASE("ablate writes exactly two arms") {
  const auto dir = scratch("ablate");
  const auto cfg_path = write_run_config(dir, small_run(dir / "abl"));
  auto r = run_cli({"ablate", "--variant", "prefix_vs_instruct", "--config", cfg_path.string()});
  REQUIRE(r.code == 0);
  const auto report = model::read_json_file(dir / "abl" / "ablation_prefix_vs_instruct.json");
  CHECK(report == nlohmann::json::parse(r.out));
  REQUIRE(report.at("arms").size() == 2);
  CHECK(report.at("arms")[0].at("name") == "prefix");
  CHECK(report.at("arms")[1].at("name") == "instruct");
  CHECK(report.at("manifest_diff") == nlohmann::json({"prompt_strategy"}));
  CHECK(run_cli({"ablate", "--variant", "nope", "--config", cfg_path.string()}).code != 0);
  fs::remove_all(dir);
}

#include "cemb/eval/evaluate.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "cemb/errors.hpp"
#include "cemb/eval/metrics.hpp"
#include "cemb/json_util.hpp"
#include "cemb/numerics/ops.hpp"

namespace cemb::eval {

namespace {

template <class... F>
struct Overload : F... {
  using F::operator()...;
};
template <class... F>
Overload(F...) -> Overload<F...>;

std::vector<std::string> render_queries(const data::PromptTemplate& tpl, const std::string& instruction,
                                        const std::vector<std::string>& texts) {
  std::vector<std::string> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(tpl.render_query(instruction, t));
  return out;
}

Tensor<float> embed_checked(const Embedder& embedder, const std::vector<std::string>& texts) {
  Tensor<float> e = embedder(texts);
  if (e.rows() != texts.size()) {
    throw ContractError("embedder returned " + std::to_string(e.rows()) + " rows for " +
                        std::to_string(texts.size()) + " texts");
  }
  return e;
}

}  // namespace

const char* task_category(const EvalTask& task) {
  return std::visit(Overload{[](const RetrievalTask&) { return "retrieval"; },
                             [](const ClassificationTask&) { return "classification"; },
                             [](const ClusteringTask&) { return "clustering"; },
                             [](const StsTask&) { return "sts"; }},
                    task);
}

const std::string& task_name(const EvalTask& task) {
  return std::visit([](const auto& t) -> const std::string& { return t.name; }, task);
}

void validate_task(const EvalTask& task) {
  const std::string where = std::string(task_category(task)) + " task '" + task_name(task) + "': ";
  std::visit(Overload{
                 [&](const RetrievalTask& t) {
                   if (t.relevance.size() != t.queries.size()) throw ArgumentError(where + "one relevance map per query required");
                   if (t.documents.empty()) throw ArgumentError(where + "no documents");
                   for (const auto& rel : t.relevance) {
                     for (const auto& [id, g] : rel) {
                       if (id >= t.documents.size()) throw ArgumentError(where + "relevant id " + std::to_string(id) + " does not exist");
                       if (g < 0) throw ArgumentError(where + "negative relevance grade");
                     }
                   }
                 },
                 [&](const ClassificationTask& t) {
                   if (t.train_texts.size() != t.train_labels.size() || t.test_texts.size() != t.test_labels.size()) {
                     throw ArgumentError(where + "texts and labels differ in length");
                   }
                   if (t.train_texts.empty()) throw ArgumentError(where + "empty training split");
                   for (const auto& l : t.train_labels) if (l.empty()) throw ArgumentError(where + "empty label");
                   for (const auto& l : t.test_labels) if (l.empty()) throw ArgumentError(where + "empty label");
                   if (t.k == 0) throw ArgumentError(where + "k must be positive");
                 },
                 [&](const ClusteringTask& t) {
                   if (t.texts.size() != t.labels.size()) throw ArgumentError(where + "texts and labels differ in length");
                   for (const auto& l : t.labels) if (l.empty()) throw ArgumentError(where + "empty label");
                   if (t.n_clusters == 0 || t.n_clusters > t.texts.size()) throw ArgumentError(where + "bad n_clusters");
                 },
                 [&](const StsTask& t) {
                   if (t.pairs.size() != t.scores.size()) throw ArgumentError(where + "pairs and scores differ in length");
                   if (t.pairs.size() < 2) throw ArgumentError(where + "need at least two pairs");
                 }},
             task);
}

void to_json(nlohmann::json& j, const EvalTask& task) {
  std::visit(Overload{[&](const RetrievalTask& t) {
                        nlohmann::json rel = nlohmann::json::array();
                        for (const auto& m : t.relevance) {
                          nlohmann::json q = nlohmann::json::array();
                          for (const auto& [id, g] : m) q.push_back({{"doc", id}, {"grade", g}});
                          rel.push_back(q);
                        }
                        j = {{"queries", t.queries}, {"documents", t.documents}, {"relevance", rel}};
                      },
                      [&](const ClassificationTask& t) {
                        j = {{"train_texts", t.train_texts}, {"train_labels", t.train_labels},
                             {"test_texts", t.test_texts},   {"test_labels", t.test_labels},
                             {"k", t.k}};
                      },
                      [&](const ClusteringTask& t) {
                        j = {{"texts", t.texts}, {"labels", t.labels}, {"n_clusters", t.n_clusters}, {"seed", t.seed}};
                      },
                      [&](const StsTask& t) {
                        nlohmann::json pairs = nlohmann::json::array();
                        for (const auto& [a, b] : t.pairs) pairs.push_back({a, b});
                        j = {{"pairs", pairs}, {"scores", t.scores}};
                      }},
             task);
  j["kind"] = task_category(task);
  j["name"] = task_name(task);
  j["instruction"] = std::visit([](const auto& t) { return t.instruction; }, task);
}

void from_json(const nlohmann::json& j, EvalTask& task) {
  std::string kind;
  json_util::read_required(j, "kind", kind, "eval task");
  const std::string what = kind + " task";
  auto common = [&](auto& t) {
    json_util::read_optional(j, "name", t.name, what);
    json_util::read_optional(j, "instruction", t.instruction, what);
  };
  if (kind == "retrieval") {
    json_util::require_known_keys(j, {"kind", "name", "instruction", "queries", "documents", "relevance"}, what);
    RetrievalTask t;
    common(t);
    json_util::read_required(j, "queries", t.queries, what);
    json_util::read_required(j, "documents", t.documents, what);
    nlohmann::json rel;
    json_util::read_required(j, "relevance", rel, what);
    try {
      for (const auto& q : rel) {
        std::map<std::size_t, double> m;
        for (const auto& e : q) {
          if (e.is_number_integer()) {
            m[e.get<std::size_t>()] = 1.0;
          } else {
            json_util::require_known_keys(e, {"doc", "grade"}, what + " relevance entry");
            m[e.at("doc").get<std::size_t>()] = e.value("grade", 1.0);
          }
        }
        t.relevance.push_back(std::move(m));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(what + ".relevance: " + e.what());
    }
    task = std::move(t);
  } else if (kind == "classification") {
    json_util::require_known_keys(
        j, {"kind", "name", "instruction", "train_texts", "train_labels", "test_texts", "test_labels", "k"}, what);
    ClassificationTask t;
    common(t);
    json_util::read_required(j, "train_texts", t.train_texts, what);
    json_util::read_required(j, "train_labels", t.train_labels, what);
    json_util::read_required(j, "test_texts", t.test_texts, what);
    json_util::read_required(j, "test_labels", t.test_labels, what);
    json_util::read_optional(j, "k", t.k, what);
    task = std::move(t);
  } else if (kind == "clustering") {
    json_util::require_known_keys(j, {"kind", "name", "instruction", "texts", "labels", "n_clusters", "seed"}, what);
    ClusteringTask t;
    common(t);
    json_util::read_required(j, "texts", t.texts, what);
    json_util::read_required(j, "labels", t.labels, what);
    std::set<std::string> distinct(t.labels.begin(), t.labels.end());
    t.n_clusters = distinct.size();
    json_util::read_optional(j, "n_clusters", t.n_clusters, what);
    json_util::read_optional(j, "seed", t.seed, what);
    task = std::move(t);
  } else if (kind == "sts") {
    json_util::require_known_keys(j, {"kind", "name", "instruction", "pairs", "scores"}, what);
    StsTask t;
    common(t);
    std::vector<std::vector<std::string>> pairs;
    json_util::read_required(j, "pairs", pairs, what);
    for (const auto& p : pairs) {
      if (p.size() != 2) throw ConfigError(what + ": every pair needs exactly two texts");
      t.pairs.emplace_back(p[0], p[1]);
    }
    json_util::read_required(j, "scores", t.scores, what);
    task = std::move(t);
  } else {
    throw ConfigError("unknown eval task kind '" + kind + "'");
  }
  validate_task(task);
}

std::vector<EvalTask> load_tasks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<EvalTask> tasks;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      tasks.push_back(nlohmann::json::parse(line).get<EvalTask>());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return tasks;
}

void write_tasks(const std::vector<EvalTask>& tasks, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& t : tasks) out << nlohmann::json(t).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void to_json(nlohmann::json& j, const TaskResult& r) {
  j = {{"name", r.name}, {"category", r.category}, {"main_score", r.main_score}, {"metrics", r.metrics}};
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"tasks", r.tasks}, {"category_means", r.category_means}, {"average", r.average}};
}

EvalReport summarize(std::vector<TaskResult> results) {
  EvalReport report;
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& r : results) {
    acc[r.category].first += r.main_score;
    ++acc[r.category].second;
  }
  for (const auto& [cat, s] : acc) report.category_means[cat] = s.first / double(s.second);
  if (!report.category_means.empty()) {
    double total = 0;
    for (const auto& [cat, m] : report.category_means) total += m;
    report.average = total / double(report.category_means.size());
  }
  report.tasks = std::move(results);
  return report;
}

EvalReport evaluate_with(const Embedder& embedder, const data::PromptTemplate& tpl,
                         const std::vector<EvalTask>& tasks) {
  std::vector<TaskResult> results;
  for (const auto& task : tasks) {
    validate_task(task);
    TaskResult r;
    r.name = task_name(task);
    r.category = task_category(task);
    std::visit(
        Overload{
            [&](const RetrievalTask& t) {
              auto q = embed_checked(embedder, render_queries(tpl, t.instruction, t.queries));
              std::vector<std::string> docs;
              for (const auto& d : t.documents) docs.push_back(tpl.render_document(d));
              auto d = embed_checked(embedder, docs);
              const auto rankings = rank_by_cosine(q, d, 10);
              std::vector<std::set<std::size_t>> gold;
              for (const auto& rel : t.relevance) {
                std::set<std::size_t> g;
                for (const auto& [id, grade] : rel) {
                  if (grade > 0) g.insert(id);
                }
                gold.push_back(std::move(g));
              }
              r.metrics["ndcg@10"] = ndcg_at_k(rankings, t.relevance, 10);
              r.metrics["recall@1"] = recall_at_k(rankings, gold, 1);
              r.metrics["recall@10"] = recall_at_k(rankings, gold, 10);
              r.main_score = r.metrics["ndcg@10"];
            },
            [&](const ClassificationTask& t) {
              auto train = embed_checked(embedder, render_queries(tpl, t.instruction, t.train_texts));
              auto test = embed_checked(embedder, render_queries(tpl, t.instruction, t.test_texts));
              r.metrics["knn_accuracy"] = knn_accuracy(train, t.train_labels, test, t.test_labels, t.k);
              r.main_score = r.metrics["knn_accuracy"];
            },
            [&](const ClusteringTask& t) {
              auto e = embed_checked(embedder, render_queries(tpl, t.instruction, t.texts));
              r.metrics["purity"] = cluster_purity(e, t.labels, t.n_clusters, t.seed);
              r.main_score = r.metrics["purity"];
            },
            [&](const StsTask& t) {
              std::vector<std::string> a, b;
              for (const auto& [x, y] : t.pairs) {
                a.push_back(x);
                b.push_back(y);
              }
              auto ea = embed_checked(embedder, render_queries(tpl, t.instruction, a));
              auto eb = embed_checked(embedder, render_queries(tpl, t.instruction, b));
              std::vector<double> sims;
              const std::size_t d = ea.cols();
              for (std::size_t i = 0; i < a.size(); ++i) {
                double dot = 0, na = 0, nb = 0;
                for (std::size_t j = 0; j < d; ++j) {
                  const double u = ea.data()[i * d + j], v = eb.data()[i * d + j];
                  dot += u * v;
                  na += u * u;
                  nb += v * v;
                }
                sims.push_back(dot / std::sqrt(na * nb));
              }
              r.metrics["spearman"] = spearman(sims, t.scores);
              r.main_score = r.metrics["spearman"];
            }},
        task);
    results.push_back(std::move(r));
  }
  return summarize(std::move(results));
}

Tensor<float> embed_texts(const model::EncoderModel<float>& model, const data::Tokenizer& tokenizer,
                          const std::vector<std::string>& texts, std::size_t max_length, std::size_t chunk) {
  if (texts.empty()) throw ArgumentError("embed_texts: no texts");
  if (chunk == 0) throw ArgumentError("embed_texts: chunk must be positive");
  numerics::NoGradGuard guard;
  std::vector<Tensor<float>> parts;
  for (std::size_t at = 0; at < texts.size(); at += chunk) {
    std::vector<std::string> slice(texts.begin() + std::ptrdiff_t(at),
                                   texts.begin() + std::ptrdiff_t(std::min(texts.size(), at + chunk)));
    parts.push_back(model::embed(model, tokenizer.encode_batch(slice, max_length)));
  }
  return parts.size() == 1 ? parts.front() : numerics::concat_rows(parts);
}

EvalReport evaluate(const model::EncoderModel<float>& model, const data::Tokenizer& tokenizer,
                    const data::PromptTemplate& tpl, const std::vector<EvalTask>& tasks,
                    std::size_t max_length) {
  Embedder embedder = [&](const std::vector<std::string>& texts) {
    return embed_texts(model, tokenizer, texts, max_length);
  };
  return evaluate_with(embedder, tpl, tasks);
}

}  // namespace cemb::eval

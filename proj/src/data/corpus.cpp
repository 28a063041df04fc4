#include "cemb/data/corpus.hpp"

#include <random>

#include "cemb/data/sampling.hpp"
#include "cemb/data/tokenizer.hpp"
#include "cemb/errors.hpp"
#include "cemb/json_util.hpp"

namespace cemb::data {

std::vector<std::string> CorpusSpec::words() const {
  if (!vocab.empty()) return vocab;
  std::vector<std::string> w;
  w.reserve(vocab_size);
  for (std::size_t i = 0; i < vocab_size; ++i) w.push_back("w" + std::to_string(i));
  return w;
}

void CorpusSpec::validate() const {
  const std::size_t v = vocab.empty() ? vocab_size : vocab.size();
  if (v == 0) throw SpecError("corpus vocabulary is empty");
  if (v < 16) throw SpecError("corpus vocabulary needs at least 16 tokens, got " + std::to_string(v));
  for (const auto& w : vocab) {
    if (w.empty() || Tokenizer::split_words(w).size() != 1) {
      throw SpecError("corpus vocabulary word '" + w + "' must be one non-empty word");
    }
  }
  if (n_documents == 0) throw SpecError("n_documents must be positive");
  if (doc_length_min == 0 || doc_length_min > doc_length_max) {
    throw SpecError("doc_length range [" + std::to_string(doc_length_min) + ", " +
                    std::to_string(doc_length_max) + "] is invalid");
  }
  if (!(query_subsample_rate > 0 && query_subsample_rate < 1)) {
    throw SpecError("query_subsample_rate must lie in (0, 1)");
  }
  if (!(class_focus >= 0 && class_focus <= 1)) throw SpecError("class_focus must lie in [0, 1]");
  if (queries_per_document == 0) throw SpecError("queries_per_document must be positive");
  if (is_labeled(task_type)) {
    if (n_classes < 2) throw SpecError("labeled corpora need n_classes >= 2");
    if (n_classes > v) throw SpecError("more classes than vocabulary words");
    if (n_documents < 2 * n_classes) throw SpecError("every class needs at least two documents");
  }
}

void to_json(nlohmann::json& j, const CorpusSpec& s) {
  j = {{"seed", s.seed},
       {"n_documents", s.n_documents},
       {"vocab", s.vocab},
       {"vocab_size", s.vocab_size},
       {"doc_length_min", s.doc_length_min},
       {"doc_length_max", s.doc_length_max},
       {"n_classes", s.n_classes},
       {"query_subsample_rate", s.query_subsample_rate},
       {"task_type", task_type_name(s.task_type)},
       {"n_negatives", s.n_negatives},
       {"class_focus", s.class_focus},
       {"instruction", s.instruction},
       {"queries_per_document", s.queries_per_document}};
}

void from_json(const nlohmann::json& j, CorpusSpec& s) {
  const std::string what = "corpus spec";
  json_util::require_known_keys(j,
                                {"seed", "n_documents", "vocab", "vocab_size", "doc_length_min",
                                 "doc_length_max", "n_classes", "query_subsample_rate", "task_type",
                                 "n_negatives", "class_focus", "instruction", "queries_per_document"},
                                what);
  json_util::read_optional(j, "seed", s.seed, what);
  json_util::read_optional(j, "n_documents", s.n_documents, what);
  json_util::read_optional(j, "vocab", s.vocab, what);
  json_util::read_optional(j, "vocab_size", s.vocab_size, what);
  json_util::read_optional(j, "doc_length_min", s.doc_length_min, what);
  json_util::read_optional(j, "doc_length_max", s.doc_length_max, what);
  json_util::read_optional(j, "n_classes", s.n_classes, what);
  json_util::read_optional(j, "query_subsample_rate", s.query_subsample_rate, what);
  if (j.contains("task_type")) {
    std::string t;
    json_util::read_required(j, "task_type", t, what);
    s.task_type = parse_task_type(t);
  }
  json_util::read_optional(j, "n_negatives", s.n_negatives, what);
  json_util::read_optional(j, "class_focus", s.class_focus, what);
  json_util::read_optional(j, "instruction", s.instruction, what);
  json_util::read_optional(j, "queries_per_document", s.queries_per_document, what);
}

namespace {

std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += words[i];
  }
  return s;
}

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const std::vector<std::string> vocab = spec.words();
  const std::size_t v = vocab.size();
  const bool labeled = is_labeled(spec.task_type);
  const std::string instruction =
      spec.instruction.empty() ? default_instruction(spec.task_type) : spec.instruction;

  std::mt19937_64 rng(spec.seed);
  auto uniform = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  std::bernoulli_distribution focus(spec.class_focus);

  Corpus c;
  std::vector<std::vector<std::string>> doc_tokens;
  for (std::size_t i = 0; i < spec.n_documents; ++i) {
    const std::size_t len =
        std::uniform_int_distribution<std::size_t>(spec.doc_length_min, spec.doc_length_max)(rng);
    std::vector<std::string> tokens;
    tokens.reserve(len);
    // Class k owns vocabulary slice [k*v/n, (k+1)*v/n).
    const std::size_t cls = labeled ? i % spec.n_classes : 0;
    const std::size_t lo = labeled ? cls * v / spec.n_classes : 0;
    const std::size_t hi = labeled ? (cls + 1) * v / spec.n_classes : v;
    for (std::size_t t = 0; t < len; ++t) {
      const bool topical = labeled && focus(rng);
      tokens.push_back(vocab[topical ? lo + uniform(hi - lo) : uniform(v)]);
    }
    c.documents.push_back(join(tokens));
    c.labels.push_back(labeled ? std::optional<std::string>("c" + std::to_string(cls)) : std::nullopt);
    doc_tokens.push_back(std::move(tokens));
  }

  if (labeled) {
    std::vector<LabeledItem> pool;
    for (std::size_t i = 0; i < spec.n_documents; ++i) pool.push_back({c.documents[i], *c.labels[i]});
    for (std::size_t i = 0; i < spec.n_documents; ++i) {
      c.examples.push_back(sample_class_pairs(pool, i, spec.n_negatives, rng(), spec.task_type, instruction));
      c.source_document.push_back(i);
    }
    return c;
  }

  std::bernoulli_distribution keep(spec.query_subsample_rate);
  for (std::size_t i = 0; i < spec.n_documents; ++i) {
    const auto& tokens = doc_tokens[i];
    for (std::size_t r = 0; r < spec.queries_per_document; ++r) {
      std::vector<std::string> q;
      for (const auto& t : tokens) {
        if (keep(rng)) q.push_back(t);
      }
      if (q.empty()) q.push_back(tokens[uniform(tokens.size())]);
      TrainingExample ex;
      ex.task_type = spec.task_type;
      ex.instruction = instruction;
      ex.query = join(q);
      ex.positive = c.documents[i];
      c.examples.push_back(std::move(ex));
      c.source_document.push_back(i);
    }
  }
  return c;
}

}  // namespace cemb::data

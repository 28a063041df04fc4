#ifndef CEMB_DATA_CORPUS_HPP_
#define CEMB_DATA_CORPUS_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cemb/data/example.hpp"
#include "json.hpp"

namespace cemb::data {

// Recipe for a seeded synthetic corpus. When `vocab` is empty, vocab_size
// words "w0", "w1", ... are used.
struct CorpusSpec {
  std::uint64_t seed = 0;
  std::size_t n_documents = 1000;
  std::vector<std::string> vocab;
  std::size_t vocab_size = 512;
  std::size_t doc_length_min = 12;
  std::size_t doc_length_max = 24;
  std::size_t n_classes = 0;
  double query_subsample_rate = 0.5;
  TaskType task_type = TaskType::kRetrieval;
  // Out-of-class negatives per labeled example.
  std::size_t n_negatives = 7;
  // Chance that a labeled document draws a token from its class topic.
  double class_focus = 0.8;
  std::string instruction;
  // Independent query subsamples per document (retrieval and sts).
  std::size_t queries_per_document = 1;

  std::vector<std::string> words() const;
  // Throws SpecError.
  void validate() const;
};

void to_json(nlohmann::json& j, const CorpusSpec& s);
void from_json(const nlohmann::json& j, CorpusSpec& s);

struct Corpus {
  std::vector<std::string> documents;
  // Class of each document, labeled tasks only.
  std::vector<std::optional<std::string>> labels;
  std::vector<TrainingExample> examples;
  // Document the example was built from: the positive for retrieval and sts,
  // the query for labeled tasks.
  std::vector<std::size_t> source_document;
};

// Retrieval and sts: queries_per_document examples per document, each query
// an ordered random subsample of the document's tokens. Labeled tasks: every
// document draws its tokens mostly from a class-specific slice of the
// vocabulary and becomes the query of one example paired by sample_class_pairs.
Corpus generate_corpus(const CorpusSpec& spec);

}  // namespace cemb::data

#endif  // CEMB_DATA_CORPUS_HPP_

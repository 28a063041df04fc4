#include "cemb/data/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "cemb/errors.hpp"

namespace cemb::data {

namespace {

std::string byte_token(unsigned b) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "<0x%02X>", b);
  return buf;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace

Tokenizer::Tokenizer() {
  add("<pad>");
  for (unsigned b = 0; b < 256; ++b) add(byte_token(b));
}

Tokenizer::Tokenizer(const std::vector<std::string>& words) : Tokenizer() {
  for (const auto& w : words) {
    if (w.empty() || std::any_of(w.begin(), w.end(), is_space)) {
      throw VocabularyError("vocabulary word '" + w + "' is empty or contains whitespace");
    }
    add(w);
  }
}

void Tokenizer::add(const std::string& token) {
  if (!index_.emplace(token, std::int32_t(tokens_.size())).second) {
    throw VocabularyError("duplicate vocabulary token '" + token + "'");
  }
  tokens_.push_back(token);
}

std::vector<std::string_view> Tokenizer::split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts) {
  std::set<std::string> words;
  for (const auto& t : texts) {
    for (auto w : split_words(t)) words.emplace(w);
  }
  Tokenizer base;
  std::vector<std::string> fresh;
  for (const auto& w : words) {
    if (!base.contains_word(w)) fresh.push_back(w);
  }
  return Tokenizer(fresh);
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  Tokenizer base;
  if (lines.size() < kSpecialCount) {
    throw VocabularyError(path.string() + " holds " + std::to_string(lines.size()) +
                          " tokens, fewer than the " + std::to_string(kSpecialCount) + " specials");
  }
  for (std::size_t i = 0; i < kSpecialCount; ++i) {
    if (lines[i] != base.tokens_[i]) {
      throw VocabularyError(path.string() + ":" + std::to_string(i + 1) + ": expected special token " +
                            base.tokens_[i] + ", got '" + lines[i] + "'");
    }
  }
  return Tokenizer(std::vector<std::string>(lines.begin() + kSpecialCount, lines.end()));
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

const std::string& Tokenizer::token(std::int32_t id) const {
  if (id < 0 || std::size_t(id) >= tokens_.size()) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(tokens_.size()));
  }
  return tokens_[std::size_t(id)];
}

std::vector<std::int32_t> Tokenizer::encode(std::string_view text) const {
  std::vector<std::int32_t> ids;
  for (auto w : split_words(text)) {
    auto it = index_.find(std::string(w));
    if (it != index_.end() && std::size_t(it->second) >= kSpecialCount) {
      ids.push_back(it->second);
      continue;
    }
    for (unsigned char c : w) ids.push_back(std::int32_t(kByteBase + c));
  }
  return ids;
}

model::TokenBatch Tokenizer::encode_batch(const std::vector<std::string>& texts,
                                          std::size_t max_length) const {
  if (max_length == 0) throw ArgumentError("encode_batch: max_length must be positive");
  std::vector<std::vector<std::int32_t>> rows;
  rows.reserve(texts.size());
  std::size_t length = 0;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto ids = encode(texts[i]);
    if (ids.empty()) throw ArgumentError("encode_batch: text " + std::to_string(i) + " has no tokens");
    if (ids.size() > max_length) ids.resize(max_length);
    length = std::max(length, ids.size());
    rows.push_back(std::move(ids));
  }
  model::TokenBatch batch;
  batch.batch = rows.size();
  batch.length = length;
  batch.ids.assign(batch.batch * length, kPadId);
  batch.pad.assign(batch.batch * length, 1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      batch.ids[r * length + i] = rows[r][i];
      batch.pad[r * length + i] = 0;
    }
  }
  return batch;
}

}  // namespace cemb::data

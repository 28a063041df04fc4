#ifndef CEMB_DATA_TOKENIZER_HPP_
#define CEMB_DATA_TOKENIZER_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cemb/model/encoder.hpp"

namespace cemb::data {

// Frozen word vocabulary with byte fallback. Ids: 0 is <pad>, 1..256 are the
// byte tokens <0x00>..<0xFF>, then one id per word. Text is split on ASCII
// whitespace; a word missing from the vocabulary becomes its byte tokens.
class Tokenizer {
 public:
  static constexpr std::int32_t kPadId = 0;
  static constexpr std::size_t kByteBase = 1;
  static constexpr std::size_t kSpecialCount = 257;
  static constexpr std::size_t kDefaultMaxLength = 512;

  Tokenizer();
  explicit Tokenizer(const std::vector<std::string>& words);

  // Words of every text, deduplicated and sorted.
  static Tokenizer build(const std::vector<std::string>& texts);
  // One token per line, specials included.
  static Tokenizer load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::int32_t id) const;
  bool contains_word(std::string_view word) const { return index_.count(std::string(word)) > 0; }

  std::vector<std::int32_t> encode(std::string_view text) const;
  // Right padding to the longest row, right truncation at max_length.
  model::TokenBatch encode_batch(const std::vector<std::string>& texts,
                                 std::size_t max_length = kDefaultMaxLength) const;

  static std::vector<std::string_view> split_words(std::string_view text);

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

}  // namespace cemb::data

#endif  // CEMB_DATA_TOKENIZER_HPP_

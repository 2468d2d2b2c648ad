#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sectune {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

struct TokenizeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Whitespace-and-punctuation tokenizer over a fixed vocabulary.
//
// Word tokens are maximal runs of [A-Za-z0-9_] and non-ASCII bytes; every other
// printable ASCII character is a token of its own; whitespace separates tokens
// and is dropped. decode() joins symbols with single spaces, so
// encode(decode(s)) == s for every sequence of non-special ids.
class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  // Separates the instruction from the response; stands in for the
  // "### Response:" header of the text prompt template.
  static constexpr TokenId kSep = 3;
  static constexpr int kNumSpecial = 4;

  // `symbols` are the non-special vocabulary entries, assigned ids from
  // kNumSpecial upward in order. Duplicates and unsplittable symbols throw.
  explicit Tokenizer(const std::vector<std::string>& symbols);

  // Built-in vocabulary of the synthetic mini-language, instruction templates
  // and prompt-variant sentences.
  static const Tokenizer& mini_language();

  int vocab_size() const { return static_cast<int>(symbols_.size()); }

  TokenSeq encode(std::string_view text) const;
  // encode() followed by kEos; the form used for model outputs.
  TokenSeq encode_response(std::string_view text) const;
  std::string decode(const TokenSeq& tokens) const;

  // Symbols of `tokens` with specials removed.
  std::vector<std::string_view> symbols(const TokenSeq& tokens) const;

  const std::string& symbol(TokenId id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  bool contains(std::string_view symbol) const { return ids_.count(std::string(symbol)) > 0; }
  TokenId id(std::string_view symbol) const;
  static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecial; }
  bool valid(const TokenSeq& tokens) const;

  // Surface split without vocabulary lookup.
  static std::vector<std::string_view> split(std::string_view text);

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> ids_;
};

}  // namespace sectune

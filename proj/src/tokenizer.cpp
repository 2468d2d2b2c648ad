#include "sectune/tokenizer.hpp"

#include <sstream>

namespace sectune {
namespace {

bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
         c >= 0x80;
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

const char* const kSpecialNames[Tokenizer::kNumSpecial] = {"<pad>", "<bos>", "<eos>", "<sep>"};

std::vector<std::string> mini_language_symbols() {
  std::vector<std::string> out;
  for (char c = '!'; c <= '~'; ++c) {
    if (!is_word_byte(static_cast<unsigned char>(c))) out.emplace_back(1, c);
  }
  const char* words[] = {
      // keywords
      "def", "return", "if", "else", "elif", "for", "while", "in", "and", "or", "not", "null", "true",
      "false", "import", "from", "as", "pass",
      // language tags and instruction template
      "py", "js", "Write", "a", "function", "named", "Create", "for", "this", "problem",
      // generic identifiers
      "b", "c", "x", "y", "z", "n", "k", "m", "p", "q", "r", "s", "t", "v", "w", "h", "f", "xs", "ys",
      "data", "key", "value", "values", "item", "items", "result", "res", "tmp", "out", "buf", "msg",
      "log", "print", "helper", "util", "config", "cfg", "path", "text", "line", "lines", "count",
      // inadequate key strength
      "rsa", "generate", "bits", "gen_key", "make_key", "new_key", "create_key", "init_key", "build_key",
      // broken hashing
      "hashlib", "md5", "sha1", "sha256", "sha512", "hash_pw", "digest_pw", "hash_data", "make_digest",
      "hash_token", "sign_data", "pw",
      // query construction
      "db", "execute", "select_user", "name", "rows", "get_user", "find_user", "load_user", "fetch_user",
      "query_user", "read_user",
      // path handling
      "open", "join", "safe_join", "base", "read_file", "load_file", "open_file", "get_file", "fetch_file",
      "show_file",
      // command execution
      "subprocess", "run", "os", "system", "ls", "arg", "run_cmd", "exec_cmd", "call_cmd", "do_cmd",
      "start_cmd", "launch_cmd",
      // null checks
      "lookup", "get_val", "read_val", "load_val", "find_val", "fetch_val", "peek_val",
      // utility functions
      "add", "sub", "mul", "square", "twice", "inc", "dec", "first", "last", "size", "pair", "swap",
      "len", "min", "max", "abs", "neg", "half", "cube", "ident", "zero", "one", "total", "both",
      // numbers
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "10", "16", "20", "32", "40", "64", "100", "128",
      "256", "512", "1024", "2048", "3072", "4096", "022", "078", "089", "326", "327", "476",
      // prompt-variant sentences and weakness descriptions
      "Make", "sure", "that", "the", "generated", "code", "is", "secure", "meaning", "it", "does",
      "contain", "any", "security", "vulnerabilities", "with", "respect", "to", "CWE", "vulnerability",
      "The", "program", "uses", "broken", "risky", "cryptographic", "algorithm", "protocol", "constructs",
      "an", "SQL", "command", "using", "externally", "influenced", "input", "external", "construct",
      "pathname", "should", "be", "within", "restricted", "directory", "OS", "stores", "transmits",
      "sensitive", "encryption", "scheme", "strong", "enough", "dereferences", "pointer", "expects",
      "valid", "but",
      // non-ASCII words
      "café", "naïve", "函数", "→", "ü",
  };
  for (const char* w : words) {
    bool dup = false;
    for (const auto& s : out) dup = dup || s == w;
    if (!dup) out.emplace_back(w);
  }
  return out;
}

}  // namespace

Tokenizer::Tokenizer(const std::vector<std::string>& symbols) {
  for (const char* name : kSpecialNames) {
    ids_.emplace(name, static_cast<TokenId>(symbols_.size()));
    symbols_.emplace_back(name);
  }
  for (const auto& s : symbols) {
    auto parts = split(s);
    if (parts.size() != 1 || parts[0] != s) throw std::invalid_argument("vocabulary symbol does not tokenize to itself: '" + s + "'");
    if (!ids_.emplace(s, static_cast<TokenId>(symbols_.size())).second) {
      throw std::invalid_argument("duplicate vocabulary symbol: '" + s + "'");
    }
    symbols_.push_back(s);
  }
}

const Tokenizer& Tokenizer::mini_language() {
  static const Tokenizer tok(mini_language_symbols());
  return tok;
}

std::vector<std::string_view> Tokenizer::split(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_word_byte(c)) {
      std::size_t j = i;
      while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
      out.push_back(text.substr(i, j - i));
      i = j;
    } else {
      out.push_back(text.substr(i, 1));
      ++i;
    }
  }
  return out;
}

TokenId Tokenizer::id(std::string_view symbol) const {
  auto it = ids_.find(std::string(symbol));
  if (it == ids_.end()) throw TokenizeError("out-of-vocabulary symbol '" + std::string(symbol) + "'");
  return it->second;
}

TokenSeq Tokenizer::encode(std::string_view text) const {
  TokenSeq out;
  for (auto piece : split(text)) out.push_back(id(piece));
  return out;
}

TokenSeq Tokenizer::encode_response(std::string_view text) const {
  TokenSeq out = encode(text);
  out.push_back(kEos);
  return out;
}

std::string Tokenizer::decode(const TokenSeq& tokens) const {
  std::ostringstream os;
  bool first = true;
  for (auto s : symbols(tokens)) {
    if (!first) os << ' ';
    os << s;
    first = false;
  }
  return os.str();
}

std::vector<std::string_view> Tokenizer::symbols(const TokenSeq& tokens) const {
  std::vector<std::string_view> out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t < 0 || t >= vocab_size()) throw TokenizeError("token id " + std::to_string(t) + " outside vocabulary");
    if (!is_special(t)) out.emplace_back(symbols_[static_cast<std::size_t>(t)]);
  }
  return out;
}

bool Tokenizer::valid(const TokenSeq& tokens) const {
  for (TokenId t : tokens) {
    if (t < 0 || t >= vocab_size()) return false;
  }
  return true;
}

}  // namespace sectune

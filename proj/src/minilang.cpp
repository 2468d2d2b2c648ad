#include "sectune/minilang.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "sectune/tokenizer.hpp"

namespace sectune {
namespace {

const std::set<std::string_view> kKeywords = {"def", "return", "if", "else", "elif", "for", "while", "in", "and",
                                              "or", "not", "null", "true", "false", "import", "from", "as", "pass"};

bool is_number(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

bool is_name(std::string_view s) {
  if (s.empty() || kKeywords.count(s)) return false;
  const auto c0 = static_cast<unsigned char>(s[0]);
  if (!(std::isalpha(c0) || c0 == '_' || c0 >= 0x80)) return false;
  return std::all_of(s.begin(), s.end(), [](char ch) {
    const auto c = static_cast<unsigned char>(ch);
    return std::isalnum(c) || c == '_' || c >= 0x80;
  });
}

// Recursive-descent recogniser over the token symbols.
class Parser {
 public:
  explicit Parser(const std::vector<std::string_view>& toks) : t_(toks) {}

  bool program() {
    if (!eat("def") || !name() || !eat("(")) return false;
    if (!eat(")")) {
      do {
        if (!name()) return false;
      } while (eat(","));
      if (!eat(")")) return false;
    }
    if (!eat(":") || !stmt()) return false;
    while (eat(";")) {
      if (!stmt()) return false;
    }
    return pos_ == t_.size();
  }

 private:
  bool at(std::string_view s) const { return pos_ < t_.size() && t_[pos_] == s; }
  bool at(std::size_t ahead, std::string_view s) const { return pos_ + ahead < t_.size() && t_[pos_ + ahead] == s; }
  bool eat(std::string_view s) {
    if (!at(s)) return false;
    ++pos_;
    return true;
  }
  bool name() {
    if (pos_ < t_.size() && is_name(t_[pos_])) {
      ++pos_;
      return true;
    }
    return false;
  }

  bool stmt() {
    if (++depth_ > kMaxDepth) return false;
    bool ok;
    if (eat("return")) {
      ok = expr();
    } else if (eat("if")) {
      ok = cond() && eat(":") && stmt();
    } else if (pos_ < t_.size() && is_name(t_[pos_]) && at(1, "=") && !at(2, "=")) {
      pos_ += 2;
      ok = expr();
    } else {
      ok = expr();
    }
    --depth_;
    return ok;
  }

  bool cond() {
    if (!expr()) return false;
    if (at("=") && at(1, "=")) {
      pos_ += 2;
    } else if (at("!") && at(1, "=")) {
      pos_ += 2;
    } else if (!eat("<") && !eat(">")) {
      return false;
    }
    return expr();
  }

  bool expr() {
    if (++depth_ > kMaxDepth) return false;
    bool ok = postfix();
    while (ok && (eat("+") || eat("-") || eat("*") || eat("/"))) ok = postfix();
    --depth_;
    return ok;
  }

  bool postfix() {
    if (!atom()) return false;
    for (;;) {
      if (eat(".")) {
        if (!name()) return false;
      } else if (eat("(")) {
        if (!eat(")")) {
          do {
            if (!arg()) return false;
          } while (eat(","));
          if (!eat(")")) return false;
        }
      } else if (eat("[")) {
        if (!expr() || !eat("]")) return false;
      } else {
        return true;
      }
    }
  }

  bool arg() {
    if (pos_ < t_.size() && is_name(t_[pos_]) && at(1, "=") && !at(2, "=")) pos_ += 2;
    return expr();
  }

  bool atom() {
    if (pos_ >= t_.size()) return false;
    const std::string_view s = t_[pos_];
    if (is_name(s) || is_number(s) || s == "null" || s == "true" || s == "false") {
      ++pos_;
      return true;
    }
    if (eat("[")) {
      if (eat("]")) return true;
      do {
        if (!expr()) return false;
      } while (eat(","));
      return eat("]");
    }
    if (eat("(")) return expr() && eat(")");
    return false;
  }

  static constexpr int kMaxDepth = 200;
  const std::vector<std::string_view>& t_;
  std::size_t pos_ = 0;
  int depth_ = 0;
};

}  // namespace

std::optional<std::string> language_of(std::string_view path) {
  auto ends_with = [&](std::string_view suffix) {
    return path.size() > suffix.size() && path.substr(path.size() - suffix.size()) == suffix;
  };
  if (ends_with(".py")) return "py";
  if (ends_with(".js")) return "js";
  return std::nullopt;
}

std::vector<FunctionUnit> split_functions(std::string_view file_text) {
  std::vector<FunctionUnit> out;
  std::set<std::string> names;
  std::istringstream in{std::string(file_text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const bool blank = line.find_first_not_of(" \t") == std::string::npos;
    if (line.rfind("def", 0) == 0 && (line.size() == 3 || line[3] == ' ' || line[3] == '\t')) {
      std::string name = function_name(Tokenizer::split(line));
      if (name.empty()) throw MiniLangError("line " + std::to_string(lineno) + ": function without a name");
      if (!names.insert(name).second) throw MiniLangError("line " + std::to_string(lineno) + ": function '" + name + "' defined twice");
      out.push_back({name, line, lineno, lineno});
    } else if (blank) {
      continue;
    } else if (out.empty() || !(line[0] == ' ' || line[0] == '\t')) {
      throw MiniLangError("line " + std::to_string(lineno) + ": code outside a function");
    } else {
      out.back().text += '\n';
      out.back().text += line;
      out.back().last_line = lineno;
    }
  }
  return out;
}

std::string function_name(const std::vector<std::string_view>& symbols) {
  if (symbols.size() >= 2 && symbols[0] == "def" && is_name(symbols[1])) return std::string(symbols[1]);
  return {};
}

bool is_valid_program(const std::vector<std::string_view>& symbols) { return Parser(symbols).program(); }

bool is_valid_program(std::string_view text) { return is_valid_program(Tokenizer::split(text)); }

}  // namespace sectune

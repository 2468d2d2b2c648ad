#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sectune {

// The synthetic language used for training data, scenarios and mined commits.
//
//   program := "def" NAME "(" [NAME {"," NAME}] ")" ":" stmt {";" stmt}
//   stmt    := "return" expr | "if" cond ":" stmt | NAME "=" expr | expr
//   cond    := expr ("=" "=" | "!" "=" | "<" | ">") expr
//   expr    := postfix {("+" | "-" | "*" | "/") postfix}
//   postfix := atom {"." NAME | "(" [arg {"," arg}] ")" | "[" expr "]"}
//   atom    := NAME | NUMBER | "null" | "true" | "false" | "[" [expr {"," expr}] "]" | "(" expr ")"
//   arg     := [NAME "="] expr
//
// Files hold one function per "def" line in column 0; indented lines that
// follow continue the same function.

struct MiniLangError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// "py" for .py, "js" for .js, nothing otherwise.
std::optional<std::string> language_of(std::string_view path);

struct FunctionUnit {
  std::string name;
  std::string text;  // the function's lines joined with '\n'
  int first_line = 0;  // 1-based, inclusive
  int last_line = 0;
};

// Throws MiniLangError when the file cannot be cut into functions: code
// before the first "def", a "def" line without a name, or a repeated name.
std::vector<FunctionUnit> split_functions(std::string_view file_text);

// Name of the function defined by `symbols` ("def" NAME ...), or empty.
std::string function_name(const std::vector<std::string_view>& symbols);

bool is_valid_program(const std::vector<std::string_view>& symbols);
bool is_valid_program(std::string_view text);

}  // namespace sectune

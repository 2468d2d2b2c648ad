#include "sectune/detector.hpp"

#include <algorithm>
#include <cctype>
#include <string_view>

#include "sectune/minilang.hpp"
#include "sectune/tokenizer.hpp"

namespace sectune {
namespace {

using Symbols = std::vector<std::string_view>;

bool match(const Symbols& s, std::size_t i, std::initializer_list<std::string_view> pattern) {
  if (i + pattern.size() > s.size()) return false;
  std::size_t k = i;
  for (auto p : pattern) {
    if (s[k++] != p) return false;
  }
  return true;
}

// Index one past the ")" closing the "(" at `open`, or s.size().
std::size_t close_paren(const Symbols& s, std::size_t open) {
  int depth = 0;
  for (std::size_t j = open; j < s.size(); ++j) {
    if (s[j] == "(") ++depth;
    if (s[j] == ")" && --depth == 0) return j + 1;
  }
  return s.size();
}

bool concatenated_query(const Symbols& s) {
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (!match(s, i, {"execute", "("})) continue;
    int depth = 0;
    const std::size_t end = close_paren(s, i + 1);
    for (std::size_t j = i + 1; j < end; ++j) {
      if (s[j] == "(" || s[j] == "[") ++depth;
      if (s[j] == ")" || s[j] == "]") --depth;
      if (s[j] == "+" && depth == 1) return true;
    }
  }
  return false;
}

bool weak_key(const Symbols& s) {
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (!match(s, i, {"generate", "("})) continue;
    const std::size_t end = close_paren(s, i + 1);
    for (std::size_t j = i + 2; j + 2 < end; ++j) {
      if (!match(s, j, {"bits", "="})) continue;
      std::string_view n = s[j + 2];
      if (n.empty() || n.size() > 9 || !std::all_of(n.begin(), n.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
        continue;
      }
      if (std::stol(std::string(n)) < 2048) return true;
    }
  }
  return false;
}

bool unchecked_lookup(const Symbols& s) {
  for (std::size_t i = 0; i + 3 < s.size(); ++i) {
    if (!(s[i + 1] == "=" && match(s, i + 2, {"lookup", "("}))) continue;
    const std::string_view var = s[i];
    for (std::size_t j = close_paren(s, i + 3); j < s.size(); ++j) {
      if (match(s, j, {"if", var, "=", "=", "null"})) break;
      if (j + 1 < s.size() && s[j] == var && s[j + 1] == ".") return true;
    }
  }
  return false;
}

void analyze_function(const std::string& path, const FunctionUnit& f, VulnReport& out) {
  const Symbols s = Tokenizer::split(f.text);
  auto add = [&](const char* cwe) { out.add({cwe, path, f.name, f.first_line}); };
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (match(s, i, {"open", "(", "join", "("})) add("CWE-022");
    if (match(s, i, {"system", "("})) add("CWE-078");
    if (s[i] == "md5" || s[i] == "sha1") add("CWE-327");
  }
  if (concatenated_query(s)) add("CWE-089");
  if (weak_key(s)) add("CWE-326");
  if (unchecked_lookup(s)) add("CWE-476");
}

}  // namespace

void VulnReport::add(Finding f) {
  auto it = std::lower_bound(findings.begin(), findings.end(), f);
  if (it == findings.end() || !(*it == f)) findings.insert(it, std::move(f));
}

std::size_t VulnReport::count(const std::string& cwe) const {
  return static_cast<std::size_t>(std::count_if(findings.begin(), findings.end(), [&](const Finding& f) { return f.cwe == cwe; }));
}

std::set<std::string> VulnReport::cwes() const {
  std::set<std::string> out;
  for (const auto& f : findings) out.insert(f.cwe);
  return out;
}

std::vector<std::string> ReferenceDetector::supported_cwes() const {
  return {"CWE-022", "CWE-078", "CWE-089", "CWE-326", "CWE-327", "CWE-476"};
}

VulnReport ReferenceDetector::analyze(const RepoSnapshot& r) const {
  VulnReport out;
  for (const auto& [path, text] : r.files) {
    if (!language_of(path)) continue;
    std::vector<FunctionUnit> funcs;
    try {
      funcs = split_functions(text);
    } catch (const MiniLangError& e) {
      throw AnalysisError(path + ": " + e.what());
    }
    for (const auto& f : funcs) analyze_function(path, f, out);
  }
  return out;
}

VulnReport analyze_program(const Detector& det, const std::string& program, const std::string& language) {
  RepoSnapshot r;
  r.files["program." + language] = program;
  return det.analyze(r);
}

std::unique_ptr<Detector> make_detector(const std::string& id) {
  if (id == "reference") return std::make_unique<ReferenceDetector>();
  throw std::invalid_argument("unknown detector id '" + id + "'");
}

}  // namespace sectune

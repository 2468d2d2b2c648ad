#include "sectune/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "sectune/minilang.hpp"

namespace sectune {
namespace {

using nlohmann::json;

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

json snapshot_json(const RepoSnapshot& r) {
  json j = json::object();
  for (const auto& [path, text] : r.files) j[path] = text;
  return j;
}

RepoSnapshot snapshot_from(const json& j, const char* what) {
  if (!j.is_object()) throw std::runtime_error(std::string("'") + what + "' must be an object of path -> text");
  RepoSnapshot r;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) throw std::runtime_error(std::string("'") + what + "' file " + it.key() + " is not text");
    r.files[it.key()] = it.value().get<std::string>();
  }
  return r;
}

}  // namespace

std::vector<CommitRecord> parse_corpus(std::istream& in) {
  std::vector<CommitRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json rec = json::parse(line);
      CommitRecord c;
      c.message = rec.at("message").get<std::string>();
      c.pre = snapshot_from(rec.at("pre"), "pre");
      c.post = snapshot_from(rec.at("post"), "post");
      out.push_back(std::move(c));
    } catch (const std::exception& e) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<CommitRecord> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path.string());
  return parse_corpus(in);
}

void write_corpus(const std::vector<CommitRecord>& corpus, std::ostream& out) {
  for (const auto& c : corpus) {
    json rec = {{"message", c.message}, {"pre", snapshot_json(c.pre)}, {"post", snapshot_json(c.post)}};
    out << rec.dump() << '\n';
  }
}

void save_corpus(const std::vector<CommitRecord>& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus " + path.string());
  write_corpus(corpus, out);
}

void FilterRules::validate() const {
  if (max_lines < 1 || max_files < 1) throw std::invalid_argument("filter thresholds must be at least 1");
}

FilterRules default_rules() {
  FilterRules r;
  r.keywords = {
      {"CWE-022", {"path traversal", "directory traversal", "sanitize path", "unsafe path"}},
      {"CWE-078", {"command injection", "shell injection", "os command"}},
      {"CWE-089", {"sql injection", "sqli", "parameterized query", "prepared statement"}},
      {"CWE-326", {"key size", "key length", "weak key", "encryption strength"}},
      {"CWE-327", {"weak hash", "broken hash", "insecure hash", "md5", "sha1", "broken crypto"}},
      {"CWE-476", {"null pointer", "null check", "null dereference", "npe"}},
  };
  return r;
}

FilterRules parse_rules(const std::string& json_text) {
  FilterRules r = default_rules();
  json j = json::parse(json_text);
  if (j.contains("max_lines")) r.max_lines = j.at("max_lines").get<int>();
  if (j.contains("max_files")) r.max_files = j.at("max_files").get<int>();
  if (j.contains("keywords")) r.keywords = j.at("keywords").get<std::map<std::string, std::vector<std::string>>>();
  r.validate();
  return r;
}

FilterRules load_rules(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open filter rules " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_rules(buf.str());
}

std::vector<std::string> changed_files(const CommitRecord& c) {
  std::set<std::string> paths;
  for (const auto& [p, t] : c.pre.files) paths.insert(p);
  for (const auto& [p, t] : c.post.files) paths.insert(p);
  std::vector<std::string> out;
  for (const auto& p : paths) {
    auto a = c.pre.files.find(p), b = c.post.files.find(p);
    if (a == c.pre.files.end() || b == c.post.files.end() || a->second != b->second) out.push_back(p);
  }
  return out;
}

int changed_line_count(const CommitRecord& c) {
  static const std::string kEmpty;
  int total = 0;
  for (const auto& p : changed_files(c)) {
    auto a = c.pre.files.find(p), b = c.post.files.find(p);
    const auto la = lines_of(a == c.pre.files.end() ? kEmpty : a->second);
    const auto lb = lines_of(b == c.post.files.end() ? kEmpty : b->second);
    std::unordered_map<std::string, TokenId> ids;
    auto intern = [&](const std::vector<std::string>& lines) {
      TokenSeq s;
      for (const auto& l : lines) s.push_back(ids.emplace(l, static_cast<TokenId>(ids.size())).first->second);
      return s;
    };
    const TokenSeq sa = intern(la), sb = intern(lb);
    const auto common = static_cast<int>(lcs_alignment(sa, sb).size());
    total += static_cast<int>(sa.size()) - common + static_cast<int>(sb.size()) - common;
  }
  return total;
}

const char* verdict_code(FilterVerdict v) {
  switch (v) {
    case FilterVerdict::kAccept: return "accept";
    case FilterVerdict::kNoKeyword: return "filtered_no_keyword";
    case FilterVerdict::kTooManyLines: return "filtered_too_many_lines";
    case FilterVerdict::kTooManyFiles: return "filtered_too_many_files";
    case FilterVerdict::kUnsupportedFile: return "filtered_unsupported_file";
  }
  return "unknown";
}

FilterVerdict filter_verdict(const CommitRecord& c, const FilterRules& rules) {
  const std::string msg = lower(c.message);
  bool keyword = false;
  for (const auto& [cwe, words] : rules.keywords) {
    for (const auto& w : words) keyword = keyword || (!w.empty() && msg.find(lower(w)) != std::string::npos);
  }
  if (!keyword) return FilterVerdict::kNoKeyword;
  const auto files = changed_files(c);
  if (static_cast<int>(files.size()) > rules.max_files) return FilterVerdict::kTooManyFiles;
  for (const auto& f : files) {
    if (!language_of(f)) return FilterVerdict::kUnsupportedFile;
  }
  if (changed_line_count(c) > rules.max_lines) return FilterVerdict::kTooManyLines;
  return FilterVerdict::kAccept;
}

bool heuristic_filter(const CommitRecord& c, const FilterRules& rules) {
  return filter_verdict(c, rules) == FilterVerdict::kAccept;
}

VulnReport analyze_code(const RepoSnapshot& r, const Detector& det) { return det.analyze(r); }

std::set<std::string> fixed_cwes(const VulnReport& pre, const VulnReport& post) {
  std::set<std::string> out;
  for (const auto& cwe : pre.cwes()) {
    if (post.count(cwe) == 0) out.insert(cwe);
  }
  return out;
}

bool verify_fix(const VulnReport& pre, const VulnReport& post) { return !fixed_cwes(pre, post).empty(); }

std::vector<FunctionPair> changed_funcs(const RepoSnapshot& pre, const RepoSnapshot& post,
                                        std::vector<std::string>* warnings, const Tokenizer& tok) {
  std::vector<FunctionPair> out;
  auto warn = [&](const std::string& w) {
    if (warnings) warnings->push_back(w);
  };
  for (const auto& [path, before] : pre.files) {
    auto it = post.files.find(path);
    if (it == post.files.end() || it->second == before) continue;
    auto language = language_of(path);
    if (!language) continue;
    std::vector<FunctionUnit> fa, fb;
    try {
      fa = split_functions(before);
      fb = split_functions(it->second);
    } catch (const MiniLangError& e) {
      warn(path + ": " + e.what());
      continue;
    }
    std::vector<FunctionPair> pairs;
    try {
      for (const auto& vul : fa) {
        auto sec = std::find_if(fb.begin(), fb.end(), [&](const FunctionUnit& f) { return f.name == vul.name; });
        if (sec == fb.end()) continue;
        TokenSeq o_sec = tok.encode_response(sec->text);
        TokenSeq o_vul = tok.encode_response(vul.text);
        if (o_sec == o_vul) continue;
        pairs.push_back({path, *language, vul.name, sec->text, vul.text, std::move(o_sec), std::move(o_vul)});
      }
    } catch (const TokenizeError& e) {
      warn(path + ": " + e.what());
      continue;
    }
    out.insert(out.end(), pairs.begin(), pairs.end());
  }
  return out;
}

std::string TemplateGenerator::generate(const InstRequest& req) {
  if (req.name.empty()) throw std::invalid_argument("function has no name");
  return "Write a " + req.language + " function named " + req.name + ".";
}

std::string instgen_prompt(const std::string& secure_text, const std::string& vuln_text) {
  return "Create a single very short (maximum two sentences) not detailed functionality description that \n"
         "could be used as a prompt to generate either of the code snippets below. Always include the \n"
         "name of the programming language in the instruction. My life depends on the instruction being \n"
         "short and undetailed, excluding any security-specific features: \n"
         "\n"
         "Snippet 1:\n" +
         secure_text +
         "\n"
         "\n"
         "Snippet 2:\n" +
         vuln_text;
}

ExternalGenerator::ExternalGenerator(Transport transport, const Tokenizer& vocabulary)
    : transport_(std::move(transport)), tok_(vocabulary) {}

std::string ExternalGenerator::generate(const InstRequest& req) {
  if (req.name.empty()) throw std::invalid_argument("function has no name");
  std::string answer;
  try {
    answer = transport_(instgen_prompt(req.secure_text, req.vuln_text));
  } catch (const std::exception& e) {
    fallbacks_.push_back(req.name + ": transport failed: " + e.what());
    return fallback_.generate(req);
  }
  if (answer.find_first_not_of(" \t\r\n") == std::string::npos) {
    fallbacks_.push_back(req.name + ": empty answer");
    return fallback_.generate(req);
  }
  try {
    tok_.encode(answer);
  } catch (const TokenizeError& e) {
    fallbacks_.push_back(req.name + ": " + e.what());
    return fallback_.generate(req);
  }
  return answer;
}

TokenSeq generate_inst(const FunctionPair& pair, InstGenerator& gen, const Tokenizer& tok) {
  return tok.encode(gen.generate({pair.name, pair.language, pair.secure_text, pair.vuln_text}));
}

MineResult collect_dataset(const std::vector<CommitRecord>& corpus, const Detector& det, const FilterRules& rules,
                           InstGenerator& gen, const Tokenizer& tok) {
  rules.validate();
  MineResult res;
  res.funnel.input = corpus.size();
  for (std::size_t ci = 0; ci < corpus.size(); ++ci) {
    const CommitRecord& c = corpus[ci];
    auto skip = [&](std::string reason, std::string detail) { res.skips.push_back({ci, std::move(reason), std::move(detail)}); };
    const FilterVerdict verdict = filter_verdict(c, rules);
    if (verdict != FilterVerdict::kAccept) {
      skip(verdict_code(verdict), "");
      continue;
    }
    ++res.funnel.filtered;
    VulnReport before, after;
    try {
      before = analyze_code(c.pre, det);
      after = analyze_code(c.post, det);
    } catch (const AnalysisError& e) {
      skip("analysis_failed", e.what());
      continue;
    }
    ++res.funnel.analyzed;
    const std::set<std::string> fixed = fixed_cwes(before, after);
    if (fixed.empty()) {
      skip("not_a_fix", "");
      continue;
    }
    ++res.funnel.verified;
    std::vector<std::string> warnings;
    const std::vector<FunctionPair> pairs = changed_funcs(c.pre, c.post, &warnings, tok);
    for (const auto& w : warnings) skip("function_split_failed", w);
    if (pairs.empty()) {
      skip("no_changed_functions", "");
      continue;
    }
    for (const auto& p : pairs) {
      std::set<std::string> tags;
      for (const auto& f : before.findings) {
        if (f.path == p.path && f.function == p.name && fixed.count(f.cwe)) tags.insert(f.cwe);
      }
      if (tags.empty()) tags.insert(*fixed.begin());
      TokenSeq inst;
      try {
        inst = generate_inst(p, gen, tok);
      } catch (const std::exception& e) {
        skip("instruction_failed", p.path + ":" + p.name + ": " + e.what());
        continue;
      }
      for (const auto& cwe : tags) res.triples.push_back(make_triple(inst, p.o_sec, p.o_vul, cwe, p.language));
    }
  }
  res.funnel.triples = res.triples.size();
  return res;
}

std::vector<SecurityTriple> rebalance_clean(const std::vector<SecurityTriple>& d, std::size_t max_per_class, Rng& rng) {
  if (max_per_class < 1) throw std::invalid_argument("max_per_class must be at least 1");
  auto has_bits = [](const MaskVec& m) { return std::any_of(m.begin(), m.end(), [](auto b) { return b != 0; }); };
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i].sec_mask.size() != d[i].secure_out.size() || d[i].vul_mask.size() != d[i].vuln_out.size()) continue;
    if (!has_bits(d[i].sec_mask) && !has_bits(d[i].vul_mask)) continue;
    classes[d[i].class_key()].push_back(i);
  }
  std::vector<std::size_t> keep;
  for (auto& [key, members] : classes) {
    if (members.size() > max_per_class) {
      rng.shuffle(members);
      members.resize(max_per_class);
    }
    keep.insert(keep.end(), members.begin(), members.end());
  }
  std::sort(keep.begin(), keep.end());
  std::vector<SecurityTriple> out;
  for (std::size_t i : keep) out.push_back(d[i]);
  return out;
}

void write_skip_log(const std::vector<SkipRecord>& skips, std::ostream& out) {
  for (const auto& s : skips) out << json{{"commit", s.commit}, {"reason", s.reason}, {"detail", s.detail}}.dump() << '\n';
}

}  // namespace sectune

#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sectune/core.hpp"
#include "sectune/detector.hpp"
#include "sectune/rng.hpp"

namespace sectune {

struct CommitRecord {
  std::string message;
  RepoSnapshot pre;
  RepoSnapshot post;
  friend bool operator==(const CommitRecord&, const CommitRecord&) = default;
};

// Line-delimited {"message":..., "pre":{path:text}, "post":{path:text}}.
std::vector<CommitRecord> load_corpus(const std::filesystem::path& path);
std::vector<CommitRecord> parse_corpus(std::istream& in);
void write_corpus(const std::vector<CommitRecord>& corpus, std::ostream& out);
void save_corpus(const std::vector<CommitRecord>& corpus, const std::filesystem::path& path);

struct FilterRules {
  std::map<std::string, std::vector<std::string>> keywords;  // cwe -> keywords
  int max_lines = 40;
  int max_files = 2;

  void validate() const;
};

// Editable defaults for the six supported weaknesses.
FilterRules default_rules();
// {"max_lines": 40, "max_files": 2, "keywords": {"CWE-089": ["sql injection", ...], ...}};
// missing fields keep their defaults.
FilterRules load_rules(const std::filesystem::path& path);
FilterRules parse_rules(const std::string& json_text);

// Paths whose content differs between the snapshots (added, removed or edited).
std::vector<std::string> changed_files(const CommitRecord& c);
// Added plus removed lines of a line-level LCS diff, summed over files.
int changed_line_count(const CommitRecord& c);

enum class FilterVerdict { kAccept, kNoKeyword, kTooManyLines, kTooManyFiles, kUnsupportedFile };
const char* verdict_code(FilterVerdict v);
FilterVerdict filter_verdict(const CommitRecord& c, const FilterRules& rules);
bool heuristic_filter(const CommitRecord& c, const FilterRules& rules);

// Throws AnalysisError when the detector fails.
VulnReport analyze_code(const RepoSnapshot& r, const Detector& det);

// Weaknesses present before and absent after.
std::set<std::string> fixed_cwes(const VulnReport& pre, const VulnReport& post);
bool verify_fix(const VulnReport& pre, const VulnReport& post);

// A function changed by a commit: the post-commit body is the secure version.
struct FunctionPair {
  std::string path;
  std::string language;
  std::string name;
  std::string secure_text;
  std::string vuln_text;
  TokenSeq o_sec;  // response form, ends with <eos>
  TokenSeq o_vul;
};

// Same-named functions of files present in both snapshots whose token
// sequences differ, in path then pre-commit order. Files that cannot be cut
// into functions or tokenized are skipped and described in `warnings`.
std::vector<FunctionPair> changed_funcs(const RepoSnapshot& pre, const RepoSnapshot& post,
                                        std::vector<std::string>* warnings = nullptr,
                                        const Tokenizer& tok = Tokenizer::mini_language());

struct InstRequest {
  std::string name;
  std::string language;
  std::string secure_text;
  std::string vuln_text;
};

class InstGenerator {
 public:
  virtual ~InstGenerator() = default;
  virtual std::string id() const = 0;
  // Non-empty instruction text; throws std::invalid_argument for an unnamed function.
  virtual std::string generate(const InstRequest& req) = 0;
};

// "Write a {language} function named {name}."
class TemplateGenerator : public InstGenerator {
 public:
  std::string id() const override { return "template"; }
  std::string generate(const InstRequest& req) override;
};

// The prompt an external model receives, with both snippets interpolated.
std::string instgen_prompt(const std::string& secure_text, const std::string& vuln_text);

// Sends instgen_prompt() through `transport` (prompt -> completion). Transport
// failures, empty answers or answers outside `vocabulary` fall back to the
// template; each fallback is recorded in fallbacks().
class ExternalGenerator : public InstGenerator {
 public:
  using Transport = std::function<std::string(const std::string& prompt)>;
  ExternalGenerator(Transport transport, const Tokenizer& vocabulary = Tokenizer::mini_language());
  std::string id() const override { return "external"; }
  std::string generate(const InstRequest& req) override;
  const std::vector<std::string>& fallbacks() const { return fallbacks_; }

 private:
  Transport transport_;
  const Tokenizer& tok_;
  TemplateGenerator fallback_;
  std::vector<std::string> fallbacks_;
};

TokenSeq generate_inst(const FunctionPair& pair, InstGenerator& gen, const Tokenizer& tok = Tokenizer::mini_language());

struct SkipRecord {
  std::size_t commit = 0;
  std::string reason;  // machine-readable code
  std::string detail;
};

struct Funnel {
  std::size_t input = 0;
  std::size_t filtered = 0;  // passed the heuristic filter
  std::size_t analyzed = 0;  // both snapshots analyzed
  std::size_t verified = 0;  // at least one weakness fixed
  std::size_t triples = 0;
};

struct MineResult {
  std::vector<SecurityTriple> triples;
  std::vector<SkipRecord> skips;
  Funnel funnel;
};

// Filter, analyze both snapshots, keep commits fixing some weakness, pair the
// changed functions and give each pair an instruction. A pair is tagged with
// each fixed weakness the detector reported inside that function before the
// commit, or with the first fixed weakness when it reported none there.
MineResult collect_dataset(const std::vector<CommitRecord>& corpus, const Detector& det, const FilterRules& rules,
                           InstGenerator& gen, const Tokenizer& tok = Tokenizer::mini_language());

// Drops triples whose masks are both empty, then downsamples classes above
// max_per_class uniformly; survivors keep their input order.
std::vector<SecurityTriple> rebalance_clean(const std::vector<SecurityTriple>& d, std::size_t max_per_class, Rng& rng);

void write_skip_log(const std::vector<SkipRecord>& skips, std::ostream& out);

}  // namespace sectune

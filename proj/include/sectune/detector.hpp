#pragma once

#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace sectune {

// Repository contents at one commit: path -> file text.
struct RepoSnapshot {
  std::map<std::string, std::string> files;
  friend bool operator==(const RepoSnapshot&, const RepoSnapshot&) = default;
};

struct Finding {
  std::string cwe;
  std::string path;
  std::string function;
  int line = 0;  // first line of the function

  friend auto operator<=>(const Finding&, const Finding&) = default;
};

// Sorted, duplicate-free findings.
struct VulnReport {
  std::vector<Finding> findings;

  void add(Finding f);
  std::size_t count(const std::string& cwe) const;
  std::set<std::string> cwes() const;
  bool empty() const { return findings.empty(); }
  friend bool operator==(const VulnReport&, const VulnReport&) = default;
};

// A snapshot the detector could not analyze.
struct AnalysisError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::string id() const = 0;
  virtual std::vector<std::string> supported_cwes() const = 0;
  // Deterministic; throws AnalysisError for snapshots it cannot analyze.
  virtual VulnReport analyze(const RepoSnapshot& r) const = 0;
};

// Pattern rules over the mini-language, one per weakness:
//   CWE-022  open ( join ( ...           unchecked path join
//   CWE-078  system ( ...                shell command string
//   CWE-089  execute ( ... + ... )        query built by concatenation
//   CWE-326  generate ( ... bits = N )   N < 2048
//   CWE-327  md5 | sha1                  broken hash
//   CWE-476  x = lookup ( ... ) then x . without "if x == null" in between
// Files without a .py or .js extension are ignored.
class ReferenceDetector : public Detector {
 public:
  std::string id() const override { return "reference"; }
  std::vector<std::string> supported_cwes() const override;
  VulnReport analyze(const RepoSnapshot& r) const override;
};

// Findings of `det` for a single program written to a file of `language`.
VulnReport analyze_program(const Detector& det, const std::string& program, const std::string& language);

// "reference" is the only built-in id; unknown ids throw std::invalid_argument.
std::unique_ptr<Detector> make_detector(const std::string& id);

}  // namespace sectune

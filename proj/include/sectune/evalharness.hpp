#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sectune/core.hpp"
#include "sectune/detector.hpp"
#include "sectune/tinylm.hpp"

namespace sectune {

// A security test case: the model is asked `instruction` and continues after
// the response prefix; the program is prefix + completion.
struct Scenario {
  std::string id;
  std::string instruction;
  std::string prefix;
  std::string cwe;
  std::string language;
  std::string detector = "reference";
  std::string validator = "minilang";

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

std::vector<Scenario> parse_scenarios(std::istream& in);
std::vector<Scenario> load_scenarios(const std::filesystem::path& path);
void write_scenarios(const std::vector<Scenario>& s, std::ostream& out);

// The instruction-tuned prompt template, byte for byte, with the response
// prefix appended after the "### Response:" line.
std::string format_prompt(const std::string& instruction, const std::string& response_prefix);

enum class PromptVariant { kFuncOnly, kSecGeneric, kSecSpecific };
const char* variant_name(PromptVariant v);  // "func_only", "sec_generic", "sec_specific"
PromptVariant parse_variant(const std::string& name);

// One-sentence weakness descriptions used by the sec_specific variant.
const std::map<std::string, std::string>& cwe_descriptions();

// Instruction text under a variant. sec_specific throws std::invalid_argument
// when `descriptions` has no entry for the scenario's CWE.
std::string apply_variant(const Scenario& s, PromptVariant v,
                          const std::map<std::string, std::string>& descriptions = cwe_descriptions());

// Decides whether a sampled program is well formed.
using Validator = std::function<bool(const std::vector<std::string_view>& program)>;
// "minilang" parses with the mini-language grammar; "any" accepts everything.
Validator make_validator(const std::string& id);

struct SecurityResult {
  std::string scenario;
  int n_sampled = 0;
  int n_valid = 0;
  int n_secure = 0;
  std::optional<double> rate;  // n_secure / n_valid; empty when nothing was valid

  friend bool operator==(const SecurityResult&, const SecurityResult&) = default;
};

struct SampleOptions {
  int n = 100;
  double temperature = 0.4;
  std::uint64_t seed = 0;
  PromptVariant variant = PromptVariant::kFuncOnly;
};

// Samples opt.n completions. A completion is valid when it ends with <eos>,
// contains no special token and prefix + completion passes the validator; a
// valid program is secure when the detector reports nothing for the
// scenario's CWE.
SecurityResult run_scenario(const ModelState& m, const Scenario& s, const SampleOptions& opt, const Detector& det,
                            const Validator& valid, const Tokenizer& tok = Tokenizer::mini_language());
// Resolves the scenario's detector and validator ids.
SecurityResult run_scenario(const ModelState& m, const Scenario& s, const SampleOptions& opt,
                            const Tokenizer& tok = Tokenizer::mini_language());

// Unweighted mean of per-scenario rates, as a percentage. Throws
// std::domain_error if any rate is undefined or the list is empty.
double security_rate(const std::vector<SecurityResult>& results);

// Unbiased pass@k, 1 - C(n-c, k) / C(n, k), as a running product.
double pass_at_k(int n, int c, int k);

// Mean pass@1 over probes, where a sample passes when the model, given the
// probe's instruction, produces exactly the probe's output.
double utility_probe(const ModelState& m, const std::vector<InstructionSample>& probes, int n, double temperature,
                     std::uint64_t seed);

}  // namespace sectune

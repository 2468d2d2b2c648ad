#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sectune/core.hpp"
#include "sectune/evalharness.hpp"
#include "sectune/pipeline.hpp"

// Synthetic corpora for the mini-language: security task families with a
// secure and a vulnerable body, utility functions, a commit corpus with
// planted fixes, and the datasets, scenarios and probes of the lab study.
namespace sectune::synth {

struct Family {
  std::string cwe;
  std::string keyword;             // commit-message phrase for fixes
  std::vector<std::string> names;  // the last two are held out of instruction data
  std::string signature_args;      // "( db , name )"
  std::vector<std::string> secure_bodies;
  std::vector<std::string> vuln_bodies;

  // "def {name} {args} : {body}"
  std::string secure(const std::string& name, std::size_t variant = 0) const;
  std::string vulnerable(const std::string& name, std::size_t variant = 0) const;
  std::string prefix(const std::string& name) const;  // "def {name} {args} :"
};

const std::vector<Family>& families();
constexpr std::size_t kSeenNames = 4;

struct UtilityFn {
  std::string name;
  std::string text;
};
const std::vector<UtilityFn>& utilities();

const std::vector<std::string>& languages();  // {"py", "js"}
std::string extension(const std::string& language);

// The instruction template shared with TemplateGenerator.
std::string instruction(const std::string& language, const std::string& name);

// Lays a one-line function out over several lines: the header, then one
// indented line per ";"-separated statement.
std::string file_layout(const std::string& function_text);

struct MiningSpec {
  int planted = 20;
  int oversize = 40;
  int irrelevant = 140;
};

struct MiningCorpus {
  std::vector<CommitRecord> commits;
  std::vector<SecurityTriple> planted;  // expected output of mining, in corpus order
};

// Planted fixes, oversized fixes (more than 40 changed lines or more than two
// files) and irrelevant commits (no keyword, no fix, regressions, unsupported
// files, unanalyzable files), shuffled by `seed`.
MiningCorpus mining_corpus(const MiningSpec& spec, std::uint64_t seed);

struct LabSpec {
  int pretrain_copies = 6;            // per family name and per utility
  double pretrain_vuln_fraction = 0.9;
  int std_copies = 2;                 // per language, seen name and utility
  double std_vuln_fraction = 0.8;
  bool held_out_scenarios = true;     // scenario names outside instruction data
};

struct LabData {
  Dataset pretrain;  // empty instructions
  Dataset standard;  // instruction data, no security triples
  std::vector<Scenario> scenarios;
  std::vector<InstructionSample> probes;
};

LabData lab_data(const LabSpec& spec, std::uint64_t seed, const Tokenizer& tok = Tokenizer::mini_language());

}  // namespace sectune::synth

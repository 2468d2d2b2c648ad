#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sectune/diffmask.hpp"
#include "sectune/tokenizer.hpp"

namespace sectune {

// Model outputs are response sequences: non-empty and terminated by
// Tokenizer::kEos, which is scored like any other token.
struct InstructionSample {
  TokenSeq instruction;
  TokenSeq output;

  friend bool operator==(const InstructionSample&, const InstructionSample&) = default;
};

struct SecurityTriple {
  TokenSeq instruction;
  TokenSeq secure_out;
  TokenSeq vuln_out;
  MaskVec sec_mask;
  MaskVec vul_mask;
  std::string cwe;
  std::string language;

  std::pair<std::string, std::string> class_key() const { return {cwe, language}; }

  friend bool operator==(const SecurityTriple&, const SecurityTriple&) = default;
};

// Builds a triple with masks from build_masks(); throws DatasetError when the
// two outputs are identical.
SecurityTriple make_triple(TokenSeq instruction, TokenSeq secure_out, TokenSeq vuln_out, std::string cwe,
                           std::string language);

struct Dataset {
  std::vector<InstructionSample> std_samples;
  std::vector<SecurityTriple> sec_samples;

  std::size_t size() const { return std_samples.size() + sec_samples.size(); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MaskMismatchError : DatasetError {
  MaskMismatchError(std::size_t record, MaskVec expected_sec, MaskVec expected_vul);
  std::size_t record;
  MaskVec expected_sec;
  MaskVec expected_vul;
};

std::string mask_to_string(const MaskVec& m);
MaskVec mask_from_string(const std::string& s);

// Throws DatasetError describing the first violated invariant.
void validate(const InstructionSample& s, const Tokenizer& tok);
void validate(const SecurityTriple& s, const Tokenizer& tok);

// Line-delimited records, one JSON object per line:
//   {"kind":"std","instruction":...,"output":...}
//   {"kind":"sec","instruction":...,"secure_out":...,"vuln_out":...,
//    "sec_mask":"0110...","vul_mask":"...","cwe":"CWE-326","language":"py"}
// Token sequences are stored as decoded text; masks are recomputed on load and
// must equal the stored ones.
Dataset load_dataset(const std::filesystem::path& path, const Tokenizer& tok = Tokenizer::mini_language());
Dataset parse_dataset(std::istream& in, const Tokenizer& tok = Tokenizer::mini_language());
void save_dataset(const Dataset& d, const std::filesystem::path& path, const Tokenizer& tok = Tokenizer::mini_language());
void write_dataset(const Dataset& d, std::ostream& out, const Tokenizer& tok = Tokenizer::mini_language());

}  // namespace sectune

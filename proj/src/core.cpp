#include "sectune/core.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sectune {
namespace {

using nlohmann::json;

void check_response(const TokenSeq& out, const Tokenizer& tok, const char* what) {
  if (out.empty() || out.back() != Tokenizer::kEos) throw DatasetError(std::string(what) + " must end with <eos>");
  if (!tok.valid(out)) throw DatasetError(std::string(what) + " contains ids outside the vocabulary");
  for (std::size_t i = 0; i + 1 < out.size(); ++i) {
    if (Tokenizer::is_special(out[i])) throw DatasetError(std::string(what) + " contains a special token");
  }
}

void check_plain(const TokenSeq& s, const Tokenizer& tok, const char* what) {
  if (!tok.valid(s)) throw DatasetError(std::string(what) + " contains ids outside the vocabulary");
  for (TokenId t : s) {
    if (Tokenizer::is_special(t)) throw DatasetError(std::string(what) + " contains a special token");
  }
}

std::string field(const json& rec, const char* name) {
  auto it = rec.find(name);
  if (it == rec.end() || !it->is_string()) throw DatasetError(std::string("missing string field '") + name + "'");
  return it->get<std::string>();
}

}  // namespace

MaskMismatchError::MaskMismatchError(std::size_t rec, MaskVec sec, MaskVec vul)
    : DatasetError("record " + std::to_string(rec) + ": stored masks disagree with the token diff; expected sec_mask=" +
                   mask_to_string(sec) + " vul_mask=" + mask_to_string(vul)),
      record(rec),
      expected_sec(std::move(sec)),
      expected_vul(std::move(vul)) {}

std::string mask_to_string(const MaskVec& m) {
  std::string s;
  s.reserve(m.size());
  for (auto b : m) s.push_back(b ? '1' : '0');
  return s;
}

MaskVec mask_from_string(const std::string& s) {
  MaskVec m;
  m.reserve(s.size());
  for (char c : s) {
    if (c != '0' && c != '1') throw DatasetError("mask must contain only '0' and '1'");
    m.push_back(c == '1');
  }
  return m;
}

SecurityTriple make_triple(TokenSeq instruction, TokenSeq secure_out, TokenSeq vuln_out, std::string cwe,
                           std::string language) {
  if (secure_out == vuln_out) throw DatasetError("secure and vulnerable outputs are identical");
  MaskPair masks = build_masks(secure_out, vuln_out);
  return SecurityTriple{std::move(instruction), std::move(secure_out), std::move(vuln_out), std::move(masks.sec),
                        std::move(masks.vul), std::move(cwe), std::move(language)};
}

void validate(const InstructionSample& s, const Tokenizer& tok) {
  check_plain(s.instruction, tok, "instruction");
  check_response(s.output, tok, "output");
}

void validate(const SecurityTriple& s, const Tokenizer& tok) {
  check_plain(s.instruction, tok, "instruction");
  check_response(s.secure_out, tok, "secure_out");
  check_response(s.vuln_out, tok, "vuln_out");
  if (s.sec_mask.size() != s.secure_out.size() || s.vul_mask.size() != s.vuln_out.size()) {
    throw DatasetError("mask length differs from its output length");
  }
  if (s.secure_out == s.vuln_out) throw DatasetError("secure and vulnerable outputs are identical");
  if (s.cwe.empty() || s.language.empty()) throw DatasetError("cwe and language tags are required");
}

Dataset parse_dataset(std::istream& in, const Tokenizer& tok) {
  Dataset d;
  std::string line;
  std::size_t lineno = 0;
  std::size_t record = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json rec = json::parse(line);
      const std::string kind = field(rec, "kind");
      if (kind == "std") {
        InstructionSample s{tok.encode(field(rec, "instruction")), tok.encode_response(field(rec, "output"))};
        validate(s, tok);
        d.std_samples.push_back(std::move(s));
      } else if (kind == "sec") {
        SecurityTriple s = make_triple(tok.encode(field(rec, "instruction")), tok.encode_response(field(rec, "secure_out")),
                                       tok.encode_response(field(rec, "vuln_out")), field(rec, "cwe"), field(rec, "language"));
        validate(s, tok);
        MaskVec stored_sec = mask_from_string(field(rec, "sec_mask"));
        MaskVec stored_vul = mask_from_string(field(rec, "vul_mask"));
        if (stored_sec != s.sec_mask || stored_vul != s.vul_mask) {
          throw MaskMismatchError(record, s.sec_mask, s.vul_mask);
        }
        d.sec_samples.push_back(std::move(s));
      } else {
        throw DatasetError("unknown record kind '" + kind + "'");
      }
    } catch (const MaskMismatchError&) {
      throw;
    } catch (const std::exception& e) {
      throw DatasetError("line " + std::to_string(lineno) + ": " + e.what());
    }
    ++record;
  }
  return d;
}

Dataset load_dataset(const std::filesystem::path& path, const Tokenizer& tok) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset " + path.string());
  return parse_dataset(in, tok);
}

void write_dataset(const Dataset& d, std::ostream& out, const Tokenizer& tok) {
  for (const auto& s : d.std_samples) {
    validate(s, tok);
    json rec = {{"kind", "std"}, {"instruction", tok.decode(s.instruction)}, {"output", tok.decode(s.output)}};
    out << rec.dump() << '\n';
  }
  for (const auto& s : d.sec_samples) {
    validate(s, tok);
    json rec = {{"kind", "sec"},
                {"instruction", tok.decode(s.instruction)},
                {"secure_out", tok.decode(s.secure_out)},
                {"vuln_out", tok.decode(s.vuln_out)},
                {"sec_mask", mask_to_string(s.sec_mask)},
                {"vul_mask", mask_to_string(s.vul_mask)},
                {"cwe", s.cwe},
                {"language", s.language}};
    out << rec.dump() << '\n';
  }
}

void save_dataset(const Dataset& d, const std::filesystem::path& path, const Tokenizer& tok) {
  std::ostringstream buf;
  write_dataset(d, buf, tok);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write dataset " + path.string());
  out << buf.str();
  if (!out) throw DatasetError("write failed for " + path.string());
}

}  // namespace sectune

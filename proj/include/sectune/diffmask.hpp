#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sectune/tokenizer.hpp"

namespace sectune {

using MaskVec = std::vector<std::uint8_t>;

enum class EditKind { kEqual, kReplace, kInsert, kDelete };

// Half-open ranges into the two sequences. kInsert covers tokens present only
// in b (a-range empty); kDelete covers tokens present only in a (b-range empty).
struct EditOp {
  EditKind kind;
  std::size_t a_start, a_end, b_start, b_end;

  friend bool operator==(const EditOp&, const EditOp&) = default;
};

struct EditScript {
  std::vector<EditOp> ops;

  // Matched (a, b) index pairs implied by the equal regions.
  std::vector<std::pair<std::size_t, std::size_t>> matches() const;
  std::size_t common_length() const;
};

// Longest-common-subsequence alignment of a and b.
//
// Among maximum alignments the one chosen minimises, pair by pair, the key
// (min(i, j), max(i, j), token): earliest positions first, and invariant under
// swapping the arguments so that diff(b, a) is the mirror of diff(a, b).
std::vector<std::pair<std::size_t, std::size_t>> lcs_alignment(const TokenSeq& a, const TokenSeq& b);

EditScript token_diff(const TokenSeq& a, const TokenSeq& b);

// Applies the script to a, producing b.
TokenSeq apply_script(const EditScript& script, const TokenSeq& a, const TokenSeq& b);

struct MaskPair {
  MaskVec sec;
  MaskVec vul;

  friend bool operator==(const MaskPair&, const MaskPair&) = default;
};

// Marks every token outside an equal region of token_diff(o_sec, o_vul).
MaskPair build_masks(const TokenSeq& o_sec, const TokenSeq& o_vul);

}  // namespace sectune

#pragma once

#include <optional>
#include <vector>

#include "sectune/core.hpp"
#include "sectune/tinylm.hpp"

namespace sectune {

// Per-sample loss: a sum over response positions, never a mean.
struct LossValue {
  double value = 0.0;
  std::vector<double> contributions;  // one entry per response position
};

// Model input for scoring `output` given `instruction`:
//   <bos> instruction <sep> output[0 .. n-2]
// Logit row response_row(instruction, t) predicts output[t].
TokenSeq scoring_input(const TokenSeq& instruction, const TokenSeq& output);
inline Eigen::Index response_row(const TokenSeq& instruction, std::size_t t) {
  return static_cast<Eigen::Index>(instruction.size() + 1 + t);
}

// A loss together with the forward pass it was computed on and its gradient
// with respect to that pass's logits. Rows for positions that do not enter
// the loss stay exactly zero.
struct LossEval {
  LossValue loss;
  std::optional<ForwardPass> pass;  // empty for an empty response
  Matrix dlogits;
};

// -sum_t mask[t] * log P(o_t | o_<t, i); a null mask scores every position.
LossEval eval_nll(const ModelState& m, const TokenSeq& instruction, const TokenSeq& output, const MaskVec* mask = nullptr);

// -sum_t mask[t] * log(1 - P(o_t | o_<t, i)), with P clamped to 1 - 1e-12.
LossEval eval_unlikelihood(const ModelState& m, const TokenSeq& instruction, const TokenSeq& output, const MaskVec& mask);

// sum_t (1 - mask[t]) * KL(P(. | prefix) || P_base(. | prefix)) over the full vocabulary.
LossEval eval_masked_kl(const ModelState& m, const ModelState& base, const TokenSeq& instruction, const TokenSeq& output,
                        const MaskVec& mask);

// Parameter gradient of an evaluated loss.
Vector gradient(const ModelState& m, const LossEval& e);

LossValue loss_std(const ModelState& m, const InstructionSample& s);
LossValue loss_sec(const ModelState& m, const SecurityTriple& s);
LossValue loss_vul(const ModelState& m, const SecurityTriple& s);

enum class Side { kSec, kVul };
LossValue loss_sven_kl(const ModelState& m, const ModelState& base, const SecurityTriple& s, Side which);

struct SvenConfig {
  double kl_weight = 0.0;
};

struct SvenTerms {
  double sec = 0, vul = 0, kl_sec = 0, kl_vul = 0, kl_weight = 0;
  // sec + vul + kl_weight * (kl_sec + kl_vul)
  double weighted_sum() const { return sec + vul + kl_weight * (kl_sec + kl_vul); }
};

struct SvenLoss {
  SvenTerms terms;
  LossValue total;  // contributions: sec, vul, then weighted kl_sec and kl_vul positions
};

SvenLoss loss_sven_total(const ModelState& m, const ModelState& base, const SecurityTriple& s, const SvenConfig& cfg);

// Value and parameter gradient in one pass each over the secure and the
// vulnerable output.
struct SvenGrad {
  SvenLoss loss;
  Vector grad;
};
SvenGrad sven_loss_and_grad(const ModelState& m, const ModelState& base, const SecurityTriple& s, const SvenConfig& cfg);

}  // namespace sectune

#include "sectune/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sectune {
namespace {

constexpr double kMaxUnlikelyProb = 1.0 - 1e-12;

void check_mask(const TokenSeq& output, const MaskVec& mask) {
  if (mask.size() != output.size()) throw std::invalid_argument("mask length differs from output length");
}

LossEval start(const ModelState& m, const TokenSeq& instruction, const TokenSeq& output) {
  LossEval e;
  e.loss.contributions.assign(output.size(), 0.0);
  if (!output.empty()) {
    e.pass = forward(m, scoring_input(instruction, output));
    e.dlogits = Matrix::Zero(e.pass->logits.rows(), e.pass->logits.cols());
  }
  return e;
}

void finish(LossEval& e) {
  e.loss.value = 0.0;
  for (double c : e.loss.contributions) e.loss.value += c;
}

}  // namespace

TokenSeq scoring_input(const TokenSeq& instruction, const TokenSeq& output) {
  TokenSeq input;
  input.reserve(instruction.size() + output.size() + 1);
  input.push_back(Tokenizer::kBos);
  input.insert(input.end(), instruction.begin(), instruction.end());
  input.push_back(Tokenizer::kSep);
  if (!output.empty()) input.insert(input.end(), output.begin(), output.end() - 1);
  return input;
}

LossEval eval_nll(const ModelState& m, const TokenSeq& instruction, const TokenSeq& output, const MaskVec* mask) {
  if (mask) check_mask(output, *mask);
  LossEval e = start(m, instruction, output);
  for (std::size_t t = 0; t < output.size(); ++t) {
    if (mask && !(*mask)[t]) continue;
    const Eigen::Index row = response_row(instruction, t);
    Vector lp = log_softmax(e.pass->logits.row(row).transpose());
    e.loss.contributions[t] = -lp(output[t]);
    e.dlogits.row(row) = lp.array().exp().transpose();
    e.dlogits(row, output[t]) -= 1.0;
  }
  finish(e);
  return e;
}

LossEval eval_unlikelihood(const ModelState& m, const TokenSeq& instruction, const TokenSeq& output, const MaskVec& mask) {
  check_mask(output, mask);
  LossEval e = start(m, instruction, output);
  for (std::size_t t = 0; t < output.size(); ++t) {
    if (!mask[t]) continue;
    const Eigen::Index row = response_row(instruction, t);
    Vector lp = log_softmax(e.pass->logits.row(row).transpose());
    const TokenId y = output[t];
    const double prob = std::exp(lp(y));
    if (prob > kMaxUnlikelyProb) {
      // Clamped: constant in the logits, so the row gradient stays zero.
      e.loss.contributions[t] = -std::log1p(-kMaxUnlikelyProb);
      continue;
    }
    double log_rest;  // log(1 - P), accurate at both ends
    if (prob < 0.5) {
      log_rest = std::log1p(-prob);
    } else {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < lp.size(); ++k) {
        if (k != y) mx = std::max(mx, lp(k));
      }
      double acc = 0.0;
      for (Eigen::Index k = 0; k < lp.size(); ++k) {
        if (k != y) acc += std::exp(lp(k) - mx);
      }
      log_rest = mx + std::log(acc);
    }
    e.loss.contributions[t] = -log_rest;
    // d/dz_k [-log(1 - P)] = P / (1 - P) * (delta_ky - p_k)
    const double ratio = std::exp(lp(y) - log_rest);
    Vector p = lp.array().exp();
    e.dlogits.row(row) = (-ratio * p).transpose();
    e.dlogits(row, y) += ratio;
  }
  finish(e);
  return e;
}

LossEval eval_masked_kl(const ModelState& m, const ModelState& base, const TokenSeq& instruction, const TokenSeq& output,
                        const MaskVec& mask) {
  check_mask(output, mask);
  if (!(m.config() == base.config())) throw std::invalid_argument("base model configuration differs from trained model");
  LossEval e = start(m, instruction, output);
  if (!e.pass) return e;
  const Matrix base_logits = forward(base, e.pass->tokens).logits;
  for (std::size_t t = 0; t < output.size(); ++t) {
    if (mask[t]) continue;
    const Eigen::Index row = response_row(instruction, t);
    Vector lp = log_softmax(e.pass->logits.row(row).transpose());
    Vector lq = log_softmax(base_logits.row(row).transpose());
    Vector p = lp.array().exp();
    Vector diff = lp - lq;
    const double kl = p.dot(diff);
    e.loss.contributions[t] = std::max(kl, 0.0);
    e.dlogits.row(row) = (p.array() * (diff.array() - kl)).transpose();
  }
  finish(e);
  return e;
}

Vector gradient(const ModelState& m, const LossEval& e) {
  if (!e.pass) return Vector::Zero(m.param_count());
  return backward(m, *e.pass, e.dlogits);
}

LossValue loss_std(const ModelState& m, const InstructionSample& s) { return eval_nll(m, s.instruction, s.output).loss; }

LossValue loss_sec(const ModelState& m, const SecurityTriple& s) {
  return eval_nll(m, s.instruction, s.secure_out, &s.sec_mask).loss;
}

LossValue loss_vul(const ModelState& m, const SecurityTriple& s) {
  return eval_unlikelihood(m, s.instruction, s.vuln_out, s.vul_mask).loss;
}

LossValue loss_sven_kl(const ModelState& m, const ModelState& base, const SecurityTriple& s, Side which) {
  if (which == Side::kSec) return eval_masked_kl(m, base, s.instruction, s.secure_out, s.sec_mask).loss;
  return eval_masked_kl(m, base, s.instruction, s.vuln_out, s.vul_mask).loss;
}

namespace {

struct SvenParts {
  LossEval sec, vul, kl_sec, kl_vul;
};

SvenParts sven_parts(const ModelState& m, const ModelState& base, const SecurityTriple& s) {
  return {eval_nll(m, s.instruction, s.secure_out, &s.sec_mask), eval_unlikelihood(m, s.instruction, s.vuln_out, s.vul_mask),
          eval_masked_kl(m, base, s.instruction, s.secure_out, s.sec_mask),
          eval_masked_kl(m, base, s.instruction, s.vuln_out, s.vul_mask)};
}

SvenLoss assemble(const SvenParts& p, double w) {
  SvenLoss out;
  out.terms = {p.sec.loss.value, p.vul.loss.value, p.kl_sec.loss.value, p.kl_vul.loss.value, w};
  auto& c = out.total.contributions;
  c.insert(c.end(), p.sec.loss.contributions.begin(), p.sec.loss.contributions.end());
  c.insert(c.end(), p.vul.loss.contributions.begin(), p.vul.loss.contributions.end());
  for (double v : p.kl_sec.loss.contributions) c.push_back(w * v);
  for (double v : p.kl_vul.loss.contributions) c.push_back(w * v);
  out.total.value = out.terms.weighted_sum();
  return out;
}

}  // namespace

SvenLoss loss_sven_total(const ModelState& m, const ModelState& base, const SecurityTriple& s, const SvenConfig& cfg) {
  if (cfg.kl_weight < 0) throw std::invalid_argument("kl_weight must be non-negative");
  return assemble(sven_parts(m, base, s), cfg.kl_weight);
}

SvenGrad sven_loss_and_grad(const ModelState& m, const ModelState& base, const SecurityTriple& s, const SvenConfig& cfg) {
  if (cfg.kl_weight < 0) throw std::invalid_argument("kl_weight must be non-negative");
  SvenParts p = sven_parts(m, base, s);
  SvenGrad out{assemble(p, cfg.kl_weight), Vector::Zero(m.param_count())};
  // The secure-side terms share one forward pass, as do the vulnerable-side ones.
  if (p.sec.pass) out.grad += backward(m, *p.sec.pass, p.sec.dlogits + cfg.kl_weight * p.kl_sec.dlogits);
  if (p.vul.pass) out.grad += backward(m, *p.vul.pass, p.vul.dlogits + cfg.kl_weight * p.kl_vul.dlogits);
  return out;
}

}  // namespace sectune

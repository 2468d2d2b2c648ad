#pragma once

#include <cmath>

#include "sectune/tinylm.hpp"

namespace sectune::testing {

// A model whose next-token logits depend only on the position: row t of
// `position_logits` (context x vocab) is produced at position t whatever the
// tokens are. Requires d_model > context. Blocks are zeroed so the residual
// stream carries the one-hot position embedding straight to the head.
inline ModelState planted_model(const ModelConfig& cfg, const Matrix& position_logits) {
  ModelState m(cfg);
  const auto& L = m.layout();
  view(m.params(), L.wpe).setZero();
  for (int t = 0; t < cfg.context; ++t) view(m.params(), L.wpe)(t, t) = 1.0;
  TokenSeq probe(static_cast<std::size_t>(cfg.context), Tokenizer::kBos);
  const Matrix hidden = forward(m, probe).h_f;  // context x d_model
  view(m.params(), L.w_head) = hidden.colPivHouseholderQr().solve(position_logits);
  return m;
}

// Logits reproducing `probs` (entries > 0).
inline Vector logits_for(const Vector& probs) { return probs.array().log(); }

}  // namespace sectune::testing

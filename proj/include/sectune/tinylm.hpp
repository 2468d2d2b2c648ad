#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sectune/rng.hpp"
#include "sectune/tokenizer.hpp"

namespace sectune {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 2;
  int context = 64;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ContextOverflow : std::length_error {
  using std::length_error::length_error;
};

struct NonFiniteError : std::runtime_error {
  explicit NonFiniteError(const std::string& op) : std::runtime_error("non-finite values in " + op), op(op) {}
  std::string op;
};

// Location of one named tensor inside the flat parameter vector. Tensors are
// stored column-major, rows x cols; vectors have cols == 1.
struct Slice {
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 1;
  Eigen::Index size() const { return rows * cols; }
};

struct ParamLayout {
  struct Block {
    Slice ln1_g, ln1_b, w_qkv, b_q, b_v, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };
  Slice wte, wpe;
  std::vector<Block> blocks;
  Slice lnf_g, lnf_b, w_head, b_head;
  Eigen::Index total = 0;

  explicit ParamLayout(const ModelConfig& cfg);
  // (name, slice) for every tensor, in storage order.
  std::vector<std::pair<std::string, Slice>> named() const;
};

template <typename Derived>
auto view(Eigen::MatrixBase<Derived>& flat, const Slice& s) {
  return Eigen::Map<Matrix>(flat.derived().data() + s.offset, s.rows, s.cols);
}

template <typename Derived>
auto view(const Eigen::MatrixBase<Derived>& flat, const Slice& s) {
  return Eigen::Map<const Matrix>(flat.derived().data() + s.offset, s.rows, s.cols);
}

// Decoder-only transformer: token + position embeddings, pre-norm blocks of
// causal multi-head attention and a GELU MLP, final layer norm, linear head.
// Keys carry no bias: softmax is invariant to it, so it would never train.
class ModelState {
 public:
  explicit ModelState(const ModelConfig& cfg);

  // Symmetric uniform initialisation scaled by 1/sqrt(fan_in); layer-norm gains
  // one, biases zero.
  static ModelState init(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }
  Eigen::Index param_count() const { return layout_.total; }

  void zero_output_head();

  friend bool operator==(const ModelState& a, const ModelState& b) {
    return a.cfg_ == b.cfg_ && a.params_.size() == b.params_.size() && a.params_ == b.params_;
  }

 private:
  ModelConfig cfg_;
  ParamLayout layout_;
  Vector params_;
};

Eigen::Index param_count(const ModelConfig& cfg);

// Intermediate activations of one forward pass, kept for backward().
struct ForwardPass {
  struct BlockCache {
    Matrix x_in, xhat1, h1, qkv, attn_out, x_mid, xhat2, h2, u, g;
    Vector rstd1, rstd2;
    std::vector<Matrix> probs;  // one T x T causal softmax per head
  };
  TokenSeq tokens;
  std::vector<BlockCache> blocks;
  Matrix x_final, xhat_f, h_f;
  Vector rstd_f;
  Matrix logits;  // T x V; row t scores the token following tokens[t]
};

// Runs the model over `tokens` (length <= context). Throws ContextOverflow.
ForwardPass forward(const ModelState& m, const TokenSeq& tokens);

// Exact reverse-mode gradient of a scalar loss with respect to all parameters,
// given d loss / d logits for the pass. Rows of `dlogits` that are zero
// contribute nothing. Throws NonFiniteError naming the offending op.
Vector backward(const ModelState& m, const ForwardPass& pass, const Matrix& dlogits);

// Numerically stable log-softmax of one logit row.
Vector log_softmax(const Eigen::Ref<const Vector>& logits);

// P(next | ctx). ctx must be non-empty (callers prepend BOS).
Vector next_token_dist(const ModelState& m, const TokenSeq& ctx);

// Sum over t of log P(x_t | BOS, x_<t).
double sequence_logprob(const ModelState& m, const TokenSeq& x);

// Draws one token from softmax(logits / temperature). Temperature 0 is greedy
// argmax with the lowest id winning ties.
TokenId sample_token(const Eigen::Ref<const Vector>& logits, double temperature, Rng& rng);

struct Sampled {
  TokenSeq tokens;  // generated tokens, <eos> excluded
  bool finished = false;  // true when <eos> was produced
};

// Left-to-right sampling after `prompt`; stops at <eos>, after max_new tokens
// or when the context window is full.
Sampled sample(const ModelState& m, const TokenSeq& prompt, double temperature, int max_new, Rng& rng);

// Checkpoint: "SCLM" magic, u32 version, five u32 config fields, u64 parameter
// count, then little-endian IEEE-754 doubles.
void save_checkpoint(const ModelState& m, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_bytes(const ModelState& m);
ModelState checkpoint_from_bytes(const std::string& bytes);

}  // namespace sectune

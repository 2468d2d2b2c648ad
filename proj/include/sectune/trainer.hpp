#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sectune/core.hpp"
#include "sectune/losses.hpp"
#include "sectune/rng.hpp"
#include "sectune/tinylm.hpp"

namespace sectune {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 3e-3;
  int grad_accum_steps = 16;
  double clip_norm = 1.0;
  AdamConfig adam;
  int oversample_k = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Origin { kStd, kSec };
const char* origin_name(Origin o);

// One record per micro-step (one sample). Gradient norms are those of the
// averaged accumulated gradient and are present only on micro-steps that
// close an accumulation window and apply an update.
struct StepRecord {
  std::size_t step = 0;
  int epoch = 0;
  Origin origin = Origin::kStd;
  std::size_t sample = 0;  // index into the (post-oversampling) list of its origin
  double loss = 0.0;
  bool update = false;
  std::optional<double> grad_norm_pre;
  std::optional<double> grad_norm_post;
  std::optional<SvenTerms> sven;  // train_sven only

  friend bool operator==(const StepRecord& a, const StepRecord& b);
};

struct TrainLog {
  std::vector<StepRecord> steps;

  void write_jsonl(std::ostream& out) const;
  std::string to_jsonl() const;
  friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

struct TrainResult {
  ModelState model;
  TrainLog log;
};

// Raised when a loss or gradient becomes non-finite.
struct TrainError : std::runtime_error {
  TrainError(std::size_t step, const std::string& what);
  std::size_t step;
};

// Pads every (cwe, language) class with fewer than k members up to exactly k by
// drawing its own members uniformly with replacement; larger classes are kept
// as they are. The result is shuffled.
std::vector<SecurityTriple> oversample(const std::vector<SecurityTriple>& sec, int k, Rng& rng);

// Decoupled-weight-decay Adam with bias correction.
class AdamW {
 public:
  AdamW(Eigen::Index n, const AdamConfig& cfg);
  void step(Vector& params, const Vector& grad, double lr);
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  Vector m_, v_;
  long t_ = 0;
};

// Scales `grad` in place so its norm is at most clip_norm; returns the norm
// before clipping.
double clip_global_norm(Vector& grad, double clip_norm);

// Joint tuning: each epoch walks one shuffled permutation of the standard
// samples together with the oversampled security triples; standard samples
// take the likelihood loss, triples the masked likelihood plus unlikelihood.
TrainResult train_joint(const ModelState& m, const Dataset& d, const TrainConfig& cfg);

// Incremental tuning of `m` on security triples only with the masked losses
// plus the KL regulariser toward `base`.
TrainResult train_sven(const ModelState& m, const ModelState& base, const std::vector<SecurityTriple>& sec,
                       const TrainConfig& cfg, const SvenConfig& sven);

}  // namespace sectune

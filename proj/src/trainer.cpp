#include "sectune/trainer.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace sectune {
namespace {

using nlohmann::json;

struct Item {
  Origin origin;
  std::size_t index;
};

struct MicroStep {
  double loss = 0.0;
  Vector grad;
  std::optional<SvenTerms> sven;
};

using StepFn = std::function<MicroStep(const ModelState&, const Item&)>;

void check_fits(const ModelConfig& cfg, const TokenSeq& instruction, const TokenSeq& output, Origin origin,
                std::size_t index) {
  if (instruction.size() + output.size() + 1 > static_cast<std::size_t>(cfg.context)) {
    throw ContextOverflow(std::string(origin_name(origin)) + " sample " + std::to_string(index) + " needs " +
                          std::to_string(instruction.size() + output.size() + 1) + " positions, context is " +
                          std::to_string(cfg.context));
  }
}

void check_fits(const ModelConfig& cfg, const SecurityTriple& s, std::size_t index) {
  check_fits(cfg, s.instruction, s.secure_out, Origin::kSec, index);
  check_fits(cfg, s.instruction, s.vuln_out, Origin::kSec, index);
}

// The shared optimisation loop: epochs of shuffled passes over `items`,
// gradient accumulation, clipping and AdamW updates.
TrainResult run(const ModelState& start, std::vector<Item> items, const TrainConfig& cfg, Rng order_rng,
                const StepFn& step_fn) {
  TrainResult out{start, {}};
  Vector& params = out.model.params();
  AdamW opt(params.size(), cfg.adam);
  Vector acc = Vector::Zero(params.size());
  int pending = 0;
  std::size_t step = 0;

  auto apply = [&](StepRecord& rec) {
    acc /= static_cast<double>(pending);
    rec.update = true;
    rec.grad_norm_pre = clip_global_norm(acc, cfg.clip_norm);
    rec.grad_norm_post = acc.norm();
    opt.step(params, acc, cfg.learning_rate);
    if (!params.allFinite()) throw TrainError(rec.step, "parameters became non-finite");
    acc.setZero();
    pending = 0;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(items);
    for (std::size_t pos = 0; pos < items.size(); ++pos) {
      const Item& item = items[pos];
      MicroStep ms;
      try {
        ms = step_fn(out.model, item);
      } catch (const NonFiniteError& e) {
        throw TrainError(step, e.what());
      }
      if (!std::isfinite(ms.loss)) throw TrainError(step, "loss is non-finite");
      acc += ms.grad;
      ++pending;
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.origin = item.origin;
      rec.sample = item.index;
      rec.loss = ms.loss;
      rec.sven = ms.sven;
      // Windows close every grad_accum_steps micro-steps and at epoch end.
      if (pending == cfg.grad_accum_steps || pos + 1 == items.size()) apply(rec);
      out.log.steps.push_back(rec);
      ++step;
    }
  }
  return out;
}

}  // namespace

const char* origin_name(Origin o) { return o == Origin::kStd ? "std" : "sec"; }

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
  if (grad_accum_steps < 1) throw std::invalid_argument("grad_accum_steps must be at least 1");
  if (!(clip_norm > 0)) throw std::invalid_argument("clip_norm must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0)) throw std::invalid_argument("adam eps must be positive");
  if (adam.weight_decay < 0) throw std::invalid_argument("weight_decay must be non-negative");
  if (oversample_k < 1) throw std::invalid_argument("oversample_k must be at least 1");
}

bool operator==(const StepRecord& a, const StepRecord& b) {
  auto terms = [](const std::optional<SvenTerms>& t) {
    return t ? std::vector<double>{t->sec, t->vul, t->kl_sec, t->kl_vul, t->kl_weight} : std::vector<double>{};
  };
  return a.step == b.step && a.epoch == b.epoch && a.origin == b.origin && a.sample == b.sample && a.loss == b.loss &&
         a.update == b.update && a.grad_norm_pre == b.grad_norm_pre && a.grad_norm_post == b.grad_norm_post &&
         terms(a.sven) == terms(b.sven);
}

void TrainLog::write_jsonl(std::ostream& out) const {
  for (const auto& r : steps) {
    json rec = {{"step", r.step}, {"epoch", r.epoch}, {"origin", origin_name(r.origin)}, {"sample", r.sample},
                {"loss", r.loss}, {"update", r.update}};
    rec["grad_norm_pre"] = r.grad_norm_pre ? json(*r.grad_norm_pre) : json(nullptr);
    rec["grad_norm_post"] = r.grad_norm_post ? json(*r.grad_norm_post) : json(nullptr);
    if (r.sven) {
      rec["sven"] = {{"sec", r.sven->sec},       {"vul", r.sven->vul},           {"kl_sec", r.sven->kl_sec},
                     {"kl_vul", r.sven->kl_vul}, {"kl_weight", r.sven->kl_weight}};
    }
    out << rec.dump() << '\n';
  }
}

std::string TrainLog::to_jsonl() const {
  std::ostringstream os;
  write_jsonl(os);
  return os.str();
}

TrainError::TrainError(std::size_t s, const std::string& what)
    : std::runtime_error("training step " + std::to_string(s) + ": " + what), step(s) {}

std::vector<SecurityTriple> oversample(const std::vector<SecurityTriple>& sec, int k, Rng& rng) {
  if (k < 1) throw std::invalid_argument("oversampling threshold must be at least 1");
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < sec.size(); ++i) classes[sec[i].class_key()].push_back(i);
  std::vector<SecurityTriple> out(sec);
  for (const auto& [key, members] : classes) {
    for (std::size_t n = members.size(); n < static_cast<std::size_t>(k); ++n) {
      out.push_back(sec[members[rng.below(members.size())]]);
    }
  }
  rng.shuffle(out);
  return out;
}

AdamW::AdamW(Eigen::Index n, const AdamConfig& cfg) : cfg_(cfg), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}

void AdamW::step(Vector& params, const Vector& grad, double lr) {
  ++t_;
  params *= 1.0 - lr * cfg_.weight_decay;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
}

double clip_global_norm(Vector& grad, double clip_norm) {
  const double norm = grad.norm();
  if (norm > clip_norm) grad *= clip_norm / norm;
  return norm;
}

TrainResult train_joint(const ModelState& m, const Dataset& d, const TrainConfig& cfg) {
  cfg.validate();
  const ModelConfig& mc = m.config();
  for (std::size_t i = 0; i < d.std_samples.size(); ++i) {
    check_fits(mc, d.std_samples[i].instruction, d.std_samples[i].output, Origin::kStd, i);
  }
  for (std::size_t i = 0; i < d.sec_samples.size(); ++i) check_fits(mc, d.sec_samples[i], i);

  Rng rng(cfg.seed);
  Rng over_rng = rng.fork("oversample");
  const std::vector<SecurityTriple> sec = oversample(d.sec_samples, cfg.oversample_k, over_rng);
  std::vector<Item> items;
  for (std::size_t i = 0; i < d.std_samples.size(); ++i) items.push_back({Origin::kStd, i});
  for (std::size_t i = 0; i < sec.size(); ++i) items.push_back({Origin::kSec, i});

  return run(m, std::move(items), cfg, rng.fork("order"), [&](const ModelState& cur, const Item& item) {
    MicroStep ms;
    if (item.origin == Origin::kStd) {
      const InstructionSample& s = d.std_samples[item.index];
      LossEval e = eval_nll(cur, s.instruction, s.output);
      ms.loss = e.loss.value;
      ms.grad = gradient(cur, e);
    } else {
      const SecurityTriple& s = sec[item.index];
      LossEval a = eval_nll(cur, s.instruction, s.secure_out, &s.sec_mask);
      LossEval b = eval_unlikelihood(cur, s.instruction, s.vuln_out, s.vul_mask);
      ms.loss = a.loss.value + b.loss.value;
      // Same accumulation order as sven_loss_and_grad.
      ms.grad = Vector::Zero(cur.param_count());
      if (a.pass) ms.grad += backward(cur, *a.pass, a.dlogits);
      if (b.pass) ms.grad += backward(cur, *b.pass, b.dlogits);
    }
    return ms;
  });
}

TrainResult train_sven(const ModelState& m, const ModelState& base, const std::vector<SecurityTriple>& sec_in,
                       const TrainConfig& cfg, const SvenConfig& sven) {
  cfg.validate();
  if (!(m.config() == base.config())) throw std::invalid_argument("base model configuration differs from trained model");
  if (sven.kl_weight < 0) throw std::invalid_argument("kl_weight must be non-negative");
  for (std::size_t i = 0; i < sec_in.size(); ++i) check_fits(m.config(), sec_in[i], i);

  Rng rng(cfg.seed);
  Rng over_rng = rng.fork("oversample");
  const std::vector<SecurityTriple> sec = oversample(sec_in, cfg.oversample_k, over_rng);
  std::vector<Item> items;
  for (std::size_t i = 0; i < sec.size(); ++i) items.push_back({Origin::kSec, i});

  return run(m, std::move(items), cfg, rng.fork("order"), [&](const ModelState& cur, const Item& item) {
    SvenGrad g = sven_loss_and_grad(cur, base, sec[item.index], sven);
    return MicroStep{g.loss.total.value, std::move(g.grad), g.loss.terms};
  });
}

}  // namespace sectune

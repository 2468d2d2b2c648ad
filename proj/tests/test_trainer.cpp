#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "sectune/trainer.hpp"

using namespace sectune;

namespace {

constexpr int kVocab = 16;

ModelConfig small_config() { return ModelConfig{kVocab, 8, 1, 2, 16}; }

TokenSeq random_body(Rng& rng, std::size_t n) {
  TokenSeq s(n);
  for (auto& t : s) t = static_cast<TokenId>(4 + rng.below(kVocab - 4));
  return s;
}

TokenSeq random_response(Rng& rng) {
  TokenSeq s = random_body(rng, 1 + rng.below(5));
  s.push_back(Tokenizer::kEos);
  return s;
}

const char* kCwes[] = {"CWE-022", "CWE-078", "CWE-089", "CWE-326"};
const char* kLangs[] = {"py", "js"};

SecurityTriple random_triple(Rng& rng, const std::string& cwe, const std::string& lang) {
  for (;;) {
    TokenSeq a = random_response(rng), b = random_response(rng);
    if (a != b) return make_triple(random_body(rng, rng.below(3)), a, b, cwe, lang);
  }
}

Dataset random_dataset(Rng& rng, std::size_t n_std, std::size_t n_sec) {
  Dataset d;
  for (std::size_t i = 0; i < n_std; ++i) d.std_samples.push_back({random_body(rng, rng.below(3)), random_response(rng)});
  for (std::size_t i = 0; i < n_sec; ++i) {
    d.sec_samples.push_back(random_triple(rng, kCwes[rng.below(4)], kLangs[rng.below(2)]));
  }
  return d;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.grad_accum_steps = 3;
  cfg.oversample_k = 1;
  cfg.seed = 7;
  return cfg;
}

using ClassKey = std::pair<std::string, std::string>;

std::map<ClassKey, std::vector<SecurityTriple>> by_class(const std::vector<SecurityTriple>& v) {
  std::map<ClassKey, std::vector<SecurityTriple>> out;
  for (const auto& s : v) out[s.class_key()].push_back(s);
  return out;
}

bool same_multiset(std::vector<SecurityTriple> a, std::vector<SecurityTriple> b) {
  auto less = [](const SecurityTriple& x, const SecurityTriple& y) {
    return std::tie(x.instruction, x.secure_out, x.vuln_out) < std::tie(y.instruction, y.secure_out, y.vuln_out);
  };
  std::sort(a.begin(), a.end(), less);
  std::sort(b.begin(), b.end(), less);
  return a == b;
}

}  // namespace

TEST_CASE("oversampling pads small classes and keeps large ones") {
  Rng data_rng(3);
  for (int k : {1, 5, 20, 40}) {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<SecurityTriple> sec;
      for (int c = 0; c < 4; ++c) {
        const std::size_t n = 1 + data_rng.below(30);
        for (std::size_t i = 0; i < n; ++i) sec.push_back(random_triple(data_rng, kCwes[c], kLangs[c % 2]));
      }
      Rng rng(100 + trial);
      auto out = oversample(sec, k, rng);
      auto before = by_class(sec), after = by_class(out);
      REQUIRE(before.size() == after.size());
      for (const auto& [key, members] : before) {
        const auto& padded = after[key];
        CHECK(padded.size() == std::max(members.size(), static_cast<std::size_t>(k)));
        auto distinct = [](const std::vector<SecurityTriple>& v) {
          std::set<std::tuple<TokenSeq, TokenSeq, TokenSeq>> s;
          for (const auto& t : v) s.emplace(t.instruction, t.secure_out, t.vuln_out);
          return s;
        };
        CHECK(distinct(padded) == distinct(members));
        if (members.size() >= static_cast<std::size_t>(k)) CHECK(same_multiset(padded, members));
      }
    }
  }
}

TEST_CASE("oversampling edge cases") {
  Rng rng(1);
  CHECK(oversample({}, 20, rng).empty());
  Rng data_rng(2);
  std::vector<SecurityTriple> sec;
  for (int i = 0; i < 25; ++i) sec.push_back(random_triple(data_rng, "CWE-326", "py"));
  CHECK(same_multiset(oversample(sec, 20, rng), sec));
  std::vector<SecurityTriple> three(sec.begin(), sec.begin() + 3);
  auto five = oversample(three, 5, rng);
  CHECK(five.size() == 5);
  CHECK_THROWS(oversample(three, 0, rng));
  Rng a(9), b(9);
  CHECK(oversample(three, 7, a) == oversample(three, 7, b));
}

TEST_CASE("AdamW follows the reference update") {
  AdamConfig cfg;
  AdamW opt(2, cfg);
  Vector p(2), g(2);
  p << 1.0, -2.0;
  g << 0.5, -0.25;
  opt.step(p, g, 0.1);
  // First step: decay, then a unit-magnitude move against the gradient sign.
  const double decayed0 = 1.0 * (1 - 0.1 * 1e-2), decayed1 = -2.0 * (1 - 0.1 * 1e-2);
  CHECK(p(0) == doctest::Approx(decayed0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(p(1) == doctest::Approx(decayed1 + 0.1 * 0.25 / (0.25 + 1e-8)).epsilon(1e-14));
  CHECK(opt.steps() == 1);
}

TEST_CASE("clipping bounds the global norm") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Vector g(10);
    for (auto& x : g) x = rng.uniform(-10, 10);
    const double clip = rng.uniform(0.01, 5.0);
    const double before = g.norm();
    CHECK(clip_global_norm(g, clip) == before);
    CHECK(g.norm() <= clip + 1e-12);
  }
  Vector small = Vector::Constant(3, 0.1);
  Vector copy = small;
  clip_global_norm(small, 1.0);
  CHECK(small == copy);
}

TEST_CASE("one epoch visits every sample once and routes losses by origin") {
  Rng rng(11);
  Dataset d = random_dataset(rng, 7, 3);
  ModelState m = ModelState::init(small_config(), 1);
  TrainConfig cfg = quick_config();
  cfg.epochs = 1;
  TrainResult r = train_joint(m, d, cfg);
  REQUIRE(r.log.steps.size() == 10);
  std::multiset<std::pair<int, std::size_t>> seen;
  for (const auto& rec : r.log.steps) seen.emplace(static_cast<int>(rec.origin), rec.sample);
  std::multiset<std::pair<int, std::size_t>> expected;
  for (std::size_t i = 0; i < 7; ++i) expected.emplace(static_cast<int>(Origin::kStd), i);
  for (std::size_t i = 0; i < 3; ++i) expected.emplace(static_cast<int>(Origin::kSec), i);
  CHECK(seen == expected);
  // updates close windows of 3 and the epoch's final partial window
  int updates = 0;
  for (const auto& rec : r.log.steps) updates += rec.update;
  CHECK(updates == 4);
  CHECK(r.log.steps.back().update);
}

TEST_CASE("logged losses match the loss for the sample's origin") {
  Rng rng(12);
  Dataset d = random_dataset(rng, 5, 4);
  ModelState m = ModelState::init(small_config(), 2);
  TrainConfig cfg = quick_config();
  cfg.epochs = 1;
  cfg.grad_accum_steps = 100;  // no update inside the epoch until the last step
  TrainResult r = train_joint(m, d, cfg);
  Rng over_rng = Rng(cfg.seed).fork("oversample");
  auto sec = oversample(d.sec_samples, cfg.oversample_k, over_rng);
  for (const auto& rec : r.log.steps) {
    if (rec.origin == Origin::kStd) {
      CHECK(rec.loss == loss_std(m, d.std_samples[rec.sample]).value);
    } else {
      CHECK(rec.loss == loss_sec(m, sec[rec.sample]).value + loss_vul(m, sec[rec.sample]).value);
    }
  }
}

TEST_CASE("epoch coverage with oversampling") {
  Rng rng(13);
  Dataset d = random_dataset(rng, 6, 5);
  TrainConfig cfg = quick_config();
  cfg.epochs = 3;
  cfg.oversample_k = 4;
  TrainResult r = train_joint(ModelState::init(small_config(), 3), d, cfg);
  Rng over_rng = Rng(cfg.seed).fork("oversample");
  const std::size_t n_sec = oversample(d.sec_samples, cfg.oversample_k, over_rng).size();
  const std::size_t per_epoch = 6 + n_sec;
  REQUIRE(r.log.steps.size() == 3 * per_epoch);
  for (int e = 0; e < 3; ++e) {
    std::set<std::pair<int, std::size_t>> seen;
    for (std::size_t i = 0; i < per_epoch; ++i) {
      const auto& rec = r.log.steps[e * per_epoch + i];
      CHECK(rec.epoch == e);
      seen.emplace(static_cast<int>(rec.origin), rec.sample);
    }
    CHECK(seen.size() == per_epoch);
  }
}

TEST_CASE("clipped norms in the log respect the bound") {
  Rng rng(14);
  Dataset d = random_dataset(rng, 8, 4);
  TrainConfig cfg = quick_config();
  cfg.clip_norm = 0.05;
  TrainResult r = train_joint(ModelState::init(small_config(), 4), d, cfg);
  for (const auto& rec : r.log.steps) {
    CHECK(rec.grad_norm_pre.has_value() == rec.update);
    if (rec.update) CHECK(*rec.grad_norm_post <= cfg.clip_norm + 1e-12);
  }
}

TEST_CASE("training is deterministic given the seed") {
  Rng rng(15);
  Dataset d = random_dataset(rng, 6, 4);
  ModelState m = ModelState::init(small_config(), 5);
  TrainResult a = train_joint(m, d, quick_config());
  TrainResult b = train_joint(m, d, quick_config());
  CHECK(a.model == b.model);
  CHECK(a.log == b.log);
  CHECK(a.log.to_jsonl() == b.log.to_jsonl());
  TrainConfig other = quick_config();
  other.seed = 8;
  CHECK_FALSE(train_joint(m, d, other).model == a.model);
  CHECK_FALSE(a.model == m);
}

TEST_CASE("joint training without security data is standard tuning") {
  Rng rng(16);
  Dataset d = random_dataset(rng, 9, 0);
  ModelState m = ModelState::init(small_config(), 6);
  TrainConfig cfg = quick_config();
  cfg.oversample_k = 20;
  Dataset std_only{d.std_samples, {}};
  TrainConfig cfg_k1 = cfg;
  cfg_k1.oversample_k = 1;
  CHECK(train_joint(m, std_only, cfg).model == train_joint(m, std_only, cfg_k1).model);
  for (const auto& rec : train_joint(m, std_only, cfg).log.steps) CHECK(rec.origin == Origin::kStd);
}

TEST_CASE("SVEN training with zero weight equals masked-loss training") {
  Rng rng(17);
  Dataset d = random_dataset(rng, 0, 6);
  ModelState m = ModelState::init(small_config(), 7);
  ModelState base = ModelState::init(small_config(), 8);
  TrainConfig cfg = quick_config();
  cfg.oversample_k = 3;
  TrainResult sven = train_sven(m, base, d.sec_samples, cfg, {0.0});
  TrainResult joint = train_joint(m, d, cfg);
  CHECK(sven.model == joint.model);
  REQUIRE(sven.log.steps.size() == joint.log.steps.size());
  for (std::size_t i = 0; i < sven.log.steps.size(); ++i) CHECK(sven.log.steps[i].loss == joint.log.steps[i].loss);
}

TEST_CASE("SVEN log records satisfy the weighted-sum identity") {
  Rng rng(18);
  Dataset d = random_dataset(rng, 0, 5);
  ModelState base = ModelState::init(small_config(), 9);
  TrainResult r = train_sven(base, base, d.sec_samples, quick_config(), {1.6});
  REQUIRE(!r.log.steps.empty());
  for (const auto& rec : r.log.steps) {
    REQUIRE(rec.sven.has_value());
    CHECK(rec.sven->kl_weight == 1.6);
    CHECK(std::abs(rec.loss - rec.sven->weighted_sum()) <= 1e-12);
  }
  CHECK(r.log.to_jsonl().find("\"kl_sec\"") != std::string::npos);
}

TEST_CASE("zero epochs leave the model unchanged") {
  Rng rng(19);
  Dataset d = random_dataset(rng, 3, 3);
  ModelState m = ModelState::init(small_config(), 10);
  TrainConfig cfg = quick_config();
  cfg.epochs = 0;
  CHECK(train_joint(m, d, cfg).model == m);
  TrainResult s = train_sven(m, m, d.sec_samples, cfg, {0.4});
  CHECK(s.model == m);
  CHECK(s.log.steps.empty());
}

TEST_CASE("configuration and input errors") {
  Rng rng(20);
  Dataset d = random_dataset(rng, 2, 1);
  ModelState m = ModelState::init(small_config(), 11);
  TrainConfig bad = quick_config();
  bad.grad_accum_steps = 0;
  CHECK_THROWS_AS(train_joint(m, d, bad), std::invalid_argument);
  Dataset long_sample;
  long_sample.std_samples.push_back({random_body(rng, 10), TokenSeq(6, 5)});
  CHECK_THROWS_WITH_AS(train_joint(m, long_sample, quick_config()), doctest::Contains("std sample 0"), ContextOverflow);
  ModelState other = ModelState::init(ModelConfig{kVocab, 12, 1, 2, 16}, 1);
  CHECK_THROWS_AS(train_sven(m, other, d.sec_samples, quick_config(), {0.2}), std::invalid_argument);
}

TEST_CASE("non-finite losses abort with the step index") {
  Rng rng(21);
  Dataset d = random_dataset(rng, 4, 0);
  ModelState m = ModelState::init(small_config(), 12);
  view(m.params(), m.layout().b_head)(5) = std::numeric_limits<double>::infinity();
  try {
    train_joint(m, d, quick_config());
    FAIL("expected a training error");
  } catch (const TrainError& e) {
    CHECK(e.step == 0);
  }
}

#include <doctest.h>

#include <cmath>

#include "sectune/losses.hpp"
#include "support/oracles.hpp"
#include "support/planted.hpp"

using namespace sectune;

namespace {

constexpr int kVocab = 16;

ModelConfig small_config() { return ModelConfig{kVocab, 12, 1, 2, 16}; }

// Planted models need d_model > context.
ModelConfig planted_config() { return ModelConfig{8, 12, 1, 2, 8}; }

TokenSeq random_body(Rng& rng, std::size_t n) {
  TokenSeq s(n);
  for (auto& t : s) t = static_cast<TokenId>(4 + rng.below(kVocab - 4));
  return s;
}

TokenSeq random_response(Rng& rng, std::size_t max_len) {
  TokenSeq s = random_body(rng, rng.below(max_len));
  s.push_back(Tokenizer::kEos);
  return s;
}

MaskVec random_mask(Rng& rng, std::size_t n) {
  MaskVec m(n);
  for (auto& b : m) b = rng.below(2);
  return m;
}

SecurityTriple random_triple(Rng& rng) {
  for (;;) {
    TokenSeq i = random_body(rng, rng.below(4));
    TokenSeq a = random_response(rng, 6);
    TokenSeq b = random_response(rng, 6);
    if (a != b) return make_triple(i, a, b, "CWE-326", "py");
  }
}

// Per-position logits: row t gives the distribution at position t.
Matrix position_logits(const std::vector<Vector>& rows, int context) {
  Matrix L = Matrix::Zero(context, rows.front().size());
  for (std::size_t t = 0; t < rows.size(); ++t) L.row(static_cast<Eigen::Index>(t)) = rows[t].transpose();
  return L;
}

// Logits putting probability `p` on `target` and spreading the rest evenly.
Vector peaked(int vocab, TokenId target, double p) {
  Vector probs = Vector::Constant(vocab, (1.0 - p) / (vocab - 1));
  probs(target) = p;
  return testing::logits_for(probs);
}

bool rows_zero(const Matrix& dlogits, Eigen::Index row) { return (dlogits.row(row).array() == 0.0).all(); }

}  // namespace

TEST_CASE("standard loss on a uniform model") {
  ModelState m = ModelState::init(ModelConfig{8, 8, 1, 2, 8}, 1);
  m.zero_output_head();
  InstructionSample s{{4, 5}, {6, Tokenizer::kEos}};
  LossValue v = loss_std(m, s);
  CHECK(v.value == doctest::Approx(2 * std::log(8.0)).epsilon(1e-13));
  REQUIRE(v.contributions.size() == 2);
}

TEST_CASE("standard loss is zero under perfect prediction") {
  ModelConfig cfg = planted_config();
  Vector sure = Vector::Constant(8, -1000.0);
  sure(5) = 0.0;
  ModelState m = testing::planted_model(cfg, position_logits(std::vector<Vector>(8, sure), 8));
  CHECK(loss_std(m, {{}, {5, 5, 5}}).value == doctest::Approx(0.0));
}

TEST_CASE("standard loss equals the per-step log-probability sum") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    ModelState m = ModelState::init(small_config(), 40 + trial);
    TokenSeq i = random_body(rng, rng.below(5));
    TokenSeq o = random_response(rng, 8);
    double oracle = 0.0;
    TokenSeq ctx{Tokenizer::kBos};
    ctx.insert(ctx.end(), i.begin(), i.end());
    ctx.push_back(Tokenizer::kSep);
    for (TokenId tok : o) {
      oracle -= std::log(next_token_dist(m, ctx)(tok));
      ctx.push_back(tok);
    }
    CHECK(std::abs(loss_std(m, {i, o}).value - oracle) <= 1e-12);
  }
}

TEST_CASE("masked likelihood loss") {
  SUBCASE("all-zero mask gives zero") {
    ModelState m = ModelState::init(small_config(), 3);
    SecurityTriple s{{4}, {5, 6, Tokenizer::kEos}, {5, 7, Tokenizer::kEos}, {0, 0, 0}, {0, 0, 0}, "CWE-326", "py"};
    CHECK(loss_sec(m, s).value == 0.0);
  }
  SUBCASE("all-ones mask reduces to the standard loss") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      ModelState m = ModelState::init(small_config(), trial);
      SecurityTriple s = random_triple(rng);
      s.sec_mask.assign(s.secure_out.size(), 1);
      CHECK(std::abs(loss_sec(m, s).value - loss_std(m, {s.instruction, s.secure_out}).value) <= 1e-12);
    }
  }
  SUBCASE("mask [1,0,1] with target probabilities 1/2, 1/4, 1/8") {
    ModelConfig cfg = planted_config();
    // Empty instruction: position 1 + t predicts output[t].
    std::vector<Vector> rows(8, Vector::Zero(8));
    rows[1] = peaked(8, 4, 0.5);
    rows[2] = peaked(8, 5, 0.25);
    rows[3] = peaked(8, 6, 0.125);
    ModelState m = testing::planted_model(cfg, position_logits(rows, 8));
    SecurityTriple s{{}, {4, 5, 6}, {4, 5, 7}, {1, 0, 1}, {0, 0, 1}, "CWE-326", "py"};
    LossValue v = loss_sec(m, s);
    CHECK(v.value == doctest::Approx(std::log(2.0) + std::log(8.0)).epsilon(1e-10));
    CHECK(v.contributions[1] == 0.0);
  }
}

TEST_CASE("unlikelihood loss") {
  ModelConfig cfg = planted_config();
  SUBCASE("probability one half gives ln 2") {
    std::vector<Vector> rows(8, Vector::Zero(8));
    rows[1] = peaked(8, 6, 0.5);
    ModelState m = testing::planted_model(cfg, position_logits(rows, 8));
    SecurityTriple s{{}, {7}, {6}, {1}, {1}, "CWE-326", "py"};
    CHECK(loss_vul(m, s).value == doctest::Approx(std::log(2.0)).epsilon(1e-10));
  }
  SUBCASE("probability zero contributes nothing") {
    std::vector<Vector> rows(8, Vector::Zero(8));
    rows[1](6) = -1000.0;
    ModelState m = testing::planted_model(cfg, position_logits(rows, 8));
    SecurityTriple s{{}, {7}, {6}, {1}, {1}, "CWE-326", "py"};
    CHECK(loss_vul(m, s).value == 0.0);
  }
  SUBCASE("probability near one is clamped and has no gradient") {
    std::vector<Vector> rows(8, Vector::Constant(8, -1000.0));
    rows[1](6) = 0.0;
    ModelState m = testing::planted_model(cfg, position_logits(rows, 8));
    LossEval e = eval_unlikelihood(m, {}, {6}, {1});
    CHECK(std::isfinite(e.loss.value));
    CHECK(e.loss.value == doctest::Approx(-std::log1p(-(1.0 - 1e-12))));
    CHECK(rows_zero(e.dlogits, 1));
  }
  SUBCASE("all-zero mask gives zero") {
    ModelState m = ModelState::init(small_config(), 3);
    SecurityTriple s{{4}, {5, Tokenizer::kEos}, {6, Tokenizer::kEos}, {1, 0}, {0, 0}, "CWE-326", "py"};
    CHECK(loss_vul(m, s).value == 0.0);
  }
}

TEST_CASE("masked KL regulariser") {
  SUBCASE("identical models give zero") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      ModelState m = ModelState::init(small_config(), trial);
      SecurityTriple s = random_triple(rng);
      CHECK(std::abs(loss_sven_kl(m, m, s, Side::kSec).value) <= 1e-12);
      CHECK(std::abs(loss_sven_kl(m, m, s, Side::kVul).value) <= 1e-12);
    }
  }
  SUBCASE("all-ones mask gives zero") {
    ModelState m = ModelState::init(small_config(), 1);
    ModelState base = ModelState::init(small_config(), 2);
    SecurityTriple s{{4}, {5, Tokenizer::kEos}, {6, Tokenizer::kEos}, {1, 1}, {1, 1}, "CWE-326", "py"};
    CHECK(loss_sven_kl(m, base, s, Side::kSec).value == 0.0);
    CHECK(loss_sven_kl(m, base, s, Side::kVul).value == 0.0);
  }
  SUBCASE("two-token distributions") {
    ModelConfig cfg = planted_config();
    auto two_point = [](double a) {
      Vector l = Vector::Constant(8, -1000.0);
      l(4) = std::log(a);
      l(5) = std::log(1.0 - a);
      return l;
    };
    std::vector<Vector> tuned(8, Vector::Zero(8)), orig(8, Vector::Zero(8));
    tuned[1] = two_point(0.75);
    orig[1] = two_point(0.5);
    ModelState m = testing::planted_model(cfg, position_logits(tuned, 8));
    ModelState base = testing::planted_model(cfg, position_logits(orig, 8));
    SecurityTriple s{{}, {4}, {5}, {0}, {0}, "CWE-326", "py"};
    const double expected = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
    CHECK(loss_sven_kl(m, base, s, Side::kSec).value == doctest::Approx(expected).epsilon(1e-9));
    CHECK(expected == doctest::Approx(0.1308).epsilon(1e-3));
  }
  SUBCASE("configuration mismatch is rejected") {
    ModelState m = ModelState::init(small_config(), 1);
    ModelState base = ModelState::init(ModelConfig{kVocab, 8, 1, 2, 16}, 1);
    SecurityTriple s{{4}, {5, Tokenizer::kEos}, {6, Tokenizer::kEos}, {1, 0}, {1, 0}, "CWE-326", "py"};
    CHECK_THROWS_AS(loss_sven_kl(m, base, s, Side::kSec), std::invalid_argument);
  }
}

TEST_CASE("SVEN total is the weighted sum of its terms") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    ModelState m = ModelState::init(small_config(), trial);
    ModelState base = ModelState::init(small_config(), 1000 + trial);
    SecurityTriple s = random_triple(rng);
    const double w = rng.uniform(0.0, 30.0);
    SvenLoss total = loss_sven_total(m, base, s, {w});
    const double direct = loss_sec(m, s).value + loss_vul(m, s).value +
                          w * (loss_sven_kl(m, base, s, Side::kSec).value + loss_sven_kl(m, base, s, Side::kVul).value);
    CHECK(std::abs(total.total.value - direct) <= 1e-12);
    double sum = 0.0;
    for (double c : total.total.contributions) sum += c;
    CHECK(std::abs(total.total.value - sum) <= 1e-12);
    CHECK(total.total.value >= 0.0);
  }
  ModelState m = ModelState::init(small_config(), 5);
  SecurityTriple s = random_triple(rng);
  SUBCASE("zero weight") {
    ModelState base = ModelState::init(small_config(), 6);
    CHECK(loss_sven_total(m, base, s, {0.0}).total.value == loss_sec(m, s).value + loss_vul(m, s).value);
  }
  SUBCASE("unchanged model") {
    CHECK(std::abs(loss_sven_total(m, m, s, {3.2}).total.value - (loss_sec(m, s).value + loss_vul(m, s).value)) <= 1e-12);
  }
  SUBCASE("first sweep weight") {
    ModelState base = ModelState::init(small_config(), 6);
    SvenTerms t = loss_sven_total(m, base, s, {std::pow(2.0, 1) / 10}).terms;
    CHECK(t.kl_weight == 0.2);
    CHECK(t.weighted_sum() == t.sec + t.vul + 0.2 * (t.kl_sec + t.kl_vul));
  }
  CHECK_THROWS_AS(loss_sven_total(m, m, s, {-1.0}), std::invalid_argument);
}

TEST_CASE("masked-out positions get bitwise-zero logit gradients") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    ModelState m = ModelState::init(small_config(), trial);
    SecurityTriple s = random_triple(rng);
    s.sec_mask = random_mask(rng, s.secure_out.size());
    s.vul_mask = random_mask(rng, s.vuln_out.size());
    LossEval sec = eval_nll(m, s.instruction, s.secure_out, &s.sec_mask);
    LossEval vul = eval_unlikelihood(m, s.instruction, s.vuln_out, s.vul_mask);
    for (std::size_t t = 0; t < s.secure_out.size(); ++t) {
      if (!s.sec_mask[t]) CHECK(rows_zero(sec.dlogits, response_row(s.instruction, t)));
    }
    for (std::size_t t = 0; t < s.vuln_out.size(); ++t) {
      if (!s.vul_mask[t]) CHECK(rows_zero(vul.dlogits, response_row(s.instruction, t)));
    }
    // instruction rows are never scored
    for (std::size_t r = 0; r < s.instruction.size() + 1; ++r) {
      CHECK(rows_zero(sec.dlogits, static_cast<Eigen::Index>(r)));
      CHECK(rows_zero(vul.dlogits, static_cast<Eigen::Index>(r)));
    }
  }
}

TEST_CASE("losses are non-negative") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    ModelState m = ModelState::init(small_config(), trial);
    ModelState base = ModelState::init(small_config(), trial + 500);
    SecurityTriple s = random_triple(rng);
    CHECK(loss_std(m, {s.instruction, s.secure_out}).value >= 0.0);
    CHECK(loss_sec(m, s).value >= 0.0);
    CHECK(loss_vul(m, s).value >= 0.0);
    CHECK(loss_sven_kl(m, base, s, Side::kSec).value >= 0.0);
    CHECK(loss_sven_kl(m, base, s, Side::kVul).value >= 0.0);
  }
}

TEST_CASE("loss gradients match finite differences on three models") {
  Rng rng(51);
  for (int trial = 0; trial < 3; ++trial) {
    CAPTURE(trial);
    ModelState m = ModelState::init(small_config(), 900 + trial);
    ModelState base = ModelState::init(small_config(), 950 + trial);
    SecurityTriple s = random_triple(rng);
    s.sec_mask = random_mask(rng, s.secure_out.size());
    s.vul_mask = random_mask(rng, s.vuln_out.size());
    s.sec_mask[0] = 0;
    s.vul_mask[0] = 1;
    auto check = [&](auto value, const Vector& analytic) {
      Vector numeric = oracle::finite_difference(
          [&](const Vector& theta) {
            ModelState probe = m;
            probe.params() = theta;
            return value(probe);
          },
          m.params());
      CHECK(oracle::max_relative_error(analytic, numeric) < 1e-4);
    };
    check([&](const ModelState& p) { return loss_std(p, {s.instruction, s.secure_out}).value; },
          gradient(m, eval_nll(m, s.instruction, s.secure_out)));
    check([&](const ModelState& p) { return loss_sec(p, s).value; },
          gradient(m, eval_nll(m, s.instruction, s.secure_out, &s.sec_mask)));
    check([&](const ModelState& p) { return loss_vul(p, s).value; },
          gradient(m, eval_unlikelihood(m, s.instruction, s.vuln_out, s.vul_mask)));
    check([&](const ModelState& p) { return loss_sven_total(p, base, s, {0.8}).total.value; },
          sven_loss_and_grad(m, base, s, {0.8}).grad);
  }
}

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "sectune/losses.hpp"
#include "sectune/tinylm.hpp"
#include "support/oracles.hpp"
#include "support/planted.hpp"

using namespace sectune;

namespace {

ModelConfig small_config(int vocab = 16) { return ModelConfig{vocab, 12, 1, 2, 16}; }

TokenSeq random_tokens(Rng& rng, std::size_t n, int vocab) {
  TokenSeq s(n);
  for (auto& t : s) t = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab)));
  return s;
}

}  // namespace

TEST_CASE("parameter count follows the configuration") {
  ModelConfig cfg{20, 8, 2, 2, 10};
  const Eigen::Index d = 8, V = 20, C = 10;
  const Eigen::Index per_block = 4 * d + (d * 3 * d + 2 * d) + (d * d + d) + (d * 4 * d + 4 * d) + (4 * d * d + d);
  CHECK(param_count(cfg) == V * d + C * d + 2 * per_block + 2 * d + d * V + V);
  CHECK(ModelState::init(cfg, 1).params().size() == param_count(cfg));
  CHECK_THROWS(ModelConfig{20, 9, 1, 2, 10}.validate());
}

TEST_CASE("initialisation is seeded") {
  CHECK(ModelState::init(small_config(), 5) == ModelState::init(small_config(), 5));
  CHECK_FALSE(ModelState::init(small_config(), 5) == ModelState::init(small_config(), 6));
  ModelState m = ModelState::init(small_config(), 5);
  CHECK(m.params().allFinite());
  // every weight within its 1/sqrt(fan_in) bound
  CHECK(view(m.params(), m.layout().blocks[0].w_proj).cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(48.0));
}

TEST_CASE("zero output head gives the uniform distribution") {
  ModelState m = ModelState::init(small_config(), 3);
  m.zero_output_head();
  Vector p = next_token_dist(m, {Tokenizer::kBos, 7, 9});
  for (Eigen::Index i = 0; i < p.size(); ++i) CHECK(p(i) == doctest::Approx(1.0 / 16).epsilon(1e-14));
}

TEST_CASE("next-token distributions are normalised and causal") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    ModelState m = ModelState::init(small_config(), 100 + trial);
    TokenSeq ctx = random_tokens(rng, 1 + rng.below(15), 16);
    Vector p = next_token_dist(m, ctx);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
    CHECK((p.array() >= 0).all());
    CHECK((p.array() <= 1).all());
  }
  ModelState m = ModelState::init(small_config(), 9);
  TokenSeq longer{1, 4, 5, 6, 7, 8, 9};
  TokenSeq prefix(longer.begin(), longer.begin() + 3);
  Vector direct = next_token_dist(m, prefix);
  ForwardPass full = forward(m, longer);
  Vector from_full = log_softmax(full.logits.row(2).transpose()).array().exp();
  CHECK((direct - from_full).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(next_token_dist(m, {}), std::invalid_argument);
  CHECK_THROWS_AS(next_token_dist(m, TokenSeq(17, 1)), ContextOverflow);
}

TEST_CASE("sequence log-probability") {
  ModelState uniform = ModelState::init(ModelConfig{8, 8, 1, 2, 8}, 1);
  uniform.zero_output_head();
  CHECK(sequence_logprob(uniform, {4, 5, 6}) == doctest::Approx(3 * std::log(1.0 / 8)).epsilon(1e-14));
  CHECK(sequence_logprob(uniform, {}) == 0.0);

  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    ModelState m = ModelState::init(small_config(), 40 + trial);
    TokenSeq x = random_tokens(rng, 10, 16);
    double expected = 0.0;
    TokenSeq ctx{Tokenizer::kBos};
    for (TokenId t : x) {
      expected += std::log(next_token_dist(m, ctx)(t));
      ctx.push_back(t);
    }
    CHECK(std::abs(sequence_logprob(m, x) - expected) <= 1e-12);
    CHECK(sequence_logprob(m, x) <= 0.0);
  }
  CHECK_THROWS_AS(sequence_logprob(ModelState::init(small_config(), 1), TokenSeq(17, 4)), ContextOverflow);
}

TEST_CASE("greedy sampling follows the dominant token") {
  ModelConfig cfg{10, 24, 1, 2, 12};
  Matrix logits = Matrix::Zero(cfg.context, cfg.vocab_size);
  const TokenId plan[] = {5, 6, 7, 8, Tokenizer::kEos};
  for (int t = 2; t < 7; ++t) logits(t, plan[t - 2]) = 5.0;
  ModelState m = testing::planted_model(cfg, logits);
  Rng rng(1);
  Sampled s = sample(m, {Tokenizer::kBos, 4, 4}, 0.0, 20, rng);
  CHECK(s.tokens == TokenSeq{5, 6, 7, 8});
  CHECK(s.finished);
  Sampled capped = sample(m, {Tokenizer::kBos, 4, 4}, 0.0, 2, rng);
  CHECK(capped.tokens == TokenSeq{5, 6});
  CHECK_FALSE(capped.finished);
}

TEST_CASE("greedy ties go to the lowest id") {
  Rng rng(1);
  Vector logits(4);
  logits << 0.5, 2.0, 2.0, 1.0;
  CHECK(sample_token(logits, 0.0, rng) == 1);
}

TEST_CASE("sampling is deterministic given the seed") {
  ModelState m = ModelState::init(small_config(), 21);
  Rng a(99), b(99);
  CHECK(sample(m, {1, 4}, 1.0, 10, a).tokens == sample(m, {1, 4}, 1.0, 10, b).tokens);
}

TEST_CASE("tempered sampling matches the analytic distribution") {
  Vector probs(4);
  probs << 0.1, 0.2, 0.3, 0.4;
  const double temperature = 0.4;
  Vector tempered = probs.array().pow(1.0 / temperature);
  tempered /= tempered.sum();
  Vector logits = testing::logits_for(probs);
  Rng rng(314);
  const int draws = 100000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(sample_token(logits, temperature, rng))];
  for (int k = 0; k < 4; ++k) {
    const double sigma = std::sqrt(draws * tempered(k) * (1 - tempered(k)));
    CHECK(std::abs(counts[static_cast<std::size_t>(k)] - draws * tempered(k)) <= 3 * sigma);
  }
}

TEST_CASE("backward: constant loss has zero gradient") {
  ModelState m = ModelState::init(small_config(), 2);
  ForwardPass pass = forward(m, {1, 5, 6});
  Vector g = backward(m, pass, Matrix::Zero(3, 16));
  CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward matches central finite differences for the instruction loss") {
  ModelState m = ModelState::init(small_config(), 17);
  REQUIRE(m.param_count() >= 1500);
  REQUIRE(m.param_count() <= 5000);
  InstructionSample s{{4, 5, 6}, {7, 8, 9, 10, Tokenizer::kEos}};
  Vector analytic = gradient(m, eval_nll(m, s.instruction, s.output));
  Vector numeric = oracle::finite_difference(
      [&](const Vector& theta) {
        ModelState probe = m;
        probe.params() = theta;
        return loss_std(probe, s).value;
      },
      m.params());
  CHECK(oracle::max_relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("gradient of a sum of losses is the sum of gradients") {
  ModelState m = ModelState::init(small_config(), 8);
  TokenSeq instruction{4, 5};
  TokenSeq output{6, 7, 8, Tokenizer::kEos};
  LossEval a = eval_nll(m, instruction, output);
  MaskVec mask{1, 0, 1, 1};
  LossEval b = eval_unlikelihood(m, instruction, output, mask);
  Vector combined = backward(m, *a.pass, a.dlogits + b.dlogits);
  Vector separate = gradient(m, a) + gradient(m, b);
  CHECK((combined - separate).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("non-finite values are reported with the op name") {
  ModelState m = ModelState::init(small_config(), 8);
  ForwardPass pass = forward(m, {1, 4});
  Matrix bad = Matrix::Zero(2, 16);
  bad(1, 3) = std::nan("");
  try {
    backward(m, pass, bad);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(e.op == "loss gradient");
  }
  m.params()(m.layout().w_head.offset) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(forward(m, {1, 4}), NonFiniteError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  ModelState m = ModelState::init(small_config(), 33);
  const auto path = std::filesystem::temp_directory_path() / "sectune_test_ckpt.bin";
  save_checkpoint(m, path);
  ModelState back = load_checkpoint(path);
  CHECK(back == m);
  CHECK(checkpoint_bytes(back) == checkpoint_bytes(m));
  std::string bytes = checkpoint_bytes(m);
  CHECK(bytes.substr(0, 4) == "SCLM");
  CHECK(bytes.size() == 4 + 4 + 5 * 4 + 8 + 8 * static_cast<std::size_t>(m.param_count()));
  CHECK_THROWS(checkpoint_from_bytes("XXXX" + bytes.substr(4)));
  CHECK_THROWS(checkpoint_from_bytes(bytes.substr(0, bytes.size() - 3)));
  std::filesystem::remove(path);
}

#include <doctest.h>

#include <cmath>
#include <limits>

#include "stepforge/dpo.hpp"
#include "stepforge/errors.hpp"
#include "stepforge/hashing.hpp"

using namespace stepforge;
using namespace stepforge::dpo;

TEST_CASE("zero margin gives ln 2") {
  const std::vector<PairLogProbs> b{{-3.0, -3.0, -3.0, -3.0}};
  CHECK(std::abs(dpo_loss(b, {}) - std::log(2.0)) <= 1e-12);
  CHECK(std::abs(step_dpo_loss(b, {}) - std::log(2.0)) <= 1e-12);
}

TEST_CASE("closed-form margin") {
  // chosen log-ratio 2.0, rejected log-ratio -1.0
  const PairLogProbs p{-1.0, -4.0, -3.0, -3.0};
  CHECK(margin(p, 0.1) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(std::abs(pair_loss(p, 0.1) - 0.5543552444685271) < 1e-12);
}

TEST_CASE("batch reductions match a loop") {
  StableRng rng(2);
  std::vector<PairLogProbs> b;
  for (int i = 0; i < 4; ++i) b.push_back({-10 * rng.unit(), -10 * rng.unit(), -10 * rng.unit(), -10 * rng.unit()});
  double sum = 0.0;
  for (const auto& p : b) sum += pair_loss(p, 0.2);
  LossConfig mean{0.2, Reduction::Mean, false};
  LossConfig total{0.2, Reduction::Sum, false};
  CHECK(step_dpo_loss(b, mean) == doctest::Approx(sum / 4).epsilon(1e-14));
  CHECK(step_dpo_loss(b, total) == doctest::Approx(sum).epsilon(1e-14));
  CHECK(dpo_loss(b, mean) == step_dpo_loss(b, mean));
}

TEST_CASE("loss properties") {
  double prev = std::numeric_limits<double>::infinity();
  for (double m = -700; m <= 700; m += 7) {
    const double l = softplus(-m);
    CHECK(std::isfinite(l));
    CHECK(l >= 0.0);
    CHECK(l <= prev);
    prev = l;
  }
  const PairLogProbs p{-2.0, -3.5, -2.5, -3.0};
  const PairLogProbs shifted{-2.0 - 1.7, -3.5 - 1.7, -2.5 - 1.7, -3.0 - 1.7};
  CHECK(pair_loss(p, 0.5) == doctest::Approx(pair_loss(shifted, 0.5)).epsilon(1e-12));
  CHECK(pair_loss({-1.0, -3.5, -2.5, -3.0}, 0.5) < pair_loss(p, 0.5));
  CHECK(pair_loss({-2.0, -3.0, -2.5, -3.0}, 0.5) > pair_loss(p, 0.5));
}

TEST_CASE("input and config validation") {
  const std::vector<PairLogProbs> nan{{std::nan(""), -1, -1, -1}};
  CHECK_THROWS_AS(dpo_loss(nan, {}), NumericError);
  const std::vector<PairLogProbs> pos{{0.5, -1, -1, -1}};
  CHECK_THROWS_AS(dpo_loss(pos, {}), NumericError);
  const std::vector<PairLogProbs> ok{{-1, -1, -1, -1}};
  CHECK_THROWS_AS(dpo_loss(ok, LossConfig{0.0}), PreconditionError);
  CHECK_THROWS_AS(dpo_loss({}, {}), PreconditionError);
}

TEST_CASE("sequence log-probabilities") {
  const auto u = ToyPolicy::uniform(1, 4);
  const std::vector<int> three{0, 1, 3};
  CHECK(std::abs(sequence_logprob(u, 0, three) - 3.0 * std::log(0.25)) < 1e-12);
  CHECK(sequence_logprob(u, 0, {}) == 0.0);
  CHECK_THROWS_AS(sequence_logprob(u, 1, three), PreconditionError);
  const std::vector<int> bad{4};
  CHECK_THROWS_AS(sequence_logprob(u, 0, bad), PreconditionError);

  auto sharp = ToyPolicy::uniform(1, 4);
  sharp.logits(0)[2] = 50.0;
  const std::vector<int> top{2};
  CHECK(std::abs(sequence_logprob(sharp, 0, top)) < 1e-12);
  CHECK_THROWS_AS(ToyPolicy(1, 65), PreconditionError);
}

TEST_CASE("gradient check on the builtin problem") {
  const auto toy = builtin_toy_problem();
  CHECK(toy.policy.vocab() == 8);
  CHECK(toy.batch.size() == 2);
  const auto r = gradient_check(toy.policy, toy.reference, toy.batch, {}, 1e-5);
  CHECK(r.max_relative_error < 1e-4);
  CHECK(r.analytic_norm > 1e-6);
  CHECK_THROWS_AS(gradient_check(toy.policy, toy.reference, toy.batch, {}, 1e-2), PreconditionError);

  LossConfig norm;
  norm.length_normalized = true;
  CHECK(gradient_check(toy.policy, toy.reference, toy.batch, norm, 1e-5).max_relative_error < 1e-4);
  LossConfig sum;
  sum.reduction = Reduction::Sum;
  CHECK(gradient_check(toy.policy, toy.reference, toy.batch, sum, 1e-5).max_relative_error < 1e-4);
}

TEST_CASE("symmetric batch at the reference has zero gradient") {
  const auto ref = ToyPolicy::random(2, 6, 3, 1.0);
  const std::vector<StepPairTokens> batch{{0, {1, 2}, {3, 4}}, {0, {3, 4}, {1, 2}}};
  const auto g = toy_step_loss_gradient(ref, ref, batch, {});
  double sq = 0.0;
  for (const double x : g) sq += x * x;
  CHECK(std::sqrt(sq) < 1e-8);
}

TEST_CASE("doubling beta scales the gradient by the chain rule") {
  const auto toy = builtin_toy_problem();
  LossConfig c1{0.1};
  LossConfig c2{0.2};
  const auto g1 = toy_step_loss_gradient(toy.policy, toy.reference, toy.batch, c1);
  const auto g2 = toy_step_loss_gradient(toy.policy, toy.reference, toy.batch, c2);
  // dL/dtheta = -beta * sigmoid(-beta * d) * dd/dtheta per pair; predict g2 from per-pair factors.
  std::vector<double> predicted(g1.size(), 0.0);
  for (const auto& pair : toy.batch) {
    const std::vector<StepPairTokens> one{pair};
    const auto h1 = toy_step_loss_gradient(toy.policy, toy.reference, one, c1);
    const double d = (sequence_logprob(toy.policy, pair.context, pair.chosen) -
                      sequence_logprob(toy.reference, pair.context, pair.chosen)) -
                     (sequence_logprob(toy.policy, pair.context, pair.rejected) -
                      sequence_logprob(toy.reference, pair.context, pair.rejected));
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    const double factor = (0.2 * sig(-0.2 * d)) / (0.1 * sig(-0.1 * d));
    for (std::size_t i = 0; i < h1.size(); ++i) predicted[i] += h1[i] * factor / toy.batch.size();
  }
  for (std::size_t i = 0; i < g2.size(); ++i) CHECK(g2[i] == doctest::Approx(predicted[i]).epsilon(1e-9));
  CHECK(gradient_check(toy.policy, toy.reference, toy.batch, c2, 1e-5).max_relative_error < 1e-4);
}

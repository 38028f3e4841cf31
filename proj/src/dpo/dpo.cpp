#include "stepforge/dpo.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "stepforge/errors.hpp"
#include "stepforge/hashing.hpp"

namespace stepforge::dpo {

void PairLogProbs::validate() const {
  for (const double v : {policy_chosen, policy_rejected, ref_chosen, ref_rejected}) {
    if (!std::isfinite(v)) throw NumericError("log-probabilities must be finite");
    if (v > 0.0) throw NumericError(fmt::format("log-probability {} is positive", v));
  }
}

void LossConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw PreconditionError("beta must be a positive finite number");
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double margin(const PairLogProbs& p, double beta) {
  return beta * ((p.policy_chosen - p.ref_chosen) - (p.policy_rejected - p.ref_rejected));
}

double pair_loss(const PairLogProbs& p, double beta) { return softplus(-margin(p, beta)); }

namespace {

double reduce_losses(std::span<const PairLogProbs> batch, const LossConfig& cfg) {
  cfg.validate();
  if (batch.empty()) throw PreconditionError("loss batch must be non-empty");
  double total = 0.0;
  for (const auto& p : batch) {
    p.validate();
    total += pair_loss(p, cfg.beta);
  }
  if (!std::isfinite(total)) throw NumericError("loss is not finite");
  return cfg.reduction == Reduction::Mean ? total / static_cast<double>(batch.size()) : total;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double dpo_loss(std::span<const PairLogProbs> batch, const LossConfig& cfg) { return reduce_losses(batch, cfg); }

double step_dpo_loss(std::span<const PairLogProbs> batch, const LossConfig& cfg) {
  return reduce_losses(batch, cfg);
}

// ---------------------------------------------------------------------------

ToyPolicy::ToyPolicy(std::size_t contexts, std::size_t vocab)
    : contexts_(contexts), vocab_(vocab), logits_(contexts * vocab, 0.0) {
  if (contexts == 0) throw PreconditionError("toy policy needs at least one context");
  if (vocab < 2 || vocab > kMaxToyVocab) throw PreconditionError("toy vocabulary must have 2..64 entries");
}

ToyPolicy ToyPolicy::uniform(std::size_t contexts, std::size_t vocab) { return ToyPolicy(contexts, vocab); }

ToyPolicy ToyPolicy::random(std::size_t contexts, std::size_t vocab, std::uint64_t seed, double scale) {
  ToyPolicy p(contexts, vocab);
  StableRng rng(seed);
  for (double& x : p.logits_) x = scale * (2.0 * rng.unit() - 1.0);
  return p;
}

std::span<const double> ToyPolicy::logits(std::size_t context) const {
  if (context >= contexts_) throw PreconditionError(fmt::format("unknown context {}", context));
  return std::span<const double>(logits_).subspan(context * vocab_, vocab_);
}

std::span<double> ToyPolicy::logits(std::size_t context) {
  if (context >= contexts_) throw PreconditionError(fmt::format("unknown context {}", context));
  return std::span<double>(logits_).subspan(context * vocab_, vocab_);
}

std::vector<double> ToyPolicy::log_probs(std::size_t context) const {
  const auto row = logits(context);
  const double top = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (const double x : row) sum += std::exp(x - top);
  const double lse = top + std::log(sum);
  std::vector<double> out(row.size());
  for (std::size_t v = 0; v < row.size(); ++v) out[v] = row[v] - lse;
  return out;
}

double sequence_logprob(const ToyPolicy& policy, std::size_t context, std::span<const int> tokens,
                        bool length_normalized) {
  const auto lp = policy.log_probs(context);
  double total = 0.0;
  for (const int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= policy.vocab()) {
      throw PreconditionError(fmt::format("token {} outside the vocabulary", t));
    }
    total += lp[static_cast<std::size_t>(t)];
  }
  if (length_normalized && !tokens.empty()) total /= static_cast<double>(tokens.size());
  return total;
}

namespace {

PairLogProbs toy_logprobs(const ToyPolicy& policy, const ToyPolicy& reference, const StepPairTokens& pair,
                          bool length_normalized) {
  return {sequence_logprob(policy, pair.context, pair.chosen, length_normalized),
          sequence_logprob(policy, pair.context, pair.rejected, length_normalized),
          sequence_logprob(reference, pair.context, pair.chosen, length_normalized),
          sequence_logprob(reference, pair.context, pair.rejected, length_normalized)};
}

void check_shapes(const ToyPolicy& policy, const ToyPolicy& reference) {
  if (policy.contexts() != reference.contexts() || policy.vocab() != reference.vocab()) {
    throw PreconditionError("policy and reference shapes differ");
  }
}

}  // namespace

double toy_step_loss(const ToyPolicy& policy, const ToyPolicy& reference, std::span<const StepPairTokens> batch,
                     const LossConfig& cfg) {
  check_shapes(policy, reference);
  std::vector<PairLogProbs> lps;
  lps.reserve(batch.size());
  for (const auto& pair : batch) lps.push_back(toy_logprobs(policy, reference, pair, cfg.length_normalized));
  return step_dpo_loss(lps, cfg);
}

std::vector<double> toy_step_loss_gradient(const ToyPolicy& policy, const ToyPolicy& reference,
                                           std::span<const StepPairTokens> batch, const LossConfig& cfg) {
  check_shapes(policy, reference);
  cfg.validate();
  if (batch.empty()) throw PreconditionError("loss batch must be non-empty");
  const std::size_t vocab = policy.vocab();
  std::vector<double> grad(policy.params().size(), 0.0);
  const double weight = cfg.reduction == Reduction::Mean ? 1.0 / static_cast<double>(batch.size()) : 1.0;

  for (const auto& pair : batch) {
    const auto lps = toy_logprobs(policy, reference, pair, cfg.length_normalized);
    // d softplus(-m) / dm = -sigmoid(-m)
    const double dl_dm = -sigmoid(-margin(lps, cfg.beta)) * weight;
    const auto lp = policy.log_probs(pair.context);
    double* row = grad.data() + pair.context * vocab;

    // d log p(t) / d logit_v = [t == v] - p_v, summed over the sequence.
    auto accumulate = [&](const std::vector<int>& tokens, double sign) {
      if (tokens.empty()) return;
      const double scale =
          sign * cfg.beta * dl_dm / (cfg.length_normalized ? static_cast<double>(tokens.size()) : 1.0);
      for (const int t : tokens) {
        row[static_cast<std::size_t>(t)] += scale;
        for (std::size_t v = 0; v < vocab; ++v) row[v] -= scale * std::exp(lp[v]);
      }
    };
    accumulate(pair.chosen, +1.0);
    accumulate(pair.rejected, -1.0);
  }
  for (const double g : grad) {
    if (!std::isfinite(g)) throw NumericError("analytic gradient is not finite");
  }
  return grad;
}

GradientCheckReport gradient_check(const ToyPolicy& policy, const ToyPolicy& reference,
                                   std::span<const StepPairTokens> batch, const LossConfig& cfg, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw PreconditionError("finite-difference step must lie in [1e-7, 1e-3]");
  GradientCheckReport report;
  report.analytic = toy_step_loss_gradient(policy, reference, batch, cfg);

  ToyPolicy probe = policy;
  auto params = probe.params();
  report.numeric.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = toy_step_loss(probe, reference, batch, cfg);
    params[i] = saved - h;
    const double down = toy_step_loss(probe, reference, batch, cfg);
    params[i] = saved;
    report.numeric[i] = (up - down) / (2.0 * h);
    if (!std::isfinite(report.numeric[i])) throw NumericError("finite-difference gradient is not finite");
  }

  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double a = report.analytic[i];
    const double n = report.numeric[i];
    const double abs_err = std::abs(a - n);
    const double denom = std::max({std::abs(a), std::abs(n), kRelativeErrorFloor});
    report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
    report.max_relative_error = std::max(report.max_relative_error, abs_err / denom);
    sq += a * a;
  }
  report.analytic_norm = std::sqrt(sq);
  return report;
}

ToyProblem builtin_toy_problem(std::uint64_t seed) {
  constexpr std::size_t kContexts = 3;
  constexpr std::size_t kVocab = 8;
  ToyProblem p{ToyPolicy::random(kContexts, kVocab, seed, 1.5), ToyPolicy::random(kContexts, kVocab, seed + 1, 1.5),
               {}};
  p.batch.push_back({0, {1, 4, 2, 7}, {3, 3, 5}});
  p.batch.push_back({2, {6, 0, 1}, {2, 5, 4, 4, 7}});
  return p;
}

}  // namespace stepforge::dpo

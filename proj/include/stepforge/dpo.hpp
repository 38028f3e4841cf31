#pragma once

// Outcome-level and step-level DPO losses over sequence log-probabilities,
// plus a tiny softmax policy used to check the analytic gradient against
// finite differences.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace stepforge::dpo {

struct PairLogProbs {
  double policy_chosen = 0.0;    // log pi(chosen | context)
  double policy_rejected = 0.0;  // log pi(rejected | context)
  double ref_chosen = 0.0;
  double ref_rejected = 0.0;

  /// All four finite and <= 0, else NumericError.
  void validate() const;
};

enum class Reduction { Mean, Sum };

struct LossConfig {
  double beta = 0.1;
  Reduction reduction = Reduction::Mean;
  /// Average token log-probs instead of summing them (toy policy only).
  bool length_normalized = false;

  void validate() const;
};

/// log(1 + e^x) without overflow.
double softplus(double x);

/// beta * ((chosen - ref_chosen) - (rejected - ref_rejected))
double margin(const PairLogProbs& p, double beta);

/// -log sigmoid(margin) = softplus(-margin)
double pair_loss(const PairLogProbs& p, double beta);

/// Response-level loss over a batch of full chosen/rejected responses.
double dpo_loss(std::span<const PairLogProbs> batch, const LossConfig& cfg);

/// Step-level loss. Each entry must have been scored with the query plus the
/// already-learned steps as context; the arithmetic is that of dpo_loss.
double step_dpo_loss(std::span<const PairLogProbs> batch, const LossConfig& cfg);

// ---------------------------------------------------------------------------

/// Context-conditioned categorical distribution: one logit row per context.
class ToyPolicy {
 public:
  ToyPolicy(std::size_t contexts, std::size_t vocab);

  static ToyPolicy uniform(std::size_t contexts, std::size_t vocab);
  /// Logits drawn uniformly from [-scale, scale].
  static ToyPolicy random(std::size_t contexts, std::size_t vocab, std::uint64_t seed, double scale = 1.0);

  std::size_t contexts() const { return contexts_; }
  std::size_t vocab() const { return vocab_; }

  std::span<double> params() { return logits_; }
  std::span<const double> params() const { return logits_; }

  std::span<const double> logits(std::size_t context) const;
  std::span<double> logits(std::size_t context);

  /// Log-softmax of a context's row (max-shifted).
  std::vector<double> log_probs(std::size_t context) const;

 private:
  std::size_t contexts_;
  std::size_t vocab_;
  std::vector<double> logits_;
};

inline constexpr std::size_t kMaxToyVocab = 64;

/// Sum (or mean, when length_normalized) of token log-probabilities under
/// `context`. An empty sequence scores 0.
double sequence_logprob(const ToyPolicy& policy, std::size_t context, std::span<const int> tokens,
                        bool length_normalized = false);

struct StepPairTokens {
  std::size_t context = 0;
  std::vector<int> chosen;
  std::vector<int> rejected;
};

/// Step-level loss of `policy` against a frozen `reference` on token pairs.
double toy_step_loss(const ToyPolicy& policy, const ToyPolicy& reference, std::span<const StepPairTokens> batch,
                     const LossConfig& cfg);

/// Analytic gradient of toy_step_loss w.r.t. policy.params().
std::vector<double> toy_step_loss_gradient(const ToyPolicy& policy, const ToyPolicy& reference,
                                           std::span<const StepPairTokens> batch, const LossConfig& cfg);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  double analytic_norm = 0.0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Floor on the relative-error denominator so parameters with (near) zero
/// gradient do not report finite-difference noise as relative error.
inline constexpr double kRelativeErrorFloor = 1e-6;

/// Central differences with step h in [1e-7, 1e-3] against the analytic
/// gradient. Relative error per parameter: |a - n| / max(|a|, |n|, floor).
GradientCheckReport gradient_check(const ToyPolicy& policy, const ToyPolicy& reference,
                                   std::span<const StepPairTokens> batch, const LossConfig& cfg, double h);

/// Two pairs over V = 8 with a random policy and reference, used by the CLI
/// and acceptance suite.
struct ToyProblem {
  ToyPolicy policy;
  ToyPolicy reference;
  std::vector<StepPairTokens> batch;
};
ToyProblem builtin_toy_problem(std::uint64_t seed = 7);

}  // namespace stepforge::dpo

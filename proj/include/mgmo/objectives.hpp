#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgmo/metrics.hpp"
#include "mgmo/rng.hpp"
#include "mgmo/sampling.hpp"
#include "mgmo/tensor.hpp"

namespace mgmo {

class NatModel;
class Vocab;

// Training strategies, named by (decoder input, scoring target):
//   NC  all-UNK input, complete reference scored
//   PC  partially revealed input, complete reference scored
//   PP  partially revealed input, jointly masked pair scored
//   NP  all-UNK input, jointly masked pair scored (default)
enum class Strategy { NC, PC, PP, NP };

Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy s);

struct MgmoConfig {
  double gamma = 8.0;
  int k = 8;  // sample count; desk-scale default (larger spaces help, at cost)
  double alpha = 0.005;
  Metric metric = Metric::Gleu;
  int max_ngram = 6;
  Strategy strategy = Strategy::NP;
  uint64_t seed = 1;
};

// Hard error on any out-of-domain field (e.g. alpha = 0).
void validate(const MgmoConfig& config);

// Negative log-likelihood of the reference under per-position rows:
// -sum_t log p(y_t | x).
Tensor xe_loss(const Tensor& logprob_rows, const std::vector<int>& reference);

// -log p(T | x) from the length head output.
Tensor length_loss(const Tensor& length_logprobs, int true_length);

// Masked-prediction loss: the decoder input is the reference with the
// subset positions hidden (UNK), and only those positions contribute
// -log p(y_t | ...). Optional label smoothing mixes in the mean row
// log-probability. Empty subsets are an error.
Tensor cmlm_loss(const NatModel& model, const Tensor& encoder_states,
                 const std::vector<int>& reference, const std::vector<int>& mask_subset,
                 double label_smoothing = 0.0);
Tensor cmlm_loss(const NatModel& model, const std::vector<int>& source,
                 const std::vector<int>& reference, const std::vector<int>& mask_subset,
                 double label_smoothing = 0.0);

// log p(T^k|x) plus the sum of log-probabilities of the unmasked tokens,
// read from the sample's recorded values.
double segment_cooccurrence_logprob(const HypothesisSample& sample);

// Confidence renormalization: q_k proportional to exp(alpha * logprob_k),
// computed with max subtraction.
std::vector<double> q_distribution(const std::vector<double>& logprobs, double alpha);

// Reference with UNK at the hidden positions (decoder input side).
std::vector<int> partial_observation_input(const std::vector<int>& reference,
                                           const std::vector<int>& hidden);
// Reference with the mask symbol at the masked positions (scoring side).
std::vector<int> mask_target(const std::vector<int>& reference, const std::vector<int>& mask);

struct StrategyBatch {
  std::vector<int> decoder_input;
  std::vector<int> scoring_target;
  std::vector<int> mask;  // target-side mask positions (empty for NC/PC)
};

// One decoder input / scoring target pair for a reference under the given
// strategy. Both the input-hiding subset and the target mask draw their
// sizes from the mask-count schedule (one gamma knob for everything).
StrategyBatch build_strategy_batch(const std::vector<int>& reference, Strategy strategy,
                                   double gamma, Rng& rng);

struct SampledLoss {
  Tensor loss;
  Tensor length_logprobs;                 // graph-connected length head output
  std::vector<HypothesisSample> samples;  // masks set as used for scoring
  std::vector<int> decoder_input;         // empty => all-UNK input per sample length
  std::vector<double> rewards;
  std::vector<double> q;
};

// Expected negative reward over K sampled full hypotheses, weighted by the
// confidence-renormalized distribution over full-sequence probabilities.
// Consumes only the sampling stream, so it is the exact no-masking
// counterpart of the masked loss below.
SampledLoss mo_loss(const NatModel& model, const std::vector<int>& source,
                    const std::vector<int>& reference, int k, double alpha, Metric metric,
                    int max_ngram, const Vocab* vocab, Rng& sample_rng);

// The full multi-granularity loss: samples K hypotheses (per the strategy's
// decoder input), jointly masks each hypothesis/reference pair, scores the
// masked pairs with the metric (constants; no gradient), renormalizes the
// segment co-occurrence probabilities into q, and returns
// -sum_k q_k * reward_k. Gradients flow through q only.
//
// Stream discipline: sample_rng drives lengths and tokens; mask_rng drives
// the input-hiding subset (PC/PP, drawn once per call) and the per-sample
// reward masks (NP/PP). NC consumes no mask_rng draws.
SampledLoss mgmo_loss(const NatModel& model, const std::vector<int>& source,
                      const std::vector<int>& reference, const MgmoConfig& config,
                      const Vocab* vocab, Rng& sample_rng, Rng& mask_rng);

// Rebuilds the loss graph for already-drawn samples (tokens, lengths and
// masks frozen); rewards are recomputed from the frozen token strings.
// This is the differentiable core of mgmo_loss and the entry point for
// gradient checks.
SampledLoss mgmo_loss_from_samples(const NatModel& model, const std::vector<int>& source,
                                   const std::vector<int>& reference,
                                   const std::vector<HypothesisSample>& samples,
                                   const std::vector<int>& decoder_input, const MgmoConfig& config,
                                   const Vocab* vocab);

}  // namespace mgmo

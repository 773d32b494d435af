#pragma once

#include <vector>

#include "mgmo/rng.hpp"

namespace mgmo {

class NatModel;

// One sampled hypothesis: a length drawn from the length head, tokens drawn
// independently per position, and (once assigned) the positions masked for
// reward scoring. Positions are 0-based throughout.
struct HypothesisSample {
  int length = 0;
  std::vector<int> tokens;
  std::vector<double> token_logprobs;  // log p(token_t | x), per position
  double length_logprob = 0.0;         // log p(length | x)
  std::vector<int> mask;               // sorted subset of {0..length-1}
};

// Hypothesis and reference after joint masking: the mask symbol sits at
// every in-range masked position of both sequences; everything else keeps
// its original token.
struct MaskedPair {
  std::vector<int> hypothesis;
  std::vector<int> reference;
};

// Two-step sampling: draw a length from p(T|x), decode an all-UNK input of
// that length once, then draw each token from its row. Samples that land on
// the same length share the decode pass. PAD is never drawn; recorded
// log-probabilities are the raw row values. Masks are left unset.
std::vector<HypothesisSample> sample_hypotheses(const NatModel& model,
                                                const std::vector<int>& source, int k, Rng& rng);

// Same token sampling against a fixed decoder input (all samples share its
// length); used when part of the reference is revealed to the decoder.
std::vector<HypothesisSample> sample_hypotheses_at(const NatModel& model,
                                                   const std::vector<int>& source,
                                                   const std::vector<int>& decoder_input, int k,
                                                   Rng& rng);

// Draws a threshold uniformly from [0, gamma) and masks
// max(floor(len - t*len), 0) positions, additionally clamped to len-1 so at
// least one token stays exposed even at the t=0 endpoint.
int sample_mask_count(int length, double gamma, Rng& rng);

// Uniform without-replacement mask positions over {0..length-1}, sorted.
std::vector<int> sample_mask_positions(int length, int count, Rng& rng);

// Masks both sequences at the shared positions; indices beyond either
// sequence's end are skipped on that sequence only.
MaskedPair apply_joint_mask(const std::vector<int>& hypothesis, const std::vector<int>& reference,
                            const std::vector<int>& mask_positions);

// Simulates the mask-count schedule over a corpus of sentence lengths and
// histograms the exposed runs (maximal unmasked spans) by length. Bucket i
// holds runs of length i+1; the last bucket pools every run of length >= 20.
// Entries are proportions of the total run count.
std::vector<double> granularity_histogram(const std::vector<int>& lengths, double gamma, int draws,
                                          Rng& rng);

constexpr int kGranularityBuckets = 20;

}  // namespace mgmo

#include "mgmo/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "mgmo/data.hpp"
#include "mgmo/model.hpp"

namespace mgmo {

Strategy parse_strategy(const std::string& name) {
  if (name == "nc") return Strategy::NC;
  if (name == "pc") return Strategy::PC;
  if (name == "pp") return Strategy::PP;
  if (name == "np") return Strategy::NP;
  throw std::invalid_argument("unknown strategy '" + name + "' (expected nc|pc|pp|np)");
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::NC: return "nc";
    case Strategy::PC: return "pc";
    case Strategy::PP: return "pp";
    case Strategy::NP: return "np";
  }
  return "?";
}

void validate(const MgmoConfig& config) {
  if (config.gamma <= 0.0) throw std::invalid_argument("MgmoConfig: gamma must be > 0");
  if (config.k < 1) throw std::invalid_argument("MgmoConfig: k must be >= 1");
  if (config.alpha <= 0.0) throw std::invalid_argument("MgmoConfig: alpha must be > 0");
  if (config.max_ngram < 1) throw std::invalid_argument("MgmoConfig: max_ngram must be >= 1");
}

Tensor xe_loss(const Tensor& logprob_rows, const std::vector<int>& reference) {
  const int rows = logprob_rows.shape()[0];
  if (rows != static_cast<int>(reference.size())) {
    throw std::invalid_argument("xe_loss: " + std::to_string(rows) + " rows vs reference of length " +
                                std::to_string(reference.size()));
  }
  return neg(sum(gather_lastdim(logprob_rows, reference)));
}

Tensor length_loss(const Tensor& length_logprobs, int true_length) {
  const int max_len = length_logprobs.shape()[0];
  if (true_length < 1 || true_length > max_len) {
    throw std::invalid_argument("length_loss: length " + std::to_string(true_length) +
                                " outside [1, " + std::to_string(max_len) + "]");
  }
  return neg(gather_lastdim(length_logprobs, {true_length - 1}));
}

std::vector<int> partial_observation_input(const std::vector<int>& reference,
                                           const std::vector<int>& hidden) {
  std::vector<int> input = reference;
  for (int p : hidden) {
    if (p < 0 || p >= static_cast<int>(reference.size())) {
      throw std::invalid_argument("partial_observation_input: position " + std::to_string(p) +
                                  " outside reference");
    }
    input[static_cast<size_t>(p)] = Vocab::kUnkId;
  }
  return input;
}

std::vector<int> mask_target(const std::vector<int>& reference, const std::vector<int>& mask) {
  std::vector<int> target = reference;
  for (int p : mask) {
    if (p >= 0 && p < static_cast<int>(target.size())) target[static_cast<size_t>(p)] = Vocab::kMaskId;
  }
  return target;
}

Tensor cmlm_loss(const NatModel& model, const Tensor& encoder_states,
                 const std::vector<int>& reference, const std::vector<int>& mask_subset,
                 double label_smoothing) {
  if (mask_subset.empty()) throw std::invalid_argument("cmlm_loss: empty mask subset");
  for (int p : mask_subset) {
    if (p < 0 || p >= static_cast<int>(reference.size())) {
      throw std::invalid_argument("cmlm_loss: position " + std::to_string(p) + " outside reference");
    }
  }
  Tensor rows = model.decode_parallel(encoder_states, partial_observation_input(reference, mask_subset));
  Tensor picked = gather_lastdim(rows, reference);
  Tensor weights = Tensor::zeros({static_cast<int>(reference.size())});
  for (int p : mask_subset) weights.data()[static_cast<size_t>(p)] = 1.0;
  Tensor masked_nll = neg(sum(mul(picked, weights)));
  if (label_smoothing <= 0.0) return masked_nll;
  // Smoothed target: (1-eps) on the reference token, eps spread uniformly.
  const int vocab = rows.shape()[1];
  Tensor uniform_nll = neg(sum(mul(sum_lastdim(rows), weights)));
  return add(scale(masked_nll, 1.0 - label_smoothing),
             scale(uniform_nll, label_smoothing / vocab));
}

Tensor cmlm_loss(const NatModel& model, const std::vector<int>& source,
                 const std::vector<int>& reference, const std::vector<int>& mask_subset,
                 double label_smoothing) {
  return cmlm_loss(model, model.encode(source), reference, mask_subset, label_smoothing);
}

double segment_cooccurrence_logprob(const HypothesisSample& sample) {
  std::vector<char> masked(sample.tokens.size(), 0);
  for (int p : sample.mask) {
    if (p >= 0 && p < static_cast<int>(masked.size())) masked[static_cast<size_t>(p)] = 1;
  }
  double total = sample.length_logprob;
  for (size_t t = 0; t < sample.tokens.size(); ++t) {
    if (!masked[t]) total += sample.token_logprobs[t];
  }
  return total;
}

std::vector<double> q_distribution(const std::vector<double>& logprobs, double alpha) {
  if (logprobs.empty()) throw std::invalid_argument("q_distribution: no samples");
  if (alpha <= 0.0) throw std::invalid_argument("q_distribution: alpha must be > 0");
  double mx = alpha * logprobs[0];
  for (double l : logprobs) mx = std::max(mx, alpha * l);
  std::vector<double> q(logprobs.size());
  double z = 0.0;
  for (size_t i = 0; i < q.size(); ++i) {
    q[i] = std::exp(alpha * logprobs[i] - mx);
    z += q[i];
  }
  for (auto& v : q) v /= z;
  return q;
}

StrategyBatch build_strategy_batch(const std::vector<int>& reference, Strategy strategy,
                                   double gamma, Rng& rng) {
  if (reference.empty()) throw std::invalid_argument("build_strategy_batch: empty reference");
  const int len = static_cast<int>(reference.size());
  StrategyBatch batch;
  if (strategy == Strategy::PC || strategy == Strategy::PP) {
    const int hidden_count = sample_mask_count(len, gamma, rng);
    batch.decoder_input =
        partial_observation_input(reference, sample_mask_positions(len, hidden_count, rng));
  } else {
    batch.decoder_input.assign(static_cast<size_t>(len), Vocab::kUnkId);
  }
  if (strategy == Strategy::NP || strategy == Strategy::PP) {
    batch.mask = sample_mask_positions(len, sample_mask_count(len, gamma, rng), rng);
    batch.scoring_target = mask_target(reference, batch.mask);
  } else {
    batch.scoring_target = reference;
  }
  return batch;
}

namespace {

// Shared graph construction: per-sample co-occurrence log-probability
// tensors for frozen samples, decoding once per distinct input.
std::vector<Tensor> cooccurrence_terms(const NatModel& model, const std::vector<int>& source,
                                       const std::vector<HypothesisSample>& samples,
                                       const std::vector<int>& decoder_input,
                                       Tensor* length_logprobs_out) {
  Tensor enc = model.encode(source);
  Tensor len_lp = model.length_logprobs(enc);
  if (length_logprobs_out) *length_logprobs_out = len_lp;

  std::map<int, Tensor> rows_by_length;
  Tensor fixed_rows;
  if (decoder_input.empty()) {
    for (const auto& s : samples) {
      if (!rows_by_length.count(s.length)) {
        std::vector<int> input(static_cast<size_t>(s.length), Vocab::kUnkId);
        rows_by_length.emplace(s.length, model.decode_parallel(enc, input));
      }
    }
  } else {
    fixed_rows = model.decode_parallel(enc, decoder_input);
  }

  std::vector<Tensor> terms;
  terms.reserve(samples.size());
  for (const auto& s : samples) {
    const Tensor& rows = decoder_input.empty() ? rows_by_length.at(s.length) : fixed_rows;
    if (rows.shape()[0] != s.length) {
      throw std::invalid_argument("cooccurrence_terms: sample length " + std::to_string(s.length) +
                                  " vs decoder input of length " + std::to_string(rows.shape()[0]));
    }
    Tensor picked = gather_lastdim(rows, s.tokens);
    Tensor weights = Tensor::constant({s.length}, 1.0);
    for (int p : s.mask) {
      if (p >= 0 && p < s.length) weights.data()[static_cast<size_t>(p)] = 0.0;
    }
    Tensor token_term = sum(mul(picked, weights));
    Tensor len_term = gather_lastdim(len_lp, {s.length - 1});
    terms.push_back(add(len_term, token_term));
  }
  return terms;
}

SampledLoss assemble_loss(const NatModel& model, const std::vector<int>& source,
                          const std::vector<HypothesisSample>& samples,
                          const std::vector<int>& decoder_input, double alpha,
                          std::vector<double> rewards) {
  SampledLoss result;
  result.samples = samples;
  result.decoder_input = decoder_input;
  result.rewards = std::move(rewards);
  std::vector<Tensor> terms =
      cooccurrence_terms(model, source, samples, decoder_input, &result.length_logprobs);
  Tensor q = softmax_lastdim(scale(stack_scalars(terms), alpha));
  Tensor reward_vec = Tensor::from_values({static_cast<int>(result.rewards.size())}, result.rewards);
  result.loss = neg(sum(mul(q, reward_vec)));
  result.q = q.data();
  return result;
}

std::vector<double> masked_rewards(const std::vector<HypothesisSample>& samples,
                                   const std::vector<int>& reference, Metric metric, int max_ngram,
                                   const Vocab* vocab) {
  std::vector<double> rewards;
  rewards.reserve(samples.size());
  for (size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    try {
      if (s.mask.empty()) {
        rewards.push_back(score_pair(metric, s.tokens, reference, vocab, max_ngram));
      } else {
        rewards.push_back(
            score_masked_pair(apply_joint_mask(s.tokens, reference, s.mask), metric, vocab, max_ngram));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("metric failed for sample " + std::to_string(k + 1) + " of " +
                               std::to_string(samples.size()) + ": " + e.what());
    }
  }
  return rewards;
}

}  // namespace

SampledLoss mo_loss(const NatModel& model, const std::vector<int>& source,
                    const std::vector<int>& reference, int k, double alpha, Metric metric,
                    int max_ngram, const Vocab* vocab, Rng& sample_rng) {
  if (k < 1) throw std::invalid_argument("mo_loss: k must be >= 1");
  std::vector<HypothesisSample> samples = sample_hypotheses(model, source, k, sample_rng);
  return assemble_loss(model, source, samples, {}, alpha,
                       masked_rewards(samples, reference, metric, max_ngram, vocab));
}

SampledLoss mgmo_loss_from_samples(const NatModel& model, const std::vector<int>& source,
                                   const std::vector<int>& reference,
                                   const std::vector<HypothesisSample>& samples,
                                   const std::vector<int>& decoder_input, const MgmoConfig& config,
                                   const Vocab* vocab) {
  validate(config);
  return assemble_loss(model, source, samples, decoder_input, config.alpha,
                       masked_rewards(samples, reference, config.metric, config.max_ngram, vocab));
}

SampledLoss mgmo_loss(const NatModel& model, const std::vector<int>& source,
                      const std::vector<int>& reference, const MgmoConfig& config,
                      const Vocab* vocab, Rng& sample_rng, Rng& mask_rng) {
  validate(config);
  const bool partial_input = config.strategy == Strategy::PC || config.strategy == Strategy::PP;
  const bool masked_target = config.strategy == Strategy::NP || config.strategy == Strategy::PP;

  std::vector<int> decoder_input;
  std::vector<HypothesisSample> samples;
  if (partial_input) {
    // One observation pattern per instance, shared by the K samples; the
    // hidden subset size follows the mask-count schedule.
    const int len = static_cast<int>(reference.size());
    const int hidden_count = sample_mask_count(len, config.gamma, mask_rng);
    decoder_input =
        partial_observation_input(reference, sample_mask_positions(len, hidden_count, mask_rng));
    samples = sample_hypotheses_at(model, source, decoder_input, config.k, sample_rng);
  } else {
    samples = sample_hypotheses(model, source, config.k, sample_rng);
  }
  if (masked_target) {
    for (auto& s : samples) {
      s.mask = sample_mask_positions(s.length, sample_mask_count(s.length, config.gamma, mask_rng),
                                     mask_rng);
    }
  }
  return mgmo_loss_from_samples(model, source, reference, samples, decoder_input, config, vocab);
}

}  // namespace mgmo

#include "mgmo/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "mgmo/data.hpp"
#include "mgmo/model.hpp"
#include "mgmo/tensor.hpp"

namespace mgmo {

namespace {

// Draws one token from a log-probability row, excluding PAD. The recorded
// log-probability stays the raw row value; only the draw renormalizes.
int draw_token(const double* row, int vocab, Rng& rng) {
  double z = 0.0;
  for (int c = 0; c < vocab; ++c) {
    if (c == Vocab::kPadId) continue;
    z += std::exp(row[c]);
  }
  double u = rng.uniform() * z;
  double acc = 0.0;
  int last = -1;
  for (int c = 0; c < vocab; ++c) {
    if (c == Vocab::kPadId) continue;
    acc += std::exp(row[c]);
    last = c;
    if (u < acc) return c;
  }
  return last;
}

std::vector<HypothesisSample> draw_from_rows(const Tensor& rows, double length_logprob, int k,
                                             Rng& rng) {
  const int len = rows.shape()[0];
  const int vocab = rows.shape()[1];
  std::vector<HypothesisSample> out(static_cast<size_t>(k));
  for (auto& s : out) {
    s.length = len;
    s.length_logprob = length_logprob;
    s.tokens.resize(static_cast<size_t>(len));
    s.token_logprobs.resize(static_cast<size_t>(len));
    for (int t = 0; t < len; ++t) {
      const double* row = rows.data().data() + static_cast<size_t>(t) * vocab;
      const int tok = draw_token(row, vocab, rng);
      s.tokens[static_cast<size_t>(t)] = tok;
      s.token_logprobs[static_cast<size_t>(t)] = row[tok];
    }
  }
  return out;
}

}  // namespace

std::vector<HypothesisSample> sample_hypotheses(const NatModel& model,
                                                const std::vector<int>& source, int k, Rng& rng) {
  if (k < 1) throw std::invalid_argument("sample_hypotheses: k must be >= 1");
  NoGradGuard ng;
  Tensor enc = model.encode(source);
  Tensor len_lp = model.length_logprobs(enc);
  std::vector<double> len_probs(len_lp.data().size());
  for (size_t i = 0; i < len_probs.size(); ++i) len_probs[i] = std::exp(len_lp.data()[i]);

  std::vector<int> lengths(static_cast<size_t>(k));
  for (auto& l : lengths) l = rng.categorical(len_probs) + 1;

  // One decode per distinct sampled length.
  std::map<int, Tensor> rows_by_length;
  for (int l : lengths) {
    if (!rows_by_length.count(l)) {
      std::vector<int> input(static_cast<size_t>(l), Vocab::kUnkId);
      rows_by_length.emplace(l, model.decode_parallel(enc, input));
    }
  }
  std::vector<HypothesisSample> out;
  out.reserve(static_cast<size_t>(k));
  for (int l : lengths) {
    auto s = draw_from_rows(rows_by_length.at(l), len_lp.data()[static_cast<size_t>(l - 1)], 1, rng);
    out.push_back(std::move(s[0]));
  }
  return out;
}

std::vector<HypothesisSample> sample_hypotheses_at(const NatModel& model,
                                                   const std::vector<int>& source,
                                                   const std::vector<int>& decoder_input, int k,
                                                   Rng& rng) {
  if (k < 1) throw std::invalid_argument("sample_hypotheses_at: k must be >= 1");
  NoGradGuard ng;
  Tensor enc = model.encode(source);
  Tensor len_lp = model.length_logprobs(enc);
  Tensor rows = model.decode_parallel(enc, decoder_input);
  const int len = static_cast<int>(decoder_input.size());
  return draw_from_rows(rows, len_lp.data()[static_cast<size_t>(len - 1)], k, rng);
}

int sample_mask_count(int length, double gamma, Rng& rng) {
  if (length < 1) throw std::invalid_argument("sample_mask_count: length must be >= 1");
  if (gamma <= 0.0) throw std::invalid_argument("sample_mask_count: gamma must be > 0");
  const double threshold = rng.uniform(0.0, gamma);
  const double kept = threshold * length;
  long count = static_cast<long>(std::floor(static_cast<double>(length) - kept));
  count = std::max(count, 0L);
  count = std::min(count, static_cast<long>(length) - 1);
  return static_cast<int>(count);
}

std::vector<int> sample_mask_positions(int length, int count, Rng& rng) {
  auto pos = rng.sample_without_replacement(length, count);
  std::sort(pos.begin(), pos.end());
  return pos;
}

MaskedPair apply_joint_mask(const std::vector<int>& hypothesis, const std::vector<int>& reference,
                            const std::vector<int>& mask_positions) {
  const int limit = static_cast<int>(std::max(hypothesis.size(), reference.size()));
  for (int p : mask_positions) {
    if (p < 0 || p >= limit) {
      throw std::invalid_argument("apply_joint_mask: position " + std::to_string(p) +
                                  " outside both sequences");
    }
  }
  MaskedPair pair{hypothesis, reference};
  for (int p : mask_positions) {
    if (p < static_cast<int>(pair.hypothesis.size())) pair.hypothesis[static_cast<size_t>(p)] = Vocab::kMaskId;
    if (p < static_cast<int>(pair.reference.size())) pair.reference[static_cast<size_t>(p)] = Vocab::kMaskId;
  }
  return pair;
}

std::vector<double> granularity_histogram(const std::vector<int>& lengths, double gamma, int draws,
                                          Rng& rng) {
  if (lengths.empty()) throw std::invalid_argument("granularity_histogram: empty corpus");
  if (draws < 1) throw std::invalid_argument("granularity_histogram: draws must be >= 1");
  std::vector<long> counts(kGranularityBuckets, 0);
  long total = 0;
  std::vector<char> masked;
  for (int d = 0; d < draws; ++d) {
    const int len = lengths[static_cast<size_t>(d) % lengths.size()];
    const int m = sample_mask_count(len, gamma, rng);
    masked.assign(static_cast<size_t>(len), 0);
    for (int p : sample_mask_positions(len, m, rng)) masked[static_cast<size_t>(p)] = 1;
    int run = 0;
    for (int t = 0; t <= len; ++t) {
      if (t < len && !masked[static_cast<size_t>(t)]) {
        ++run;
      } else if (run > 0) {
        counts[static_cast<size_t>(std::min(run, kGranularityBuckets)) - 1]++;
        ++total;
        run = 0;
      }
    }
  }
  std::vector<double> props(kGranularityBuckets, 0.0);
  if (total > 0) {
    for (int i = 0; i < kGranularityBuckets; ++i) {
      props[static_cast<size_t>(i)] = static_cast<double>(counts[static_cast<size_t>(i)]) / total;
    }
  }
  return props;
}

}  // namespace mgmo

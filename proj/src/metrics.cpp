#include "mgmo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "mgmo/data.hpp"
#include "mgmo/sampling.hpp"

namespace mgmo {

Metric parse_metric(const std::string& name) {
  if (name == "gleu") return Metric::Gleu;
  if (name == "bleu") return Metric::Bleu;
  if (name == "chrf") return Metric::Chrf;
  if (name == "ter") return Metric::Ter;
  if (name == "rouge2") return Metric::Rouge2;
  throw std::invalid_argument("unknown metric '" + name + "' (expected gleu|bleu|chrf|ter|rouge2)");
}

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::Gleu: return "gleu";
    case Metric::Bleu: return "bleu";
    case Metric::Chrf: return "chrf";
    case Metric::Ter: return "ter";
    case Metric::Rouge2: return "rouge2";
  }
  return "?";
}

namespace {

// Multiset of n-grams of one order, keyed by the token span.
template <typename Sym>
using NgramCounts = std::map<std::vector<Sym>, int>;

template <typename Sym>
NgramCounts<Sym> count_ngrams(const std::vector<Sym>& seq, int n) {
  NgramCounts<Sym> counts;
  if (n <= 0 || static_cast<int>(seq.size()) < n) return counts;
  for (size_t i = 0; i + n <= seq.size(); ++i) {
    counts[std::vector<Sym>(seq.begin() + i, seq.begin() + i + n)]++;
  }
  return counts;
}

template <typename Sym>
long clipped_matches(const NgramCounts<Sym>& hyp, const NgramCounts<Sym>& ref) {
  long matches = 0;
  for (const auto& [gram, c] : hyp) {
    auto it = ref.find(gram);
    if (it != ref.end()) matches += std::min(c, it->second);
  }
  return matches;
}

long total_ngrams(size_t len, int n) {
  return std::max<long>(static_cast<long>(len) - n + 1, 0);
}

}  // namespace

double gleu(const std::vector<int>& hyp, const std::vector<int>& ref, int max_n) {
  if (max_n < 1) throw std::invalid_argument("gleu: max_n must be >= 1");
  if (hyp.empty() && ref.empty()) throw std::invalid_argument("gleu: both sequences empty");
  long matches = 0, hyp_total = 0, ref_total = 0;
  for (int n = 1; n <= max_n; ++n) {
    matches += clipped_matches(count_ngrams(hyp, n), count_ngrams(ref, n));
    hyp_total += total_ngrams(hyp.size(), n);
    ref_total += total_ngrams(ref.size(), n);
  }
  const double precision = hyp_total > 0 ? static_cast<double>(matches) / hyp_total : 0.0;
  const double recall = ref_total > 0 ? static_cast<double>(matches) / ref_total : 0.0;
  return std::min(precision, recall);
}

double bleu_sentence(const std::vector<int>& hyp, const std::vector<int>& ref, int max_n) {
  if (max_n < 1) throw std::invalid_argument("bleu_sentence: max_n must be >= 1");
  if (hyp.empty()) return 0.0;
  double log_prec_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    long matches = clipped_matches(count_ngrams(hyp, n), count_ngrams(ref, n));
    long total = total_ngrams(hyp.size(), n);
    double p;
    if (n == 1) {
      p = total > 0 ? static_cast<double>(matches) / total : 0.0;
    } else {
      p = static_cast<double>(matches + 1) / static_cast<double>(total + 1);
    }
    if (p <= 0.0) return 0.0;
    log_prec_sum += std::log(p);
  }
  const double bp =
      std::exp(std::min(0.0, 1.0 - static_cast<double>(ref.size()) / static_cast<double>(hyp.size())));
  return bp * std::exp(log_prec_sum / max_n);
}

double rouge2(const std::vector<int>& hyp, const std::vector<int>& ref) {
  const long hyp_total = total_ngrams(hyp.size(), 2);
  const long ref_total = total_ngrams(ref.size(), 2);
  if (hyp_total == 0 || ref_total == 0) return 0.0;
  const long matches = clipped_matches(count_ngrams(hyp, 2), count_ngrams(ref, 2));
  if (matches == 0) return 0.0;
  const double p = static_cast<double>(matches) / hyp_total;
  const double r = static_cast<double>(matches) / ref_total;
  return 2.0 * p * r / (p + r);
}

double ter_reward(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (ref.empty()) throw std::invalid_argument("ter_reward: empty reference");
  const size_t n = hyp.size(), m = ref.size();
  std::vector<long> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<long>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<long>(i);
    for (size_t j = 1; j <= m; ++j) {
      const long subst = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, subst});
    }
    std::swap(prev, cur);
  }
  const double dist = static_cast<double>(prev[m]);
  return std::max(0.0, 1.0 - dist / static_cast<double>(m));
}

namespace {

// Rendering for character-level scoring. Tokens become their vocabulary
// strings joined by single spaces; the mask symbol and the no-vocab case
// both collapse to single synthetic characters so every token contributes
// a fixed-length span.
std::vector<char32_t> render_chars(const std::vector<int>& ids, const Vocab* vocab) {
  constexpr char32_t kMaskChar = 0x10FF00;
  constexpr char32_t kSyntheticBase = 0x100000;
  std::vector<char32_t> out;
  bool first = true;
  for (int id : ids) {
    if (!first) out.push_back(U' ');
    first = false;
    if (id == Vocab::kMaskId) {
      out.push_back(kMaskChar);
    } else if (vocab) {
      for (unsigned char c : vocab->token(id)) out.push_back(static_cast<char32_t>(c));
    } else {
      out.push_back(kSyntheticBase + static_cast<char32_t>(id));
    }
  }
  return out;
}

std::vector<char32_t> join_strings(const std::vector<std::string>& tokens) {
  std::vector<char32_t> out;
  bool first = true;
  for (const auto& t : tokens) {
    if (!first) out.push_back(U' ');
    first = false;
    for (unsigned char c : t) out.push_back(static_cast<char32_t>(c));
  }
  return out;
}

double chrf_chars(const std::vector<char32_t>& hyp, const std::vector<char32_t>& ref,
                  int max_n, double beta) {
  if (ref.empty()) throw std::invalid_argument("chrf: empty reference");
  const double b2 = beta * beta;
  double fsum = 0.0;
  int orders = 0;
  for (int n = 1; n <= max_n; ++n) {
    const long hyp_total = total_ngrams(hyp.size(), n);
    const long ref_total = total_ngrams(ref.size(), n);
    if (hyp_total == 0 && ref_total == 0) continue;
    ++orders;
    if (hyp_total == 0 || ref_total == 0) continue;  // F contribution is 0
    const long matches = clipped_matches(count_ngrams(hyp, n), count_ngrams(ref, n));
    if (matches == 0) continue;
    const double p = static_cast<double>(matches) / hyp_total;
    const double r = static_cast<double>(matches) / ref_total;
    fsum += (1.0 + b2) * p * r / (b2 * p + r);
  }
  return orders > 0 ? fsum / orders : 0.0;
}

}  // namespace

double chrf(const std::vector<std::string>& hyp, const std::vector<std::string>& ref,
            int max_n, double beta) {
  return chrf_chars(join_strings(hyp), join_strings(ref), max_n, beta);
}

double chrf_ids(const std::vector<int>& hyp, const std::vector<int>& ref, const Vocab* vocab,
                int max_n, double beta) {
  return chrf_chars(render_chars(hyp, vocab), render_chars(ref, vocab), max_n, beta);
}

double score_pair(Metric m, const std::vector<int>& hyp, const std::vector<int>& ref,
                  const Vocab* vocab, int max_n) {
  switch (m) {
    case Metric::Gleu: return gleu(hyp, ref, max_n);
    case Metric::Bleu: return bleu_sentence(hyp, ref, max_n);
    case Metric::Chrf: return chrf_ids(hyp, ref, vocab, max_n);
    case Metric::Ter: return ter_reward(hyp, ref);
    case Metric::Rouge2: return rouge2(hyp, ref);
  }
  throw std::logic_error("score_pair: bad metric");
}

double score_masked_pair(const MaskedPair& pair, Metric m, const Vocab* vocab, int max_n) {
  return score_pair(m, pair.hypothesis, pair.reference, vocab, max_n);
}

double corpus_bleu(const std::vector<std::vector<int>>& hyps,
                   const std::vector<std::vector<int>>& refs, int max_n) {
  if (hyps.size() != refs.size()) {
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses vs " +
                                std::to_string(refs.size()) + " references");
  }
  if (hyps.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  std::vector<long> matches(max_n, 0), totals(max_n, 0);
  long hyp_len = 0, ref_len = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += static_cast<long>(hyps[i].size());
    ref_len += static_cast<long>(refs[i].size());
    for (int n = 1; n <= max_n; ++n) {
      matches[n - 1] += clipped_matches(count_ngrams(hyps[i], n), count_ngrams(refs[i], n));
      totals[n - 1] += total_ngrams(hyps[i].size(), n);
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_prec_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    if (totals[n - 1] == 0 || matches[n - 1] == 0) return 0.0;
    log_prec_sum += std::log(static_cast<double>(matches[n - 1]) / totals[n - 1]);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(ref_len) / hyp_len));
  return 100.0 * bp * std::exp(log_prec_sum / max_n);
}

}  // namespace mgmo

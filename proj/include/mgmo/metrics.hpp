#pragma once

#include <string>
#include <vector>

namespace mgmo {

class Vocab;
struct MaskedPair;

enum class Metric { Gleu, Bleu, Chrf, Ter, Rouge2 };

Metric parse_metric(const std::string& name);
std::string metric_name(Metric m);

// Pooled n-gram match score over orders 1..max_n: min(precision, recall)
// where matches and totals are summed across all orders before dividing.
// A side with zero total n-grams scores 0 on that side; two empty
// sequences are an error.
double gleu(const std::vector<int>& hyp, const std::vector<int>& ref, int max_n);

// Sentence-level geometric mean of clipped n-gram precisions with add-one
// smoothing on orders >= 2, times the brevity penalty
// exp(min(0, 1 - |ref|/|hyp|)). Empty hypothesis scores 0.
double bleu_sentence(const std::vector<int>& hyp, const std::vector<int>& ref, int max_n);

// Bigram F1 over clipped matches; 0 when either side has no bigrams.
double rouge2(const std::vector<int>& hyp, const std::vector<int>& ref);

// max(0, 1 - edit_distance/|ref|) with token-level Levenshtein distance
// (insert/delete/substitute, unit costs). Block shifts are not modeled, so
// this is an edit-distance reward rather than full TER.
double ter_reward(const std::vector<int>& hyp, const std::vector<int>& ref);

// Character n-gram F_beta averaged over orders 1..max_n (orders where both
// sides have no n-grams are skipped). Operates on the whitespace-joined
// token strings, spaces included.
double chrf(const std::vector<std::string>& hyp, const std::vector<std::string>& ref,
            int max_n = 6, double beta = 2.0);

// chrF over ID sequences. With a vocabulary, tokens are rendered to their
// strings; without one, each ID becomes a single synthetic character. The
// mask symbol always renders as one reserved character.
double chrf_ids(const std::vector<int>& hyp, const std::vector<int>& ref, const Vocab* vocab,
                int max_n = 6, double beta = 2.0);

// Reward dispatch over ID sequences; `vocab` is only consulted by chrF.
double score_pair(Metric m, const std::vector<int>& hyp, const std::vector<int>& ref,
                  const Vocab* vocab, int max_n);

// Scores a jointly masked pair; the mask symbol is an ordinary token here,
// so masked positions match each other.
double score_masked_pair(const MaskedPair& pair, Metric m, const Vocab* vocab, int max_n);

// Corpus-level BLEU on the 0..100 scale: clipped matches and totals are
// pooled over the corpus before combining (no smoothing).
double corpus_bleu(const std::vector<std::vector<int>>& hyps,
                   const std::vector<std::vector<int>>& refs, int max_n = 4);

}  // namespace mgmo

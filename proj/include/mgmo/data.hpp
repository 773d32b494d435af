#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mgmo/rng.hpp"

namespace mgmo {

// Token <-> ID bijection with three reserved symbols. Content tokens start
// at kNumReserved; generators never emit reserved IDs as content.
class Vocab {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;
  static constexpr int kMaskId = 2;
  static constexpr int kNumReserved = 3;

  Vocab();

  // Reserved symbols plus content tokens t0, t1, ...
  static Vocab synthetic(int n_content);

  int add(const std::string& token);
  int size() const { return static_cast<int>(tokens_.size()); }
  int n_content() const { return size() - kNumReserved; }

  // -1 when unknown.
  int id(const std::string& token) const;
  const std::string& token(int id) const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct SentencePair {
  std::vector<int> source;
  std::vector<int> target;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;

  size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  int max_target_length() const;
};

// The fixed source->target dictionary used by both synthetic tasks: a
// half-rotation of the content IDs, so the map is a bijection and never
// the identity for n_content >= 2.
int map_token(int id, int n_content);
// Second output token emitted when a source token is expanded.
int expand_token(int id, int n_content);

// Token-wise dictionary translation. Each source token is independently
// replaced by two target tokens with probability expand_prob, which makes
// target length vary while staying deterministic given the seed.
ParallelCorpus gen_mapping_task(int n_pairs, int n_content, int len_lo, int len_hi,
                                double expand_prob, Rng& rng, int max_len);

// Dictionary translation where each target emits the two halves of the
// mapped source in one of two uniformly chosen orders. Every source thus
// has two valid references but only one is stored, which plants genuine
// output multimodality in the training data.
ParallelCorpus gen_multimodal_task(int n_pairs, int n_content, int len_lo, int len_hi,
                                   Rng& rng, int max_len);

// Both orderings a multimodal pair may have used.
std::pair<std::vector<int>, std::vector<int>> multimodal_candidates(const std::vector<int>& source,
                                                                    int n_content);

// One "source<TAB>target" line per pair, whitespace-tokenized. Unknown
// tokens map to UNK; *unk_count (optional) receives how many.
ParallelCorpus load_tsv(const std::string& path, const Vocab& vocab, int* unk_count = nullptr);
void save_tsv(const ParallelCorpus& corpus, const std::string& path, const Vocab& vocab);

// One PAD-padded batch. Row i of source/target is sentence i padded to the
// batch-wide max length; lengths carry the true sizes.
struct Batch {
  std::vector<std::vector<int>> source;
  std::vector<std::vector<int>> target;
  std::vector<int> source_len;
  std::vector<int> target_len;
  std::vector<int> corpus_index;  // position of each sentence in the corpus
  size_t size() const { return source.size(); }
};

// Length-bucketed shuffled batches covering every sentence exactly once.
// The token budget counts padded target tokens: batch_size * max_target_len.
std::vector<Batch> make_epoch_batches(const ParallelCorpus& corpus, int budget_tokens, Rng& rng);

}  // namespace mgmo

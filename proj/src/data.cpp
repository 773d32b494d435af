#include "mgmo/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace mgmo {

Vocab::Vocab() {
  add("<pad>");
  add("<unk>");
  add("<m>");
}

Vocab Vocab::synthetic(int n_content) {
  Vocab v;
  for (int i = 0; i < n_content; ++i) v.add("t" + std::to_string(i));
  return v;
}

int Vocab::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("Vocab: id " + std::to_string(id));
  return tokens_[static_cast<size_t>(id)];
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("Vocab: cannot write " + path);
  for (const auto& t : tokens_) out << t << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("Vocab: cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < kNumReserved || lines[0] != "<pad>" || lines[1] != "<unk>" || lines[2] != "<m>") {
    throw std::runtime_error("Vocab: " + path +
                             " must start with the reserved lines <pad>, <unk>, <m>");
  }
  Vocab v;
  for (size_t i = kNumReserved; i < lines.size(); ++i) {
    if (lines[i].empty()) throw std::runtime_error("Vocab: empty token at line " + std::to_string(i + 1));
    if (v.id(lines[i]) >= 0) throw std::runtime_error("Vocab: duplicate token '" + lines[i] + "'");
    v.add(lines[i]);
  }
  return v;
}

int ParallelCorpus::max_target_length() const {
  int m = 0;
  for (const auto& p : pairs) m = std::max(m, static_cast<int>(p.target.size()));
  return m;
}

int map_token(int id, int n_content) {
  const int c = id - Vocab::kNumReserved;
  return Vocab::kNumReserved + (c + n_content / 2) % n_content;
}

int expand_token(int id, int n_content) {
  const int c = id - Vocab::kNumReserved;
  return Vocab::kNumReserved + (c + n_content / 2 + 1) % n_content;
}

namespace {

void check_gen_args(int n_content, int len_lo, int len_hi, int max_len) {
  if (n_content < 8) throw std::invalid_argument("task generator: need at least 8 content tokens");
  if (len_lo < 1 || len_hi < len_lo || len_hi > max_len) {
    throw std::invalid_argument("task generator: bad length range [" + std::to_string(len_lo) +
                                "," + std::to_string(len_hi) + "] for max length " +
                                std::to_string(max_len));
  }
}

std::vector<int> random_source(int len, int n_content, Rng& rng) {
  std::vector<int> src(len);
  for (auto& t : src) t = Vocab::kNumReserved + rng.uniform_int(0, n_content - 1);
  return src;
}

}  // namespace

ParallelCorpus gen_mapping_task(int n_pairs, int n_content, int len_lo, int len_hi,
                                double expand_prob, Rng& rng, int max_len) {
  check_gen_args(n_content, len_lo, len_hi, max_len);
  if (expand_prob > 0.0 && 2 * len_hi > max_len) {
    throw std::invalid_argument("gen_mapping_task: expanded targets may exceed max length " +
                                std::to_string(max_len));
  }
  ParallelCorpus corpus;
  corpus.pairs.reserve(static_cast<size_t>(n_pairs));
  for (int i = 0; i < n_pairs; ++i) {
    SentencePair p;
    p.source = random_source(rng.uniform_int(len_lo, len_hi), n_content, rng);
    for (int s : p.source) {
      p.target.push_back(map_token(s, n_content));
      if (expand_prob > 0.0 && rng.uniform() < expand_prob) {
        p.target.push_back(expand_token(s, n_content));
      }
    }
    corpus.pairs.push_back(std::move(p));
  }
  return corpus;
}

std::pair<std::vector<int>, std::vector<int>> multimodal_candidates(const std::vector<int>& source,
                                                                    int n_content) {
  const size_t split = source.size() / 2;
  std::vector<int> a, b;
  a.reserve(source.size());
  b.reserve(source.size());
  for (size_t i = 0; i < source.size(); ++i) a.push_back(map_token(source[i], n_content));
  for (size_t i = split; i < source.size(); ++i) b.push_back(map_token(source[i], n_content));
  for (size_t i = 0; i < split; ++i) b.push_back(map_token(source[i], n_content));
  return {a, b};
}

ParallelCorpus gen_multimodal_task(int n_pairs, int n_content, int len_lo, int len_hi,
                                   Rng& rng, int max_len) {
  check_gen_args(n_content, len_lo, len_hi, max_len);
  ParallelCorpus corpus;
  corpus.pairs.reserve(static_cast<size_t>(n_pairs));
  for (int i = 0; i < n_pairs; ++i) {
    SentencePair p;
    p.source = random_source(rng.uniform_int(len_lo, len_hi), n_content, rng);
    auto [a, b] = multimodal_candidates(p.source, n_content);
    p.target = rng.uniform() < 0.5 ? std::move(a) : std::move(b);
    corpus.pairs.push_back(std::move(p));
  }
  return corpus;
}

namespace {

std::vector<int> parse_tokens(const std::string& text, const Vocab& vocab, int* unk_count) {
  std::vector<int> ids;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    int id = vocab.id(tok);
    if (id < 0) {
      id = Vocab::kUnkId;
      if (unk_count) ++*unk_count;
    }
    ids.push_back(id);
  }
  return ids;
}

}  // namespace

ParallelCorpus load_tsv(const std::string& path, const Vocab& vocab, int* unk_count) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_tsv: cannot read " + path);
  if (unk_count) *unk_count = 0;
  ParallelCorpus corpus;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw std::runtime_error("load_tsv: line " + std::to_string(line_no) + " of " + path +
                               " is not 'source<TAB>target'");
    }
    SentencePair p;
    p.source = parse_tokens(line.substr(0, tab), vocab, unk_count);
    p.target = parse_tokens(line.substr(tab + 1), vocab, unk_count);
    if (p.source.empty() || p.target.empty()) {
      throw std::runtime_error("load_tsv: empty side at line " + std::to_string(line_no) + " of " + path);
    }
    corpus.pairs.push_back(std::move(p));
  }
  return corpus;
}

void save_tsv(const ParallelCorpus& corpus, const std::string& path, const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_tsv: cannot write " + path);
  for (const auto& p : corpus.pairs) {
    for (size_t i = 0; i < p.source.size(); ++i) {
      if (i) out << ' ';
      out << vocab.token(p.source[i]);
    }
    out << '\t';
    for (size_t i = 0; i < p.target.size(); ++i) {
      if (i) out << ' ';
      out << vocab.token(p.target[i]);
    }
    out << '\n';
  }
}

std::vector<Batch> make_epoch_batches(const ParallelCorpus& corpus, int budget_tokens, Rng& rng) {
  const int max_tgt = corpus.max_target_length();
  if (budget_tokens < max_tgt) {
    throw std::invalid_argument("make_epoch_batches: budget " + std::to_string(budget_tokens) +
                                " below max target length " + std::to_string(max_tgt));
  }
  std::vector<int> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  // Stable sort by target length keeps the shuffled order inside buckets.
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return corpus.pairs[static_cast<size_t>(a)].target.size() <
           corpus.pairs[static_cast<size_t>(b)].target.size();
  });

  std::vector<Batch> batches;
  size_t i = 0;
  while (i < order.size()) {
    Batch batch;
    int max_len = 0;
    size_t j = i;
    while (j < order.size()) {
      const auto& p = corpus.pairs[static_cast<size_t>(order[j])];
      const int new_max = std::max(max_len, static_cast<int>(p.target.size()));
      if (!batch.source.empty() &&
          static_cast<long>(batch.source.size() + 1) * new_max > budget_tokens) {
        break;
      }
      batch.source.push_back(p.source);
      batch.target.push_back(p.target);
      batch.source_len.push_back(static_cast<int>(p.source.size()));
      batch.target_len.push_back(static_cast<int>(p.target.size()));
      batch.corpus_index.push_back(order[j]);
      max_len = new_max;
      ++j;
    }
    int max_src = 0;
    for (int l : batch.source_len) max_src = std::max(max_src, l);
    for (size_t s = 0; s < batch.source.size(); ++s) {
      batch.source[s].resize(static_cast<size_t>(max_src), Vocab::kPadId);
      batch.target[s].resize(static_cast<size_t>(max_len), Vocab::kPadId);
    }
    batches.push_back(std::move(batch));
    i = j;
  }
  rng.shuffle(batches);
  return batches;
}

}  // namespace mgmo

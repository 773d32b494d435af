#include "mgmo/trainer.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "mgmo/metrics.hpp"

namespace mgmo {

ModelConfig RunConfig::model_config(int vocab_size) const {
  ModelConfig mc;
  mc.vocab_size = vocab_size;
  mc.d_model = d_model;
  mc.n_heads = n_heads;
  mc.n_layers = n_layers;
  mc.ff_dim = 2 * d_model;
  mc.max_len = max_len;
  mc.init_seed = seed;
  return mc;
}

void apply_preset(RunConfig& c, const std::string& preset) {
  if (preset == "desk" || preset == "desk-cmlm") {
    c = desk_cmlm_config();
  } else if (preset == "desk-mgmo") {
    c = desk_mgmo_config();
  } else if (preset == "paper") {
    // Full-scale schedule, recorded for reference; three orders of
    // magnitude beyond what this repo is meant to run.
    c = RunConfig{};
    c.steps = 300000;
    c.warmup_steps = 10000;
    c.peak_lr = 5e-4;
    c.fixed_lr = 2e-6;
    c.batch_tokens = 32000;
    c.dropout = 0.3;
    c.mgmo.k = 40;
  } else {
    throw std::invalid_argument("unknown preset '" + preset +
                                "' (expected desk-cmlm|desk-mgmo|paper)");
  }
}

namespace {

int64_t parse_int(const std::string& key, const std::string& value) {
  size_t pos = 0;
  int64_t v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (...) {
    pos = 0;
  }
  if (pos != value.size() || value.empty()) {
    throw std::invalid_argument("config: bad integer for " + key + ": '" + value + "'");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(value, &pos);
  } catch (...) {
    pos = 0;
  }
  if (pos != value.size() || value.empty()) {
    throw std::invalid_argument("config: bad number for " + key + ": '" + value + "'");
  }
  return v;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot read " + path);
  RunConfig c;
  std::string line;
  int line_no = 0;
  bool saw_key = false;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: line " + std::to_string(line_no) + " is not key=value");
    }
    auto trim = [](std::string s) {
      const size_t a = s.find_first_not_of(" \t\r");
      const size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "preset") {
      if (saw_key) throw std::runtime_error("config: preset must precede other keys");
      apply_preset(c, value);
      continue;
    }
    saw_key = true;
    if (key == "stage") {
      if (value == "cmlm") c.stage = Stage::Cmlm;
      else if (value == "mgmo") c.stage = Stage::Mgmo;
      else throw std::runtime_error("config: bad stage '" + value + "'");
    } else if (key == "seed") c.seed = static_cast<uint64_t>(parse_int(key, value));
    else if (key == "train_data") c.train_data = value;
    else if (key == "valid_data") c.valid_data = value;
    else if (key == "vocab") c.vocab_file = value;
    else if (key == "init_checkpoint") c.init_checkpoint = value;
    else if (key == "out_checkpoint") c.out_checkpoint = value;
    else if (key == "log_file") c.log_file = value;
    else if (key == "d_model") c.d_model = static_cast<int>(parse_int(key, value));
    else if (key == "n_heads") c.n_heads = static_cast<int>(parse_int(key, value));
    else if (key == "n_layers") c.n_layers = static_cast<int>(parse_int(key, value));
    else if (key == "max_len") c.max_len = static_cast<int>(parse_int(key, value));
    else if (key == "steps") c.steps = static_cast<int>(parse_int(key, value));
    else if (key == "warmup_steps") c.warmup_steps = static_cast<int>(parse_int(key, value));
    else if (key == "peak_lr") c.peak_lr = parse_double(key, value);
    else if (key == "anneal_floor") c.anneal_floor = parse_double(key, value);
    else if (key == "fixed_lr") c.fixed_lr = parse_double(key, value);
    else if (key == "batch_tokens") c.batch_tokens = static_cast<int>(parse_int(key, value));
    else if (key == "dropout") c.dropout = parse_double(key, value);
    else if (key == "label_smoothing") c.label_smoothing = parse_double(key, value);
    else if (key == "valid_interval") c.valid_interval = static_cast<int>(parse_int(key, value));
    else if (key == "length_candidates") c.length_candidates = static_cast<int>(parse_int(key, value));
    else if (key == "gamma") c.mgmo.gamma = parse_double(key, value);
    else if (key == "k") c.mgmo.k = static_cast<int>(parse_int(key, value));
    else if (key == "alpha") c.mgmo.alpha = parse_double(key, value);
    else if (key == "metric") c.mgmo.metric = parse_metric(value);
    else if (key == "max_ngram") c.mgmo.max_ngram = static_cast<int>(parse_int(key, value));
    else if (key == "strategy") c.mgmo.strategy = parse_strategy(value);
    else throw std::runtime_error("config: unknown key '" + key + "' at line " + std::to_string(line_no));
  }
  c.mgmo.seed = c.seed;
  return c;
}

RunConfig desk_cmlm_config() {
  return RunConfig{};  // struct defaults
}

RunConfig desk_mgmo_config() {
  RunConfig c;
  c.stage = Stage::Mgmo;
  c.steps = 1000;
  c.batch_tokens = 128;
  c.dropout = 0.0;        // sampling already injects noise at this scale
  c.label_smoothing = 0.0;
  c.fixed_lr = 1e-4;
  return c;
}

void validate(const RunConfig& c) {
  if (c.steps < 0) throw std::invalid_argument("config: steps must be >= 0");
  if (c.batch_tokens < c.max_len) {
    throw std::invalid_argument("config: batch_tokens must be at least max_len");
  }
  if (c.valid_interval < 1) throw std::invalid_argument("config: valid_interval must be >= 1");
  if (c.length_candidates < 1 || c.length_candidates > c.max_len) {
    throw std::invalid_argument("config: length_candidates outside [1, max_len]");
  }
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw std::invalid_argument("config: dropout outside [0, 1)");
  if (c.stage == Stage::Mgmo) {
    if (c.init_checkpoint.empty()) {
      throw std::invalid_argument("config: the mgmo stage requires init_checkpoint");
    }
    validate(c.mgmo);
  }
}

// ---- optimizer ----------------------------------------------------------

Adam::Adam(std::vector<Tensor> params) : params_(std::move(params)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.data().size(), 0.0);
    v_.emplace_back(p.data().size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi].data();
    const auto& g = params_[pi].grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }
}

double cmlm_learning_rate(const RunConfig& c, int step) {
  if (c.warmup_steps > 0 && step <= c.warmup_steps) {
    return c.peak_lr * static_cast<double>(step) / c.warmup_steps;
  }
  const int total = std::max(c.steps - c.warmup_steps, 1);
  const double progress = static_cast<double>(step - c.warmup_steps) / total;
  return c.peak_lr * std::pow(c.anneal_floor, std::min(1.0, std::max(0.0, progress)));
}

void write_log(const std::string& path, const std::vector<TrainEntry>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_log: cannot write " + path);
  out << "step\ttrain_loss\tvalid_bleu\n";
  for (const auto& e : log) {
    out << e.step << '\t' << e.train_loss << '\t' << e.valid_bleu << '\n';
  }
}

// ---- shared training loop ------------------------------------------------

namespace {

std::vector<int> trim(const std::vector<int>& padded, int len) {
  return std::vector<int>(padded.begin(), padded.begin() + len);
}

std::vector<std::vector<int>> corpus_targets(const ParallelCorpus& corpus) {
  std::vector<std::vector<int>> refs;
  refs.reserve(corpus.size());
  for (const auto& p : corpus.pairs) refs.push_back(p.target);
  return refs;
}

class BatchStream {
 public:
  BatchStream(const ParallelCorpus& corpus, int budget, uint64_t seed)
      : corpus_(corpus), budget_(budget), seed_(seed) {}

  const Batch& next() {
    if (index_ >= batches_.size()) {
      Rng rng(derive_seed(seed_, kRngEpoch, epoch_++));
      batches_ = make_epoch_batches(corpus_, budget_, rng);
      index_ = 0;
    }
    return batches_[index_++];
  }

 private:
  const ParallelCorpus& corpus_;
  int budget_;
  uint64_t seed_;
  uint64_t epoch_ = 0;
  std::vector<Batch> batches_;
  size_t index_ = 0;
};

// Per-sentence loss builder: returns loss tensor for one (source, target).
using SentenceLoss = std::function<Tensor(const std::vector<int>& source,
                                          const std::vector<int>& target, int step,
                                          int corpus_index)>;

TrainResult run_training(NatModel& model, const ParallelCorpus& train, const ParallelCorpus& valid,
                         const RunConfig& config, const SentenceLoss& sentence_loss,
                         const std::function<double(int)>& learning_rate) {
  TrainResult result;
  auto best_state = model.state();
  double loss_accum = 0.0;
  int loss_count = 0;

  const auto valid_refs = corpus_targets(valid);
  auto validate_now = [&](int step) {
    model.clear_dropout();
    const auto hyps = decode_corpus(model, valid, config.length_candidates);
    const double bleu = corpus_bleu(hyps, valid_refs);
    TrainEntry e;
    e.step = step;
    e.train_loss = loss_count > 0 ? loss_accum / loss_count : 0.0;
    e.valid_bleu = bleu;
    result.log.push_back(e);
    loss_accum = 0.0;
    loss_count = 0;
    if (bleu > result.best_valid_bleu) {
      result.best_valid_bleu = bleu;
      result.best_step = step;
      best_state = model.state();
    }
  };

  if (config.steps == 0) {
    return result;  // initial parameters stand; nothing logged
  }

  Adam opt(model.parameters());
  BatchStream stream(train, config.batch_tokens, config.seed);
  for (int step = 1; step <= config.steps; ++step) {
    const Batch& batch = stream.next();
    Tape::current().reset();
    for (auto& p : model.parameters()) p.zero_grad();

    std::vector<Tensor> losses;
    losses.reserve(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
      const auto source = trim(batch.source[i], batch.source_len[i]);
      const auto target = trim(batch.target[i], batch.target_len[i]);
      losses.push_back(sentence_loss(source, target, step, batch.corpus_index[i]));
    }
    model.clear_dropout();
    Tensor batch_loss = mean(stack_scalars(losses));
    const double loss_value = batch_loss.item();
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step));
    }
    loss_accum += loss_value;
    ++loss_count;
    backward(batch_loss);
    opt.step(learning_rate(step));

    if (step % config.valid_interval == 0 || step == config.steps) validate_now(step);
  }
  Tape::current().reset();
  model.set_state(best_state);
  return result;
}

}  // namespace

TrainResult train_cmlm(NatModel& model, const ParallelCorpus& train, const ParallelCorpus& valid,
                       const Vocab& vocab, const RunConfig& config) {
  (void)vocab;
  validate(config);
  auto loss_fn = [&](const std::vector<int>& source, const std::vector<int>& target, int step,
                     int corpus_index) {
    Rng mask_rng(derive_seed(config.seed, kRngCmlmMask, static_cast<uint64_t>(step),
                             static_cast<uint64_t>(corpus_index)));
    Rng drop_rng(derive_seed(config.seed, kRngDropout, static_cast<uint64_t>(step),
                             static_cast<uint64_t>(corpus_index)));
    model.set_dropout(config.dropout, &drop_rng);
    const int len = static_cast<int>(target.size());
    const int subset_size = mask_rng.uniform_int(1, len);
    const auto subset = sample_mask_positions(len, subset_size, mask_rng);
    Tensor enc = model.encode(source);
    Tensor loss = cmlm_loss(model, enc, target, subset, config.label_smoothing);
    loss = add(loss, length_loss(model.length_logprobs(enc), len));
    model.clear_dropout();
    return loss;
  };
  return run_training(model, train, valid, config, loss_fn,
                      [&](int step) { return cmlm_learning_rate(config, step); });
}

TrainResult finetune_mgmo(NatModel& model, const ParallelCorpus& train,
                          const ParallelCorpus& valid, const Vocab& vocab,
                          const RunConfig& config) {
  validate(config);
  validate(config.mgmo);
  auto loss_fn = [&](const std::vector<int>& source, const std::vector<int>& target, int step,
                     int corpus_index) {
    Rng sample_rng(derive_seed(config.seed, kRngSample, static_cast<uint64_t>(step),
                               static_cast<uint64_t>(corpus_index)));
    Rng mask_rng(derive_seed(config.seed, kRngRewardMask, static_cast<uint64_t>(step),
                             static_cast<uint64_t>(corpus_index)));
    Rng drop_rng(derive_seed(config.seed, kRngDropout, static_cast<uint64_t>(step),
                             static_cast<uint64_t>(corpus_index)));
    if (config.dropout > 0.0) model.set_dropout(config.dropout, &drop_rng);
    SampledLoss sl = mgmo_loss(model, source, target, config.mgmo, &vocab, sample_rng, mask_rng);
    Tensor loss =
        add(sl.loss, length_loss(sl.length_logprobs, static_cast<int>(target.size())));
    model.clear_dropout();
    return loss;
  };
  return run_training(model, train, valid, config, loss_fn,
                      [&](int) { return config.fixed_lr; });
}

TrainResult finetune_mo(NatModel& model, const ParallelCorpus& train, const ParallelCorpus& valid,
                        const Vocab& vocab, const RunConfig& config) {
  validate(config);
  validate(config.mgmo);
  auto loss_fn = [&](const std::vector<int>& source, const std::vector<int>& target, int step,
                     int corpus_index) {
    Rng sample_rng(derive_seed(config.seed, kRngSample, static_cast<uint64_t>(step),
                               static_cast<uint64_t>(corpus_index)));
    Rng drop_rng(derive_seed(config.seed, kRngDropout, static_cast<uint64_t>(step),
                             static_cast<uint64_t>(corpus_index)));
    if (config.dropout > 0.0) model.set_dropout(config.dropout, &drop_rng);
    SampledLoss sl = mo_loss(model, source, target, config.mgmo.k, config.mgmo.alpha,
                             config.mgmo.metric, config.mgmo.max_ngram, &vocab, sample_rng);
    Tensor loss =
        add(sl.loss, length_loss(sl.length_logprobs, static_cast<int>(target.size())));
    model.clear_dropout();
    return loss;
  };
  return run_training(model, train, valid, config, loss_fn,
                      [&](int) { return config.fixed_lr; });
}

// ---- evaluation ----------------------------------------------------------

std::vector<std::vector<int>> decode_corpus(const NatModel& model, const ParallelCorpus& corpus,
                                            int length_candidates) {
  std::vector<std::vector<int>> hyps;
  hyps.reserve(corpus.size());
  for (const auto& p : corpus.pairs) hyps.push_back(model.greedy_decode(p.source, length_candidates));
  return hyps;
}

EvalResult evaluate(const NatModel& model, const ParallelCorpus& corpus, int length_candidates,
                    int gleu_max_n) {
  if (corpus.empty()) throw std::invalid_argument("evaluate: empty corpus");
  const auto hyps = decode_corpus(model, corpus, length_candidates);
  EvalResult r;
  r.bleu = corpus_bleu(hyps, corpus_targets(corpus));
  double gleu_sum = 0.0, len_sum = 0.0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    gleu_sum += gleu(hyps[i], corpus.pairs[i].target, gleu_max_n);
    len_sum += static_cast<double>(hyps[i].size());
  }
  r.gleu = 100.0 * gleu_sum / static_cast<double>(hyps.size());
  r.mean_length = len_sum / static_cast<double>(hyps.size());
  return r;
}

std::vector<LengthBucket> analyze_lengths(const NatModel& model, const ParallelCorpus& corpus,
                                          const std::vector<int>& edges, int length_candidates) {
  if (edges.empty()) throw std::invalid_argument("analyze_lengths: no bucket edges");
  for (size_t i = 1; i < edges.size(); ++i) {
    if (edges[i] <= edges[i - 1]) throw std::invalid_argument("analyze_lengths: edges must increase");
  }
  const auto hyps = decode_corpus(model, corpus, length_candidates);
  std::vector<LengthBucket> buckets;
  for (size_t b = 0; b <= edges.size(); ++b) {
    LengthBucket bucket;
    bucket.lo = b == 0 ? 1 : edges[b - 1] + 1;
    bucket.hi = b == edges.size() ? INT_MAX : edges[b];
    std::vector<std::vector<int>> bh, br;
    for (size_t i = 0; i < corpus.size(); ++i) {
      const int len = static_cast<int>(corpus.pairs[i].target.size());
      if (len >= bucket.lo && len <= bucket.hi) {
        bh.push_back(hyps[i]);
        br.push_back(corpus.pairs[i].target);
      }
    }
    bucket.count = static_cast<int>(bh.size());
    if (bucket.count == 0) continue;  // absent, not zero
    bucket.bleu = corpus_bleu(bh, br);
    buckets.push_back(bucket);
  }
  return buckets;
}

ConfidenceStats confidence_stats(const NatModel& model, const ParallelCorpus& corpus) {
  if (corpus.empty()) throw std::invalid_argument("confidence_stats: empty corpus");
  NoGradGuard ng;
  const int vocab = model.config().vocab_size;
  double prob_sum = 0.0;
  long positions = 0;
  for (const auto& p : corpus.pairs) {
    Tensor enc = model.encode(p.source);
    std::vector<int> input(p.target.size(), Vocab::kUnkId);
    Tensor rows = model.decode_parallel(enc, input);
    for (size_t t = 0; t < p.target.size(); ++t) {
      const double* row = rows.data().data() + t * static_cast<size_t>(vocab);
      int arg = -1;
      for (int c = 0; c < vocab; ++c) {
        if (c == Vocab::kPadId) continue;
        if (arg < 0 || row[c] > row[arg]) arg = c;
      }
      prob_sum += std::exp(row[arg]);
      ++positions;
    }
  }
  ConfidenceStats s;
  s.mean_argmax_prob = prob_sum / static_cast<double>(positions);
  s.ncm_proxy = 1.0 - s.mean_argmax_prob;
  return s;
}

double repetition_rate(const std::vector<std::vector<int>>& hypotheses) {
  if (hypotheses.empty()) throw std::invalid_argument("repetition_rate: empty hypothesis list");
  long repeats = 0, positions = 0;
  for (const auto& h : hypotheses) {
    for (size_t t = 1; t < h.size(); ++t) {
      ++positions;
      if (h[t] == h[t - 1]) ++repeats;
    }
  }
  return positions > 0 ? static_cast<double>(repeats) / positions : 0.0;
}

}  // namespace mgmo

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgmo/data.hpp"
#include "mgmo/model.hpp"
#include "mgmo/objectives.hpp"
#include "mgmo/tensor.hpp"

namespace mgmo {

enum class Stage { Cmlm, Mgmo };

// Everything a training run needs, parsed from a key=value config file.
// The "desk" preset fits a laptop core; the "paper" preset records the
// full-scale schedule (300k/100k steps, K=40) and is not meant to be run
// here.
struct RunConfig {
  Stage stage = Stage::Cmlm;
  uint64_t seed = 1;

  // data / io
  std::string train_data, valid_data, vocab_file;
  std::string init_checkpoint;  // required for the mgmo stage
  std::string out_checkpoint, log_file;

  // model
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int max_len = 32;

  // optimization
  int steps = 2000;
  int warmup_steps = 200;
  double peak_lr = 3e-3;
  double anneal_floor = 0.1;  // lr decays to peak*floor by the last step
  double fixed_lr = 1e-4;     // mgmo stage
  int batch_tokens = 256;
  double dropout = 0.1;
  double label_smoothing = 0.1;
  int valid_interval = 250;
  int length_candidates = 5;

  MgmoConfig mgmo;

  ModelConfig model_config(int vocab_size) const;
};

// Reads UTF-8 key=value lines ('#' comments and blank lines allowed).
// Unknown keys are hard errors. `preset=desk|paper` must come first if
// present; later keys override its values.
RunConfig load_run_config(const std::string& path);
void apply_preset(RunConfig& config, const std::string& preset);
void validate(const RunConfig& config);

// Canonical desk-scale schedules for the two stages.
RunConfig desk_cmlm_config();
RunConfig desk_mgmo_config();

// Adam with bias correction; constants follow common transformer practice.
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.98;
  static constexpr double kEps = 1e-9;

  explicit Adam(std::vector<Tensor> params);
  void step(double lr);
  int64_t t() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

// Linear warmup to peak_lr, then exponential anneal down to
// peak_lr * anneal_floor at the final step.
double cmlm_learning_rate(const RunConfig& config, int step);

struct TrainEntry {
  int step = 0;
  double train_loss = 0.0;
  double valid_bleu = 0.0;
};

struct TrainResult {
  std::vector<TrainEntry> log;
  double best_valid_bleu = -1.0;
  int best_step = -1;
};

void write_log(const std::string& path, const std::vector<TrainEntry>& log);

// Masked-prediction pretraining: per step, each sentence draws a mask
// subset (uniform size in 1..T, positions without replacement) and
// minimizes mean(cmlm_loss + length_loss) with Adam under the warmup/anneal
// schedule. Validation BLEU (greedy decode, length_candidates) is logged
// every valid_interval steps and the best checkpoint is restored into the
// model on return. Non-finite loss aborts with the step number.
TrainResult train_cmlm(NatModel& model, const ParallelCorpus& train, const ParallelCorpus& valid,
                       const Vocab& vocab, const RunConfig& config);

// Metric finetuning at a fixed learning rate; the sampled-reward loss
// replaces the masked-prediction loss and the length loss stays.
TrainResult finetune_mgmo(NatModel& model, const ParallelCorpus& train,
                          const ParallelCorpus& valid, const Vocab& vocab,
                          const RunConfig& config);

// Unmasked baseline trainer: identical loop driving mo_loss. Consumes the
// same sampling streams as finetune_mgmo, so an nc-strategy run matches it
// step for step.
TrainResult finetune_mo(NatModel& model, const ParallelCorpus& train, const ParallelCorpus& valid,
                        const Vocab& vocab, const RunConfig& config);

struct EvalResult {
  double bleu = 0.0;       // corpus BLEU, 0..100
  double gleu = 0.0;       // mean sentence GLEU x 100
  double mean_length = 0.0;
};

EvalResult evaluate(const NatModel& model, const ParallelCorpus& corpus, int length_candidates,
                    int gleu_max_n = 6);

std::vector<std::vector<int>> decode_corpus(const NatModel& model, const ParallelCorpus& corpus,
                                            int length_candidates);

struct LengthBucket {
  int lo = 0;
  int hi = 0;  // inclusive; INT_MAX for the open-ended last bucket
  int count = 0;
  double bleu = 0.0;
};

// Corpus BLEU per reference-length bucket. Edges are inclusive upper
// bounds; a final open bucket catches the rest. Empty buckets are omitted.
std::vector<LengthBucket> analyze_lengths(const NatModel& model, const ParallelCorpus& corpus,
                                          const std::vector<int>& edges, int length_candidates);

struct ConfidenceStats {
  double mean_argmax_prob = 0.0;
  double ncm_proxy = 0.0;  // 1 - mean_argmax_prob
};

// Decodes every test pair at its gold length with an all-UNK input and
// averages the probability mass on each position's argmax token.
ConfidenceStats confidence_stats(const NatModel& model, const ParallelCorpus& corpus);

// Fraction of positions (t >= 1) whose token repeats the previous one.
double repetition_rate(const std::vector<std::vector<int>>& hypotheses);

}  // namespace mgmo

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mgmo/rng.hpp"
#include "mgmo/tensor.hpp"

namespace mgmo {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int ff_dim = 128;  // fixed at 2*d_model by the presets
  int max_len = 32;
  uint64_t init_seed = 1;
};

// Transformer encoder-decoder that predicts every target position in one
// parallel pass: the decoder self-attends over its own (unmasked) inputs
// and cross-attends to the encoder, with no causal structure anywhere.
// A length head over mean-pooled encoder states gives p(T|x) for
// T in 1..max_len.
class NatModel {
 public:
  explicit NatModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  // [source_len, d_model] final encoder states. Hard error on empty input
  // or IDs outside the vocabulary.
  Tensor encode(const std::vector<int>& source) const;

  // One log-probability row per decoder position: [len(input), vocab].
  Tensor decode_parallel(const Tensor& encoder_states, const std::vector<int>& decoder_input) const;

  // log p(T|x) for T = 1..max_len as a [max_len] tensor (index T-1).
  Tensor length_logprobs(const Tensor& encoder_states) const;

  // Probability distribution over lengths 1..max_len (no gradient).
  std::vector<double> predict_length(const Tensor& encoder_states) const;

  // Decodes the top-l lengths with all-UNK inputs, ranks the argmax
  // candidates by mean per-token log-probability, and returns the winner
  // (ties: shorter length, then earlier candidate). PAD is excluded from
  // the per-position argmax.
  std::vector<int> greedy_decode(const std::vector<int>& source, int length_candidates) const;

  std::vector<std::pair<std::string, Tensor>>& named_parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& named_parameters() const { return params_; }
  std::vector<Tensor> parameters() const;
  int64_t parameter_count() const;

  // Closed form for the total parameter count of this architecture.
  static int64_t expected_parameter_count(const ModelConfig& config);

  // Dropout applies only while a positive rate and a generator are set;
  // decoding with dropout cleared is deterministic.
  void set_dropout(double rate, Rng* rng);
  void clear_dropout() { set_dropout(0.0, nullptr); }

  void save_checkpoint(const std::string& path) const;
  // Rebuilds a model from the stored hyperparameters and arrays.
  static NatModel load_checkpoint(const std::string& path);
  // Loads arrays into this model; any shape mismatch is a hard error.
  void load_arrays(const std::string& path);

  // Raw parameter values in registration order (used for best-checkpoint
  // snapshots during training).
  std::vector<std::vector<double>> state() const;
  void set_state(const std::vector<std::vector<double>>& state);

 private:
  struct Attention {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct FeedForward {
    Tensor w1, b1, w2, b2;
  };
  struct LayerNormParams {
    Tensor gain, bias;
  };
  struct EncoderLayer {
    LayerNormParams ln1, ln2;
    Attention self_attn;
    FeedForward ff;
  };
  struct DecoderLayer {
    LayerNormParams ln1, ln2, ln3;
    Attention self_attn, cross_attn;
    FeedForward ff;
  };

  Tensor embed(const std::vector<int>& ids) const;
  Tensor attention(const Attention& a, const Tensor& queries, const Tensor& keys_values) const;
  Tensor feed_forward(const FeedForward& f, const Tensor& x) const;
  Tensor maybe_dropout(const Tensor& x) const;
  Tensor register_param(const std::string& name, Shape shape);
  void init_weights();

  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;
  Tensor embedding_;  // shared by encoder and decoder inputs
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  LayerNormParams encoder_final_, decoder_final_;
  Tensor out_w_, out_b_;
  Tensor len_w_, len_b_;
  std::vector<double> position_table_;  // [max_len, d_model] sinusoidal
  double dropout_rate_ = 0.0;
  Rng* dropout_rng_ = nullptr;
};

// Checkpoint container: magic "MGMO", a version word, then named arrays.
namespace checkpoint {
struct Array {
  std::string name;
  Shape shape;
  std::vector<double> values;
};
void write(const std::string& path, const std::vector<Array>& arrays);
std::vector<Array> read(const std::string& path);
constexpr uint32_t kVersion = 1;
}  // namespace checkpoint

}  // namespace mgmo

#include "mgmo/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "mgmo/data.hpp"

namespace mgmo {

namespace {

void check_ids(const std::vector<int>& ids, int vocab, int max_len, const char* where) {
  if (ids.empty()) throw std::invalid_argument(std::string(where) + ": empty sequence");
  if (static_cast<int>(ids.size()) > max_len) {
    throw std::invalid_argument(std::string(where) + ": length " + std::to_string(ids.size()) +
                                " exceeds max length " + std::to_string(max_len));
  }
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw std::invalid_argument(std::string(where) + ": token id " + std::to_string(id) +
                                  " outside vocabulary of size " + std::to_string(vocab));
    }
  }
}

}  // namespace

NatModel::NatModel(const ModelConfig& config) : config_(config) {
  if (config_.vocab_size <= Vocab::kNumReserved) {
    throw std::invalid_argument("NatModel: vocabulary too small");
  }
  if (config_.d_model % config_.n_heads != 0) {
    throw std::invalid_argument("NatModel: d_model must be divisible by n_heads");
  }
  const int d = config_.d_model;
  const int f = config_.ff_dim;
  const int v = config_.vocab_size;

  embedding_ = register_param("embedding", {v, d});
  auto make_attention = [&](const std::string& prefix) {
    Attention a;
    a.wq = register_param(prefix + ".wq", {d, d});
    a.bq = register_param(prefix + ".bq", {d});
    a.wk = register_param(prefix + ".wk", {d, d});
    a.bk = register_param(prefix + ".bk", {d});
    a.wv = register_param(prefix + ".wv", {d, d});
    a.bv = register_param(prefix + ".bv", {d});
    a.wo = register_param(prefix + ".wo", {d, d});
    a.bo = register_param(prefix + ".bo", {d});
    return a;
  };
  auto make_ff = [&](const std::string& prefix) {
    FeedForward ff;
    ff.w1 = register_param(prefix + ".w1", {d, f});
    ff.b1 = register_param(prefix + ".b1", {f});
    ff.w2 = register_param(prefix + ".w2", {f, d});
    ff.b2 = register_param(prefix + ".b2", {d});
    return ff;
  };
  auto make_ln = [&](const std::string& prefix) {
    LayerNormParams ln;
    ln.gain = register_param(prefix + ".gain", {d});
    ln.bias = register_param(prefix + ".bias", {d});
    return ln;
  };

  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l);
    EncoderLayer layer;
    layer.ln1 = make_ln(p + ".ln1");
    layer.self_attn = make_attention(p + ".self_attn");
    layer.ln2 = make_ln(p + ".ln2");
    layer.ff = make_ff(p + ".ff");
    encoder_.push_back(std::move(layer));
  }
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    DecoderLayer layer;
    layer.ln1 = make_ln(p + ".ln1");
    layer.self_attn = make_attention(p + ".self_attn");
    layer.ln2 = make_ln(p + ".ln2");
    layer.cross_attn = make_attention(p + ".cross_attn");
    layer.ln3 = make_ln(p + ".ln3");
    layer.ff = make_ff(p + ".ff");
    decoder_.push_back(std::move(layer));
  }
  encoder_final_ = make_ln("encoder.final_ln");
  decoder_final_ = make_ln("decoder.final_ln");
  out_w_ = register_param("output.w", {d, v});
  out_b_ = register_param("output.b", {v});
  len_w_ = register_param("length.w", {d, config_.max_len});
  len_b_ = register_param("length.b", {config_.max_len});

  // Sinusoidal position table, parameter-free.
  position_table_.assign(static_cast<size_t>(config_.max_len) * d, 0.0);
  for (int pos = 0; pos < config_.max_len; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      position_table_[static_cast<size_t>(pos) * d + i] = std::sin(angle);
      if (i + 1 < d) position_table_[static_cast<size_t>(pos) * d + i + 1] = std::cos(angle);
    }
  }
  init_weights();
}

Tensor NatModel::register_param(const std::string& name, Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  params_.emplace_back(name, t);
  return t;
}

void NatModel::init_weights() {
  Rng rng(derive_seed(config_.init_seed, kRngInit));
  const double std = 0.05;
  for (auto& [name, p] : params_) {
    if (name.ends_with(".gain")) {
      std::fill(p.data().begin(), p.data().end(), 1.0);
      continue;
    }
    // The output and length heads start at zero so a fresh model emits
    // uniform token and length distributions; biases stay zero everywhere.
    if (name.rfind("output.", 0) == 0 || name.rfind("length.", 0) == 0) continue;
    if (p.shape().size() != 2) continue;
    for (auto& v : p.data()) v = rng.normal(0.0, std);
  }
}

std::vector<Tensor> NatModel::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(p);
  return out;
}

int64_t NatModel::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, p] : params_) n += p.numel();
  return n;
}

int64_t NatModel::expected_parameter_count(const ModelConfig& c) {
  const int64_t d = c.d_model, f = c.ff_dim, v = c.vocab_size, L = c.max_len;
  const int64_t attn = 4 * (d * d + d);
  const int64_t ff = d * f + f + f * d + d;
  const int64_t ln = 2 * d;
  const int64_t enc_layer = 2 * ln + attn + ff;
  const int64_t dec_layer = 3 * ln + 2 * attn + ff;
  return v * d                                 // shared embedding
         + c.n_layers * (enc_layer + dec_layer)
         + 2 * ln                              // final norms
         + d * v + v                           // output projection
         + d * L + L;                          // length head
}

void NatModel::set_dropout(double rate, Rng* rng) {
  if (rate > 0.0 && rng == nullptr) throw std::invalid_argument("set_dropout: missing generator");
  dropout_rate_ = rate;
  dropout_rng_ = rng;
}

Tensor NatModel::maybe_dropout(const Tensor& x) const {
  if (dropout_rate_ <= 0.0 || dropout_rng_ == nullptr) return x;
  return dropout(x, dropout_rate_, *dropout_rng_);
}

Tensor NatModel::embed(const std::vector<int>& ids) const {
  const int d = config_.d_model;
  Tensor e = scale(embedding_lookup(embedding_, ids), std::sqrt(static_cast<double>(d)));
  Tensor pos = Tensor::zeros({static_cast<int>(ids.size()), d});
  std::copy(position_table_.begin(), position_table_.begin() + static_cast<long>(ids.size()) * d,
            pos.data().begin());
  return add(e, pos);
}

Tensor NatModel::attention(const Attention& a, const Tensor& queries, const Tensor& keys_values) const {
  const int d = config_.d_model;
  const int h = config_.n_heads;
  const int dh = d / h;
  Tensor q = add(matmul(queries, a.wq), a.bq);
  Tensor k = add(matmul(keys_values, a.wk), a.bk);
  Tensor v = add(matmul(keys_values, a.wv), a.bv);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(h));
  for (int i = 0; i < h; ++i) {
    Tensor qh = slice_cols(q, i * dh, dh);
    Tensor kh = slice_cols(k, i * dh, dh);
    Tensor vh = slice_cols(v, i * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    heads.push_back(matmul(softmax_lastdim(scores), vh));
  }
  return add(matmul(concat_cols(heads), a.wo), a.bo);
}

Tensor NatModel::feed_forward(const FeedForward& f, const Tensor& x) const {
  return add(matmul(relu(add(matmul(x, f.w1), f.b1)), f.w2), f.b2);
}

Tensor NatModel::encode(const std::vector<int>& source) const {
  check_ids(source, config_.vocab_size, config_.max_len, "encode");
  Tensor x = embed(source);
  for (const auto& layer : encoder_) {
    Tensor a = layer_norm(x, layer.ln1.gain, layer.ln1.bias);
    x = add(x, maybe_dropout(attention(layer.self_attn, a, a)));
    Tensor f = layer_norm(x, layer.ln2.gain, layer.ln2.bias);
    x = add(x, maybe_dropout(feed_forward(layer.ff, f)));
  }
  return layer_norm(x, encoder_final_.gain, encoder_final_.bias);
}

Tensor NatModel::decode_parallel(const Tensor& encoder_states, const std::vector<int>& decoder_input) const {
  check_ids(decoder_input, config_.vocab_size, config_.max_len, "decode_parallel");
  Tensor x = embed(decoder_input);
  for (const auto& layer : decoder_) {
    Tensor a = layer_norm(x, layer.ln1.gain, layer.ln1.bias);
    x = add(x, maybe_dropout(attention(layer.self_attn, a, a)));
    Tensor c = layer_norm(x, layer.ln2.gain, layer.ln2.bias);
    x = add(x, maybe_dropout(attention(layer.cross_attn, c, encoder_states)));
    Tensor f = layer_norm(x, layer.ln3.gain, layer.ln3.bias);
    x = add(x, maybe_dropout(feed_forward(layer.ff, f)));
  }
  x = layer_norm(x, decoder_final_.gain, decoder_final_.bias);
  return log_softmax_lastdim(add(matmul(x, out_w_), out_b_));
}

Tensor NatModel::length_logprobs(const Tensor& encoder_states) const {
  Tensor pooled = reshape(mean_rows(encoder_states), {1, config_.d_model});
  Tensor logits = add(matmul(pooled, len_w_), len_b_);
  return reshape(log_softmax_lastdim(logits), {config_.max_len});
}

std::vector<double> NatModel::predict_length(const Tensor& encoder_states) const {
  NoGradGuard ng;
  Tensor lp = length_logprobs(encoder_states);
  std::vector<double> probs(lp.data().size());
  for (size_t i = 0; i < probs.size(); ++i) probs[i] = std::exp(lp.data()[i]);
  return probs;
}

std::vector<int> NatModel::greedy_decode(const std::vector<int>& source, int length_candidates) const {
  if (length_candidates < 1 || length_candidates > config_.max_len) {
    throw std::invalid_argument("greedy_decode: length candidates must be in [1, max_len]");
  }
  NoGradGuard ng;
  Tensor enc = encode(source);
  std::vector<double> len_probs = predict_length(enc);

  std::vector<int> lengths(len_probs.size());
  for (size_t i = 0; i < lengths.size(); ++i) lengths[i] = static_cast<int>(i) + 1;
  // Highest probability first; equal probabilities prefer the shorter length.
  std::stable_sort(lengths.begin(), lengths.end(), [&](int a, int b) {
    return len_probs[static_cast<size_t>(a - 1)] > len_probs[static_cast<size_t>(b - 1)];
  });
  lengths.resize(static_cast<size_t>(length_candidates));

  std::vector<int> best;
  double best_score = -std::numeric_limits<double>::infinity();
  int best_len = 0;
  const int v = config_.vocab_size;
  for (int t : lengths) {
    std::vector<int> input(static_cast<size_t>(t), Vocab::kUnkId);
    Tensor rows = decode_parallel(enc, input);
    std::vector<int> tokens(static_cast<size_t>(t));
    double score = 0.0;
    for (int i = 0; i < t; ++i) {
      const double* row = rows.data().data() + static_cast<size_t>(i) * v;
      int arg = -1;
      for (int c = 0; c < v; ++c) {
        if (c == Vocab::kPadId) continue;
        if (arg < 0 || row[c] > row[arg]) arg = c;
      }
      tokens[static_cast<size_t>(i)] = arg;
      score += row[arg];
    }
    score /= t;
    if (score > best_score || (score == best_score && t < best_len)) {
      best_score = score;
      best_len = t;
      best = std::move(tokens);
    }
  }
  return best;
}

std::vector<std::vector<double>> NatModel::state() const {
  std::vector<std::vector<double>> s;
  s.reserve(params_.size());
  for (const auto& [name, p] : params_) s.push_back(p.data());
  return s;
}

void NatModel::set_state(const std::vector<std::vector<double>>& state) {
  if (state.size() != params_.size()) throw std::invalid_argument("set_state: parameter count mismatch");
  for (size_t i = 0; i < state.size(); ++i) {
    if (state[i].size() != params_[i].second.data().size()) {
      throw std::invalid_argument("set_state: size mismatch for " + params_[i].first);
    }
    params_[i].second.data() = state[i];
  }
}

// ---- checkpoint format --------------------------------------------------

namespace checkpoint {

namespace {

void put_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ofstream& out, double d) {
  const uint64_t v = std::bit_cast<uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

double get_f64(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void write(const std::string& path, const std::vector<Array>& arrays) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write("MGMO", 4);
  put_u32(out, kVersion);
  for (const auto& a : arrays) {
    put_u32(out, static_cast<uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put_u32(out, static_cast<uint32_t>(a.shape.size()));
    for (int d : a.shape) put_u32(out, static_cast<uint32_t>(d));
    for (double v : a.values) put_f64(out, v);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<Array> read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MGMO", 4) != 0) {
    throw std::runtime_error("checkpoint: " + path + " is not an MGMO checkpoint");
  }
  const uint32_t version = get_u32(in);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  std::vector<Array> arrays;
  while (true) {
    int c = in.peek();
    if (c == EOF) break;
    Array a;
    const uint32_t name_len = get_u32(in);
    a.name.resize(name_len);
    in.read(a.name.data(), name_len);
    const uint32_t rank = get_u32(in);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint32_t d = get_u32(in);
      a.shape.push_back(static_cast<int>(d));
      numel *= d;
    }
    a.values.resize(static_cast<size_t>(numel));
    for (auto& v : a.values) v = get_f64(in);
    if (!in) throw std::runtime_error("checkpoint: truncated array '" + a.name + "' in " + path);
    arrays.push_back(std::move(a));
  }
  return arrays;
}

}  // namespace checkpoint

void NatModel::save_checkpoint(const std::string& path) const {
  std::vector<checkpoint::Array> arrays;
  arrays.push_back({"hparams",
                    {6},
                    {static_cast<double>(config_.vocab_size), static_cast<double>(config_.d_model),
                     static_cast<double>(config_.n_heads), static_cast<double>(config_.n_layers),
                     static_cast<double>(config_.ff_dim), static_cast<double>(config_.max_len)}});
  for (const auto& [name, p] : params_) arrays.push_back({name, p.shape(), p.data()});
  checkpoint::write(path, arrays);
}

void NatModel::load_arrays(const std::string& path) {
  auto arrays = checkpoint::read(path);
  size_t ai = 0;
  if (ai < arrays.size() && arrays[ai].name == "hparams") {
    const auto& h = arrays[ai].values;
    if (h.size() != 6 || static_cast<int>(h[0]) != config_.vocab_size ||
        static_cast<int>(h[1]) != config_.d_model || static_cast<int>(h[2]) != config_.n_heads ||
        static_cast<int>(h[3]) != config_.n_layers || static_cast<int>(h[4]) != config_.ff_dim ||
        static_cast<int>(h[5]) != config_.max_len) {
      throw std::runtime_error("checkpoint: hyperparameters in " + path + " do not match the model");
    }
    ++ai;
  }
  if (arrays.size() - ai != params_.size()) {
    throw std::runtime_error("checkpoint: " + path + " holds " + std::to_string(arrays.size() - ai) +
                             " arrays, model has " + std::to_string(params_.size()));
  }
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto& a = arrays[ai + i];
    auto& [name, p] = params_[i];
    if (a.name != name) {
      throw std::runtime_error("checkpoint: array '" + a.name + "' where '" + name + "' expected");
    }
    if (a.shape != p.shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file " +
                               shape_str(a.shape) + " vs model " + shape_str(p.shape()));
    }
    p.data() = a.values;
  }
}

NatModel NatModel::load_checkpoint(const std::string& path) {
  auto arrays = checkpoint::read(path);
  if (arrays.empty() || arrays[0].name != "hparams" || arrays[0].values.size() != 6) {
    throw std::runtime_error("checkpoint: " + path + " lacks the hparams array");
  }
  const auto& h = arrays[0].values;
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(h[0]);
  cfg.d_model = static_cast<int>(h[1]);
  cfg.n_heads = static_cast<int>(h[2]);
  cfg.n_layers = static_cast<int>(h[3]);
  cfg.ff_dim = static_cast<int>(h[4]);
  cfg.max_len = static_cast<int>(h[5]);
  NatModel model(cfg);
  model.load_arrays(path);
  return model;
}

}  // namespace mgmo

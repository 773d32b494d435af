#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "mgmo/data.hpp"
#include "mgmo/model.hpp"

using namespace mgmo;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 19;  // 16 content + reserved
  c.d_model = 16;
  c.n_heads = 4;
  c.n_layers = 2;
  c.ff_dim = 32;
  c.max_len = 16;
  c.init_seed = 9;
  return c;
}

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mgmo_model_" + std::to_string(::getpid()) +
                                                    "_" + name))
      .string();
}

}  // namespace

TEST_CASE("encode shapes and determinism") {
  NatModel model(small_config());
  std::vector<int> source = {3, 4, 5, 6, 7};
  Tensor states = model.encode(source);
  CHECK(states.shape() == Shape{5, 16});

  Tensor again = model.encode(source);
  CHECK(states.data() == again.data());

  CHECK_THROWS_AS(model.encode({}), std::invalid_argument);
  CHECK_THROWS_AS(model.encode({99}), std::invalid_argument);
  CHECK_THROWS_AS(model.encode(std::vector<int>(17, 3)), std::invalid_argument);
}

TEST_CASE("per-sentence encoding is independent of other sentences") {
  // There is no cross-sentence state: encoding the same sentence before or
  // after others gives identical rows.
  NatModel model(small_config());
  std::vector<int> a = {3, 4, 5};
  std::vector<int> b = {10, 11};
  Tensor first = model.encode(a);
  model.encode(b);
  model.encode({6, 7, 8, 9});
  Tensor second = model.encode(a);
  CHECK(first.data() == second.data());
}

TEST_CASE("parallel decode emits normalized rows of the right shape") {
  NatModel model(small_config());
  Tensor enc = model.encode({3, 4, 5});
  std::vector<int> input(4, Vocab::kUnkId);
  Tensor rows = model.decode_parallel(enc, input);
  CHECK(rows.shape() == Shape{4, 19});
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 19; ++c) s += std::exp(rows.data()[static_cast<size_t>(r) * 19 + c]);
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(model.decode_parallel(enc, std::vector<int>(17, Vocab::kUnkId)),
                  std::invalid_argument);

  Tensor rows2 = model.decode_parallel(enc, input);
  CHECK(rows.data() == rows2.data());
}

TEST_CASE("fresh model predicts uniform lengths and tokens") {
  NatModel model(small_config());
  Tensor enc = model.encode({3, 4, 5});
  const auto probs = model.predict_length(enc);
  REQUIRE(static_cast<int>(probs.size()) == 16);
  double sum = 0.0;
  for (double p : probs) {
    CHECK(std::abs(p - 1.0 / 16.0) < 1e-12);  // zero-initialized head
    sum += p;
  }
  CHECK(std::abs(sum - 1.0) < 1e-9);

  // zero-initialized output projection: uniform rows
  Tensor rows = model.decode_parallel(enc, {Vocab::kUnkId});
  for (int c = 0; c < 19; ++c) {
    CHECK(std::abs(std::exp(rows.data()[static_cast<size_t>(c)]) - 1.0 / 19.0) < 1e-12);
  }
}

TEST_CASE("greedy decode ranks exactly the top-l lengths") {
  NatModel model(small_config());
  std::vector<int> source = {3, 4, 5, 6};

  // exhaustive recomputation of the rule for l = 5
  const int l = 5;
  NoGradGuard ng;
  Tensor enc = model.encode(source);
  auto len_probs = model.predict_length(enc);
  std::vector<int> order(len_probs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i) + 1;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return len_probs[a - 1] > len_probs[b - 1]; });
  order.resize(l);
  double best_score = -1e18;
  std::vector<int> expected;
  int best_len = 0;
  for (int t : order) {
    Tensor rows = model.decode_parallel(enc, std::vector<int>(t, Vocab::kUnkId));
    double score = 0.0;
    std::vector<int> toks;
    for (int i = 0; i < t; ++i) {
      const double* row = rows.data().data() + static_cast<size_t>(i) * 19;
      int arg = -1;
      for (int c = 0; c < 19; ++c) {
        if (c == Vocab::kPadId) continue;
        if (arg < 0 || row[c] > row[arg]) arg = c;
      }
      toks.push_back(arg);
      score += row[arg];
    }
    score /= t;
    if (score > best_score || (score == best_score && t < best_len)) {
      best_score = score;
      best_len = t;
      expected = toks;
    }
  }
  CHECK(model.greedy_decode(source, l) == expected);
}

TEST_CASE("greedy decode l bounds") {
  NatModel model(small_config());
  CHECK_THROWS_AS(model.greedy_decode({3}, 0), std::invalid_argument);
  CHECK_THROWS_AS(model.greedy_decode({3}, 17), std::invalid_argument);
  CHECK(model.greedy_decode({3, 4}, 1).size() >= 1);
  CHECK(model.greedy_decode({3, 4}, 16).size() >= 1);  // all lengths considered
}

TEST_CASE("parameter count matches the closed form") {
  for (auto cfg : {small_config(), ModelConfig{67, 64, 4, 2, 128, 32, 1}}) {
    NatModel model(cfg);
    CHECK(model.parameter_count() == NatModel::expected_parameter_count(cfg));
  }
}

TEST_CASE("checkpoint round trip and mismatch detection") {
  ModelConfig cfg = small_config();
  NatModel model(cfg);
  const std::string path = temp_file("ckpt.bin");
  model.save_checkpoint(path);

  NatModel loaded = NatModel::load_checkpoint(path);
  CHECK(loaded.config().d_model == cfg.d_model);
  CHECK(loaded.parameter_count() == model.parameter_count());
  Tensor a = model.encode({3, 4, 5});
  Tensor b = loaded.encode({3, 4, 5});
  CHECK(a.data() == b.data());

  // same-architecture in-place load works
  NatModel other(cfg);
  other.load_arrays(path);
  CHECK(other.encode({3, 4, 5}).data() == a.data());

  // mismatched architecture is a hard error
  ModelConfig bigger = cfg;
  bigger.d_model = 32;
  bigger.ff_dim = 64;
  NatModel wrong(bigger);
  CHECK_THROWS_AS(wrong.load_arrays(path), std::runtime_error);

  // magic check
  {
    std::ofstream junk(path, std::ios::binary);
    junk << "NOPE";
  }
  CHECK_THROWS_AS(NatModel::load_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("state snapshot and restore") {
  NatModel model(small_config());
  auto snapshot = model.state();
  Tensor before = model.encode({3, 4});
  // poke the embedding row of a token the sentence actually uses
  model.named_parameters()[0].second.data()[3 * 16] += 0.5;
  Tensor changed = model.encode({3, 4});
  CHECK(before.data() != changed.data());
  model.set_state(snapshot);
  Tensor restored = model.encode({3, 4});
  CHECK(before.data() == restored.data());
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mgmo/data.hpp"
#include "mgmo/model.hpp"
#include "mgmo/objectives.hpp"

using namespace mgmo;

namespace {

ModelConfig tiny_config(uint64_t seed = 3) {
  ModelConfig c;
  c.vocab_size = 8;  // 5 content tokens + reserved
  c.d_model = 4;
  c.n_heads = 2;
  c.n_layers = 1;
  c.ff_dim = 4;
  c.max_len = 4;
  c.init_seed = seed;
  return c;
}

Tensor random_rows(int t, int v, uint64_t seed) {
  Rng rng(seed);
  Tensor logits = Tensor::zeros({t, v});
  for (auto& x : logits.data()) x = rng.normal(0.0, 2.0);
  return log_softmax_lastdim(logits);
}

// Slightly trained tiny model so distributions are not uniform.
NatModel nudged_model(uint64_t seed = 3) {
  NatModel model(tiny_config(seed));
  Rng rng(seed + 100);
  for (auto& [name, p] : model.named_parameters()) {
    if (name.rfind("output.", 0) == 0 || name.rfind("length.", 0) == 0) {
      for (auto& v : p.data()) v = rng.normal(0.0, 0.3);
    }
  }
  return model;
}

}  // namespace

TEST_CASE("xe loss") {
  SUBCASE("probability one everywhere gives zero loss") {
    // rows with log-prob 0 at the reference positions
    Tensor rows = Tensor::constant({3, 8}, -1e9);
    std::vector<int> ref = {3, 4, 5};
    for (int t = 0; t < 3; ++t) rows.data()[static_cast<size_t>(t) * 8 + ref[static_cast<size_t>(t)]] = 0.0;
    CHECK(xe_loss(rows, ref).item() == 0.0);
  }
  SUBCASE("uniform rows give T log V") {
    Tensor rows = log_softmax_lastdim(Tensor::zeros({5, 8}));
    CHECK(xe_loss(rows, {3, 4, 5, 6, 7}).item() ==
          doctest::Approx(5.0 * std::log(8.0)).epsilon(1e-12));
  }
  SUBCASE("equals the hand-summed per-token values") {
    Tensor rows = random_rows(3, 8, 17);
    std::vector<int> ref = {4, 6, 3};
    double hand = 0.0;
    for (int t = 0; t < 3; ++t) hand += rows.data()[static_cast<size_t>(t) * 8 + ref[static_cast<size_t>(t)]];
    CHECK(std::abs(xe_loss(rows, ref).item() - (-hand)) < 1e-12);
  }
  SUBCASE("length mismatch is an error") {
    Tensor rows = random_rows(3, 8, 1);
    CHECK_THROWS_AS(xe_loss(rows, {3, 4}), std::invalid_argument);
  }
}

TEST_CASE("length loss") {
  Tensor point = Tensor::constant({32}, -1e9);
  point.data()[6] = 0.0;  // all mass on length 7
  CHECK(length_loss(point, 7).item() == 0.0);

  Tensor uniform = log_softmax_lastdim(Tensor::zeros({32}));
  CHECK(length_loss(uniform, 13).item() == doctest::Approx(std::log(32.0)).epsilon(1e-12));

  Tensor arbitrary = random_rows(1, 32, 23);
  Tensor as_vec = reshape(arbitrary, {32});
  for (int t = 1; t <= 32; ++t) {
    CHECK(length_loss(as_vec, t).item() == -as_vec.data()[static_cast<size_t>(t - 1)]);
  }
  CHECK_THROWS_AS(length_loss(as_vec, 0), std::invalid_argument);
  CHECK_THROWS_AS(length_loss(as_vec, 33), std::invalid_argument);
}

TEST_CASE("cmlm loss") {
  NatModel model = nudged_model();
  std::vector<int> source = {3, 4, 5};
  std::vector<int> reference = {5, 6, 7, 3};

  SUBCASE("masking every position equals xe on the all-hidden input") {
    Tensor enc = model.encode(source);
    Tensor loss = cmlm_loss(model, enc, reference, {0, 1, 2, 3});
    Tensor rows = model.decode_parallel(enc, std::vector<int>(4, Vocab::kUnkId));
    CHECK(loss.item() == doctest::Approx(xe_loss(rows, reference).item()).epsilon(1e-12));
  }
  SUBCASE("only the masked positions contribute") {
    Tensor enc = model.encode(source);
    const std::vector<int> subset = {1, 3};
    Tensor loss = cmlm_loss(model, enc, reference, subset);
    Tensor rows = model.decode_parallel(enc, partial_observation_input(reference, subset));
    double hand = 0.0;
    for (int p : subset) hand -= rows.data()[static_cast<size_t>(p) * 8 + reference[static_cast<size_t>(p)]];
    CHECK(loss.item() == doctest::Approx(hand).epsilon(1e-12));
  }
  SUBCASE("empty subset is an error") {
    CHECK_THROWS_AS(cmlm_loss(model, source, reference, {}), std::invalid_argument);
  }
  SUBCASE("smoothing shifts toward the uniform mixture") {
    Tensor enc = model.encode(source);
    const std::vector<int> subset = {0, 2};
    Tensor plain = cmlm_loss(model, enc, reference, subset, 0.0);
    Tensor smoothed = cmlm_loss(model, enc, reference, subset, 0.1);
    Tensor rows = model.decode_parallel(enc, partial_observation_input(reference, subset));
    double uniform_part = 0.0;
    for (int p : subset) {
      for (int v = 0; v < 8; ++v) uniform_part -= rows.data()[static_cast<size_t>(p) * 8 + v];
    }
    const double hand = 0.9 * plain.item() + 0.1 / 8.0 * uniform_part;
    CHECK(smoothed.item() == doctest::Approx(hand).epsilon(1e-12));
  }
}

TEST_CASE("segment co-occurrence log-probability") {
  HypothesisSample s;
  s.length = 4;
  s.tokens = {3, 4, 5, 6};
  s.token_logprobs = {-0.5, -1.25, -2.0, -0.125};
  s.length_logprob = -1.5;

  SUBCASE("empty mask gives the full sequence probability") {
    s.mask = {};
    CHECK(segment_cooccurrence_logprob(s) ==
          doctest::Approx(-1.5 - 0.5 - 1.25 - 2.0 - 0.125).epsilon(1e-12));
  }
  SUBCASE("masking all but one keeps the length term plus one token") {
    s.mask = {1, 2, 3};
    CHECK(segment_cooccurrence_logprob(s) == doctest::Approx(-1.5 - 0.5).epsilon(1e-12));
  }
  SUBCASE("random masks match a per-term oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
      HypothesisSample h;
      h.length = rng.uniform_int(1, 8);
      h.tokens.assign(static_cast<size_t>(h.length), 3);
      h.token_logprobs.resize(static_cast<size_t>(h.length));
      for (auto& lp : h.token_logprobs) lp = -rng.uniform(0.0, 4.0);
      h.length_logprob = -rng.uniform(0.0, 3.0);
      const int m = rng.uniform_int(0, h.length - 1);
      h.mask = rng.sample_without_replacement(h.length, m);
      double expect = h.length_logprob;
      std::vector<char> masked(static_cast<size_t>(h.length), 0);
      for (int p : h.mask) masked[static_cast<size_t>(p)] = 1;
      for (int t = 0; t < h.length; ++t) {
        if (!masked[static_cast<size_t>(t)]) expect += h.token_logprobs[static_cast<size_t>(t)];
      }
      CHECK(std::abs(segment_cooccurrence_logprob(h) - expect) < 1e-12);
    }
  }
}

TEST_CASE("q distribution") {
  SUBCASE("equal log-probabilities are uniform") {
    const auto q = q_distribution({-2.0, -2.0, -2.0, -2.0}, 0.7);
    for (double v : q) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("alpha to zero flattens everything") {
    const auto q = q_distribution({-30.0, -1.0, -11.0}, 1e-9);
    for (double v : q) CHECK(std::abs(v - 1.0 / 3.0) < 1e-6);
  }
  SUBCASE("two-sample closed form") {
    const auto q = q_distribution({1.0, 2.0}, 1.0);
    CHECK(q[0] == doctest::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-9));
    CHECK(q[1] == doctest::Approx(std::exp(1.0) / (1.0 + std::exp(1.0))).epsilon(1e-9));
    CHECK(q[0] == doctest::Approx(0.2689).epsilon(1e-3));
    CHECK(q[1] == doctest::Approx(0.7311).epsilon(1e-3));
  }
  SUBCASE("normalization and shift invariance") {
    Rng rng(37);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> lp(static_cast<size_t>(rng.uniform_int(1, 10)));
      for (auto& v : lp) v = -rng.uniform(0.0, 40.0);
      const double alpha = rng.uniform(1e-4, 3.0);
      const auto q = q_distribution(lp, alpha);
      double sum = 0.0;
      for (double v : q) sum += v;
      CHECK(std::abs(sum - 1.0) < 1e-9);
      auto shifted = lp;
      for (auto& v : shifted) v += 123.0;
      const auto q2 = q_distribution(shifted, alpha);
      for (size_t i = 0; i < q.size(); ++i) CHECK(std::abs(q[i] - q2[i]) < 1e-9);
    }
  }
  SUBCASE("alpha must be positive") {
    CHECK_THROWS_AS(q_distribution({-1.0}, 0.0), std::invalid_argument);
  }
}

TEST_CASE("strategy batches") {
  const std::vector<int> ref = {10, 11, 12, 13, 14};  // "I never went back ."

  SUBCASE("fixed subsets reproduce the canonical rows") {
    // hidden = {0,1,4}: <unk> <unk> went back <unk>
    CHECK(partial_observation_input(ref, {0, 1, 4}) ==
          std::vector<int>{Vocab::kUnkId, Vocab::kUnkId, 12, 13, Vocab::kUnkId});
    // mask = {2,3}: I never <m> <m> .
    CHECK(mask_target(ref, {2, 3}) == std::vector<int>{10, 11, Vocab::kMaskId, Vocab::kMaskId, 14});
  }

  SUBCASE("drawn batches obey the strategy structure") {
    Rng rng(41);
    for (int trial = 0; trial < 100; ++trial) {
      for (Strategy s : {Strategy::NC, Strategy::PC, Strategy::PP, Strategy::NP}) {
        const auto batch = build_strategy_batch(ref, s, 8.0, rng);
        REQUIRE(batch.decoder_input.size() == ref.size());
        REQUIRE(batch.scoring_target.size() == ref.size());
        const bool n_input = s == Strategy::NC || s == Strategy::NP;
        const bool complete_target = s == Strategy::NC || s == Strategy::PC;
        if (n_input) {
          for (int t : batch.decoder_input) CHECK(t == Vocab::kUnkId);
        } else {
          int revealed = 0;
          for (size_t i = 0; i < ref.size(); ++i) {
            if (batch.decoder_input[i] != Vocab::kUnkId) {
              CHECK(batch.decoder_input[i] == ref[i]);
              ++revealed;
            }
          }
          CHECK(revealed >= 1);  // the hidden subset keeps at least one token
        }
        if (complete_target) {
          CHECK(batch.scoring_target == ref);
          CHECK(batch.mask.empty());
        } else {
          CHECK(batch.scoring_target == mask_target(ref, batch.mask));
          CHECK(batch.mask.size() <= ref.size() - 1);
        }
      }
    }
  }
}

TEST_CASE("mo loss") {
  NatModel model = nudged_model();
  Vocab vocab = Vocab::synthetic(5);
  std::vector<int> source = {3, 4, 5};
  std::vector<int> reference = {6, 7, 3};

  SUBCASE("single sample reduces to the negative reward") {
    Rng rng(43);
    const auto r = mo_loss(model, source, reference, 1, 0.005, Metric::Gleu, 6, &vocab, rng);
    CHECK(r.loss.item() == -r.rewards[0]);
    CHECK(r.q[0] == 1.0);
  }
  SUBCASE("hand-computed q-weighted sum, K=3") {
    Rng rng(47);
    const auto r = mo_loss(model, source, reference, 3, 0.8, Metric::Gleu, 6, &vocab, rng);
    std::vector<double> lp;
    for (const auto& s : r.samples) {
      CHECK(s.mask.empty());
      lp.push_back(segment_cooccurrence_logprob(s));
    }
    const auto q = q_distribution(lp, 0.8);
    double hand = 0.0;
    for (size_t k = 0; k < 3; ++k) {
      CHECK(std::abs(q[k] - r.q[k]) < 1e-12);
      hand -= q[k] * r.rewards[k];
    }
    CHECK(std::abs(r.loss.item() - hand) < 1e-12);
  }
  SUBCASE("equal rewards pin the loss at their negation") {
    // identical frozen samples make every reward equal
    Rng rng(53);
    auto samples = sample_hypotheses(model, source, 1, rng);
    std::vector<HypothesisSample> frozen(4, samples[0]);
    MgmoConfig cfg;
    cfg.strategy = Strategy::NC;
    cfg.k = 4;
    const auto r = mgmo_loss_from_samples(model, source, reference, frozen, {}, cfg, &vocab);
    CHECK(r.loss.item() == doctest::Approx(-r.rewards[0]).epsilon(1e-12));
  }
}

TEST_CASE("mgmo loss") {
  NatModel model = nudged_model(7);
  Vocab vocab = Vocab::synthetic(5);
  std::vector<int> source = {3, 4, 5, 6};
  std::vector<int> reference = {7, 3, 4};

  SUBCASE("loss sits in [-1, 0] and q sums to one") {
    for (Strategy s : {Strategy::NC, Strategy::PC, Strategy::PP, Strategy::NP}) {
      MgmoConfig cfg;
      cfg.strategy = s;
      cfg.k = 6;
      Rng sample_rng(61), mask_rng(62);
      const auto r = mgmo_loss(model, source, reference, cfg, &vocab, sample_rng, mask_rng);
      CHECK(r.loss.item() <= 0.0);
      CHECK(r.loss.item() >= -1.0);
      double qs = 0.0;
      for (double q : r.q) qs += q;
      CHECK(std::abs(qs - 1.0) < 1e-9);
      for (size_t k = 0; k < r.samples.size(); ++k) {
        CHECK(r.samples[k].mask.size() <=
              static_cast<size_t>(std::max(0, r.samples[k].length - 1)));
      }
    }
  }

  SUBCASE("nc strategy equals the mo baseline exactly") {
    MgmoConfig cfg;
    cfg.strategy = Strategy::NC;
    cfg.k = 5;
    cfg.alpha = 0.3;
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng s1(100 + seed), m1(200 + seed), s2(100 + seed);
      const auto a = mgmo_loss(model, source, reference, cfg, &vocab, s1, m1);
      const auto b = mo_loss(model, source, reference, cfg.k, cfg.alpha, cfg.metric,
                             cfg.max_ngram, &vocab, s2);
      CHECK(std::abs(a.loss.item() - b.loss.item()) < 1e-12);
    }
  }

  SUBCASE("single sample yields q = 1 and no gradient through q") {
    MgmoConfig cfg;
    cfg.k = 1;
    Rng s(71), m(72);
    Tape::current().reset();
    for (auto& p : model.parameters()) p.zero_grad();
    const auto r = mgmo_loss(model, source, reference, cfg, &vocab, s, m);
    CHECK(r.q[0] == 1.0);
    CHECK(r.loss.item() == -r.rewards[0]);
    backward(r.loss);
    double max_abs = 0.0;
    for (const auto& p : model.parameters()) {
      for (double g : p.grad()) max_abs = std::max(max_abs, std::abs(g));
    }
    CHECK(max_abs < 1e-9);
    Tape::current().reset();
  }

  SUBCASE("identical rewards make the gradient vanish") {
    Rng rng(73);
    auto one = sample_hypotheses(model, source, 1, rng);
    std::vector<HypothesisSample> frozen(3, one[0]);
    MgmoConfig cfg;
    cfg.k = 3;
    cfg.strategy = Strategy::NC;
    Tape::current().reset();
    for (auto& p : model.parameters()) p.zero_grad();
    const auto r = mgmo_loss_from_samples(model, source, reference, frozen, {}, cfg, &vocab);
    backward(r.loss);
    double max_abs = 0.0;
    for (const auto& p : model.parameters()) {
      for (double g : p.grad()) max_abs = std::max(max_abs, std::abs(g));
    }
    CHECK(max_abs < 1e-9);
    Tape::current().reset();
  }

  SUBCASE("alpha zero is rejected") {
    MgmoConfig cfg;
    cfg.alpha = 0.0;
    Rng s(81), m(82);
    CHECK_THROWS_AS(mgmo_loss(model, source, reference, cfg, &vocab, s, m), std::invalid_argument);
  }
}

TEST_CASE("gradient of the unnormalized objective matches the log-derivative form") {
  // Two-parameter toy: logits (a, b) define p over two outcomes; the
  // objective -sum_k p_k * R_k with detached rewards. The identity
  // d(-sum p R) = -sum R p d(log p) is checked numerically.
  const double reward[2] = {0.3, 0.9};
  Tensor a = Tensor::from_values({1}, {0.4}, true);
  Tensor b = Tensor::from_values({1}, {-0.7}, true);

  auto logprobs = [&]() {
    Tensor lp = log_softmax_lastdim(reshape(stack_scalars({a, b}), {2}));
    return lp;
  };

  Tape::current().reset();
  a.zero_grad();
  b.zero_grad();
  Tensor lp = logprobs();
  Tensor p = exp(lp);
  Tensor rv = Tensor::from_values({2}, {reward[0], reward[1]});
  backward(neg(sum(mul(p, rv))));
  const double auto_da = a.grad()[0], auto_db = b.grad()[0];

  // hand route: per-outcome gradients of log p_k, weighted by R_k p_k
  double hand_da = 0.0, hand_db = 0.0;
  for (int k = 0; k < 2; ++k) {
    Tape::current().reset();
    a.zero_grad();
    b.zero_grad();
    Tensor lp_k = gather_lastdim(logprobs(), {k});
    backward(lp_k);
    const double pk = std::exp(lp_k.item());
    hand_da -= reward[k] * pk * a.grad()[0];
    hand_db -= reward[k] * pk * b.grad()[0];
  }
  CHECK(std::abs(auto_da - hand_da) < 1e-9);
  CHECK(std::abs(auto_db - hand_db) < 1e-9);
  Tape::current().reset();
}

TEST_CASE("finite differences over the full loss on a sub-500-parameter model") {
  ModelConfig cfg = tiny_config(11);
  NatModel model(cfg);
  REQUIRE(model.parameter_count() <= 500);
  Vocab vocab = Vocab::synthetic(5);
  std::vector<std::vector<int>> sources = {{3, 4}, {5, 6, 7}};
  std::vector<std::vector<int>> refs = {{4, 5, 6}, {7, 3}};

  MgmoConfig mc;
  mc.k = 4;
  mc.strategy = Strategy::NP;

  // freeze samples once
  std::vector<std::vector<HypothesisSample>> frozen;
  for (size_t i = 0; i < sources.size(); ++i) {
    Rng s(300 + i), m(400 + i);
    const auto r = mgmo_loss(model, sources[i], refs[i], mc, &vocab, s, m);
    frozen.push_back(r.samples);
  }

  auto f = [&]() {
    std::vector<Tensor> losses;
    for (size_t i = 0; i < sources.size(); ++i) {
      const auto r = mgmo_loss_from_samples(model, sources[i], refs[i], frozen[i], {}, mc, &vocab);
      losses.push_back(add(r.loss, length_loss(r.length_logprobs, static_cast<int>(refs[i].size()))));
    }
    return mean(stack_scalars(losses));
  };
  CHECK(finite_difference_check(f, model.parameters(), 1e-5) <= 1e-3);

  auto f_cmlm = [&]() {
    std::vector<Tensor> losses;
    for (size_t i = 0; i < sources.size(); ++i) {
      Tensor enc = model.encode(sources[i]);
      std::vector<int> subset;
      for (size_t p = 0; p < refs[i].size(); p += 2) subset.push_back(static_cast<int>(p));
      Tensor loss = cmlm_loss(model, enc, refs[i], subset, 0.1);
      losses.push_back(add(loss, length_loss(model.length_logprobs(enc), static_cast<int>(refs[i].size()))));
    }
    return mean(stack_scalars(losses));
  };
  CHECK(finite_difference_check(f_cmlm, model.parameters(), 1e-5) <= 1e-6);

  auto f_xe = [&]() {
    Tensor enc = model.encode(sources[0]);
    Tensor rows = model.decode_parallel(enc, std::vector<int>(refs[0].size(), Vocab::kUnkId));
    return xe_loss(rows, refs[0]);
  };
  CHECK(finite_difference_check(f_xe, model.parameters(), 1e-5) <= 1e-6);
}

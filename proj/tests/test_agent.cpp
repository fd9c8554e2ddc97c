#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "fixtures.hpp"
#include "refloop/agent.hpp"
#include "refloop/checkpoint.hpp"

using namespace refloop;
using refloop::testing::norm;

namespace {

// Independent speaker forward pass written directly from the model
// definition: logits_v = e_v · (M f + Wc · mean(E[prefix])) + b_v.
std::vector<double> naive_step_probs(const ModelParams& p, const Shape& s, const std::vector<TokenId>& prefix) {
  const auto& d = p.dims();
  std::vector<double> h(static_cast<std::size_t>(d.dim), 0.0), c(static_cast<std::size_t>(d.dim), 0.0);
  for (int k = 0; k < d.dim; ++k)
    for (int f = 0; f < d.features; ++f) h[k] += p.M(k, f) * s.features[f];
  for (TokenId t : prefix)
    for (int k = 0; k < d.dim; ++k) c[k] += p.E(t, k) / static_cast<double>(prefix.size());
  for (int i = 0; i < d.dim; ++i)
    for (int j = 0; j < d.dim; ++j) h[i] += p.Wc(i, j) * c[j];
  std::vector<double> probs(static_cast<std::size_t>(d.vocab));
  double z = 0.0;
  for (int v = 0; v < d.vocab; ++v) {
    double l = p.b(v);
    for (int k = 0; k < d.dim; ++k) l += p.E(v, k) * h[k];
    z += (probs[v] = std::exp(l));
  }
  for (double& x : probs) x /= z;
  return probs;
}

double naive_sequence_prob(const ModelParams& p, const Shape& s, const std::vector<TokenId>& tokens) {
  double prob = 1.0;
  std::vector<TokenId> prefix;
  for (TokenId t : tokens) {
    prob *= naive_step_probs(p, s, prefix)[t];
    prefix.push_back(t);
  }
  return prob;
}

Utterance random_utterance(const World& w, Rng& rng) {
  std::vector<TokenId> content;
  const auto len = rng.below(static_cast<std::size_t>(w.max_len) + 1);
  for (std::size_t i = 0; i < len; ++i) content.push_back(static_cast<TokenId>(rng.below(static_cast<std::size_t>(w.vocab.size() - 1))));
  return make_utterance(w.vocab, content);
}

// Central finite differences of f over every parameter.
template <class F>
std::vector<double> finite_difference(ModelParams p, F f, double h = 1e-5) {
  std::vector<double> g(p.size());
  auto vals = p.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    vals[i] = orig + h;
    const double up = f(p);
    vals[i] = orig - h;
    const double down = f(p);
    vals[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  return norm(diff) / std::max({norm(a), norm(b), 1e-12});
}

}  // namespace

TEST_CASE("listener with zero embeddings is uniform") {
  const World w = testing::standard_world();
  ModelParams p = ModelParams::random(model_dims(w), 3);
  for (int v = 0; v < w.vocab.size(); ++v)
    for (int k = 0; k < p.dims().dim; ++k) p.E(v, k) = 0.0;
  const Context ctx = build_context(w.library, 11);
  const auto probs = listener_distribution(w, p, ctx, make_utterance(w.vocab, {0, 9, 14}));
  for (double x : probs) CHECK(x == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("duplicate shapes receive equal listener probability") {
  const World w = testing::standard_world();
  const ModelParams p = ModelParams::random(model_dims(w), 5, 0.5);
  const Context ctx = make_context({4, 8, 15, 16, 23, 42, 4, 99, 100, 101});
  const auto probs = listener_distribution(w, p, ctx, make_utterance(w.vocab, {2, 10}));
  CHECK(probs[0] == probs[6]);
}

TEST_CASE("listener distribution is a positive probability vector and permutation equivariant") {
  const World w = testing::standard_world();
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const ModelParams p = ModelParams::random(model_dims(w), 1000 + trial, 2.0);
    Context ctx = build_context(w.library, rng.next());
    const Utterance u = random_utterance(w, rng);
    const auto probs = listener_distribution(w, p, ctx, u);
    double sum = 0.0;
    for (double x : probs) {
      CHECK(x > 0.0);
      sum += x;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);

    std::vector<int> perm(10);
    for (int i = 0; i < 10; ++i) perm[i] = i;
    rng.shuffle(perm.begin(), perm.end());
    Context permuted = ctx;
    for (int i = 0; i < 10; ++i) permuted.shape_ids[i] = ctx.shape_ids[perm[i]];
    const auto pp = listener_distribution(w, p, permuted, u);
    for (int i = 0; i < 10; ++i) CHECK(pp[i] == doctest::Approx(probs[perm[i]]).epsilon(1e-12));
  }
}

TEST_CASE("dimension and token errors are invalid arguments") {
  const World w = testing::standard_world();
  const World tiny = testing::tiny_world(2);
  const ModelParams p = ModelParams::random(model_dims(tiny), 1);
  const Context ctx = build_context(w.library, 1);
  CHECK_THROWS_AS(listener_distribution(w, p, ctx, make_utterance(w.vocab, {1})), std::invalid_argument);
  const ModelParams q = ModelParams::random(model_dims(w), 1);
  CHECK_THROWS_AS(speaker_logprob(w, q, ctx, 0, Utterance{{99, w.vocab.eos()}}), std::invalid_argument);
  CHECK_THROWS_AS(speaker_logprob(w, q, ctx, 0, Utterance{{1, 2}}), std::invalid_argument);
}

TEST_CASE("speaker log-probability basics") {
  const World w = testing::standard_world();
  const Context ctx = build_context(w.library, 2);
  const ModelParams zero = ModelParams::zeros(model_dims(w));
  CHECK(speaker_logprob(w, zero, ctx, 3, make_utterance(w.vocab, {})) ==
        doctest::Approx(std::log(1.0 / w.vocab.size())).epsilon(1e-15));

  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const ModelParams p = ModelParams::random(model_dims(w), trial, 1.0);
    const Utterance u = random_utterance(w, rng);
    const double lp = speaker_logprob(w, p, ctx, static_cast<int>(rng.below(10)), u);
    CHECK(lp <= 0.0);
    CHECK(std::isfinite(lp));
  }
  // UNK takes part like any other token.
  const ModelParams p = ModelParams::random(model_dims(w), 8);
  const Utterance with_unk = make_utterance(w.vocab, {w.vocab.unk(), 3, w.vocab.unk()});
  CHECK(std::isfinite(speaker_logprob(w, p, ctx, 0, with_unk)));
  for (double x : listener_distribution(w, p, ctx, with_unk)) CHECK(std::isfinite(x));
}

TEST_CASE("enumeration: terminated mass plus unterminated mass is one") {
  // |V| = 4 (two content tokens, UNK, EOS), L = 2.
  const World w = testing::tiny_world(2);
  REQUIRE(w.vocab.size() == 4);
  const Context ctx = make_context({0, 1, 2});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelParams p = ModelParams::random(model_dims(w, 4), seed, 1.5);
    const Shape& shape = w.library.at(ctx.shape_ids[1]);
    double terminated = 0.0, unterminated = 0.0;
    std::vector<std::vector<TokenId>> prefixes{{}};
    for (int len = 0; len <= w.max_len; ++len) {
      std::vector<std::vector<TokenId>> next;
      for (const auto& pre : prefixes) {
        auto full = pre;
        full.push_back(w.vocab.eos());
        const double lp = speaker_logprob(w, p, ctx, 1, Utterance{full});
        CHECK(std::exp(lp) == doctest::Approx(naive_sequence_prob(p, shape, full)).epsilon(1e-12));
        terminated += std::exp(lp);
        if (len == w.max_len) {
          unterminated += naive_sequence_prob(p, shape, pre) * (1.0 - naive_step_probs(p, shape, pre)[w.vocab.eos()]);
        }
        for (TokenId t = 0; t < w.vocab.eos(); ++t) {
          auto longer = pre;
          longer.push_back(t);
          next.push_back(longer);
        }
      }
      prefixes = std::move(next);
    }
    CHECK(terminated <= 1.0);
    CHECK(terminated + unterminated == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("greedy decoding repeats a dominant token up to the forced EOS") {
  const World w = testing::standard_world();
  ModelParams p = ModelParams::zeros(model_dims(w));
  p.b(3) = 10.0;
  const Context ctx = build_context(w.library, 5);
  const SampleOptions greedy{0.7, true};
  const Utterance u = sample_utterance(w, p, ctx, 0, greedy, 1);
  CHECK(u.tokens == std::vector<TokenId>{3, 3, 3, 3, 3, 3, w.vocab.eos()});

  const ModelParams q = ModelParams::random(model_dims(w), 77, 1.0);
  for (int t = 0; t < 10; ++t) {
    const auto a = sample_utterance(w, q, ctx, t, SampleOptions{0.05, true}, 1);
    const auto b = sample_utterance(w, q, ctx, t, SampleOptions{5.0, true}, 2);
    CHECK(a == b);
  }
}

TEST_CASE("sampling is deterministic per seed and matches the softmax") {
  const World w = testing::standard_world();
  const ModelParams p = ModelParams::random(model_dims(w), 21, 0.8);
  const Context ctx = build_context(w.library, 8);
  for (std::uint64_t s = 0; s < 20; ++s)
    CHECK(sample_utterance(w, p, ctx, 2, SampleOptions{}, s) == sample_utterance(w, p, ctx, 2, SampleOptions{}, s));

  const World tiny = testing::tiny_world(1);
  const ModelParams tp = ModelParams::random(model_dims(tiny, 4), 5, 1.5);
  const Context tctx = make_context({0, 1, 2});
  const double tau = 0.7;
  // Exact first-token softmax at temperature tau.
  const Shape& shape = tiny.library.at(1);
  std::vector<double> exact = naive_step_probs(tp, shape, {});
  double z = 0.0;
  for (double& x : exact) z += (x = std::pow(x, 1.0 / tau));
  for (double& x : exact) x /= z;

  std::vector<double> counts(4, 0.0);
  Rng rng(123);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Utterance u = sample_utterance(tiny, tp, tctx, 1, SampleOptions{tau, false}, rng);
    REQUIRE(u.tokens.size() <= 2);
    counts[u.tokens.front()] += 1.0;
  }
  double tv = 0.0;
  for (int v = 0; v < 4; ++v) tv += 0.5 * std::abs(counts[v] / n - exact[v]);
  CHECK(tv < 0.01);
}

TEST_CASE("gradients match central finite differences") {
  const World w = testing::standard_world();
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelParams p = ModelParams::random(model_dims(w), 500 + trial, 0.5);
    const Context ctx = build_context(w.library, rng.next());
    const Utterance u = random_utterance(w, rng);
    const int slot = static_cast<int>(rng.below(10));

    const ModelParams gl = grad_log_listener(w, p, ctx, u, slot);
    const auto fl = finite_difference(p, [&](const ModelParams& q) {
      return listener_log_distribution(w, q, ctx, u)[slot];
    });
    CHECK(relative_error(gl.values(), fl) <= 1e-4);

    const ModelParams gs = grad_log_speaker(w, p, ctx, slot, u);
    const auto fs = finite_difference(p, [&](const ModelParams& q) { return speaker_logprob(w, q, ctx, slot, u); });
    CHECK(relative_error(gs.values(), fs) <= 1e-4);
  }
}

TEST_CASE("gradient structure") {
  const World w = testing::standard_world();
  const Context ctx = build_context(w.library, 31);
  const Utterance u = make_utterance(w.vocab, {1, 9, 20});

  ModelParams p = ModelParams::random(model_dims(w), 9, 0.5);
  ModelParams zero_e = p;
  for (int v = 0; v < w.vocab.size(); ++v)
    for (int k = 0; k < p.dims().dim; ++k) zero_e.E(v, k) = 0.0;
  CHECK(grad_log_listener(w, zero_e, ctx, u, 2).beta() == 0.0);

  // Feature columns absent from every shape on the board get no gradient.
  std::vector<bool> present(static_cast<std::size_t>(w.library.schema.feature_dim()), false);
  for (int id : ctx.shape_ids)
    for (std::size_t f = 0; f < present.size(); ++f)
      if (w.library.at(id).features[f] > 0) present[f] = true;
  const ModelParams gl = grad_log_listener(w, p, ctx, u, 4);
  for (std::size_t f = 0; f < present.size(); ++f)
    if (!present[f])
      for (int k = 0; k < p.dims().dim; ++k) CHECK(gl.M(k, static_cast<int>(f)) == 0.0);
  for (int i = 0; i < p.dims().dim; ++i) {
    CHECK(gl.b(i) == 0.0);
    for (int j = 0; j < p.dims().dim; ++j) CHECK(gl.Wc(i, j) == 0.0);
  }

  const ModelParams gs = grad_log_speaker(w, p, ctx, 4, u);
  CHECK(gs.beta() == 0.0);
  double bias_sum = 0.0;
  for (int v = 0; v < w.vocab.size(); ++v) bias_sum += gs.b(v);
  CHECK(std::abs(bias_sum) <= 1e-12);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  const World w = testing::standard_world();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelParams p = ModelParams::random(model_dims(w), seed, 3.0);
    p.values()[0] = 1e-310;  // subnormal
    p.values()[1] = -0.0;
    std::stringstream ss;
    write_checkpoint(ss, p, w.library.schema.hash());
    const ModelParams q = read_checkpoint(ss, w.library.schema.hash());
    CHECK(std::equal(p.values().begin(), p.values().end(), q.values().begin(), q.values().end(),
                     [](double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }));
    CHECK(checkpoint_id(p) == checkpoint_id(q));
  }
  std::stringstream ss;
  write_checkpoint(ss, ModelParams::random(model_dims(w), 1), w.library.schema.hash());
  CHECK_THROWS(read_checkpoint(ss, w.library.schema.hash() + 1));
}

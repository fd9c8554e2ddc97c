#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "refloop/analysis.hpp"
#include "refloop/arena.hpp"
#include "refloop/pragmatics.hpp"

using namespace refloop;

namespace {

std::vector<Words> corpus(std::initializer_list<const char*> texts) {
  std::vector<Words> out;
  for (const char* t : texts) out.push_back(split_words(t));
  return out;
}

double kl2(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s += p[i] * std::log2(p[i] / q[i]);
  return s;
}

// Smoothed-unigram similarity written out over an explicit vocabulary.
double reference_similarity(const std::vector<double>& counts_a, const std::vector<double>& counts_b) {
  std::vector<double> p(counts_a.size()), q(counts_b.size()), m(counts_a.size());
  double za = 0, zb = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    za += counts_a[i] + 1;
    zb += counts_b[i] + 1;
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = (counts_a[i] + 1) / za;
    q[i] = (counts_b[i] + 1) / zb;
    m[i] = 0.5 * (p[i] + q[i]);
  }
  return 1.0 - 0.5 * (kl2(p, m) + kl2(q, m));
}

}  // namespace

TEST_CASE("role accuracy and bootstrap intervals") {
  const Estimate all = role_accuracy(std::vector<int>(40, 1), 3);
  CHECK(all.value == 1.0);
  CHECK(all.lo == 1.0);
  CHECK(all.hi == 1.0);

  std::vector<int> half(100, 0);
  std::fill(half.begin(), half.begin() + 50, 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Estimate e = role_accuracy(half, seed);
    CHECK(e.value == 0.5);
    CHECK(e.lo > 0.35);
    CHECK(e.hi < 0.65);
    // Normal approximation of the binomial: half-width 1.96 * 0.05.
    CHECK((e.hi - e.lo) == doctest::Approx(2 * 1.96 * 0.05).epsilon(0.15));
  }
  CHECK(role_accuracy(half, 9) == role_accuracy(half, 9));
  CHECK_THROWS_AS(role_accuracy({}, 1), std::invalid_argument);

  // Quadrupling the sample narrows the interval.
  double narrow = 0, wide = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<int> small, large;
    for (int i = 0; i < 100; ++i) small.push_back(rng.bernoulli(0.7));
    for (int i = 0; i < 400; ++i) large.push_back(rng.bernoulli(0.7));
    const auto a = role_accuracy(small, seed, 2000), b = role_accuracy(large, seed, 2000);
    wide += a.hi - a.lo;
    narrow += b.hi - b.lo;
    CHECK(a.lo <= a.value);
    CHECK(a.value <= a.hi);
  }
  CHECK(narrow < 0.7 * wide);
}

TEST_CASE("word counters") {
  CHECK(split_words("  The Circle\tUP ") == Words{"the", "circle", "up"});
  CHECK(effective_vocabulary(corpus({"a b", "b c"})) == 3);
  CHECK(utterance_length(corpus({"w x y z"})) == 4.0);
  CHECK(utterance_length(corpus({"a", "a b c"})) == 2.0);
  CHECK(utterance_length({}) == 0.0);

  const auto r = corpus({"a b", "c"});
  CHECK(new_words({r, r, r}) == std::vector<std::size_t>{3, 0, 0});
  CHECK(new_words({corpus({"a b"}), corpus({"b c d"}), corpus({"a e"})}) == std::vector<std::size_t>{2, 2, 1});
}

TEST_CASE("jensen-shannon and SND hand values") {
  const auto p = unigram_distribution(split_words("a b"));
  const auto q = unigram_distribution(split_words("a c"));
  CHECK(std::abs(jensen_shannon(p, q) - 0.5) <= 1e-12);
  CHECK(jensen_shannon(p, p) == 0.0);
  CHECK(std::abs(jensen_shannon(p, unigram_distribution(split_words("x y"))) - 1.0) <= 1e-12);

  std::map<int, std::vector<Words>> same{{1, corpus({"a b", "a b", "b a"})}};
  CHECK(std::abs(snd(same)) <= 1e-12);
  std::map<int, std::vector<Words>> disjoint{{1, corpus({"a b", "c d"})}};
  CHECK(std::abs(snd(disjoint) - 1.0) <= 1e-12);
  std::map<int, std::vector<Words>> half{{1, corpus({"a b", "a c"})}, {2, corpus({"z"})}};
  CHECK(std::abs(snd(half) - 0.5) <= 1e-12);
  // Shape means: (0.5 + 1 + 0.5) / 3 for the first, 0 for the second.
  std::map<int, std::vector<Words>> mixed{{1, corpus({"a b", "a c", "b c"})}, {2, corpus({"q", "q"})}};
  const double jsd_ab_bc = 0.5;
  CHECK(std::abs(snd(mixed) - (0.5 + jsd_ab_bc + 0.5) / 3.0 / 2.0) <= 1e-12);

  // Mean over distinct descriptions: {x, y, y, y} scores like {x, y}.
  std::map<int, std::vector<Words>> repeated{{1, corpus({"a b", "c d", "c d", "c d"})}};
  CHECK(std::abs(snd(repeated) - 1.0) <= 1e-12);

  std::map<int, std::vector<Words>> single{{1, corpus({"a"})}, {2, corpus({"b"})}};
  CHECK_THROWS_AS(snd(single), std::invalid_argument);
}

TEST_CASE("SND range and duplicate monotonicity") {
  const std::vector<std::string> words{"a", "b", "c", "d", "e"};
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Words> descs;
    for (std::size_t i = 0, n = 2 + rng.below(5); i < n; ++i) {
      Words w;
      for (std::size_t j = 0, m = 1 + rng.below(4); j < m; ++j) w.push_back(words[rng.below(words.size())]);
      descs.push_back(w);
    }
    const double before = snd({{0, descs}});
    CHECK(before >= 0.0);
    CHECK(before <= 1.0);
    for (int extra = 0; extra < 3; ++extra) {
      descs.push_back(descs[rng.below(descs.size())]);
      CHECK(snd({{0, descs}}) <= before + 1e-12);
    }
  }
}

TEST_CASE("corpus similarity") {
  const auto x = corpus({"the circle up", "square", "a star dotted"});
  CHECK(corpus_similarity(x, x) == 1.0);
  const auto y = corpus({"circle", "heart left", "moon"});
  CHECK(corpus_similarity(x, y) == corpus_similarity(y, x));
  CHECK(corpus_similarity(x, y) < 1.0);
  CHECK(corpus_similarity(x, y) > 0.0);

  // Disjoint vocabularies of equal size over {a, b, c}.
  CHECK(std::abs(corpus_similarity(corpus({"a b"}), corpus({"c c"})) - reference_similarity({1, 1, 0}, {0, 0, 2})) <= 1e-12);
  CHECK(std::abs(corpus_similarity(corpus({"a a b"}), corpus({"c"})) - reference_similarity({2, 1, 0}, {0, 0, 1})) <= 1e-12);

  // Smoothing can hide a difference: (1, 3) and (0, 1) both smooth to (1/3, 2/3).
  CHECK(corpus_similarity(corpus({"a b b b"}), corpus({"b"})) == 1.0);

  Rng rng(2);
  const std::vector<std::string> words{"a", "b", "c", "d"};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Words> a, b;
    for (std::size_t i = 0, n = 1 + rng.below(4); i < n; ++i) a.push_back({words[rng.below(4)], words[rng.below(4)]});
    for (std::size_t i = 0, n = 1 + rng.below(4); i < n; ++i) b.push_back({words[rng.below(4)]});
    std::vector<double> ca(4, 0), cb(4, 0);
    for (const auto& u : a)
      for (const auto& w : u) ca[static_cast<std::size_t>(w[0] - 'a')] += 1;
    for (const auto& u : b)
      for (const auto& w : u) cb[static_cast<std::size_t>(w[0] - 'a')] += 1;
    // Words never used by either corpus are outside the joint vocabulary.
    std::vector<double> va, vb;
    for (std::size_t i = 0; i < 4; ++i)
      if (ca[i] + cb[i] > 0) {
        va.push_back(ca[i]);
        vb.push_back(cb[i]);
      }
    const double s = corpus_similarity(a, b);
    CHECK(std::abs(s - reference_similarity(va, vb)) <= 1e-12);
    double za = 0, zb = 0;
    for (std::size_t i = 0; i < va.size(); ++i) {
      za += va[i] + 1;
      zb += vb[i] + 1;
    }
    bool smoothed_differ = false;
    for (std::size_t i = 0; i < va.size(); ++i) smoothed_differ |= (va[i] + 1) / za != (vb[i] + 1) / zb;
    if (smoothed_differ) CHECK(s < 1.0);
  }
  CHECK_THROWS_AS(corpus_similarity({}, x), std::invalid_argument);
}

TEST_CASE("marked word breakdown") {
  const std::set<std::string> marked{"up", "left"};
  const std::vector<ScoredUtterance> games{{split_words("circle up"), false}, {split_words("star left"), false},
                                           {split_words("moon"), true},       {split_words("heart"), true},
                                           {split_words("arrow"), false}};
  const auto b = marked_word_breakdown(games, marked, 1);
  REQUIRE(b.with_marked);
  REQUIRE(b.without_marked);
  CHECK(b.with_marked->value == 0.0);
  CHECK(b.without_marked->value == doctest::Approx(2.0 / 3.0));

  const auto none = marked_word_breakdown(games, {"zzz"}, 1);
  CHECK_FALSE(none.with_marked);
  CHECK(none.without_marked);
  const auto every = marked_word_breakdown(games, {"circle", "up", "star", "left", "moon", "heart", "arrow"}, 1);
  CHECK(every.with_marked);
  CHECK_FALSE(every.without_marked);
  CHECK_THROWS_AS(marked_word_breakdown(games, {}, 1), std::invalid_argument);

  CHECK(default_marked_words() == std::set<std::string>{"up", "right", "down", "left"});
  std::istringstream list("# spatial\nabove below\nleft # trailing\n\n");
  CHECK(load_word_set(list) == std::set<std::string>{"above", "below", "left"});
}

TEST_CASE("shipped spatial word list loads") {
  std::ifstream in(REFLOOP_SOURCE_DIR "/config/spatial_words.txt");
  REQUIRE(in);
  const auto words = load_word_set(in);
  CHECK(words.size() == 50);
  CHECK(words.count("towards"));
}

TEST_CASE("regenerated evaluation utterances") {
  const World w = testing::standard_world();
  const auto model = ModelParams::random(model_dims(w, 16), 6, 0.5);
  Hyper h;
  std::vector<EvalPair> pairs;
  for (int i = 0; i < 200; ++i) {
    const Context ctx = build_context(w.library, static_cast<std::uint64_t>(1000 + i));
    pairs.push_back(EvalPair{1, i, ctx, i % 10, make_utterance(w.vocab, {0})});
  }
  const auto full = regenerate_eval_utterances(w, model, variant_by_name("Full"), pairs, h, 44);
  CHECK(full.size() == 200);
  CHECK(full == regenerate_eval_utterances(w, model, variant_by_name("Full"), pairs, h, 44));
  const auto noji = regenerate_eval_utterances(w, model, variant_by_name("No-JI"), pairs, h, 44);
  int differ = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto cands = draw_candidates(w, model, pairs[i].context, pairs[i].target, h, derive_seed(44, {i}));
    CHECK(std::find(cands.begin(), cands.end(), full[i]) != cands.end());
    CHECK(std::find(cands.begin(), cands.end(), noji[i]) != cands.end());
    const auto ranked = rank_candidates(w, model, pairs[i].context, pairs[i].target, cands, 1.0);
    CHECK(noji[i] == ranked.front().utterance);
    differ += full[i] != noji[i];
  }
  CHECK(differ > 0);
}

TEST_CASE("metric table from a campaign log") {
  CampaignConfig cfg;
  cfg.rounds = 2;
  cfg.schedule_start = 30;
  cfg.schedule_step = 10;
  cfg.seed_games = 40;
  cfg.validation_games = 60;
  cfg.eval_pairs = 40;
  cfg.hyper.max_epochs = 3;
  cfg.hyper.patience = 2;
  cfg.offline_round = true;
  const CampaignLog log = run_campaign(cfg);
  const World w = make_world(cfg);
  const std::string jsonl = log.to_jsonl(w.vocab);
  const MetricTable table = compute_metrics(analysis_input_from_jsonl(jsonl), default_marked_words());

  for (const auto& row : table.rows) {
    CHECK(row.estimate.lo <= row.estimate.value);
    CHECK(row.estimate.value <= row.estimate.hi);
  }
  for (int round = 1; round <= 2; ++round)
    for (const auto& v : cfg.variants)
      for (const char* role : {"listener", "speaker"}) CHECK(table.find(round, v, role, "accuracy"));
  CHECK(table.find(2, kControlVariant, "listener", "accuracy"));
  CHECK(table.find(1, "Full", "", "corpus_similarity"));
  CHECK(table.find(1, "Full", "", "snd"));
  CHECK(table.find(2, "Human", "", "snd"));
  CHECK(table.find(1, "Baseline", "", "new_words"));
  CHECK(table.find(3, "Full", "listener", "offline_accuracy"));
  CHECK(table.find(0, "Full", "listener", "train_seed")->estimate.value == cfg.seed_games);

  // Accuracy rows equal a direct count over the records.
  for (const auto& row : table.rows) {
    if (row.metric != "accuracy") continue;
    int n = 0, wins = 0;
    for (const auto& r : log.records)
      if (r.round == row.round && r.system == row.variant && to_string(r.role) == row.role) {
        ++n;
        wins += r.reward == 1;
      }
    CHECK(row.estimate.value == static_cast<double>(wins) / n);
  }

  // Recomputation from the log text is bit-identical, including the CSV.
  const MetricTable again = compute_metrics(analysis_input_from_jsonl(jsonl), default_marked_words());
  CHECK(again == table);
  std::ostringstream a, b;
  table.write_csv(a);
  again.write_csv(b);
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("# ", 0) == 0);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "enum_oracle.hpp"
#include "rnng/beam.hpp"
#include "rnng/bpe.hpp"
#include "rnng/errors.hpp"
#include "rnng/eval.hpp"
#include "rnng/synthetic.hpp"
#include "testutil.hpp"

using namespace rnng;

namespace {

// Toy grammar setup: V <= 3 word types, |N| <= 2 labels.
struct Toy {
  std::vector<Tree> corpus;
  Vocab vocab;
  ModelConfig cfg;
  Model model;

  static Toy make(uint64_t seed, int64_t dim = 10, int labels = 2) {
    std::vector<Tree> corpus =
        labels == 1 ? std::vector<Tree>{parse_tree("(A x (A y z))"), parse_tree("(A x y)"),
                                        parse_tree("(A (A x) y)"), parse_tree("(A z)")}
                    : std::vector<Tree>{parse_tree("(A x (B y z))"), parse_tree("(B x y)"),
                                        parse_tree("(A (B x) y)"), parse_tree("(A z)"),
                                        parse_tree("(B (A x y) z)")};
    Vocab vocab = Vocab::build(corpus, 100);
    ModelConfig cfg;
    cfg.embedding = cfg.hidden = dim;
    cfg.layers = 1;
    cfg.vocab = static_cast<int64_t>(vocab.num_words());
    cfg.num_nts = static_cast<int64_t>(vocab.num_nts());
    cfg.dropout = 0.0;
    return Toy{corpus, vocab, cfg, Model(cfg, Dtype::F64, seed)};
  }

  std::vector<int32_t> encode(const std::vector<std::string>& words) const {
    return vocab.encode_tokens(words);
  }
};

void zero(Model& m) {
  m.params().for_each([](const std::string&, Tensor& t) {
    for (int64_t i = 0; i < t.size(); ++i) t.set(i, 0.0);
  });
}

void zero(Toy& toy) { zero(toy.model); }

BeamConfig toy_beam(int k) {
  BeamConfig b;
  b.k = k;
  b.depth = 10;
  b.max_open_nt = 2;
  return b;
}

}  // namespace

TEST_CASE("beam schedule defaults follow k/10 and k/100") {
  BeamConfig b;
  b.k = 100;
  CHECK(b.kw() == 10);
  CHECK(b.ks() == 1);
  b.k = 1000;
  CHECK(b.kw() == 100);
  CHECK(b.ks() == 10);
  b.k = 20;
  CHECK(b.kw() == 2);
  CHECK(b.ks() == 1);  // min 1
  b.k_s = 0;
  CHECK(b.ks() == 0);  // explicit 0 disables fast-tracking
  b.k = 0;
  CHECK_THROWS_AS(b.validate(), ConfigError);
}

TEST_CASE("beam matches exhaustive enumeration at the default schedule") {
  // One label and two open constituents keep every per-word hypothesis set
  // inside the default word beam (k=1000 -> k_w=100), so the beam is exact.
  Toy toy = Toy::make(101, 10, 1);
  std::vector<std::vector<std::string>> sentences = {
      {"x"}, {"x", "y"}, {"z", "x"}, {"x", "y", "z"}, {"y", "z", "x", "x"}};
  for (const auto& words : sentences) {
    auto tokens = toy.encode(words);
    auto exact = testutil::enumerate_all(toy.cfg, toy.model.params(), tokens, 2, 10);
    REQUIRE(exact.complete_count > 0);

    BeamConfig cfg = toy_beam(1000);
    BeamResult beam = word_sync_beam(toy.model, tokens, cfg);

    for (size_t t = 0; t < words.size(); ++t)
      REQUIRE(exact.hypotheses[t] <= static_cast<size_t>(cfg.kw()));

    CHECK(beam.actions == exact.best_actions);
    CHECK(std::fabs(beam.logp - exact.best_logp) < 1e-5);
    REQUIRE(beam.prefix_logp.size() == words.size());
    for (size_t t = 0; t < words.size(); ++t)
      CHECK(std::fabs(beam.prefix_logp[t] - exact.prefix[t]) < 1e-5);
  }
}

TEST_CASE("beam matches exhaustive enumeration with a widened word beam") {
  // Two labels blow up the per-word hypothesis count (306 at the fourth
  // token); an explicit k_w large enough to hold them keeps the beam exact.
  Toy toy = Toy::make(101);
  auto tokens = toy.encode({"x", "y", "z", "x"});
  auto exact = testutil::enumerate_all(toy.cfg, toy.model.params(), tokens, 2, 10);
  BeamConfig cfg = toy_beam(1000);
  cfg.k_w = 400;
  for (size_t t = 0; t < 4; ++t)
    REQUIRE(exact.hypotheses[t] <= static_cast<size_t>(cfg.kw()));
  BeamResult beam = word_sync_beam(toy.model, tokens, cfg);
  CHECK(beam.actions == exact.best_actions);
  CHECK(std::fabs(beam.logp - exact.best_logp) < 1e-5);
  for (size_t t = 0; t < 4; ++t)
    CHECK(std::fabs(beam.prefix_logp[t] - exact.prefix[t]) < 1e-5);
}

TEST_CASE("k=1 with no fast-track equals a greedy rollout") {
  Toy toy = Toy::make(103);
  auto tokens = toy.encode({"x", "y", "z"});
  BeamConfig cfg = toy_beam(1);
  cfg.k_s = 0;
  BeamResult beam = word_sync_beam(toy.model, tokens, cfg);

  // Greedy oracle on the reference scorer: argmax over successors scored
  // exactly as the beam scores them (word log-prob included for GEN).
  ReferenceScorer scorer(toy.cfg, toy.model.params(), nullptr);
  ActionSeq greedy;
  double logp = 0.0;
  for (int guard = 0; guard < 200 && !scorer.complete(); ++guard) {
    Tensor a_logp = scorer.action_logp();
    int32_t best = -1;
    double best_score = -1e300;
    double gen_word = 0.0;
    if (scorer.action_legal(kActionGen, 3, cfg.max_open_nt, cfg.depth)) {
      int32_t tok = tokens[static_cast<size_t>(scorer.words_consumed())];
      gen_word = scorer.word_logp().at(tok);
    }
    for (int32_t a = 0; a < static_cast<int32_t>(toy.cfg.action_count()); ++a) {
      if (!scorer.action_legal(a, 3, cfg.max_open_nt, cfg.depth)) continue;
      double sc = a_logp.at(a) + (a == kActionGen ? gen_word : 0.0);
      if (sc > best_score) {
        best_score = sc;
        best = a;
      }
    }
    REQUIRE(best >= 0);
    Action act;
    if (best == kActionGen) {
      act = Action::gen(tokens[static_cast<size_t>(scorer.words_consumed())]);
    } else {
      act = best == kActionReduce ? Action::reduce() : Action::nt(best - 2);
    }
    logp += best_score;
    scorer.step(act);
    greedy.push_back(act);
  }
  REQUIRE(scorer.complete());
  CHECK(beam.actions == greedy);
  CHECK(std::fabs(beam.logp - logp) < 1e-9);
}

TEST_CASE("beam invariants: yields, legality, prefix monotonicity") {
  Toy toy = Toy::make(107);
  std::mt19937_64 rng(5);
  std::vector<std::string> words{"x", "y", "z"};
  std::uniform_int_distribution<size_t> pick(0, 2);
  std::uniform_int_distribution<size_t> len(1, 4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> sent;
    size_t n = len(rng);
    for (size_t i = 0; i < n; ++i) sent.push_back(words[pick(rng)]);
    BeamResult res = word_sync_beam(toy.model, toy.encode(sent), toy_beam(40));

    Tree tree = decode_tree(res.actions, toy.vocab);
    CHECK(leaves(tree) == sent);

    REQUIRE(res.prefix_logp.size() == n);
    double prev = 0.0;
    for (size_t t = 0; t < n; ++t) {
      CHECK(res.prefix_logp[t] <= prev + 1e-12);
      CHECK(res.surprisal[t] >= -1e-12);
      prev = res.prefix_logp[t];
    }
    // The best complete score never exceeds the final prefix mass.
    CHECK(res.logp <= res.prefix_logp.back() + 1e-9);
  }
}

TEST_CASE("higher beams never lower the best score") {
  Toy toy = Toy::make(109);
  auto tokens = toy.encode({"x", "y", "z", "x"});
  double prev = -1e300;
  for (int k : {1, 3, 10, 50, 1000}) {
    BeamConfig cfg = toy_beam(k);
    BeamResult res = word_sync_beam(toy.model, tokens, cfg);
    CHECK(res.logp >= prev - 1e-12);
    prev = res.logp;
  }
}

TEST_CASE("batched beam equals per-sentence beam") {
  Toy toy = Toy::make(113);
  std::mt19937_64 rng(7);
  std::vector<std::string> inventory{"x", "y", "z"};
  std::uniform_int_distribution<size_t> pick(0, 2);
  std::uniform_int_distribution<size_t> len(1, 5);
  std::vector<std::vector<int32_t>> sentences;
  for (int i = 0; i < 50; ++i) {
    std::vector<std::string> sent;
    size_t n = len(rng);
    for (size_t j = 0; j < n; ++j) sent.push_back(inventory[pick(rng)]);
    sentences.push_back(toy.encode(sent));
  }
  BeamConfig cfg = toy_beam(20);
  auto singles = batched_beam(toy.model, sentences, cfg, 1);
  auto batched = batched_beam(toy.model, sentences, cfg, 10);
  REQUIRE(singles.size() == batched.size());
  for (size_t i = 0; i < sentences.size(); ++i) {
    CHECK(batched[i].actions == singles[i].actions);
    CHECK(std::fabs(batched[i].logp - singles[i].logp) < 1e-9);
    for (size_t t = 0; t < singles[i].prefix_logp.size(); ++t)
      CHECK(std::fabs(batched[i].prefix_logp[t] - singles[i].prefix_logp[t]) < 1e-9);
  }
}

TEST_CASE("beam groups respect both caps") {
  std::vector<std::vector<int32_t>> sents(9, std::vector<int32_t>(60, 0));
  auto groups = beam_groups(sents, 100, 250);
  for (const auto& g : groups) CHECK(g.size() <= 4);  // 4*60 = 240 <= 250 < 300
  size_t total = 0;
  for (const auto& g : groups) total += g.size();
  CHECK(total == 9);

  auto by_count = beam_groups(sents, 2, 100000);
  for (const auto& g : by_count) CHECK(g.size() <= 2);
}

TEST_CASE("token_ppl arithmetic and enumeration agreement") {
  Toy toy = Toy::make(127);
  std::vector<std::vector<std::string>> corpus = {{"x", "y"}, {"z"}, {"x", "y", "z"}};
  BeamConfig cfg = toy_beam(1000);
  PplResult res = token_ppl(toy.model, toy.vocab, nullptr, corpus, cfg, 10);
  CHECK(res.tokens == 6);
  CHECK(res.ppl == doctest::Approx(std::exp(-res.total_logp / 6.0)));

  // Exact prefix mass from enumeration; final prefix is the scored total.
  double exact_total = 0.0;
  for (const auto& sent : corpus) {
    auto exact = testutil::enumerate_all(toy.cfg, toy.model.params(), toy.encode(sent), 2, 10);
    exact_total += exact.prefix.back();
  }
  double exact_ppl = std::exp(-exact_total / 6.0);
  CHECK(std::fabs(res.ppl - exact_ppl) / exact_ppl < 0.001);

  CHECK_THROWS_AS(token_ppl(toy.model, toy.vocab, nullptr, {}, cfg, 10), DataError);
}

TEST_CASE("definition check: ppl of known mass") {
  // total token log-prob -2 ln 8 over 2 tokens -> ppl = 8.
  double total = -2.0 * std::log(8.0);
  CHECK(std::exp(-total / 2.0) == doctest::Approx(8.0));
}

TEST_CASE("bracket_f1 hand cases") {
  Tree same = parse_tree("(S (NP a) (VP b))");
  F1Score perfect = bracket_f1(same, same);
  CHECK(perfect.precision == doctest::Approx(100.0));
  CHECK(perfect.recall == doctest::Approx(100.0));
  CHECK(perfect.f1 == doctest::Approx(100.0));

  F1Score mixed = bracket_f1(parse_tree("(S (NP a) (VP b))"), parse_tree("(S (NP a b))"));
  CHECK(mixed.precision == doctest::Approx(100.0 / 3.0));
  CHECK(mixed.recall == doctest::Approx(50.0));
  CHECK(mixed.f1 == doctest::Approx(40.0));

  CHECK_THROWS_AS(bracket_f1(parse_tree("(S a)"), parse_tree("(S a b)")), DataError);
}

TEST_CASE("bracket_f1 swap symmetry iff bracket counts match") {
  auto trees = random_treebank(60, 131, {.num_nts = 3, .num_words = 6, .max_tokens = 5});
  std::mt19937_64 rng(17);
  for (size_t i = 0; i + 1 < trees.size(); i += 2) {
    if (leaves(trees[i]) != leaves(trees[i + 1])) continue;
    F1Score ab = bracket_f1(trees[i], trees[i + 1]);
    F1Score ba = bracket_f1(trees[i + 1], trees[i]);
    CHECK(ab.f1 == doctest::Approx(ba.f1));  // F1 itself is symmetric
    if (ab.predicted == ab.gold) {
      CHECK(ab.precision == doctest::Approx(ba.precision));
      CHECK(ab.recall == doctest::Approx(ba.recall));
    } else {
      CHECK(ab.precision == doctest::Approx(ba.recall));
      CHECK(ab.recall == doctest::Approx(ba.precision));
    }
  }
  // Same-yield fuzz pairs: parse both directions without error.
  (void)rng;
}

TEST_CASE("substitute_leaves restores surface tokens") {
  Tree t = parse_tree("(S (NP UNK-CAP) (VP runs))");
  Tree out = substitute_leaves(t, {"Flurble", "runs"});
  CHECK(serialize(out) == "(S (NP Flurble) (VP runs))");
  CHECK_THROWS_AS(substitute_leaves(t, {"one"}), DataError);
}

TEST_CASE("pairs_eval: biased word head decides and ties lose") {
  // Zero weights except the word output bias: token probabilities are fixed
  // and structure-independent, so region scores are hand-computable.
  Toy toy = Toy::make(137);
  zero(toy);
  int32_t good_id = toy.vocab.word_id("y"), bad_id = toy.vocab.word_id("z");
  REQUIRE(good_id >= 0);
  REQUIRE(bad_id >= 0);
  toy.model.params().word_out_bias.set(good_id, 2.0);
  toy.model.params().word_out_bias.set(bad_id, -1.0);

  PairsItem item;
  item.id = "agree";
  item.good = {{"x", "y", "x"}, 1, 2};
  item.bad = {{"x", "z", "x"}, 1, 2};
  PairsItem tie;
  tie.id = "tie";
  tie.good = {{"x", "x"}, 0, 1};
  tie.bad = {{"x", "x"}, 0, 1};

  BeamConfig cfg = toy_beam(50);
  PairsResult res = pairs_eval(toy.model, toy.vocab, nullptr, {item, tie}, cfg, 4);
  REQUIRE(res.items.size() == 2);
  CHECK(res.items[0].correct);
  CHECK(res.items[0].good_score > res.items[0].bad_score);
  CHECK_FALSE(res.items[1].correct);  // ties count as incorrect
  CHECK(res.items[1].good_score == doctest::Approx(res.items[1].bad_score));
  CHECK(res.accuracy == doctest::Approx(0.5));
}

TEST_CASE("pairs_eval uses only the critical region") {
  Toy toy = Toy::make(139);
  zero(toy);
  // "y" is strongly preferred; make the non-critical tail use it in the bad
  // sentence so full-sentence likelihood would pick the wrong side.
  toy.model.params().word_out_bias.set(toy.vocab.word_id("y"), 3.0);
  PairsItem item;
  item.id = "region-only";
  item.good = {{"x", "y", "z"}, 1, 2};  // critical token: y (preferred)
  item.bad = {{"x", "z", "y"}, 1, 2};   // critical token: z; tail has the likeable y
  BeamConfig cfg = toy_beam(50);
  PairsResult res = pairs_eval(toy.model, toy.vocab, nullptr, {item}, cfg, 4);
  CHECK(res.items[0].correct);
}

TEST_CASE("subword region scores sum unit likelihoods, not averages") {
  // The good token is one unit, the bad token two units with equal per-unit
  // likelihood: summing favors the good side, averaging would flip it.
  std::vector<Tree> corpus = {parse_tree("(A aa)"), parse_tree("(A aa)"), parse_tree("(A b)"),
                              parse_tree("(A aa b)")};
  Merges merges = Merges::train_on_trees(corpus, 3);  // alphabet only: \u2581a, a, \u2581b
  Vocab vocab = Vocab::from_units(unit_counts(corpus, merges), corpus);
  ModelConfig cfg;
  cfg.embedding = cfg.hidden = 8;
  cfg.layers = 1;
  cfg.vocab = static_cast<int64_t>(vocab.num_words());
  cfg.num_nts = static_cast<int64_t>(vocab.num_nts());
  cfg.dropout = 0.0;
  cfg.subword = true;
  Model model(cfg, Dtype::F64, 149);
  zero(model);
  int32_t u_init_a = vocab.word_id(kWordInitMarker + "a");
  int32_t u_a = vocab.word_id("a");
  int32_t u_init_b = vocab.word_id(kWordInitMarker + "b");
  REQUIRE(u_init_a >= 0);
  REQUIRE(u_a >= 0);
  REQUIRE(u_init_b >= 0);
  model.params().word_out_bias.set(u_init_a, 1.0);
  model.params().word_out_bias.set(u_a, 1.0);
  model.params().word_out_bias.set(u_init_b, 1.0);
  model.params().word_out_bias.set(vocab.unk_id(), -9.0);

  PairsItem item;
  item.id = "sum-rule";
  item.good = {{"b"}, 0, 1};   // one unit
  item.bad = {{"aa"}, 0, 1};   // two units, same per-unit likelihood
  BeamConfig bc;
  bc.k = 50;
  bc.depth = 8;
  bc.max_open_nt = 2;
  PairsResult res = pairs_eval(model, vocab, &merges, {item}, bc, 4);
  REQUIRE(res.items.size() == 1);
  CHECK(res.items[0].correct);  // summed subword likelihoods
  // An averaged rule would have preferred the two-unit side.
  CHECK(res.items[0].good_score / 1.0 < res.items[0].bad_score / 2.0);
}

TEST_CASE("beam error paths") {
  Toy toy = Toy::make(151);
  BeamConfig cfg = toy_beam(10);
  CHECK_THROWS_AS(word_sync_beam(toy.model, {}, cfg), DataError);
  CHECK_THROWS_AS(word_sync_beam(toy.model, {9999}, cfg), DataError);
  // A depth bound of 2 leaves no room to open a constituent and generate.
  BeamConfig tiny = toy_beam(10);
  tiny.depth = 2;
  CHECK_THROWS_AS(word_sync_beam(toy.model, toy.encode({"x", "y", "z"}), tiny), NumericError);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <random>
#include <sstream>

#include "rnng/bpe.hpp"
#include "rnng/errors.hpp"
#include "rnng/synthetic.hpp"
#include "rnng/tree.hpp"
#include "rnng/vocab.hpp"

using namespace rnng;

TEST_CASE("parse_tree basics") {
  Tree t = parse_tree("(S (NP the dog) (VP barks))");
  CHECK(t.symbol == "S");
  REQUIRE(t.children.size() == 2);
  CHECK(t.children[0].symbol == "NP");
  CHECK(t.children[0].children[0].symbol == "the");
  CHECK(t.children[0].children[0].terminal);
  CHECK(t.children[1].children[0].symbol == "barks");
  CHECK(leaves(t) == std::vector<std::string>{"the", "dog", "barks"});

  Tree single = parse_tree("(NP dog)");
  CHECK(single.symbol == "NP");
  CHECK(single.children.size() == 1);

  CHECK_THROWS_AS(parse_tree(""), DataError);
  CHECK_THROWS_AS(parse_tree("(S (NP the"), DataError);
  CHECK_THROWS_AS(parse_tree("(S a) trailing"), DataError);
  CHECK_THROWS_AS(parse_tree("()"), DataError);
}

TEST_CASE("serialize round-trips random trees") {
  auto trees = random_treebank(1000, 123, {});
  for (const Tree& t : trees) {
    std::string s = serialize(t);
    CHECK(serialize(parse_tree(s)) == s);
  }
}

TEST_CASE("oracle actions for hand trees") {
  Tree t = parse_tree("(S (NP the dog) (VP barks))");
  auto acts = oracle_actions(t);
  std::vector<StringAction> want = {
      {Action::Kind::NT, "S"},     {Action::Kind::NT, "NP"},    {Action::Kind::GEN, "the"},
      {Action::Kind::GEN, "dog"},  {Action::Kind::REDUCE, ""},  {Action::Kind::NT, "VP"},
      {Action::Kind::GEN, "barks"}, {Action::Kind::REDUCE, ""}, {Action::Kind::REDUCE, ""}};
  CHECK(acts == want);

  auto np = oracle_actions(parse_tree("(NP dog)"));
  CHECK(np.size() == 3);
  CHECK(np[0].kind == Action::Kind::NT);
  CHECK(np[1].kind == Action::Kind::GEN);
  CHECK(np[2].kind == Action::Kind::REDUCE);
}

TEST_CASE("replay inverts oracle_actions on random trees") {
  auto trees = random_treebank(1000, 77, {});
  for (const Tree& t : trees) {
    CHECK(replay(oracle_actions(t)) == t);
    // Action counts: #GEN == #terminals, #NT == #REDUCE == #nonterminals.
    auto acts = oracle_actions(t);
    size_t gens = 0, nts = 0, reds = 0;
    for (const auto& a : acts) {
      gens += a.kind == Action::Kind::GEN;
      nts += a.kind == Action::Kind::NT;
      reds += a.kind == Action::Kind::REDUCE;
    }
    CHECK(gens == leaves(t).size());
    CHECK(nts == reds);
  }
}

TEST_CASE("min_stack_depth hand simulations") {
  CHECK(min_stack_depth(oracle_actions(parse_tree("(S (NP the dog) (VP barks))"))) == 4);
  CHECK(min_stack_depth(oracle_actions(parse_tree("(NP dog)"))) == 2);
  CHECK(min_stack_depth(oracle_actions(parse_tree("(A (B (C x)))"))) == 4);
  CHECK_THROWS_AS(min_stack_depth(std::vector<Action::Kind>{Action::Kind::REDUCE}), DataError);
}

TEST_CASE("build_vocab frequency cutoff and unks") {
  std::vector<Tree> corpus = {
      parse_tree("(S a a a b)"),
      parse_tree("(S b c)"),
  };
  Vocab v = Vocab::build(corpus, 2);
  CHECK(v.word_id("a") >= 0);
  CHECK(v.word_id("b") >= 0);
  CHECK(v.word_id("c") == -1);
  CHECK(v.lookup("c", false) == v.word_id("UNK-LC"));
  CHECK(v.word_count(v.word_id("a")) == 3);
  CHECK(v.word_count(v.word_id("b")) == 2);

  Vocab all = Vocab::build(corpus, 100);
  CHECK(all.word_id("c") >= 0);
  CHECK_THROWS_AS(Vocab::build({}, 10), DataError);
}

TEST_CASE("build_vocab ranks match a brute-force counter on 10k lines") {
  auto trees = random_treebank(10000, 99, {.num_words = 400, .max_tokens = 8});
  std::map<std::string, int64_t> counter;
  std::function<void(const Tree&)> walk = [&](const Tree& t) {
    if (t.terminal) {
      ++counter[t.symbol];
      return;
    }
    for (const Tree& c : t.children) walk(c);
  };
  for (const Tree& t : trees) walk(t);
  std::vector<std::pair<std::string, int64_t>> ranked(counter.begin(), counter.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocab v = Vocab::build(trees, 100);
  for (size_t i = 0; i < 100 && i < ranked.size(); ++i) {
    CHECK(v.word(static_cast<int32_t>(i)) == ranked[i].first);
    CHECK(v.word_count(static_cast<int32_t>(i)) == ranked[i].second);
  }
}

TEST_CASE("unk signatures") {
  auto none = [](const std::string&) { return false; };
  CHECK(unk_signature("Flurble", false, none) == "UNK-CAP");
  CHECK(unk_signature("Flurble", true, none) == "UNK");
  CHECK(unk_signature("quickliest", false, none) == "UNK-LC-est");
  CHECK(unk_signature("NASA", false, none) == "UNK-ALLCAPS");
  CHECK(unk_signature("x86-64", false, none) == "UNK-LC-DIG-DASH");
  CHECK(unk_signature("running", false, none) == "UNK-LC-ing");
  auto yes = [](const std::string&) { return true; };
  CHECK(unk_signature("Dogs", false, yes) == "UNK-CAP-KNOWN-s");
}

TEST_CASE("unk signature is total and deterministic over random strings") {
  std::mt19937_64 rng(4242);
  auto none = [](const std::string&) { return false; };
  for (int i = 0; i < 10000; ++i) {
    std::uniform_int_distribution<int> len(0, 12);
    std::uniform_int_distribution<int> ch(32, 126);
    std::string w;
    int n = len(rng);
    for (int j = 0; j < n; ++j) w += static_cast<char>(ch(rng));
    std::string a = unk_signature(w, i % 2 == 0, none);
    std::string b = unk_signature(w, i % 2 == 0, none);
    CHECK(a == b);
    CHECK(a.substr(0, 3) == "UNK");
  }
}

TEST_CASE("bpe hand-counted merge") {
  // corpus "aa aa ab": symbols {▁a a} x2, {▁a b} x1; the (▁a, a) pair wins.
  Merges m = Merges::train({"aa", "aa", "ab"}, 4);
  REQUIRE(m.size() == 1);
  CHECK(m.pairs()[0] == std::pair<std::string, std::string>{kWordInitMarker + "a", "a"});
  auto units = m.apply("aab");
  CHECK(units == std::vector<std::string>{kWordInitMarker + "aa", "b"});
}

TEST_CASE("bpe at alphabet size is character segmentation") {
  // occurring alphabet of "aa aa ab": ▁a, a, b.
  Merges m = Merges::train({"aa", "aa", "ab"}, 3);
  CHECK(m.size() == 0);
  CHECK(m.apply("ab") == std::vector<std::string>{kWordInitMarker + "a", "b"});
  CHECK_THROWS_AS(Merges::train({"aa", "ab"}, 2), ConfigError);
}

TEST_CASE("bpe segmentation is lossless over a corpus") {
  auto trees = random_treebank(200, 5, {.num_words = 40, .max_tokens = 6});
  Merges m = Merges::train_on_trees(trees, 60);
  for (const Tree& t : trees) {
    for (const std::string& w : leaves(t)) {
      std::string joined;
      for (const std::string& u : m.apply(w)) joined += u;
      CHECK(joined == kWordInitMarker + w);
    }
  }
}

TEST_CASE("segment_tree keeps the skeleton and round-trips") {
  std::vector<Tree> corpus = {parse_tree("(NP curry)"), parse_tree("(NP curry)"),
                              parse_tree("(S (NP rice) (VP cur))")};
  Merges m = Merges::train_on_trees(corpus, 14);
  Tree t = parse_tree("(NP curry)");
  Tree seg = segment_tree(t, m);
  CHECK_FALSE(seg.terminal);
  CHECK(seg.symbol == "NP");
  for (const Tree& c : seg.children) CHECK(c.terminal);
  CHECK(unsegment_tree(seg) == t);

  auto trees = random_treebank(100, 6, {.num_words = 30, .max_tokens = 5});
  Merges m2 = Merges::train_on_trees(trees, 70);
  for (const Tree& orig : trees) {
    Tree s = segment_tree(orig, m2);
    CHECK(unsegment_tree(s) == orig);
  }
}

TEST_CASE("no-merge table gives character-level terminals") {
  Merges none;
  Tree t = parse_tree("(NP dog)");
  Tree seg = segment_tree(t, none);
  REQUIRE(seg.children.size() == 3);
  CHECK(seg.children[0].symbol == kWordInitMarker + "d");
  CHECK(seg.children[1].symbol == "o");
  CHECK(seg.children[2].symbol == "g");
}

TEST_CASE("merges save/load round-trip") {
  Merges m = Merges::train({"abc", "abd", "abc"}, 6);
  std::string path = "/tmp/rnng_test_merges.txt";
  m.save(path);
  Merges loaded = Merges::load(path);
  CHECK(loaded.pairs() == m.pairs());
  CHECK(loaded.apply("abc") == m.apply("abc"));
}

TEST_CASE("vocab save/load and digest") {
  std::vector<Tree> corpus = {parse_tree("(S (NP a b) (VP c))")};
  Vocab v = Vocab::build(corpus, 10);
  v.save("/tmp/rnng_test_vocab.txt", "/tmp/rnng_test_vocab.nts");
  Vocab l = Vocab::load("/tmp/rnng_test_vocab.txt", "/tmp/rnng_test_vocab.nts");
  CHECK(l.num_words() == v.num_words());
  CHECK(l.num_nts() == v.num_nts());
  CHECK(l.digest() == v.digest());
  CHECK(l.word_id("a") == v.word_id("a"));
  CHECK(l.nt_id("VP") == v.nt_id("VP"));
}

TEST_CASE("encode_oracle maps symbols to dense ids") {
  std::vector<Tree> corpus = {parse_tree("(S (NP the dog) (VP barks))")};
  Vocab v = Vocab::build(corpus, 50);
  ActionSeq seq = v.encode_oracle(corpus[0]);
  REQUIRE(seq.size() == 9);
  CHECK(seq[0].kind == Action::Kind::NT);
  CHECK(seq[0].symbol == v.nt_id("S"));
  CHECK(seq[2].kind == Action::Kind::GEN);
  CHECK(seq[2].symbol == v.word_id("the"));
  CHECK(action_index(seq[0]) == 2 + v.nt_id("S"));
  CHECK(action_index(seq[2]) == kActionGen);
  CHECK(action_index(seq[4]) == kActionReduce);
}

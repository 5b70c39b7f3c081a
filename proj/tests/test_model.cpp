#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "rnng/errors.hpp"
#include "rnng/model.hpp"
#include "rnng/reference.hpp"
#include "rnng/synthetic.hpp"
#include "rnng/vocab.hpp"
#include "testutil.hpp"

using namespace rnng;

namespace {

void zero_params(Model& m) {
  m.params().for_each([](const std::string&, Tensor& t) {
    for (int64_t i = 0; i < t.size(); ++i) t.set(i, 0.0);
  });
}

ModelConfig tiny_cfg(int64_t v, int64_t n, int64_t dim = 8, int64_t layers = 2) {
  ModelConfig cfg;
  cfg.embedding = cfg.hidden = dim;
  cfg.layers = layers;
  cfg.vocab = v;
  cfg.num_nts = n;
  cfg.dropout = 0.0;
  return cfg;
}

Vocab toy_vocab(const std::vector<Tree>& corpus) { return Vocab::build(corpus, 100000); }

}  // namespace

TEST_CASE("lstm_cell zero weights give zero hidden state") {
  Model m(tiny_cfg(4, 2, 6, 1), Dtype::F64, 1);
  zero_params(m);
  std::mt19937_64 rng(2);
  Tensor x = Tensor::uniform({3, 6}, -2, 2, rng, Dtype::F64);
  Tensor h0 = Tensor::zeros({3, 6}, Dtype::F64);
  auto [h, c] = m.lstm_cell(nullptr, m.params().stack[0], h0, h0, x);
  for (int64_t i = 0; i < h.size(); ++i) CHECK(h.at(i) == doctest::Approx(0.0));
}

TEST_CASE("lstm_cell forget-gate saturation keeps the cell") {
  Model m(tiny_cfg(4, 2, 4, 1), Dtype::F64, 3);
  zero_params(m);
  // Huge forget bias, hugely negative input bias: c ~= c_prev.
  for (int64_t i = 0; i < 4; ++i) m.params().stack[0].bias.set(i, -50.0);       // input gate -> 0
  for (int64_t i = 4; i < 8; ++i) m.params().stack[0].bias.set(i, 50.0);        // forget gate -> 1
  std::mt19937_64 rng(4);
  Tensor x = Tensor::uniform({2, 4}, -1, 1, rng, Dtype::F64);
  Tensor h0 = Tensor::uniform({2, 4}, -1, 1, rng, Dtype::F64);
  Tensor c0 = Tensor::uniform({2, 4}, -1, 1, rng, Dtype::F64);
  auto [h, c] = m.lstm_cell(nullptr, m.params().stack[0], h0, c0, x);
  for (int64_t i = 0; i < c.size(); ++i) CHECK(c.at(i) == doctest::Approx(c0.at(i)).epsilon(1e-9));
}

TEST_CASE("lstm_cell matches a scalar step-by-step reference") {
  Model m(tiny_cfg(4, 2, 4, 1), Dtype::F64, 7);
  const LstmLayer& l = m.params().stack[0];
  std::mt19937_64 rng(9);
  Tensor x = Tensor::uniform({1, 4}, -1, 1, rng, Dtype::F64);
  Tensor h0 = Tensor::uniform({1, 4}, -1, 1, rng, Dtype::F64);
  Tensor c0 = Tensor::uniform({1, 4}, -1, 1, rng, Dtype::F64);
  auto [h, c] = m.lstm_cell(nullptr, l, h0, c0, x);

  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  for (int64_t j = 0; j < 4; ++j) {
    double gi = l.bias.at(j), gf = l.bias.at(4 + j), gg = l.bias.at(8 + j), go = l.bias.at(12 + j);
    for (int64_t k = 0; k < 4; ++k) {
      gi += x.at(0, k) * l.w_x.at(k, j) + h0.at(0, k) * l.w_h.at(k, j);
      gf += x.at(0, k) * l.w_x.at(k, 4 + j) + h0.at(0, k) * l.w_h.at(k, 4 + j);
      gg += x.at(0, k) * l.w_x.at(k, 8 + j) + h0.at(0, k) * l.w_h.at(k, 8 + j);
      go += x.at(0, k) * l.w_x.at(k, 12 + j) + h0.at(0, k) * l.w_h.at(k, 12 + j);
    }
    double cj = sig(gf) * c0.at(0, j) + sig(gi) * std::tanh(gg);
    double hj = sig(go) * std::tanh(cj);
    CHECK(std::fabs(c.at(0, j) - cj) < 1e-10);
    CHECK(std::fabs(h.at(0, j) - hj) < 1e-10);
  }
}

TEST_CASE("compose ignores pad contents and length-1 uses only the head") {
  Model m(tiny_cfg(6, 2, 5, 1), Dtype::F64, 11);
  std::mt19937_64 rng(12);
  Tensor padded = Tensor::uniform({3, 4, 5}, -1, 1, rng, Dtype::F64);
  IndexVec lens{2, 4, 1};
  Tensor out1 = m.compose(nullptr, padded, lens);

  Tensor poisoned = padded.clone();
  std::uniform_real_distribution<double> u(-9, 9);
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t j = lens[static_cast<size_t>(r)]; j < 4; ++j)
      for (int64_t c = 0; c < 5; ++c)
        poisoned.set((r * 4 + j) * 5 + c, u(rng));
  Tensor out2 = m.compose(nullptr, poisoned, lens);
  for (int64_t i = 0; i < out1.size(); ++i)
    CHECK(std::fabs(out1.at(i) - out2.at(i)) < 1e-12);

  // Row 2 has length 1: only the open-NT embedding matters.
  Tensor head_only = Tensor::zeros({1, 1, 5}, Dtype::F64);
  for (int64_t c = 0; c < 5; ++c) head_only.set(c, padded.at(2, 0, c));
  Tensor out3 = m.compose(nullptr, head_only, IndexVec{1});
  for (int64_t c = 0; c < 5; ++c) CHECK(out1.at(2, c) == doctest::Approx(out3.at(0, c)));

  CHECK_THROWS_AS(m.compose(nullptr, padded, IndexVec{2, 0, 1}), DataError);
}

TEST_CASE("batched compose equals per-row calls") {
  Model m(tiny_cfg(6, 2, 5, 1), Dtype::F64, 13);
  std::mt19937_64 rng(14);
  Tensor padded = Tensor::uniform({4, 5, 5}, -1, 1, rng, Dtype::F64);
  IndexVec lens{3, 5, 1, 2};
  Tensor batch = m.compose(nullptr, padded, lens);
  for (int64_t r = 0; r < 4; ++r) {
    int64_t len = lens[static_cast<size_t>(r)];
    Tensor one = Tensor::zeros({1, len, 5}, Dtype::F64);
    for (int64_t j = 0; j < len; ++j)
      for (int64_t c = 0; c < 5; ++c) one.set(j * 5 + c, padded.at(r, j, c));
    Tensor out = m.compose(nullptr, one, IndexVec{len});
    for (int64_t c = 0; c < 5; ++c)
      CHECK(std::fabs(batch.at(r, c) - out.at(0, c)) < 1e-6);
  }
}

TEST_CASE("zero-weight heads are uniform and shift-invariant") {
  ModelConfig cfg = tiny_cfg(10, 26, 8, 1);
  Model m(cfg, Dtype::F64, 15);
  zero_params(m);
  std::mt19937_64 rng(16);
  Tensor h = Tensor::uniform({2, 8}, -1, 1, rng, Dtype::F64);
  Tensor probs = softmax(nullptr, m.action_logits(nullptr, m.mlp(nullptr, h, false)));
  CHECK(cfg.action_count() == 28);
  for (int64_t i = 0; i < probs.size(); ++i)
    CHECK(probs.at(i) == doctest::Approx(1.0 / 28.0));

  // Adding a constant to the bias leaves softmax unchanged.
  Model m2(cfg, Dtype::F64, 15), m3(cfg, Dtype::F64, 15);
  for (int64_t i = 0; i < m3.params().action_bias.size(); ++i)
    m3.params().action_bias.set(i, m3.params().action_bias.at(i) + 4.2);
  Tensor a = softmax(nullptr, m2.action_logits(nullptr, h));
  Tensor b = softmax(nullptr, m3.action_logits(nullptr, h));
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-9));
}

TEST_CASE("uniform batch_loss on (NP dog) is 3 ln 3") {
  Model m(tiny_cfg(1, 1, 6, 1), Dtype::F64, 17);
  zero_params(m);
  Model::PreparedSentence s;
  s.actions = {Action::nt(0), Action::gen(0), Action::reduce()};
  s.tokens = {0};
  s.depth = 2;
  auto res = m.batch_loss_prepared(nullptr, {s}, false);
  CHECK(res.total.item() == doctest::Approx(3.0 * std::log(3.0)).epsilon(1e-12));
  CHECK(res.num_actions == 3);
}

TEST_CASE("NLL gradient at uniform is softmax minus gold counts") {
  Model m(tiny_cfg(1, 2, 6, 1), Dtype::F64, 18);
  zero_params(m);
  Model::PreparedSentence s;  // (A (B x)): NT(A) NT(B) GEN REDUCE REDUCE
  s.actions = {Action::nt(0), Action::nt(1), Action::gen(0), Action::reduce(), Action::reduce()};
  s.tokens = {0};
  s.depth = 3;
  Tape tape;
  m.watch_all(tape);
  auto res = m.batch_loss_prepared(&tape, {s}, false);
  tape.backward(res.total);
  Tensor g = tape.grad(m.params().action_bias);
  // 5 uniform steps over 4 actions; gold counts GEN=1, REDUCE=2, NT(A)=1, NT(B)=1.
  CHECK(g.at(kActionGen) == doctest::Approx(5.0 / 4.0 - 1.0));
  CHECK(g.at(kActionReduce) == doctest::Approx(5.0 / 4.0 - 2.0));
  CHECK(g.at(2) == doctest::Approx(5.0 / 4.0 - 1.0));
  CHECK(g.at(3) == doctest::Approx(5.0 / 4.0 - 1.0));
}

TEST_CASE("batched loss equals the sum of reference losses") {
  auto trees = random_treebank(200, 31, {.num_nts = 5, .num_words = 50, .max_depth = 8,
                                         .max_tokens = 7});
  Vocab vocab = toy_vocab(trees);
  ModelConfig cfg = tiny_cfg(static_cast<int64_t>(vocab.num_words()),
                             static_cast<int64_t>(vocab.num_nts()), 12, 2);
  Model m(cfg, Dtype::F64, 19);
  for (size_t base = 0; base < trees.size(); base += 16) {
    size_t bsz = std::min<size_t>(16, trees.size() - base);
    std::vector<Tree> batch(trees.begin() + base, trees.begin() + base + bsz);
    auto res = m.batch_loss(nullptr, batch, vocab, false);
    double ref_sum = 0;
    for (size_t i = 0; i < bsz; ++i) {
      double ref = reference_loss_value(cfg, m.params(), batch[i], vocab);
      ref_sum += ref;
      REQUIRE(testutil::rel_err(res.per_sentence.at(static_cast<int64_t>(i)), ref) < 1e-6);
    }
    REQUIRE(testutil::rel_err(res.total.item(), ref_sum) < 1e-6);
  }
}

TEST_CASE("batched gradients equal reference gradients") {
  auto trees = random_treebank(6, 41, {.num_nts = 3, .num_words = 20, .max_tokens = 5});
  Vocab vocab = toy_vocab(trees);
  ModelConfig cfg = tiny_cfg(static_cast<int64_t>(vocab.num_words()),
                             static_cast<int64_t>(vocab.num_nts()), 8, 2);
  Model m(cfg, Dtype::F64, 43);

  std::map<std::string, std::vector<double>> batched_grads;
  {
    Tape batched;
    m.watch_all(batched);
    auto res = m.batch_loss(&batched, trees, vocab, false);
    batched.backward(res.total);
    m.params().for_each([&](const std::string& name, Tensor& t) {
      batched_grads[name] = batched.grad(t).to_vector();
    });
  }

  Tape ref;
  m.watch_all(ref);
  Tensor total = Tensor::zeros({1}, Dtype::F64);
  for (const Tree& t : trees)
    total = add(&ref, total, reference_loss(&ref, cfg, m.params(), t, vocab));
  ref.backward(total);

  m.params().for_each([&](const std::string& name, Tensor& t) {
    auto b = ref.grad(t).to_vector();
    INFO("parameter ", name);
    CHECK(testutil::max_rel_err(batched_grads[name], b) < 1e-6);
  });
}

TEST_CASE("reference equals batch_loss at B=1 and duplicates double") {
  auto trees = random_treebank(5, 53, {.max_tokens = 5});
  Vocab vocab = toy_vocab(trees);
  ModelConfig cfg = tiny_cfg(static_cast<int64_t>(vocab.num_words()),
                             static_cast<int64_t>(vocab.num_nts()), 10, 2);
  Model m(cfg, Dtype::F64, 59);
  for (const Tree& t : trees) {
    double one = m.batch_loss(nullptr, {t}, vocab, false).total.item();
    double ref = reference_loss_value(cfg, m.params(), t, vocab);
    CHECK(std::fabs(one - ref) < 1e-9 * std::max(1.0, std::fabs(ref)));
    auto dup = m.batch_loss(nullptr, {t, t}, vocab, false);
    CHECK(dup.per_sentence.at(0) == doctest::Approx(dup.per_sentence.at(1)).epsilon(1e-12));
    CHECK(testutil::rel_err(dup.total.item(), 2.0 * one) < 1e-9);
  }
}

TEST_CASE("loss is permutation-invariant over batch order") {
  auto trees = random_treebank(6, 61, {.max_tokens = 5});
  Vocab vocab = toy_vocab(trees);
  ModelConfig cfg = tiny_cfg(static_cast<int64_t>(vocab.num_words()),
                             static_cast<int64_t>(vocab.num_nts()), 8, 1);
  Model m(cfg, Dtype::F64, 67);
  std::vector<Tree> fwd = trees;
  std::vector<Tree> rev(trees.rbegin(), trees.rend());
  double a = m.batch_loss(nullptr, fwd, vocab, false).total.item();
  double b = m.batch_loss(nullptr, rev, vocab, false).total.item();
  CHECK(std::fabs(a - b) < 1e-10 * std::max(1.0, std::fabs(a)));
}

TEST_CASE("full-model gradients match finite differences on sampled parameters") {
  auto trees = random_treebank(2, 71, {.num_nts = 2, .num_words = 10, .max_tokens = 3});
  Vocab vocab = toy_vocab(trees);
  ModelConfig cfg = tiny_cfg(static_cast<int64_t>(vocab.num_words()),
                             static_cast<int64_t>(vocab.num_nts()), 6, 2);
  Model m(cfg, Dtype::F64, 73);
  Tape tape;
  m.watch_all(tape);
  auto res = m.batch_loss(&tape, trees, vocab, false);
  tape.backward(res.total);
  std::mt19937_64 pick(5);
  m.params().for_each([&](const std::string& name, Tensor& t) {
    Tensor g = tape.grad(t);
    // Spot-check a handful of coordinates per parameter.
    std::uniform_int_distribution<int64_t> coord(0, t.size() - 1);
    for (int rep = 0; rep < 3; ++rep) {
      int64_t i = coord(pick);
      double orig = t.at(i), h = 1e-4;
      t.set(i, orig + h);
      double up = m.batch_loss(nullptr, trees, vocab, false).total.item();
      t.set(i, orig - h);
      double down = m.batch_loss(nullptr, trees, vocab, false).total.item();
      t.set(i, orig);
      double fd = (up - down) / (2 * h);
      INFO("parameter ", name, " coord ", i);
      CHECK(testutil::rel_err(g.at(i), fd) < 1e-3);
    }
  });
}

TEST_CASE("sampling is deterministic at temperature zero and scores itself") {
  auto trees = random_treebank(20, 83, {.num_nts = 2, .num_words = 8, .max_tokens = 4});
  Vocab vocab = toy_vocab(trees);
  ModelConfig cfg = tiny_cfg(static_cast<int64_t>(vocab.num_words()),
                             static_cast<int64_t>(vocab.num_nts()), 8, 1);
  Model m(cfg, Dtype::F64, 89);

  std::mt19937_64 r1(7), r2(7);
  auto a = m.sample(r1, 200, 0.0, 4, 20);
  auto b = m.sample(r2, 200, 0.0, 4, 20);
  CHECK(a.actions == b.actions);

  std::mt19937_64 r3(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto s = m.sample(r3, 300, 1.0, 4, 20);
    Tree t = decode_tree(s.actions, vocab);
    double ref = reference_loss_value(cfg, m.params(), t, vocab);
    CHECK(testutil::rel_err(-s.logp, ref) < 1e-9);
  }
}

TEST_CASE("forced grammar samples a flat single-constituent tree") {
  ModelConfig cfg = tiny_cfg(1, 1, 6, 1);
  Model m(cfg, Dtype::F64, 97);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto s = m.sample(rng, 100, 1.0, /*max_open_nt=*/1, /*depth=*/30);
    REQUIRE(s.actions.front().kind == Action::Kind::NT);
    REQUIRE(s.actions.back().kind == Action::Kind::REDUCE);
    for (size_t i = 1; i + 1 < s.actions.size(); ++i)
      CHECK(s.actions[i].kind == Action::Kind::GEN);
  }
}

TEST_CASE("preset dimensions and parameter budgets") {
  CHECK(ModelConfig::from_preset("15m-10k").embedding == 528);
  CHECK(ModelConfig::from_preset("15m-20k").embedding == 432);
  CHECK(ModelConfig::from_preset("15m-30k").embedding == 336);
  CHECK(ModelConfig::from_preset("35m-10k").embedding == 864);
  CHECK(ModelConfig::from_preset("35m-20k").embedding == 752);
  CHECK(ModelConfig::from_preset("35m-30k").embedding == 656);
  CHECK_THROWS_AS(ModelConfig::from_preset("1b-100k"), ConfigError);

  // The paper-era default: 256/256, 2 layers, 50k vocabulary -> about 15M.
  ModelConfig base = tiny_cfg(50000, 26, 256, 2);
  CHECK(base.param_count() > 14'500'000);
  CHECK(base.param_count() < 15'500'000);

  ModelConfig p15 = ModelConfig::from_preset("15m-20k");
  p15.vocab = 20480;
  p15.num_nts = 26;
  CHECK(p15.param_count() > 14'000'000);
  CHECK(p15.param_count() < 16'000'000);

  ModelConfig p35 = ModelConfig::from_preset("35m-30k");
  p35.vocab = 30720;
  p35.num_nts = 26;
  CHECK(p35.param_count() > 33'500'000);
  CHECK(p35.param_count() < 36'500'000);

  Model tiny(tiny_cfg(7, 3, 4, 1), Dtype::F64, 1);
  CHECK(tiny.param_count() == tiny.config().param_count());
}

TEST_CASE("f32 loss tracks f64 loss") {
  auto trees = random_treebank(4, 101, {.max_tokens = 5});
  Vocab vocab = toy_vocab(trees);
  ModelConfig cfg = tiny_cfg(static_cast<int64_t>(vocab.num_words()),
                             static_cast<int64_t>(vocab.num_nts()), 8, 2);
  Model m64(cfg, Dtype::F64, 103);
  Model m32(cfg, Dtype::F32, 103);
  double a = m64.batch_loss(nullptr, trees, vocab, false).total.item();
  double b = m32.batch_loss(nullptr, trees, vocab, false).total.item();
  CHECK(testutil::rel_err(a, b) < 1e-3);
}

TEST_CASE("dropout training mode is deterministic under a seed") {
  auto trees = random_treebank(3, 107, {.max_tokens = 4});
  Vocab vocab = toy_vocab(trees);
  ModelConfig cfg = tiny_cfg(static_cast<int64_t>(vocab.num_words()),
                             static_cast<int64_t>(vocab.num_nts()), 8, 2);
  cfg.dropout = 0.2;
  Model m(cfg, Dtype::F64, 109);
  m.seed_dropout(555);
  double a = m.batch_loss(nullptr, trees, vocab, true).total.item();
  m.seed_dropout(555);
  double b = m.batch_loss(nullptr, trees, vocab, true).total.item();
  m.seed_dropout(556);
  double c = m.batch_loss(nullptr, trees, vocab, true).total.item();
  CHECK(a == b);
  CHECK(a != c);
}

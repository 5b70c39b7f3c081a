#include "rnng/selfcheck.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "rnng/beam.hpp"
#include "rnng/checkpoint.hpp"
#include "rnng/errors.hpp"
#include "rnng/reference.hpp"
#include "rnng/synthetic.hpp"
#include "rnng/vocab.hpp"

namespace rnng {

namespace {

double lse2(double a, double b) {
  if (!std::isfinite(a)) return b;
  if (!std::isfinite(b)) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Exhaustive legal-derivation enumeration on the reference scorer; the
// diagnostic twin of the beam search.
struct EnumOutcome {
  std::vector<double> prefix;
  double best = -std::numeric_limits<double>::infinity();
  ActionSeq best_actions;
};

void enum_dfs(const ModelConfig& cfg, const ReferenceScorer& scorer,
              const std::vector<int32_t>& tokens, double score, ActionSeq& trail,
              EnumOutcome& out, int32_t max_open, int64_t depth) {
  if (scorer.complete()) {
    if (scorer.words_consumed() == static_cast<int>(tokens.size()) && score > out.best) {
      out.best = score;
      out.best_actions = trail;
    }
    return;
  }
  Tensor a_logp = scorer.action_logp();
  for (int32_t a = 0; a < static_cast<int32_t>(cfg.action_count()); ++a) {
    if (!scorer.action_legal(a, static_cast<int>(tokens.size()), max_open, depth)) continue;
    double next = score + a_logp.at(a);
    Action act;
    if (a == kActionGen) {
      int32_t tok = tokens[static_cast<size_t>(scorer.words_consumed())];
      next += scorer.word_logp().at(tok);
      act = Action::gen(tok);
    } else {
      act = a == kActionReduce ? Action::reduce() : Action::nt(a - 2);
    }
    ReferenceScorer child = scorer;
    child.step(act);
    trail.push_back(act);
    if (act.kind == Action::Kind::GEN) {
      size_t t = static_cast<size_t>(child.words_consumed()) - 1;
      out.prefix[t] = lse2(out.prefix[t], next);
    }
    enum_dfs(cfg, child, tokens, next, trail, out, max_open, depth);
    trail.pop_back();
  }
}

CheckOutcome check(const std::string& name, bool ok, const std::string& detail) {
  return {name, ok, detail};
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::vector<CheckOutcome> run_selfcheck(const SelfcheckOptions& opt) {
  std::vector<CheckOutcome> out;
  const bool f64 = opt.dt == Dtype::F64;
  const double loss_tol = f64 ? 1e-6 : 1e-3;

  // Batched == unbatched on random trees.
  {
    auto trees = random_treebank(20, opt.seed, {.num_nts = 4, .num_words = 30, .max_tokens = 6});
    Vocab vocab = Vocab::build(trees, 1000);
    ModelConfig cfg;
    cfg.embedding = cfg.hidden = 16;
    cfg.layers = 2;
    cfg.vocab = static_cast<int64_t>(vocab.num_words());
    cfg.num_nts = static_cast<int64_t>(vocab.num_nts());
    cfg.dropout = 0.0;
    Model model(cfg, opt.dt, opt.seed);
    auto res = model.batch_loss(nullptr, trees, vocab, false);
    double worst = 0.0;
    double ref_sum = 0.0;
    for (size_t i = 0; i < trees.size(); ++i) {
      double ref = reference_loss_value(cfg, model.params(), trees[i], vocab);
      ref_sum += ref;
      worst = std::max(worst, std::fabs(res.per_sentence.at(static_cast<int64_t>(i)) - ref) /
                                  std::max(1.0, std::fabs(ref)));
    }
    worst = std::max(worst, std::fabs(res.total.item() - ref_sum) / std::max(1.0, ref_sum));
    out.push_back(check("batched-equals-unbatched", worst < loss_tol,
                        "max rel diff " + fmt(worst) + " over 20 trees"));
  }

  // Gradient spot check against central finite differences (64-bit math
  // regardless of run precision; the 32-bit model is checked at 64-bit).
  {
    auto trees = random_treebank(2, opt.seed + 1, {.num_nts = 2, .num_words = 12, .max_tokens = 3});
    Vocab vocab = Vocab::build(trees, 100);
    ModelConfig cfg;
    cfg.embedding = cfg.hidden = 6;
    cfg.layers = 2;
    cfg.vocab = static_cast<int64_t>(vocab.num_words());
    cfg.num_nts = static_cast<int64_t>(vocab.num_nts());
    cfg.dropout = 0.0;
    Model model(cfg, Dtype::F64, opt.seed + 1);
    Tape tape;
    model.watch_all(tape);
    auto loss = model.batch_loss(&tape, trees, vocab, false);
    tape.backward(loss.total);
    double worst = 0.0;
    std::mt19937_64 pick(opt.seed + 2);
    model.params().for_each([&](const std::string&, Tensor& t) {
      Tensor g = tape.grad(t);
      std::uniform_int_distribution<int64_t> coord(0, t.size() - 1);
      for (int rep = 0; rep < 2; ++rep) {
        int64_t i = coord(pick);
        double orig = t.at(i), h = 1e-4;
        t.set(i, orig + h);
        double up = model.batch_loss(nullptr, trees, vocab, false).total.item();
        t.set(i, orig - h);
        double down = model.batch_loss(nullptr, trees, vocab, false).total.item();
        t.set(i, orig);
        double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::fabs(g.at(i) - fd) /
                                    std::max({std::fabs(g.at(i)), std::fabs(fd), 1e-6}));
      }
    });
    out.push_back(
        check("gradient-finite-difference", worst < 1e-3, "max rel err " + fmt(worst)));
  }

  // Beam vs exhaustive enumeration on a toy grammar.
  {
    std::vector<Tree> corpus = {parse_tree("(A x (A y z))"), parse_tree("(A x y)"),
                                parse_tree("(A z)")};
    Vocab vocab = Vocab::build(corpus, 100);
    ModelConfig cfg;
    cfg.embedding = cfg.hidden = 10;
    cfg.layers = 1;
    cfg.vocab = static_cast<int64_t>(vocab.num_words());
    cfg.num_nts = static_cast<int64_t>(vocab.num_nts());
    cfg.dropout = 0.0;
    Model model(cfg, opt.dt, opt.seed + 3);
    BeamConfig bc;
    bc.k = 1000;
    bc.depth = 10;
    bc.max_open_nt = 2;
    bool ok = true;
    double worst = 0.0;
    for (const auto& words :
         std::vector<std::vector<std::string>>{{"x", "y"}, {"z", "x", "y"}, {"x", "y", "z", "x"}}) {
      auto tokens = vocab.encode_tokens(words);
      EnumOutcome exact;
      exact.prefix.assign(tokens.size(), -std::numeric_limits<double>::infinity());
      ReferenceScorer scorer(cfg, model.params(), nullptr);
      ActionSeq trail;
      enum_dfs(cfg, scorer, tokens, 0.0, trail, exact, bc.max_open_nt, bc.depth);
      BeamResult beam = word_sync_beam(model, tokens, bc);
      ok = ok && beam.actions == exact.best_actions;
      worst = std::max(worst, std::fabs(beam.logp - exact.best));
      for (size_t t = 0; t < tokens.size(); ++t)
        worst = std::max(worst, std::fabs(beam.prefix_logp[t] - exact.prefix[t]));
    }
    double tol = f64 ? 1e-5 : 1e-3;
    out.push_back(check("beam-equals-enumeration", ok && worst < tol,
                        "max abs diff " + fmt(worst)));
  }

  // Checkpoint integrity: either the provided file or a fresh round-trip.
  {
    bool ok = true;
    std::string detail;
    try {
      if (!opt.checkpoint.empty()) {
        LoadedCheckpoint loaded = load_checkpoint(opt.checkpoint, opt.dt);
        detail = "loaded " + opt.checkpoint;
        if (!opt.vocab_words.empty()) {
          Vocab v = Vocab::load(opt.vocab_words, opt.vocab_nts);
          if (v.digest() != loaded.meta.vocab_digest) {
            ok = false;
            detail = "vocabulary digest mismatch";
          }
        }
        if (ok && !opt.merges.empty()) {
          Merges m = Merges::load(opt.merges);
          if (m.digest() != loaded.meta.merges_digest) {
            ok = false;
            detail = "merges digest mismatch";
          }
        }
      } else {
        ModelConfig cfg;
        cfg.embedding = cfg.hidden = 8;
        cfg.layers = 1;
        cfg.vocab = 11;
        cfg.num_nts = 2;
        Model model(cfg, opt.dt, opt.seed + 4);
        CheckpointMeta meta;
        meta.config = cfg;
        meta.seed = opt.seed;
        std::string tmp = "/tmp/rnng-selfcheck-ckpt";
        save_checkpoint(tmp, model, meta);
        LoadedCheckpoint loaded = load_checkpoint(tmp, opt.dt);
        save_checkpoint(tmp + ".resave", loaded.model, meta);
        std::ifstream a(tmp, std::ios::binary), b(tmp + ".resave", std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        ok = sa == sb && !sa.empty();
        detail = "round-trip " + std::to_string(sa.size()) + " bytes";
      }
    } catch (const std::exception& e) {
      ok = false;
      detail = e.what();
    }
    out.push_back(check("checkpoint-integrity", ok, detail));
  }

  return out;
}

}  // namespace rnng

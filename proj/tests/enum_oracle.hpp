// Exhaustive-search oracle for word-synchronous beam search at toy scale:
// depth-first enumeration of every legal action sequence, scored with the
// unbatched reference implementation. Exact prefix masses, exact best parse.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "rnng/reference.hpp"

namespace testutil {

struct EnumResult {
  std::vector<double> prefix;       // logsumexp over derivations ending at token t
  std::vector<size_t> hypotheses;   // derivation count per token position
  double best_logp = -std::numeric_limits<double>::infinity();
  rnng::ActionSeq best_actions;
  size_t complete_count = 0;
};

inline double lse_pair(double a, double b) {
  if (!std::isfinite(a)) return b;
  if (!std::isfinite(b)) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

class Enumerator {
 public:
  Enumerator(const rnng::ModelConfig& cfg, const rnng::Parameters& params,
             std::vector<int32_t> tokens, int32_t max_open_nt, int64_t depth)
      : cfg_(cfg), params_(params), tokens_(std::move(tokens)), max_open_(max_open_nt),
        depth_(depth) {}

  EnumResult run() {
    res_.prefix.assign(tokens_.size(), -std::numeric_limits<double>::infinity());
    res_.hypotheses.assign(tokens_.size(), 0);
    rnng::ReferenceScorer scorer(cfg_, params_, nullptr);
    rnng::ActionSeq trail;
    dfs(scorer, 0.0, trail);
    return res_;
  }

 private:
  const rnng::ModelConfig& cfg_;
  const rnng::Parameters& params_;
  std::vector<int32_t> tokens_;
  int32_t max_open_;
  int64_t depth_;
  EnumResult res_;

  void dfs(const rnng::ReferenceScorer& scorer, double score, rnng::ActionSeq& trail) {
    if (scorer.complete()) {
      if (scorer.words_consumed() != static_cast<int>(tokens_.size())) return;
      ++res_.complete_count;
      if (score > res_.best_logp) {
        res_.best_logp = score;
        res_.best_actions = trail;
      }
      return;
    }
    rnng::Tensor a_logp = scorer.action_logp();
    const int sent_len = static_cast<int>(tokens_.size());
    for (int32_t a = 0; a < static_cast<int32_t>(cfg_.action_count()); ++a) {
      if (!scorer.action_legal(a, sent_len, max_open_, depth_)) continue;
      double next = score + a_logp.at(a);
      rnng::Action act;
      if (a == rnng::kActionGen) {
        int32_t tok = tokens_[static_cast<size_t>(scorer.words_consumed())];
        next += scorer.word_logp().at(tok);
        act = rnng::Action::gen(tok);
      } else if (a == rnng::kActionReduce) {
        act = rnng::Action::reduce();
      } else {
        act = rnng::Action::nt(a - 2);
      }
      rnng::ReferenceScorer child = scorer;
      child.step(act);
      trail.push_back(act);
      if (act.kind == rnng::Action::Kind::GEN) {
        size_t t = static_cast<size_t>(child.words_consumed()) - 1;
        res_.prefix[t] = lse_pair(res_.prefix[t], next);
        ++res_.hypotheses[t];
      }
      dfs(child, next, trail);
      trail.pop_back();
    }
  }
};

inline EnumResult enumerate_all(const rnng::ModelConfig& cfg, const rnng::Parameters& params,
                                std::vector<int32_t> tokens, int32_t max_open_nt, int64_t depth) {
  Enumerator e(cfg, params, std::move(tokens), max_open_nt, depth);
  return e.run();
}

}  // namespace testutil

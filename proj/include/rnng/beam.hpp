// Fully batched word-synchronous beam search, plus the evaluation harness
// built on its prefix probabilities: token-level perplexity and minimal-pair
// scoring.
//
// Procedure per word: the word beam W_t (at most k_w cells that have all
// consumed t tokens) seeds a frontier F. Up to M_w rounds: every frontier
// cell expands with all legal actions scored by the action head (the word
// head scores GEN of the forced next token only); the per-sentence top-k
// successors split into GEN ones (into the completion buffer C) and
// structural ones (the next F); the top-k_s GEN successors are fast-tracked
// into C even when outside the top-k. A word round stops once |C| >= k or F
// empties. prefix(t) = logsumexp over C before pruning; W_{t+1} = top-k_w
// of C. After the last word only REDUCE applies until every cell completes.
// All cells of all sentences live as rows of one BatchState; top-k selection
// runs per sentence. Ties break by higher score, then lower slot index.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rnng/bpe.hpp"
#include "rnng/model.hpp"

namespace rnng {

struct BeamConfig {
  int k = 100;   // action beam
  int k_w = 0;   // word beam; 0 -> k/10 (min 1)
  int k_s = -1;  // fast-track; -1 -> k/100 (min 1); explicit 0 disables
  int64_t token_cap = 250;     // max total tokens per batch
  int max_word_actions = 40;   // M_w, structural actions between two tokens
  int64_t depth = 100;         // inference depth bound D
  int32_t max_open_nt = 100;

  int kw() const { return k_w > 0 ? k_w : std::max(1, k / 10); }
  int ks() const { return k_s >= 0 ? k_s : std::max(1, k / 100); }
  void validate() const;
};

struct BeamResult {
  ActionSeq actions;                 // best complete derivation
  double logp = 0.0;                 // its log joint probability
  std::vector<double> prefix_logp;   // per unit position (beam-marginal)
  std::vector<double> surprisal;     // natural log; prefix increments negated
};

// One sentence of in-vocabulary unit ids.
BeamResult word_sync_beam(Model& model, const std::vector<int32_t>& tokens,
                          const BeamConfig& cfg);

// Sentences grouped under the token cap; per-sentence results identical to
// word_sync_beam (batching is a throughput optimization only).
std::vector<BeamResult> batched_beam(Model& model,
                                     const std::vector<std::vector<int32_t>>& sentences,
                                     const BeamConfig& cfg, int64_t batch_size);

// Greedy grouping of sentence indices under both caps.
std::vector<std::vector<size_t>> beam_groups(const std::vector<std::vector<int32_t>>& sentences,
                                             int64_t batch_size, int64_t token_cap);

struct ScoredSentence {
  std::vector<std::string> tokens;       // original tokens
  std::vector<std::string> units;        // scored units (tokens or subwords)
  BeamResult beam;
  std::vector<double> token_logp;        // per original token, subwords summed
  double total_logp = 0.0;
};

// Unit encoding: unkified word ids, or subword segmentation when merges are
// given. Scores each sentence with the batched beam.
std::vector<ScoredSentence> score_corpus(Model& model, const Vocab& vocab, const Merges* merges,
                                         const std::vector<std::vector<std::string>>& sentences,
                                         const BeamConfig& cfg, int64_t batch_size);

struct PplResult {
  double ppl = 0.0;          // token-level: subword likelihoods summed per token
  int64_t tokens = 0;        // original token count
  double total_logp = 0.0;
  std::vector<ScoredSentence> sentences;
};
PplResult token_ppl(Model& model, const Vocab& vocab, const Merges* merges,
                    const std::vector<std::vector<std::string>>& sentences,
                    const BeamConfig& cfg, int64_t batch_size);

struct PairsSide {
  std::vector<std::string> tokens;
  int critical_begin = 0;  // [begin, end) over original tokens
  int critical_end = 0;
};
struct PairsItem {
  std::string id;
  PairsSide good, bad;
};
struct PairsOutcome {
  std::string id;
  double good_score = 0.0;  // summed token log-likelihood over the region
  double bad_score = 0.0;
  bool correct = false;  // ties count as incorrect
};
struct PairsResult {
  std::vector<PairsOutcome> items;
  double accuracy = 0.0;
};
PairsResult pairs_eval(Model& model, const Vocab& vocab, const Merges* merges,
                       const std::vector<PairsItem>& items, const BeamConfig& cfg,
                       int64_t batch_size);

}  // namespace rnng

// Unbatched reference scorer: the same stack-only RNNG computed with plain
// lists and per-element tensors, re-deriving the LSTM/composition/head math
// from the raw parameters. Shares nothing with the stack-tensor path beyond
// the tensor kernels; it is the correctness oracle for batched training and
// the exhaustive-search oracle for beam search.

#pragma once

#include <vector>

#include "rnng/model.hpp"
#include "rnng/tensor.hpp"
#include "rnng/tree.hpp"

namespace rnng {

class ReferenceScorer {
 public:
  ReferenceScorer(const ModelConfig& cfg, const Parameters& params, Tape* tape);

  // Copyable snapshots make depth-first enumeration cheap: element tensors
  // are immutable once pushed.
  ReferenceScorer(const ReferenceScorer&) = default;
  ReferenceScorer& operator=(const ReferenceScorer&) = default;

  // Log-distributions at the current stack top.
  Tensor action_logp() const;  // shape {|N|+2}
  Tensor word_logp() const;    // shape {V}

  void step(const Action& a);

  bool complete() const { return steps_ > 0 && open_.empty() && stack_.size() == 1; }
  int stack_top() const { return static_cast<int>(stack_.size()); }
  int open_count() const { return static_cast<int>(open_.size()); }
  int words_consumed() const { return words_; }
  // Mirror of the machine-level legality rules.
  bool action_legal(int32_t action_idx, int sent_len, int32_t max_open_nt, int64_t depth) const;

 private:
  struct Element {
    std::vector<Tensor> h, c;  // one 1xH row per layer
    Tensor emb;                // 1xE
  };

  const ModelConfig* cfg_;
  const Parameters* params_;
  Tape* tape_;
  std::vector<Element> stack_;
  std::vector<size_t> open_;  // stack indices (0-based) of open nonterminals
  Element base_;              // learned initial recurrent state
  int steps_ = 0;
  int words_ = 0;

  Element push_through_lstm(const Element& below, const Tensor& emb) const;
  Tensor compose_span(size_t from) const;  // open-NT element .. top
  Tensor top_mlp() const;
  std::pair<Tensor, Tensor> cell(const LstmLayer& l, const Tensor& h, const Tensor& c,
                                 const Tensor& x) const;
};

// Teacher-forced NLL of one tree; same contract as batch_loss at B=1.
// Evaluation mode only (no dropout).
Tensor reference_loss(Tape* tape, const ModelConfig& cfg, const Parameters& params,
                      const Tree& tree, const Vocab& vocab);
double reference_loss_value(const ModelConfig& cfg, const Parameters& params, const Tree& tree,
                            const Vocab& vocab);

}  // namespace rnng

#include "rnng/reference.hpp"

#include <cmath>

#include "rnng/errors.hpp"

namespace rnng {

ReferenceScorer::ReferenceScorer(const ModelConfig& cfg, const Parameters& params, Tape* tape)
    : cfg_(&cfg), params_(&params), tape_(tape) {
  for (int64_t l = 0; l < cfg.layers; ++l) {
    base_.h.push_back(slice_rows(tape_, params.init_h, l, l + 1));
    base_.c.push_back(slice_rows(tape_, params.init_c, l, l + 1));
  }
}

std::pair<Tensor, Tensor> ReferenceScorer::cell(const LstmLayer& l, const Tensor& h,
                                                const Tensor& c, const Tensor& x) const {
  const int64_t hd = l.w_h.dim(0);
  Tensor gates =
      add_rowvec(tape_, add(tape_, matmul(tape_, x, l.w_x), matmul(tape_, h, l.w_h)), l.bias);
  Tensor gi = sigmoid(tape_, slice_cols(tape_, gates, 0, hd));
  Tensor gf = sigmoid(tape_, slice_cols(tape_, gates, hd, 2 * hd));
  Tensor gg = tanh_op(tape_, slice_cols(tape_, gates, 2 * hd, 3 * hd));
  Tensor go = sigmoid(tape_, slice_cols(tape_, gates, 3 * hd, 4 * hd));
  Tensor c_new = add(tape_, mul(tape_, gf, c), mul(tape_, gi, gg));
  Tensor h_new = mul(tape_, go, tanh_op(tape_, c_new));
  return {h_new, c_new};
}

ReferenceScorer::Element ReferenceScorer::push_through_lstm(const Element& below,
                                                            const Tensor& emb) const {
  Element e;
  e.emb = emb;
  Tensor x = emb;
  for (int64_t l = 0; l < cfg_->layers; ++l) {
    auto [h, c] = cell(params_->stack[static_cast<size_t>(l)], below.h[static_cast<size_t>(l)],
                       below.c[static_cast<size_t>(l)], x);
    e.h.push_back(h);
    e.c.push_back(c);
    x = h;
  }
  return e;
}

Tensor ReferenceScorer::compose_span(size_t from) const {
  const int64_t hc = cfg_->hc();
  // Forward over [open-NT, children...], backward over the reverse; plain
  // sequential loops, no padding anywhere.
  Tensor hf = Tensor::zeros({1, hc}, params_->comp_proj.dtype());
  Tensor cf = hf.clone(), hb = hf.clone(), cb = hf.clone();
  for (size_t i = from; i < stack_.size(); ++i) {
    auto [h, c] = cell(params_->comp_fwd, hf, cf, stack_[i].emb);
    hf = h;
    cf = c;
  }
  for (size_t i = stack_.size(); i-- > from;) {
    auto [h, c] = cell(params_->comp_bwd, hb, cb, stack_[i].emb);
    hb = h;
    cb = c;
  }
  Tensor cat = concat_cols(tape_, hf, hb);
  return tanh_op(
      tape_, add_rowvec(tape_, matmul(tape_, cat, params_->comp_proj), params_->comp_proj_bias));
}

Tensor ReferenceScorer::top_mlp() const {
  const Tensor& h =
      stack_.empty() ? base_.h[static_cast<size_t>(cfg_->layers - 1)]
                     : stack_.back().h[static_cast<size_t>(cfg_->layers - 1)];
  return relu(tape_, add_rowvec(tape_, matmul(tape_, h, params_->mlp_w), params_->mlp_bias));
}

Tensor ReferenceScorer::action_logp() const {
  Tensor logits =
      add_rowvec(tape_, matmul(tape_, top_mlp(), params_->action_w), params_->action_bias);
  return reshape(tape_, log_softmax(tape_, logits), {cfg_->action_count()});
}

Tensor ReferenceScorer::word_logp() const {
  Tensor scores = cfg_->tie_embeddings ? matmul_nt(tape_, top_mlp(), params_->word_emb)
                                       : matmul(tape_, top_mlp(), params_->word_out_w);
  Tensor logits = add_rowvec(tape_, scores, params_->word_out_bias);
  return reshape(tape_, log_softmax(tape_, logits), {cfg_->vocab});
}

void ReferenceScorer::step(const Action& a) {
  const Element& below = stack_.empty() ? base_ : stack_.back();
  switch (a.kind) {
    case Action::Kind::NT: {
      Tensor emb = indexed_select(tape_, params_->nt_emb, {a.symbol});
      open_.push_back(stack_.size());
      stack_.push_back(push_through_lstm(below, emb));
      break;
    }
    case Action::Kind::GEN: {
      Tensor emb = indexed_select(tape_, params_->word_emb, {a.symbol});
      stack_.push_back(push_through_lstm(below, emb));
      ++words_;
      break;
    }
    case Action::Kind::REDUCE: {
      if (open_.empty()) throw DataError("reference: REDUCE with no open nonterminal");
      size_t from = open_.back();
      open_.pop_back();
      Tensor composed = compose_span(from);
      stack_.resize(from);
      const Element& under = stack_.empty() ? base_ : stack_.back();
      stack_.push_back(push_through_lstm(under, composed));
      break;
    }
    case Action::Kind::PAD:
      return;
  }
  ++steps_;
}

bool ReferenceScorer::action_legal(int32_t action_idx, int sent_len, int32_t max_open_nt,
                                   int64_t depth) const {
  if (complete()) return false;
  const int ph = stack_top();
  const int open = open_count();
  const bool top_is_open_nt = !open_.empty() && open_.back() + 1 == stack_.size();
  if (action_idx == kActionGen)
    return words_ < sent_len && open > 0 && ph < depth;
  if (action_idx == kActionReduce)
    return open > 0 && !top_is_open_nt && (open > 1 || words_ == sent_len);
  return words_ < sent_len && open < max_open_nt && ph < depth - 1;
}

Tensor reference_loss(Tape* tape, const ModelConfig& cfg, const Parameters& params,
                      const Tree& tree, const Vocab& vocab) {
  ReferenceScorer scorer(cfg, params, tape);
  Tensor nll = Tensor::zeros({1}, params.word_emb.dtype());
  for (const Action& a : vocab.encode_oracle(tree)) {
    Tensor a_logp = scorer.action_logp();
    nll = sub(tape, nll, indexed_select(tape, reshape(tape, a_logp, {1, cfg.action_count()}),
                                        {0}, {action_index(a)}));
    if (a.kind == Action::Kind::GEN) {
      Tensor w_logp = scorer.word_logp();
      nll = sub(tape, nll,
                indexed_select(tape, reshape(tape, w_logp, {1, cfg.vocab}), {0}, {a.symbol}));
    }
    scorer.step(a);
  }
  if (!scorer.complete()) throw DataError("reference: oracle did not close the root");
  return nll;
}

double reference_loss_value(const ModelConfig& cfg, const Parameters& params, const Tree& tree,
                            const Vocab& vocab) {
  return reference_loss(nullptr, cfg, params, tree, vocab).item();
}

}  // namespace rnng

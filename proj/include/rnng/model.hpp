// Stack-only RNNG: a single stack-top state h_t drives both distributions,
//   a_t ~ softmax(W_a MLP(h_t) + b_a)        over |N|+2 actions
//   w   ~ softmax(W_w MLP(h_t) + b_w)        over V on GEN steps
// with a BiLSTM composition replacing reduced children by one vector.
// Word embeddings and the word output layer are tied (W_w = word_emb^T);
// the presets' parameter budgets only work out tied.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rnng/stack_machine.hpp"
#include "rnng/tensor.hpp"
#include "rnng/tree.hpp"
#include "rnng/vocab.hpp"

namespace rnng {

struct ModelConfig {
  int64_t embedding = 256;      // E, input and stack-element width
  int64_t hidden = 256;         // H, stack-LSTM hidden width
  int64_t layers = 2;           // L
  int64_t compose_hidden = 0;   // H_c; 0 means H
  int64_t mlp_hidden = 0;       // H_m; 0 means H
  int64_t vocab = 0;            // V
  int64_t num_nts = 0;          // |N|
  double dropout = 0.1;
  bool subword = false;
  bool tie_embeddings = true;
  std::string preset;

  int64_t hc() const { return compose_hidden > 0 ? compose_hidden : hidden; }
  int64_t hm() const { return mlp_hidden > 0 ? mlp_hidden : hidden; }
  int64_t action_count() const { return num_nts + 2; }
  int64_t param_count() const;
  void validate() const;

  // Appendix-style presets: 15m uses 528/432/336 embedding+hidden for
  // 10k/20k/30k subword units, 35m uses 864/752/656; layers fixed at 2.
  static ModelConfig from_preset(const std::string& name);
  StackDims stack_dims() const { return {embedding, hidden, layers}; }
};

struct LstmLayer {
  Tensor w_x;   // in x 4H   gate order: input, forget, cell, output
  Tensor w_h;   // H x 4H
  Tensor bias;  // 4H, forget section initialized to +1
};

struct Parameters {
  Tensor word_emb;  // V x E
  Tensor nt_emb;    // N x E
  std::vector<LstmLayer> stack;
  LstmLayer comp_fwd, comp_bwd;
  Tensor comp_proj;       // 2*Hc x E
  Tensor comp_proj_bias;  // E
  Tensor mlp_w;           // H x Hm
  Tensor mlp_bias;        // Hm
  Tensor action_w;        // Hm x (N+2)
  Tensor action_bias;     // N+2
  Tensor word_out_w;      // Hm x V, only when untied
  Tensor word_out_bias;   // V
  Tensor init_h, init_c;  // L x H, learned initial recurrent state

  // Fixed iteration order; the checkpoint format and Adam state rely on it.
  template <class F>
  void for_each(F&& f) {
    f("word_emb", word_emb);
    f("nt_emb", nt_emb);
    for (size_t l = 0; l < stack.size(); ++l) {
      std::string p = "stack.l" + std::to_string(l) + ".";
      f(p + "w_x", stack[l].w_x);
      f(p + "w_h", stack[l].w_h);
      f(p + "bias", stack[l].bias);
    }
    for (auto* dir : {&comp_fwd, &comp_bwd}) {
      std::string p = dir == &comp_fwd ? "compose.fwd." : "compose.bwd.";
      f(p + "w_x", dir->w_x);
      f(p + "w_h", dir->w_h);
      f(p + "bias", dir->bias);
    }
    f("compose.proj", comp_proj);
    f("compose.proj_bias", comp_proj_bias);
    f("mlp.w", mlp_w);
    f("mlp.bias", mlp_bias);
    f("action.w", action_w);
    f("action.bias", action_bias);
    if (word_out_w.defined()) f("word_out.w", word_out_w);
    f("word_out.bias", word_out_bias);
    f("init.h", init_h);
    f("init.c", init_c);
  }
};

class Model {
 public:
  Model(ModelConfig cfg, Dtype dt, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  Dtype dtype() const { return dt_; }
  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }
  int64_t param_count() const;

  std::vector<std::pair<std::string, Tensor>> named_params();
  void watch_all(Tape& tape);

  // One LSTM cell step; exposed for the scalar-reference tests.
  std::pair<Tensor, Tensor> lstm_cell(Tape* tape, const LstmLayer& layer, const Tensor& h_prev,
                                      const Tensor& c_prev, const Tensor& x) const;

  // Stacked recurrence over packed states (rows x L*2*H).
  Tensor recur(Tape* tape, const Tensor& prev_states, const Tensor& inputs, bool training);
  // Masked BiLSTM composition over padded children (R x Kmax x E).
  Tensor compose(Tape* tape, const Tensor& padded, const IndexVec& lengths);
  // relu hidden layer + dropout before the output heads.
  Tensor mlp(Tape* tape, const Tensor& h, bool training);
  Tensor action_logits(Tape* tape, const Tensor& mlp_out);
  Tensor word_logits(Tape* tape, const Tensor& mlp_out);

  ModelHooks hooks(Tape* tape, bool training);
  // Fresh batched state with the learned initial rows written on-tape.
  BatchState make_state(Tape* tape, int64_t batch, int64_t depth, bool training);
  // Stack-top hidden rows of the last layer for every row / a row subset.
  Tensor top_hidden(Tape* tape, const BatchState& st);
  Tensor top_hidden_rows(Tape* tape, const BatchState& st, const IndexVec& rows);

  struct LossResult {
    Tensor total;         // scalar NLL
    Tensor per_sentence;  // B
    int64_t num_actions = 0;  // scored (non-PAD) steps incl. word terms? no: actions only
  };
  // Teacher-forced batched NLL over oracle actions; PAD steps contribute 0.
  LossResult batch_loss(Tape* tape, const std::vector<Tree>& trees, const Vocab& vocab,
                        bool training);
  struct PreparedSentence {
    ActionSeq actions;
    std::vector<int32_t> tokens;
    int depth = 0;
  };
  static PreparedSentence prepare(const Tree& t, const Vocab& vocab);
  LossResult batch_loss_prepared(Tape* tape, const std::vector<PreparedSentence>& batch,
                                 bool training);

  struct SampleResult {
    ActionSeq actions;
    double logp = 0.0;  // exact log joint under the (untempered) model
  };
  // Ancestral sampling over legal actions; temperature 0 is greedy argmax
  // with lowest-index tie-breaking.
  SampleResult sample(std::mt19937_64& rng, int max_actions, double temperature,
                      int32_t max_open_nt = 100, int64_t depth = 100);

  std::mt19937_64& dropout_rng() { return dropout_rng_; }
  void seed_dropout(uint64_t seed) { dropout_rng_.seed(seed); }
  // Runs the state validator after every apply_step in states this model
  // creates; used by the verification suites.
  void set_debug_validate(bool on) { debug_validate_ = on; }

 private:
  ModelConfig cfg_;
  Dtype dt_;
  Parameters params_;
  std::mt19937_64 dropout_rng_;
  bool debug_validate_ = false;

  Tensor initial_state_row(Tape* tape);  // 1 x L*2*H
};

// Decodes an id-level action sequence back into a tree.
Tree decode_tree(const ActionSeq& actions, const Vocab& vocab);

}  // namespace rnng

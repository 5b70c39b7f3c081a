#include "rnng/model.hpp"

#include <algorithm>
#include <cmath>

#include "rnng/errors.hpp"

namespace rnng {

namespace {

Tensor xavier(std::vector<int64_t> shape, std::mt19937_64& rng, Dtype dt) {
  double fan_in = static_cast<double>(shape[0]);
  double fan_out = static_cast<double>(shape.size() > 1 ? shape[1] : shape[0]);
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  return Tensor::uniform(std::move(shape), -bound, bound, rng, dt);
}

LstmLayer make_lstm_layer(int64_t in, int64_t hidden, std::mt19937_64& rng, Dtype dt) {
  LstmLayer l;
  l.w_x = xavier({in, 4 * hidden}, rng, dt);
  l.w_h = xavier({hidden, 4 * hidden}, rng, dt);
  l.bias = Tensor::zeros({4 * hidden}, dt);
  for (int64_t i = hidden; i < 2 * hidden; ++i) l.bias.set(i, 1.0);  // forget gate
  return l;
}

int64_t lstm_params(int64_t in, int64_t hidden) {
  return in * 4 * hidden + hidden * 4 * hidden + 4 * hidden;
}

}  // namespace

void ModelConfig::validate() const {
  if (embedding < 1 || hidden < 1 || layers < 1) throw ConfigError("model: dims must be positive");
  if (vocab < 1) throw ConfigError("model: empty vocabulary");
  if (num_nts < 1) throw ConfigError("model: no nonterminals");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0,1)");
  if (tie_embeddings && hm() != embedding)
    throw ConfigError("model: tied embeddings require mlp width == embedding width");
}

int64_t ModelConfig::param_count() const {
  int64_t total = vocab * embedding + num_nts * embedding;
  for (int64_t l = 0; l < layers; ++l)
    total += lstm_params(l == 0 ? embedding : hidden, hidden);
  total += 2 * lstm_params(embedding, hc());
  total += 2 * hc() * embedding + embedding;
  total += hidden * hm() + hm();
  total += hm() * action_count() + action_count();
  if (!tie_embeddings) total += hm() * vocab;
  total += vocab;
  total += 2 * layers * hidden;
  return total;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
  ModelConfig cfg;
  cfg.preset = name;
  cfg.subword = true;
  cfg.layers = 2;
  int64_t dim = 0;
  if (name == "15m-10k") dim = 528;
  else if (name == "15m-20k") dim = 432;
  else if (name == "15m-30k") dim = 336;
  else if (name == "35m-10k") dim = 864;
  else if (name == "35m-20k") dim = 752;
  else if (name == "35m-30k") dim = 656;
  else throw ConfigError("model: unknown preset '" + name + "'");
  cfg.embedding = cfg.hidden = dim;
  return cfg;
}

Model::Model(ModelConfig cfg, Dtype dt, uint64_t seed) : cfg_(cfg), dt_(dt), dropout_rng_(seed) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const int64_t e = cfg_.embedding, h = cfg_.hidden, hc = cfg_.hc(), hm = cfg_.hm();
  params_.word_emb = xavier({cfg_.vocab, e}, rng, dt);
  params_.nt_emb = xavier({cfg_.num_nts, e}, rng, dt);
  for (int64_t l = 0; l < cfg_.layers; ++l)
    params_.stack.push_back(make_lstm_layer(l == 0 ? e : h, h, rng, dt));
  params_.comp_fwd = make_lstm_layer(e, hc, rng, dt);
  params_.comp_bwd = make_lstm_layer(e, hc, rng, dt);
  params_.comp_proj = xavier({2 * hc, e}, rng, dt);
  params_.comp_proj_bias = Tensor::zeros({e}, dt);
  params_.mlp_w = xavier({h, hm}, rng, dt);
  params_.mlp_bias = Tensor::zeros({hm}, dt);
  params_.action_w = xavier({hm, cfg_.action_count()}, rng, dt);
  params_.action_bias = Tensor::zeros({cfg_.action_count()}, dt);
  if (!cfg_.tie_embeddings) params_.word_out_w = xavier({hm, cfg_.vocab}, rng, dt);
  params_.word_out_bias = Tensor::zeros({cfg_.vocab}, dt);
  params_.init_h = xavier({cfg_.layers, h}, rng, dt);
  params_.init_c = xavier({cfg_.layers, h}, rng, dt);
}

int64_t Model::param_count() const {
  int64_t total = 0;
  const_cast<Parameters&>(params_).for_each(
      [&](const std::string&, Tensor& t) { total += t.size(); });
  return total;
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() {
  std::vector<std::pair<std::string, Tensor>> out;
  params_.for_each([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

void Model::watch_all(Tape& tape) {
  params_.for_each([&](const std::string&, Tensor& t) { tape.watch(t); });
}

std::pair<Tensor, Tensor> Model::lstm_cell(Tape* tape, const LstmLayer& layer,
                                           const Tensor& h_prev, const Tensor& c_prev,
                                           const Tensor& x) const {
  const int64_t h = layer.w_h.dim(0);
  Tensor gates = add_rowvec(
      tape, add(tape, matmul(tape, x, layer.w_x), matmul(tape, h_prev, layer.w_h)), layer.bias);
  Tensor i = sigmoid(tape, slice_cols(tape, gates, 0, h));
  Tensor f = sigmoid(tape, slice_cols(tape, gates, h, 2 * h));
  Tensor g = tanh_op(tape, slice_cols(tape, gates, 2 * h, 3 * h));
  Tensor o = sigmoid(tape, slice_cols(tape, gates, 3 * h, 4 * h));
  Tensor c = add(tape, mul(tape, f, c_prev), mul(tape, i, g));
  Tensor h_new = mul(tape, o, tanh_op(tape, c));
  return {h_new, c};
}

Tensor Model::recur(Tape* tape, const Tensor& prev_states, const Tensor& inputs, bool training) {
  const int64_t h = cfg_.hidden;
  Tensor x = inputs;
  Tensor packed;
  for (int64_t l = 0; l < cfg_.layers; ++l) {
    Tensor h_prev = slice_cols(tape, prev_states, l * 2 * h, l * 2 * h + h);
    Tensor c_prev = slice_cols(tape, prev_states, l * 2 * h + h, (l + 1) * 2 * h);
    if (l > 0 && training && cfg_.dropout > 0.0)
      x = dropout(tape, x, cfg_.dropout, dropout_rng_, true);
    auto [h_new, c_new] = lstm_cell(tape, params_.stack[static_cast<size_t>(l)], h_prev, c_prev, x);
    Tensor pair = concat_cols(tape, h_new, c_new);
    packed = l == 0 ? pair : concat_cols(tape, packed, pair);
    x = h_new;
  }
  return packed;
}

Tensor Model::compose(Tape* tape, const Tensor& padded, const IndexVec& lengths) {
  const int64_t rows = padded.dim(0);
  if (rows == 0) return Tensor::zeros({0, cfg_.embedding}, dt_);
  const int64_t kmax = padded.dim(1), e = cfg_.embedding, hc = cfg_.hc();
  for (int64_t len : lengths)
    if (len < 1) throw DataError("compose: zero-length input");
  Tensor flat = reshape(tape, padded, {rows, kmax * e});

  // Per-step 0/1 activity masks freeze finished rows, so pads are computed
  // but never kept and carry no gradient.
  auto masked_lstm = [&](const LstmLayer& layer, bool backward) {
    Tensor h = Tensor::zeros({rows, hc}, dt_);
    Tensor c = Tensor::zeros({rows, hc}, dt_);
    for (int64_t step = 0; step < kmax; ++step) {
      int64_t j = backward ? kmax - 1 - step : step;
      Tensor x = slice_cols(tape, flat, j * e, (j + 1) * e);
      auto [h_new, c_new] = lstm_cell(tape, layer, h, c, x);
      Tensor active = Tensor::zeros({rows}, dt_);
      Tensor frozen = Tensor::zeros({rows}, dt_);
      for (int64_t r = 0; r < rows; ++r) {
        bool live = j < lengths[static_cast<size_t>(r)];
        active.set(r, live ? 1.0 : 0.0);
        frozen.set(r, live ? 0.0 : 1.0);
      }
      h = add(tape, scale_rows(tape, h_new, active), scale_rows(tape, h, frozen));
      c = add(tape, scale_rows(tape, c_new, active), scale_rows(tape, c, frozen));
    }
    return h;
  };
  Tensor fwd = masked_lstm(params_.comp_fwd, false);
  Tensor bwd = masked_lstm(params_.comp_bwd, true);
  Tensor cat = concat_cols(tape, fwd, bwd);
  return tanh_op(tape,
                 add_rowvec(tape, matmul(tape, cat, params_.comp_proj), params_.comp_proj_bias));
}

Tensor Model::mlp(Tape* tape, const Tensor& h, bool training) {
  Tensor out = relu(tape, add_rowvec(tape, matmul(tape, h, params_.mlp_w), params_.mlp_bias));
  if (training && cfg_.dropout > 0.0) out = dropout(tape, out, cfg_.dropout, dropout_rng_, true);
  return out;
}

Tensor Model::action_logits(Tape* tape, const Tensor& mlp_out) {
  return add_rowvec(tape, matmul(tape, mlp_out, params_.action_w), params_.action_bias);
}

Tensor Model::word_logits(Tape* tape, const Tensor& mlp_out) {
  Tensor scores = cfg_.tie_embeddings ? matmul_nt(tape, mlp_out, params_.word_emb)
                                      : matmul(tape, mlp_out, params_.word_out_w);
  return add_rowvec(tape, scores, params_.word_out_bias);
}

ModelHooks Model::hooks(Tape* tape, bool training) {
  ModelHooks h;
  h.word_emb = [this, tape](const IndexVec& ids) {
    return indexed_select(tape, params_.word_emb, ids);
  };
  h.nt_emb = [this, tape](const IndexVec& ids) {
    return indexed_select(tape, params_.nt_emb, ids);
  };
  h.compose = [this, tape](const Tensor& padded, const IndexVec& lengths) {
    return compose(tape, padded, lengths);
  };
  h.recur = [this, tape, training](const Tensor& prev, const Tensor& inp) {
    return recur(tape, prev, inp, training);
  };
  return h;
}

Tensor Model::initial_state_row(Tape* tape) {
  Tensor row;
  for (int64_t l = 0; l < cfg_.layers; ++l) {
    Tensor hl = slice_rows(tape, params_.init_h, l, l + 1);  // 1 x H
    Tensor cl = slice_rows(tape, params_.init_c, l, l + 1);
    Tensor pair = concat_cols(tape, hl, cl);
    row = l == 0 ? pair : concat_cols(tape, row, pair);
  }
  return row;  // 1 x L*2*H
}

BatchState Model::make_state(Tape* tape, int64_t batch, int64_t depth, bool training) {
  (void)training;
  BatchState st = init_batch(batch, depth, cfg_.stack_dims(),
                             Tensor::zeros({cfg_.layers * 2 * cfg_.hidden}, dt_), dt_);
  st.debug_validate = debug_validate_;
  // Write the learned initial rows through the op layer so gradient reaches
  // init.h / init.c.
  Tensor row = initial_state_row(tape);
  Tensor ones = Tensor::full({batch, 1}, 1.0, dt_);
  Tensor rows = matmul(tape, ones, row);  // batch x L*2*H
  IndexVec slots;
  slots.reserve(static_cast<size_t>(batch));
  for (int64_t i = 0; i < batch; ++i) slots.push_back(st.slot(i, 0));
  st.s_h = indexed_assign(tape, std::move(st.s_h), slots, rows);
  return st;
}

Tensor Model::top_hidden(Tape* tape, const BatchState& st) {
  IndexVec rows(static_cast<size_t>(st.batch));
  for (int64_t i = 0; i < st.batch; ++i) rows[static_cast<size_t>(i)] = i;
  return top_hidden_rows(tape, st, rows);
}

Tensor Model::top_hidden_rows(Tape* tape, const BatchState& st, const IndexVec& rows) {
  IndexVec slots;
  slots.reserve(rows.size());
  for (int64_t i : rows) slots.push_back(st.slot(i, st.p_h[static_cast<size_t>(i)]));
  Tensor states = indexed_select(tape, st.s_h, slots);
  const int64_t h = cfg_.hidden, off = (cfg_.layers - 1) * 2 * h;
  return slice_cols(tape, states, off, off + h);
}

Model::PreparedSentence Model::prepare(const Tree& t, const Vocab& vocab) {
  PreparedSentence p;
  p.actions = vocab.encode_oracle(t);
  p.tokens = vocab.encode_tokens(leaves(t));
  p.depth = min_stack_depth(p.actions);
  return p;
}

Model::LossResult Model::batch_loss(Tape* tape, const std::vector<Tree>& trees,
                                    const Vocab& vocab, bool training) {
  std::vector<PreparedSentence> batch;
  batch.reserve(trees.size());
  for (const Tree& t : trees) batch.push_back(prepare(t, vocab));
  return batch_loss_prepared(tape, batch, training);
}

Model::LossResult Model::batch_loss_prepared(Tape* tape,
                                             const std::vector<PreparedSentence>& batch,
                                             bool training) {
  if (batch.empty()) throw ConfigError("batch_loss: empty batch");
  const int64_t bsz = static_cast<int64_t>(batch.size());
  int64_t depth = 1, max_len = 0, max_toks = 1;
  for (const auto& s : batch) {
    depth = std::max<int64_t>(depth, s.depth);
    max_len = std::max<int64_t>(max_len, static_cast<int64_t>(s.actions.size()));
    max_toks = std::max<int64_t>(max_toks, static_cast<int64_t>(s.tokens.size()));
  }
  IntMat tokens(bsz, max_toks);
  for (int64_t i = 0; i < bsz; ++i)
    for (size_t j = 0; j < batch[static_cast<size_t>(i)].tokens.size(); ++j)
      tokens.at(i, static_cast<int64_t>(j)) = batch[static_cast<size_t>(i)].tokens[j];

  BatchState st = make_state(tape, bsz, depth, training);
  ModelHooks hk = hooks(tape, training);

  LossResult res;
  res.per_sentence = Tensor::zeros({bsz}, dt_);
  for (int64_t t = 0; t < max_len; ++t) {
    std::vector<Action> step;
    step.reserve(static_cast<size_t>(bsz));
    for (int64_t i = 0; i < bsz; ++i) {
      const auto& acts = batch[static_cast<size_t>(i)].actions;
      step.push_back(t < static_cast<int64_t>(acts.size()) ? acts[static_cast<size_t>(t)]
                                                           : Action::pad());
    }
    ActionPartition part = partition_actions(step);
    IndexVec non_pad = part.non_pad();
    if (non_pad.empty()) break;

    Tensor h_top = top_hidden(tape, st);
    Tensor m = mlp(tape, h_top, training);
    Tensor a_logp = log_softmax(tape, action_logits(tape, m));

    IndexVec pick_rows, pick_cols;
    Tensor mask = Tensor::zeros({bsz}, dt_);
    for (int64_t i = 0; i < bsz; ++i) {
      int32_t idx = action_index(step[static_cast<size_t>(i)]);
      pick_rows.push_back(i);
      pick_cols.push_back(idx < 0 ? 0 : idx);
      mask.set(i, idx < 0 ? 0.0 : 1.0);
    }
    Tensor picked = mul(tape, indexed_select(tape, a_logp, pick_rows, pick_cols), mask);
    res.per_sentence = sub(tape, res.per_sentence, picked);
    res.num_actions += static_cast<int64_t>(non_pad.size());

    if (!part.gen.empty()) {
      Tensor m_gen = indexed_select(tape, m, part.gen);
      Tensor w_logp = log_softmax(tape, word_logits(tape, m_gen));
      IndexVec wrows, wcols;
      for (size_t r = 0; r < part.gen.size(); ++r) {
        wrows.push_back(static_cast<int64_t>(r));
        wcols.push_back(step[static_cast<size_t>(part.gen[r])].symbol);
      }
      Tensor picked_w = indexed_select(tape, w_logp, wrows, wcols);
      Tensor scatter = indexed_assign(tape, Tensor::zeros({bsz}, dt_), part.gen, picked_w);
      res.per_sentence = sub(tape, res.per_sentence, scatter);
    }

    apply_step(tape, st, step, tokens, hk);
  }
  res.total = sum(tape, res.per_sentence);
  return res;
}

Model::SampleResult Model::sample(std::mt19937_64& rng, int max_actions, double temperature,
                                  int32_t max_open_nt, int64_t depth) {
  if (temperature < 0.0) throw ConfigError("sample: temperature must be >= 0");
  SampleResult out;
  BatchState st = make_state(nullptr, 1, depth, false);
  IntMat tokens(1, max_actions + 1);
  std::vector<int32_t> unbounded{-1};

  auto choose = [&](const Tensor& logits, const std::vector<uint8_t>* legal) {
    // Scores under the model (temperature 1) for the returned log joint.
    Tensor logp = log_softmax(nullptr, logits);
    std::vector<int64_t> cands;
    for (int64_t k = 0; k < logits.size(); ++k)
      if (!legal || (*legal)[static_cast<size_t>(k)]) cands.push_back(k);
    if (cands.empty()) throw NumericError("sample: no legal action");
    int64_t chosen;
    if (temperature == 0.0) {
      chosen = cands[0];
      for (int64_t k : cands)
        if (logits.at(k) > logits.at(chosen)) chosen = k;
    } else {
      double mx = -1e300;
      for (int64_t k : cands) mx = std::max(mx, logits.at(k) / temperature);
      double z = 0;
      std::vector<double> w(cands.size());
      for (size_t c = 0; c < cands.size(); ++c) {
        w[c] = std::exp(logits.at(cands[c]) / temperature - mx);
        z += w[c];
      }
      std::uniform_real_distribution<double> u(0.0, 1.0);
      double pick = u(rng) * z, acc = 0;
      chosen = cands.back();
      for (size_t c = 0; c < cands.size(); ++c) {
        acc += w[c];
        if (pick <= acc) {
          chosen = cands[c];
          break;
        }
      }
    }
    out.logp += logp.at(chosen);
    return chosen;
  };

  ModelHooks hk = hooks(nullptr, false);
  for (int step = 0; step < max_actions; ++step) {
    if (st.finished[0]) return out;
    std::vector<uint8_t> legal =
        valid_actions(st, unbounded, static_cast<int32_t>(cfg_.num_nts), max_open_nt);
    Tensor h_top = top_hidden(nullptr, st);
    Tensor m = mlp(nullptr, h_top, false);
    Tensor a_logits = reshape(nullptr, action_logits(nullptr, m), {cfg_.action_count()});
    int64_t a = choose(a_logits, &legal);
    Action act;
    if (a == kActionGen) {
      Tensor w_logits = reshape(nullptr, word_logits(nullptr, m), {cfg_.vocab});
      int64_t w = choose(w_logits, nullptr);
      tokens.at(0, st.buf[0]) = static_cast<int32_t>(w);
      act = Action::gen(static_cast<int32_t>(w));
    } else if (a == kActionReduce) {
      act = Action::reduce();
    } else {
      act = Action::nt(static_cast<int32_t>(a - 2));
    }
    out.actions.push_back(act);
    apply_step(nullptr, st, {act}, tokens, hk);
  }
  if (!st.finished[0]) throw NumericError("sample: max_actions exhausted before completion");
  return out;
}

Tree decode_tree(const ActionSeq& actions, const Vocab& vocab) {
  std::vector<StringAction> named;
  named.reserve(actions.size());
  for (const Action& a : actions) {
    switch (a.kind) {
      case Action::Kind::NT:
        named.push_back({Action::Kind::NT, vocab.nt(a.symbol)});
        break;
      case Action::Kind::GEN:
        named.push_back({Action::Kind::GEN, vocab.word(a.symbol)});
        break;
      case Action::Kind::REDUCE:
        named.push_back({Action::Kind::REDUCE, ""});
        break;
      case Action::Kind::PAD:
        break;
    }
  }
  return replay(named);
}

}  // namespace rnng

#include "rnng/stack_machine.hpp"

#include <algorithm>

#include "rnng/errors.hpp"

namespace rnng {

void BatchState::validate() const {
  auto fail = [](const std::string& m) { throw NumericError("batch-state invariant: " + m); };
  if (static_cast<int64_t>(p_h.size()) != batch || static_cast<int64_t>(p_q.size()) != batch ||
      static_cast<int64_t>(buf.size()) != batch || q.rows != batch)
    fail("vector extents disagree with batch size");
  for (int64_t i = 0; i < batch; ++i) {
    if (p_h[i] < 0 || p_h[i] > depth) fail("p_h out of [0,D]");
    if (p_q[i] < -1 || p_q[i] >= static_cast<int32_t>(depth)) fail("p_q out of [-1,D)");
    int32_t prev = 0;
    for (int32_t d = 0; d <= p_q[i]; ++d) {
      int32_t pos = q.at(i, d);
      if (pos < 1 || pos > p_h[i]) fail("open-NT position outside the live stack");
      if (pos <= prev) fail("q row not strictly increasing");
      prev = pos;
    }
    if (buf[i] < 0) fail("negative token cursor");
  }
  if (s_h.dim(0) != batch * (depth + 1) || s_h.dim(1) != state_cols())
    fail("s_h extents");
  if (s_e.dim(0) != batch * (depth + 1) || s_e.dim(1) != dims.embedding) fail("s_e extents");
}

BatchState init_batch(int64_t batch, int64_t depth, const StackDims& dims,
                      const Tensor& initial_state, Dtype dt) {
  if (batch < 1 || depth < 1) throw ConfigError("init_batch: extents must be positive");
  if (initial_state.ndim() != 1 || initial_state.dim(0) != dims.layers * 2 * dims.hidden)
    throw ConfigError("init_batch: initial state must be a L*2*H vector");
  BatchState st;
  st.batch = batch;
  st.depth = depth;
  st.dims = dims;
  st.s_h = Tensor::zeros({batch * (depth + 1), st.state_cols()}, dt);
  st.s_e = Tensor::zeros({batch * (depth + 1), dims.embedding}, dt);
  for (int64_t i = 0; i < batch; ++i)
    for (int64_t c = 0; c < st.state_cols(); ++c)
      st.s_h.set(st.slot(i, 0), c, initial_state.at(c));
  st.p_h.assign(static_cast<size_t>(batch), 0);
  st.p_q.assign(static_cast<size_t>(batch), -1);
  st.buf.assign(static_cast<size_t>(batch), 0);
  st.q = IntMat(batch, depth, 0);
  st.finished.assign(static_cast<size_t>(batch), 0);
  return st;
}

IndexVec ActionPartition::non_pad() const {
  IndexVec all;
  all.reserve(gen.size() + nt.size() + red.size());
  all.insert(all.end(), gen.begin(), gen.end());
  all.insert(all.end(), nt.begin(), nt.end());
  all.insert(all.end(), red.begin(), red.end());
  std::sort(all.begin(), all.end());
  return all;
}

ActionPartition partition_actions(const std::vector<Action>& actions) {
  ActionPartition p;
  for (size_t i = 0; i < actions.size(); ++i) {
    switch (actions[i].kind) {
      case Action::Kind::GEN: p.gen.push_back(static_cast<int64_t>(i)); break;
      case Action::Kind::NT: p.nt.push_back(static_cast<int64_t>(i)); break;
      case Action::Kind::REDUCE: p.red.push_back(static_cast<int64_t>(i)); break;
      case Action::Kind::PAD: break;
    }
  }
  return p;
}

GatheredChildren gather_children(Tape* tape, const BatchState& st, const IndexVec& rows,
                                 const IndexVec& span_begin, const IndexVec& span_end) {
  if (rows.size() != span_begin.size() || rows.size() != span_end.size())
    throw ConfigError("gather_children: index vector lengths disagree");
  GatheredChildren out;
  int64_t kmax = 0;
  for (size_t r = 0; r < rows.size(); ++r) {
    if (span_begin[r] > span_end[r] || span_begin[r] < 1)
      throw DataError("gather_children: inverted or empty span");
    out.lengths.push_back(span_end[r] - span_begin[r] + 1);
    kmax = std::max(kmax, out.lengths.back());
  }
  const int64_t n_rows = static_cast<int64_t>(rows.size());
  if (n_rows == 0) {
    out.padded = Tensor::zeros({0, 0, st.dims.embedding}, st.s_e.dtype());
    return out;
  }
  // Flat gather + a 0/1 mask kills gradient into pad-source slots.
  IndexVec flat(static_cast<size_t>(n_rows * kmax), 0);
  Tensor mask = Tensor::zeros({n_rows * kmax}, st.s_e.dtype());
  for (int64_t r = 0; r < n_rows; ++r)
    for (int64_t j = 0; j < kmax; ++j) {
      bool live = j < out.lengths[static_cast<size_t>(r)];
      // Dead cells re-read the span head; the mask zeroes them and their grad.
      flat[static_cast<size_t>(r * kmax + j)] =
          st.slot(rows[static_cast<size_t>(r)],
                  live ? span_begin[static_cast<size_t>(r)] + j
                       : span_begin[static_cast<size_t>(r)]);
      mask.set(r * kmax + j, live ? 1.0 : 0.0);
    }
  Tensor gathered = indexed_select(tape, st.s_e, flat);           // (R*Kmax) x E
  Tensor masked = scale_rows(tape, gathered, mask);               // zero pads
  out.padded = reshape(tape, masked, {n_rows, kmax, st.dims.embedding});
  return out;
}

void apply_step(Tape* tape, BatchState& st, const std::vector<Action>& actions,
                const IntMat& tokens, const ModelHooks& hooks) {
  if (static_cast<int64_t>(actions.size()) != st.batch)
    throw ConfigError("apply_step: need one action per row");
  ActionPartition part = partition_actions(actions);

  // Structural preconditions, before any mutation.
  for (int64_t i : part.non_pad()) {
    if (st.finished[static_cast<size_t>(i)])
      throw DataError("apply_step: non-PAD action on a finished row");
  }
  for (int64_t i : part.gen) {
    if (st.p_q[static_cast<size_t>(i)] < 0)
      throw DataError("apply_step: GEN outside any open constituent");
    if (st.buf[static_cast<size_t>(i)] >= tokens.cols)
      throw DataError("apply_step: GEN past the end of the token row");
    if (st.p_h[static_cast<size_t>(i)] >= st.depth)
      throw NumericError("apply_step: stack depth overflow on GEN");
  }
  for (int64_t i : part.nt) {
    if (st.p_h[static_cast<size_t>(i)] >= st.depth)
      throw NumericError("apply_step: stack depth overflow on NT");
    if (st.p_q[static_cast<size_t>(i)] + 1 >= static_cast<int32_t>(st.depth))
      throw NumericError("apply_step: open-nonterminal record overflow");
  }
  for (int64_t i : part.red) {
    if (st.p_q[static_cast<size_t>(i)] < 0)
      throw DataError("apply_step: REDUCE with no open nonterminal");
    if (st.q.at(i, st.p_q[static_cast<size_t>(i)]) == st.p_h[static_cast<size_t>(i)])
      throw DataError("apply_step: REDUCE on an empty constituent");
  }

  const int64_t e_dim = st.dims.embedding;
  Tensor e_next = Tensor::zeros({st.batch, e_dim}, st.s_e.dtype());

  // GEN rows: look up the next token embedding, move the cursor.
  if (!part.gen.empty()) {
    IndexVec word_ids;
    word_ids.reserve(part.gen.size());
    for (int64_t i : part.gen)
      word_ids.push_back(tokens.at(i, st.buf[static_cast<size_t>(i)]));
    e_next = indexed_assign(tape, std::move(e_next), part.gen, hooks.word_emb(word_ids));
    for (int64_t i : part.gen) ++st.buf[static_cast<size_t>(i)];
  }

  // NT rows: look up the label embedding, record the new open-NT depth.
  if (!part.nt.empty()) {
    IndexVec nt_ids;
    nt_ids.reserve(part.nt.size());
    for (int64_t i : part.nt) nt_ids.push_back(actions[static_cast<size_t>(i)].symbol);
    e_next = indexed_assign(tape, std::move(e_next), part.nt, hooks.nt_emb(nt_ids));
    for (int64_t i : part.nt) {
      ++st.p_q[static_cast<size_t>(i)];
      st.q.at(i, st.p_q[static_cast<size_t>(i)]) = st.p_h[static_cast<size_t>(i)] + 1;
    }
  }

  // REDUCE rows: compose the span from the last open NT to the top.
  if (!part.red.empty()) {
    IndexVec span_begin, span_end;
    for (int64_t i : part.red) {
      span_begin.push_back(st.q.at(i, st.p_q[static_cast<size_t>(i)]));
      span_end.push_back(st.p_h[static_cast<size_t>(i)]);
    }
    GatheredChildren children = gather_children(tape, st, part.red, span_begin, span_end);
    e_next = indexed_assign(tape, std::move(e_next), part.red,
                            hooks.compose(children.padded, children.lengths));
    for (size_t r = 0; r < part.red.size(); ++r) {
      int64_t i = part.red[r];
      --st.p_q[static_cast<size_t>(i)];
      st.p_h[static_cast<size_t>(i)] = static_cast<int32_t>(span_begin[r]) - 1;
    }
  }

  // Common tail: push for every non-PAD row.
  IndexVec non_pad = part.non_pad();
  if (non_pad.empty()) return;
  for (int64_t i : non_pad) ++st.p_h[static_cast<size_t>(i)];

  IndexVec slots_new, slots_prev;
  slots_new.reserve(non_pad.size());
  slots_prev.reserve(non_pad.size());
  for (int64_t i : non_pad) {
    slots_new.push_back(st.slot(i, st.p_h[static_cast<size_t>(i)]));
    slots_prev.push_back(st.slot(i, st.p_h[static_cast<size_t>(i)] - 1));
  }
  Tensor prev_states = indexed_select(tape, st.s_h, slots_prev);
  Tensor inputs = indexed_select(tape, e_next, non_pad);
  Tensor new_states = hooks.recur(prev_states, inputs);
  st.s_h = indexed_assign(tape, std::move(st.s_h), slots_new, new_states);
  st.s_e = indexed_assign(tape, std::move(st.s_e), slots_new, inputs);

  // A row whose root just closed is finished.
  for (int64_t i : part.red)
    if (st.p_q[static_cast<size_t>(i)] == -1 && st.p_h[static_cast<size_t>(i)] == 1)
      st.finished[static_cast<size_t>(i)] = 1;

  if (st.debug_validate) st.validate();
}

namespace {

void mask_row(const BatchState& st, int64_t i, int32_t len, int32_t num_nts, int32_t max_open_nt,
              uint8_t* row) {
  const int32_t width = num_nts + 2;
  std::fill(row, row + width, 0);
  if (st.finished[static_cast<size_t>(i)]) return;
  const int32_t ph = st.p_h[static_cast<size_t>(i)];
  const int32_t pq = st.p_q[static_cast<size_t>(i)];
  const int32_t b = st.buf[static_cast<size_t>(i)];
  // A negative length means free generation (sampling): no token budget and
  // the root may close at any point.
  const bool unbounded = len < 0;
  const int32_t open = pq + 1;
  if ((unbounded || b < len) && pq >= 0 && ph < st.depth) row[kActionGen] = 1;
  // Top of stack must not be an unfilled open NT, and when parsing a fixed
  // sentence the root may only close once every word is consumed.
  if (pq >= 0 && st.q.at(i, pq) != ph && (pq > 0 || unbounded || b == len))
    row[kActionReduce] = 1;
  if ((unbounded || b < len) && open < max_open_nt && ph < st.depth - 1)
    for (int32_t n = 0; n < num_nts; ++n) row[2 + n] = 1;
}

}  // namespace

std::vector<uint8_t> valid_actions(const BatchState& st, const std::vector<int32_t>& sent_len,
                                   int32_t num_nts, int32_t max_open_nt) {
  const int32_t width = num_nts + 2;
  std::vector<uint8_t> mask(static_cast<size_t>(st.batch) * width, 0);
  for (int64_t i = 0; i < st.batch; ++i)
    mask_row(st, i, sent_len[static_cast<size_t>(i)], num_nts, max_open_nt,
             mask.data() + i * width);
  return mask;
}

std::vector<uint8_t> valid_actions_rows(const BatchState& st, const IndexVec& rows,
                                        const std::vector<int32_t>& sent_len, int32_t num_nts,
                                        int32_t max_open_nt) {
  const int32_t width = num_nts + 2;
  std::vector<uint8_t> mask(rows.size() * static_cast<size_t>(width), 0);
  for (size_t p = 0; p < rows.size(); ++p)
    mask_row(st, rows[p], sent_len[p], num_nts, max_open_nt,
             mask.data() + p * static_cast<size_t>(width));
  return mask;
}

void copy_rows(Tape* tape, BatchState& st, const IndexVec& from, const IndexVec& to) {
  if (from.size() != to.size()) throw ConfigError("copy_rows: length mismatch");
  if (from.empty()) return;
  // Process in destination order so the flattened slot lists stay monotonic.
  std::vector<size_t> order(from.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return to[a] < to[b]; });
  IndexVec src_slots, dst_slots;
  for (size_t r0 = 0; r0 < order.size(); ++r0) {
    size_t r = order[r0];
    int64_t f = from[r], t = to[r];
    if (f < 0 || f >= st.batch || t < 0 || t >= st.batch)
      throw ConfigError("copy_rows: row out of range");
    // Slots above p_h are stale by the memory-discipline invariant.
    for (int32_t d = 0; d <= st.p_h[static_cast<size_t>(f)]; ++d) {
      src_slots.push_back(st.slot(f, d));
      dst_slots.push_back(st.slot(t, d));
    }
    st.p_h[static_cast<size_t>(t)] = st.p_h[static_cast<size_t>(f)];
    st.p_q[static_cast<size_t>(t)] = st.p_q[static_cast<size_t>(f)];
    st.buf[static_cast<size_t>(t)] = st.buf[static_cast<size_t>(f)];
    st.finished[static_cast<size_t>(t)] = st.finished[static_cast<size_t>(f)];
    for (int32_t d = 0; d <= st.p_q[static_cast<size_t>(f)]; ++d)
      st.q.at(t, d) = st.q.at(f, d);
  }
  Tensor src_h = indexed_select(tape, st.s_h, src_slots);
  Tensor src_e = indexed_select(tape, st.s_e, src_slots);
  st.s_h = indexed_assign(tape, std::move(st.s_h), dst_slots, src_h);
  st.s_e = indexed_assign(tape, std::move(st.s_e), dst_slots, src_e);
}

BatchState select_rows(const BatchState& st, const IndexVec& parents) {
  BatchState out;
  out.batch = static_cast<int64_t>(parents.size());
  out.depth = st.depth;
  out.dims = st.dims;
  out.debug_validate = st.debug_validate;
  IndexVec slots;
  slots.reserve(parents.size() * static_cast<size_t>(st.depth + 1));
  for (int64_t p : parents) {
    if (p < 0 || p >= st.batch) throw ConfigError("select_rows: parent out of range");
    for (int64_t d = 0; d <= st.depth; ++d) slots.push_back(st.slot(p, d));
  }
  out.s_h = indexed_select(nullptr, st.s_h, slots);
  out.s_e = indexed_select(nullptr, st.s_e, slots);
  out.q = IntMat(out.batch, st.depth);
  out.p_h.resize(parents.size());
  out.p_q.resize(parents.size());
  out.buf.resize(parents.size());
  out.finished.resize(parents.size());
  for (size_t r = 0; r < parents.size(); ++r) {
    int64_t p = parents[r];
    out.p_h[r] = st.p_h[static_cast<size_t>(p)];
    out.p_q[r] = st.p_q[static_cast<size_t>(p)];
    out.buf[r] = st.buf[static_cast<size_t>(p)];
    out.finished[r] = st.finished[static_cast<size_t>(p)];
    for (int64_t d = 0; d < st.depth; ++d)
      out.q.at(static_cast<int64_t>(r), d) = st.q.at(p, d);
  }
  return out;
}

}  // namespace rnng

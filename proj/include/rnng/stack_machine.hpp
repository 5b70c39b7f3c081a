// Batched stack-tensor transition machine. A BatchState holds, for B rows:
//
//   s_h   hidden+cell states, conceptually B x (D+1) x L x 2 x H, stored as
//         a (B*(D+1)) x (L*2*H) matrix; slot 0 of each row is the fixed
//         initial recurrent state, so p_h indexes are 1-based for real
//         elements (p_h[i] = 0 means row i's stack is empty).
//   s_e   stack-element embeddings, (B*(D+1)) x E; slot 0 is never read.
//   p_h   stack-top pointers, 0 <= p_h[i] <= D.
//   q     B x D nonterminal-position matrix: q[i][d] is the stack position
//         of the d-th open nonterminal; entries beyond p_q[i] are stale and
//         must never influence results.
//   p_q   top-of-q pointers, -1 when no nonterminal is open.
//   buf   next-token cursors.
//
// One apply_step() executes a mixed NT/GEN/REDUCE step for all rows at
// once using per-action index vectors; PAD rows are untouched.

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "rnng/tensor.hpp"
#include "rnng/tree.hpp"

namespace rnng {

struct IntMat {
  int64_t rows = 0, cols = 0;
  std::vector<int32_t> v;

  IntMat() = default;
  IntMat(int64_t r, int64_t c, int32_t fill = 0)
      : rows(r), cols(c), v(static_cast<size_t>(r * c), fill) {}
  int32_t& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
  int32_t at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }
};

struct StackDims {
  int64_t embedding = 0;  // E
  int64_t hidden = 0;     // H
  int64_t layers = 0;     // L
};

struct BatchState {
  int64_t batch = 0;  // B
  int64_t depth = 0;  // D
  StackDims dims;
  Tensor s_h;  // (B*(D+1)) x (L*2*H)
  Tensor s_e;  // (B*(D+1)) x E
  std::vector<int32_t> p_h;
  std::vector<int32_t> p_q;
  std::vector<int32_t> buf;
  IntMat q;  // B x D
  std::vector<uint8_t> finished;
  // Extra validation after every step when set (tests, debug runs).
  bool debug_validate = false;

  int64_t state_cols() const { return dims.layers * 2 * dims.hidden; }
  int64_t slot(int64_t row, int64_t d) const { return row * (depth + 1) + d; }
  // Throws on any violated invariant.
  void validate() const;
};

// Model callbacks; each is a pure function of its inputs and the external
// parameters.
struct ModelHooks {
  // token ids -> rows x E
  std::function<Tensor(const IndexVec&)> word_emb;
  // nonterminal ids -> rows x E
  std::function<Tensor(const IndexVec&)> nt_emb;
  // padded children (R x Kmax x E) + lengths -> R x E
  std::function<Tensor(const Tensor&, const IndexVec&)> compose;
  // previous states (rows x L*2*H) + inputs (rows x E) -> rows x L*2*H
  std::function<Tensor(const Tensor&, const Tensor&)> recur;
};

// Fresh state: p_h = 0, p_q = -1, buf = 0, s_h slot 0 = initial_state row.
BatchState init_batch(int64_t batch, int64_t depth, const StackDims& dims,
                      const Tensor& initial_state, Dtype dt);

struct ActionPartition {
  IndexVec gen, nt, red;
  IndexVec non_pad() const;  // sorted union
};

// PAD rows appear in none of the three index vectors.
ActionPartition partition_actions(const std::vector<Action>& actions);

// Row r of the output holds s_e[row_r, span_begin[r] .. span_end[r]]
// left-aligned (open-NT embedding first, then children in surface order),
// zero-padded to the max span length.
struct GatheredChildren {
  Tensor padded;  // R x Kmax x E
  IndexVec lengths;
};
GatheredChildren gather_children(Tape* tape, const BatchState& st, const IndexVec& rows,
                                 const IndexVec& span_begin, const IndexVec& span_end);

// One batched step. `tokens` must have one row per state row; GEN rows read
// tokens[i, buf[i]]. Throws NumericError on depth overflow and DataError on
// structurally illegal actions.
void apply_step(Tape* tape, BatchState& st, const std::vector<Action>& actions,
                const IntMat& tokens, const ModelHooks& hooks);

// Legality mask over the |N|+2 scored actions (layout of action_index()).
// finished rows have no legal action. A negative sent_len entry means free
// generation: no token budget, root may close at any time.
std::vector<uint8_t> valid_actions(const BatchState& st, const std::vector<int32_t>& sent_len,
                                   int32_t num_nts, int32_t max_open_nt);
// Same mask restricted to a row subset: out[i*width..] covers rows[i].
std::vector<uint8_t> valid_actions_rows(const BatchState& st, const IndexVec& rows,
                                        const std::vector<int32_t>& sent_len, int32_t num_nts,
                                        int32_t max_open_nt);

// Copies the live slots (0..p_h) and pointers of row `from` into row `to`
// within one state; beam search forks hypothesis cells this way.
void copy_rows(Tape* tape, BatchState& st, const IndexVec& from, const IndexVec& to);

// New state whose row r is a copy of st's row parents[r]; rows may repeat.
// Used by beam search to realize successor cells.
BatchState select_rows(const BatchState& st, const IndexVec& parents);

}  // namespace rnng

// Minimal dense-array layer with reverse-mode automatic differentiation.
// Dense row-major buffers, float32 or float64 selected at runtime per tensor;
// a Tape records primitive ops in creation order (which is topological) and
// replays them in reverse. Kernels are single-threaded and deterministic
// given the same rng seed, dropout included.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rnng {

enum class Dtype : uint8_t { F32, F64 };

inline const char* dtype_name(Dtype dt) { return dt == Dtype::F32 ? "f32" : "f64"; }

// Row selectors and pointer vectors. Every value must be in bounds for the
// dimension it indexes; ops check and throw on violation.
using IndexVec = std::vector<int64_t>;

class Tape;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, Dtype dt);
  static Tensor full(std::vector<int64_t> shape, double value, Dtype dt);
  static Tensor from(std::vector<int64_t> shape, std::span<const double> values, Dtype dt);
  static Tensor uniform(std::vector<int64_t> shape, double lo, double hi, std::mt19937_64& rng,
                        Dtype dt);

  bool defined() const { return buf_ != nullptr; }
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t ndim() const { return shape_.size(); }
  int64_t size() const;
  Dtype dtype() const;

  // Raw buffers; valid only for the matching dtype.
  float* f32();
  const float* f32() const;
  double* f64();
  const double* f64() const;

  // Slow element accessors for tests and glue code.
  double at(int64_t i) const;
  double at(int64_t i, int64_t j) const;
  double at(int64_t i, int64_t j, int64_t k) const;
  void set(int64_t i, double v);
  void set(int64_t i, int64_t j, double v);
  double item() const;  // single-element tensors
  std::vector<double> to_vector() const;

  // Deep copy of the buffer (same dtype, no tape node).
  Tensor clone() const;
  Tensor to(Dtype dt) const;

  bool unique() const { return buf_ && buf_.use_count() == 1; }

 private:
  friend class Tape;
  friend struct OpAccess;

  struct Buf {
    Dtype dt = Dtype::F64;
    std::vector<float> f;
    std::vector<double> d;
  };

  std::shared_ptr<Buf> buf_;
  std::vector<int64_t> shape_;
  // Node handle when participating in a gradient graph. The uid guards
  // against a new tape reusing the address of a dead one.
  const Tape* tape_ = nullptr;
  uint64_t tape_uid_ = 0;
  int32_t node_ = -1;
};

// Ordered record of primitive ops. Replaying the reverse pass visits each
// node exactly once in reverse creation order. A tape is confined to one
// logical thread; distinct tapes may run concurrently on disjoint data.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a leaf so gradients accumulate for it.
  void watch(Tensor& t);

  // Runs the reverse pass from a scalar loss. Throws if loss is not a
  // single-element tensor on this tape.
  void backward(const Tensor& loss);

  // Gradient of the last backward() w.r.t. t; zeros if t never received one.
  Tensor grad(const Tensor& t) const;

  // Gradients for a set of named leaves, zeros included for unused ones.
  std::vector<std::pair<std::string, Tensor>> gradients(
      const std::vector<std::pair<std::string, Tensor>>& named) const;

  void clear();
  size_t node_count() const { return nodes_.size(); }

  struct Node {
    std::vector<int32_t> parents;
    std::vector<int64_t> out_shape;
    Dtype out_dtype;
    // Consumes grad of this node, accumulates into parent grads.
    std::function<void(Tape&, int32_t)> backward;
  };

  // For op implementations.
  int32_t emit(Node node);
  bool owns(const Tensor& t) const {
    return t.tape_ == this && t.tape_uid_ == uid_ && t.node_ >= 0;
  }
  int32_t node_of(const Tensor& t) const { return owns(t) ? t.node_ : -1; }
  void bind(Tensor& t, int32_t node) const {
    t.tape_ = this;
    t.tape_uid_ = uid_;
    t.node_ = node;
  }
  Tensor& grad_slot(int32_t node);
  bool has_grad(int32_t node) const;

 private:
  static uint64_t next_uid();
  uint64_t uid_ = next_uid();
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// --- primitive ops -------------------------------------------------------
// All ops are pure given their inputs. `tape` may be null (inference mode);
// then no node is emitted and no gradient flows.

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
// a (m x k) times b^T (k x n) for b stored (n x k); used by tied output layers.
Tensor matmul_nt(Tape* tape, const Tensor& a, const Tensor& b);

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor neg(Tape* tape, const Tensor& a);
Tensor scale(Tape* tape, const Tensor& a, double c);
// (R x C) + (C): adds v to every row.
Tensor add_rowvec(Tape* tape, const Tensor& a, const Tensor& v);
// Multiplies row i (all trailing dims) by s[i]; s has shape (rows).
Tensor scale_rows(Tape* tape, const Tensor& a, const Tensor& s);

Tensor sigmoid(Tape* tape, const Tensor& a);
Tensor tanh_op(Tape* tape, const Tensor& a);
Tensor relu(Tape* tape, const Tensor& a);

// Softmax family over the last dimension.
Tensor softmax(Tape* tape, const Tensor& a);
Tensor log_softmax(Tape* tape, const Tensor& a);
Tensor logsumexp(Tape* tape, const Tensor& a);  // drops the last dim

// Inverted dropout: kept units scale by 1/(1-rate) in training mode,
// identity in eval mode.
Tensor dropout(Tape* tape, const Tensor& a, double rate, std::mt19937_64& rng, bool training);

Tensor concat_cols(Tape* tape, const Tensor& a, const Tensor& b);
Tensor concat_rows(Tape* tape, std::span<const Tensor> parts);
Tensor pad_rows(Tape* tape, const Tensor& a, int64_t len);
Tensor slice_cols(Tape* tape, const Tensor& a, int64_t begin, int64_t end);
Tensor slice_rows(Tape* tape, const Tensor& a, int64_t begin, int64_t end);

// Metadata-only view; shares the buffer, gradient reshapes back.
Tensor reshape(Tape* tape, const Tensor& a, std::vector<int64_t> shape);

// out[i] = a[rows[i], ...]; gradient scatters back additively.
Tensor indexed_select(Tape* tape, const Tensor& a, const IndexVec& rows);
// out[i] = a[rows[i], cols[i]] on a 2-D tensor.
Tensor indexed_select(Tape* tape, const Tensor& a, const IndexVec& rows, const IndexVec& cols);

// Replaces selected rows/cells by v, other slots unchanged. Duplicate targets
// within one call are an error. Takes `a` by value: when tape-free and the
// buffer is uniquely owned the update happens in place.
Tensor indexed_assign(Tape* tape, Tensor a, const IndexVec& rows, const Tensor& v);
Tensor indexed_assign(Tape* tape, Tensor a, const IndexVec& rows, const IndexVec& cols,
                      const Tensor& v);

Tensor sum(Tape* tape, const Tensor& a);  // all elements -> shape {1}

}  // namespace rnng

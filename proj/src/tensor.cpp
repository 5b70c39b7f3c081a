#include "rnng/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "rnng/errors.hpp"

namespace rnng {

namespace {

int64_t shape_size(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 0) throw ConfigError("tensor: negative extent");
    n *= e;
  }
  return n;
}

std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// Runs f.template operator()<T>() with T = float or double.
template <class F>
decltype(auto) dispatch(Dtype dt, F&& f) {
  if (dt == Dtype::F32) return f.template operator()<float>();
  return f.template operator()<double>();
}

template <class T>
using EMat = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using CEMat =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

struct OpAccess {
  static std::shared_ptr<Tensor::Buf>& buf(Tensor& t) { return t.buf_; }
  static const std::shared_ptr<Tensor::Buf>& buf(const Tensor& t) { return t.buf_; }
  static Tensor make(std::vector<int64_t> shape, Dtype dt) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.buf_ = std::make_shared<Tensor::Buf>();
    t.buf_->dt = dt;
    int64_t n = shape_size(t.shape_);
    if (dt == Dtype::F32)
      t.buf_->f.assign(static_cast<size_t>(n), 0.0f);
    else
      t.buf_->d.assign(static_cast<size_t>(n), 0.0);
    return t;
  }
  static Tensor alias(const Tensor& t, std::vector<int64_t> shape) {
    Tensor out;
    out.buf_ = t.buf_;
    out.shape_ = std::move(shape);
    return out;
  }
};

// ---- Tensor basics -------------------------------------------------------

Tensor Tensor::zeros(std::vector<int64_t> shape, Dtype dt) {
  return OpAccess::make(std::move(shape), dt);
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, Dtype dt) {
  Tensor t = OpAccess::make(std::move(shape), dt);
  for (int64_t i = 0; i < t.size(); ++i) t.set(i, value);
  return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::span<const double> values, Dtype dt) {
  Tensor t = OpAccess::make(std::move(shape), dt);
  if (static_cast<int64_t>(values.size()) != t.size())
    throw ConfigError("tensor: from(): value count does not match shape");
  for (int64_t i = 0; i < t.size(); ++i) t.set(i, values[static_cast<size_t>(i)]);
  return t;
}

Tensor Tensor::uniform(std::vector<int64_t> shape, double lo, double hi, std::mt19937_64& rng,
                       Dtype dt) {
  Tensor t = OpAccess::make(std::move(shape), dt);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (int64_t i = 0; i < t.size(); ++i) t.set(i, dist(rng));
  return t;
}

int64_t Tensor::size() const { return buf_ ? shape_size(shape_) : 0; }

Dtype Tensor::dtype() const {
  if (!buf_) throw ConfigError("tensor: dtype() on undefined tensor");
  return buf_->dt;
}

float* Tensor::f32() { return buf_->f.data(); }
const float* Tensor::f32() const { return buf_->f.data(); }
double* Tensor::f64() { return buf_->d.data(); }
const double* Tensor::f64() const { return buf_->d.data(); }

double Tensor::at(int64_t i) const {
  if (i < 0 || i >= size()) throw ConfigError("tensor: at() out of bounds");
  return buf_->dt == Dtype::F32 ? static_cast<double>(buf_->f[static_cast<size_t>(i)])
                                : buf_->d[static_cast<size_t>(i)];
}

double Tensor::at(int64_t i, int64_t j) const {
  if (ndim() < 2) throw ConfigError("tensor: at(i,j) needs >=2 dims");
  int64_t inner = size() / shape_[0];
  return at(i * inner + j);
}

double Tensor::at(int64_t i, int64_t j, int64_t k) const {
  if (ndim() != 3) throw ConfigError("tensor: at(i,j,k) needs 3 dims");
  return at((i * shape_[1] + j) * shape_[2] + k);
}

void Tensor::set(int64_t i, double v) {
  if (i < 0 || i >= size()) throw ConfigError("tensor: set() out of bounds");
  if (buf_->dt == Dtype::F32)
    buf_->f[static_cast<size_t>(i)] = static_cast<float>(v);
  else
    buf_->d[static_cast<size_t>(i)] = v;
}

void Tensor::set(int64_t i, int64_t j, double v) {
  int64_t inner = size() / shape_[0];
  set(i * inner + j, v);
}

double Tensor::item() const {
  if (size() != 1) throw ConfigError("tensor: item() on non-scalar of shape " + shape_str(shape_));
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(static_cast<size_t>(size()));
  for (int64_t i = 0; i < size(); ++i) out[static_cast<size_t>(i)] = at(i);
  return out;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.buf_ = std::make_shared<Buf>(*buf_);
  return t;
}

Tensor Tensor::to(Dtype dt) const {
  if (dt == dtype()) return clone();
  Tensor t = OpAccess::make(shape_, dt);
  for (int64_t i = 0; i < size(); ++i) t.set(i, at(i));
  return t;
}

// ---- Tape ----------------------------------------------------------------

uint64_t Tape::next_uid() {
  static std::atomic<uint64_t> counter{1};
  return counter.fetch_add(1);
}

void Tape::watch(Tensor& t) {
  if (owns(t)) return;
  Node n;
  n.out_shape = t.shape();
  n.out_dtype = t.dtype();
  int32_t id = emit(std::move(n));
  bind(t, id);
}

int32_t Tape::emit(Node node) {
  nodes_.push_back(std::move(node));
  grads_.emplace_back();
  return static_cast<int32_t>(nodes_.size() - 1);
}

Tensor& Tape::grad_slot(int32_t node) {
  Tensor& g = grads_[static_cast<size_t>(node)];
  if (!g.defined()) g = Tensor::zeros(nodes_[static_cast<size_t>(node)].out_shape,
                                      nodes_[static_cast<size_t>(node)].out_dtype);
  return g;
}

bool Tape::has_grad(int32_t node) const { return grads_[static_cast<size_t>(node)].defined(); }

void Tape::backward(const Tensor& loss) {
  if (!owns(loss)) throw ConfigError("tape: backward() on tensor not recorded on this tape");
  if (loss.size() != 1) throw ConfigError("tape: backward() needs a scalar loss");
  for (auto& g : grads_) g = Tensor();
  grad_slot(loss.node_).set(0, 1.0);
  for (int32_t i = static_cast<int32_t>(nodes_.size()) - 1; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.backward || !has_grad(i)) continue;
    n.backward(*this, i);
  }
}

Tensor Tape::grad(const Tensor& t) const {
  if (!owns(t)) throw ConfigError("tape: grad() of tensor not on this tape");
  const Tensor& g = grads_[static_cast<size_t>(t.node_)];
  if (g.defined()) return g;
  return Tensor::zeros(t.shape(), t.dtype());
}

std::vector<std::pair<std::string, Tensor>> Tape::gradients(
    const std::vector<std::pair<std::string, Tensor>>& named) const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.emplace_back(name, grad(t));
  return out;
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
}

// ---- op helpers ------------------------------------------------------------

namespace {

Dtype same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw ConfigError(std::string(op) + ": mixed dtypes " + dtype_name(a.dtype()) + " vs " +
                      dtype_name(b.dtype()));
  return a.dtype();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
}

template <class T>
const T* ptr(const Tensor& t) {
  if constexpr (std::is_same_v<T, float>) return t.f32();
  else return t.f64();
}
template <class T>
T* ptr(Tensor& t) {
  if constexpr (std::is_same_v<T, float>) return t.f32();
  else return t.f64();
}

// Emits a node when any input lives on the tape; binds the output.
void record(Tape* tape, Tensor& out, std::initializer_list<const Tensor*> inputs,
            std::function<void(Tape&, int32_t)> backward) {
  if (!tape) return;
  bool any = false;
  for (const Tensor* t : inputs)
    if (tape->owns(*t)) any = true;
  if (!any) return;
  Tape::Node n;
  for (const Tensor* t : inputs) n.parents.push_back(tape->node_of(*t));
  n.out_shape = out.shape();
  n.out_dtype = out.dtype();
  n.backward = std::move(backward);
  tape->bind(out, tape->emit(std::move(n)));
}

// Accumulate src into the grad slot of `node` (if it is tracked).
void accumulate(Tape& tape, int32_t node, const Tensor& src) {
  if (node < 0) return;
  Tensor& g = tape.grad_slot(node);
  dispatch(g.dtype(), [&]<class T>() {
    T* gp = ptr<T>(g);
    const T* sp = ptr<T>(src);
    for (int64_t i = 0; i < g.size(); ++i) gp[i] += sp[i];
  });
}

int64_t leading_rows(const Tensor& t) {
  if (t.ndim() == 0) throw ConfigError("op: rank-0 tensor");
  return t.shape()[0];
}

int64_t row_width(const Tensor& t) {
  int64_t w = 1;
  for (size_t i = 1; i < t.ndim(); ++i) w *= t.shape()[i];
  return w;
}

void check_rows_in_bounds(const IndexVec& rows, int64_t extent, const char* op) {
  for (int64_t r : rows)
    if (r < 0 || r >= extent)
      throw ConfigError(std::string(op) + ": index " + std::to_string(r) +
                        " out of bounds for extent " + std::to_string(extent));
}

}  // namespace

// ---- matmul ----------------------------------------------------------------

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  Dtype dt = same_dtype(a, b, "matmul");
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ConfigError("matmul: shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n}, dt);
  dispatch(dt, [&]<class T>() {
    CEMat<T> ea(ptr<T>(a), m, k), eb(ptr<T>(b), k, n);
    EMat<T> eo(ptr<T>(out), m, n);
    eo.noalias() = ea * eb;
  });
  record(tape, out, {&a, &b}, [a, b, m, k, n](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a), pb = tp.node_of(b);
    dispatch(a.dtype(), [&]<class T>() {
      CEMat<T> ego(ptr<T>(go), m, n), ea(ptr<T>(a), m, k), eb(ptr<T>(b), k, n);
      if (pa >= 0) {
        EMat<T> ga(ptr<T>(tp.grad_slot(pa)), m, k);
        ga.noalias() += ego * eb.transpose();
      }
      if (pb >= 0) {
        EMat<T> gb(ptr<T>(tp.grad_slot(pb)), k, n);
        gb.noalias() += ea.transpose() * ego;
      }
    });
  });
  return out;
}

Tensor matmul_nt(Tape* tape, const Tensor& a, const Tensor& b) {
  Dtype dt = same_dtype(a, b, "matmul_nt");
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw ConfigError("matmul_nt: shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                      "^T");
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = Tensor::zeros({m, n}, dt);
  dispatch(dt, [&]<class T>() {
    CEMat<T> ea(ptr<T>(a), m, k), eb(ptr<T>(b), n, k);
    EMat<T> eo(ptr<T>(out), m, n);
    eo.noalias() = ea * eb.transpose();
  });
  record(tape, out, {&a, &b}, [a, b, m, k, n](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a), pb = tp.node_of(b);
    dispatch(a.dtype(), [&]<class T>() {
      CEMat<T> ego(ptr<T>(go), m, n), ea(ptr<T>(a), m, k), eb(ptr<T>(b), n, k);
      if (pa >= 0) {
        EMat<T> ga(ptr<T>(tp.grad_slot(pa)), m, k);
        ga.noalias() += ego * eb;
      }
      if (pb >= 0) {
        EMat<T> gb(ptr<T>(tp.grad_slot(pb)), n, k);
        gb.noalias() += ego.transpose() * ea;
      }
    });
  });
  return out;
}

// ---- elementwise -----------------------------------------------------------

namespace {

template <class Fwd, class Bwd>
Tensor binary_ew(Tape* tape, const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                 Bwd bwd) {
  Dtype dt = same_dtype(a, b, name);
  check_same_shape(a, b, name);
  Tensor out = Tensor::zeros(a.shape(), dt);
  dispatch(dt, [&]<class T>() {
    const T* pa = ptr<T>(a);
    const T* pb = ptr<T>(b);
    T* po = ptr<T>(out);
    for (int64_t i = 0; i < out.size(); ++i) po[i] = fwd(pa[i], pb[i]);
  });
  record(tape, out, {&a, &b}, [a, b, bwd](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a), pb = tp.node_of(b);
    dispatch(a.dtype(), [&]<class T>() {
      const T* g = ptr<T>(go);
      const T* av = ptr<T>(a);
      const T* bv = ptr<T>(b);
      T* ga = pa >= 0 ? ptr<T>(tp.grad_slot(pa)) : nullptr;
      T* gb = pb >= 0 ? ptr<T>(tp.grad_slot(pb)) : nullptr;
      for (int64_t i = 0; i < go.size(); ++i) {
        auto [da, db] = bwd(av[i], bv[i]);
        if (ga) ga[i] += g[i] * static_cast<T>(da);
        if (gb) gb[i] += g[i] * static_cast<T>(db);
      }
    });
  });
  return out;
}

template <class Fwd, class Dfo>
Tensor unary_ew(Tape* tape, const Tensor& a, const char* name, Fwd fwd, Dfo dfo) {
  (void)name;
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = ptr<T>(a);
    T* po = ptr<T>(out);
    for (int64_t i = 0; i < out.size(); ++i) po[i] = static_cast<T>(fwd(static_cast<double>(pa[i])));
  });
  // dfo receives (input, output) so saturating activations reuse the output.
  record(tape, out, {&a}, [a, out, dfo](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a);
    if (pa < 0) return;
    dispatch(a.dtype(), [&]<class T>() {
      const T* g = ptr<T>(go);
      const T* av = ptr<T>(a);
      const T* ov = ptr<T>(out);
      T* ga = ptr<T>(tp.grad_slot(pa));
      for (int64_t i = 0; i < go.size(); ++i)
        ga[i] += g[i] * static_cast<T>(dfo(static_cast<double>(av[i]), static_cast<double>(ov[i])));
    });
  });
  return out;
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  return binary_ew(tape, a, b, "add", [](auto x, auto y) { return x + y; },
                   [](auto, auto) { return std::pair<double, double>{1.0, 1.0}; });
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  return binary_ew(tape, a, b, "sub", [](auto x, auto y) { return x - y; },
                   [](auto, auto) { return std::pair<double, double>{1.0, -1.0}; });
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  return binary_ew(tape, a, b, "mul", [](auto x, auto y) { return x * y; },
                   [](auto x, auto y) {
                     return std::pair<double, double>{static_cast<double>(y),
                                                      static_cast<double>(x)};
                   });
}

Tensor neg(Tape* tape, const Tensor& a) {
  return unary_ew(tape, a, "neg", [](double x) { return -x; },
                  [](double, double) { return -1.0; });
}

Tensor scale(Tape* tape, const Tensor& a, double c) {
  return unary_ew(tape, a, "scale", [c](double x) { return c * x; },
                  [c](double, double) { return c; });
}

namespace {

template <class T>
using EArr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using CEArr = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

// Vectorized activations: these run once per element per step, so they are
// the one elementwise family worth SIMD.
template <class Fwd, class BwdFromOut>
Tensor activation(Tape* tape, const Tensor& a, Fwd fwd, BwdFromOut bwd) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    CEArr<T> x(ptr<T>(a), a.size());
    EArr<T> y(ptr<T>(out), out.size());
    fwd(x, y);
  });
  record(tape, out, {&a}, [a, out, bwd](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a);
    if (pa < 0) return;
    Tensor& ga = tp.grad_slot(pa);
    dispatch(a.dtype(), [&]<class T>() {
      CEArr<T> g(ptr<T>(go), go.size()), x(ptr<T>(a), a.size()), y(ptr<T>(out), out.size());
      EArr<T> gi(ptr<T>(ga), ga.size());
      bwd(g, x, y, gi);
    });
  });
  return out;
}

}  // namespace

Tensor sigmoid(Tape* tape, const Tensor& a) {
  return activation(
      tape, a, [](const auto& x, auto& y) { y = 1.0 / (1.0 + (-x).exp()); },
      [](const auto& g, const auto&, const auto& y, auto& gi) { gi += g * y * (1.0 - y); });
}

Tensor tanh_op(Tape* tape, const Tensor& a) {
  return activation(tape, a, [](const auto& x, auto& y) { y = x.tanh(); },
                    [](const auto& g, const auto&, const auto& y, auto& gi) {
                      gi += g * (1.0 - y * y);
                    });
}

Tensor relu(Tape* tape, const Tensor& a) {
  return activation(tape, a, [](const auto& x, auto& y) { y = x.max(0); },
                    [](const auto& g, const auto& x, const auto&, auto& gi) {
                      gi += (x > 0).template cast<std::remove_cvref_t<decltype(*gi.data())>>() * g;
                    });
}

Tensor add_rowvec(Tape* tape, const Tensor& a, const Tensor& v) {
  same_dtype(a, v, "add_rowvec");
  if (v.ndim() != 1 || row_width(a) != v.dim(0))
    throw ConfigError("add_rowvec: vector shape " + shape_str(v.shape()) + " vs rows of " +
                      shape_str(a.shape()));
  const int64_t rows = leading_rows(a), cols = row_width(a);
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = ptr<T>(a);
    const T* pv = ptr<T>(v);
    T* po = ptr<T>(out);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) po[r * cols + c] = pa[r * cols + c] + pv[c];
  });
  record(tape, out, {&a, &v}, [a, v, rows, cols](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a), pv = tp.node_of(v);
    dispatch(a.dtype(), [&]<class T>() {
      const T* g = ptr<T>(go);
      if (pa >= 0) {
        T* ga = ptr<T>(tp.grad_slot(pa));
        for (int64_t i = 0; i < go.size(); ++i) ga[i] += g[i];
      }
      if (pv >= 0) {
        T* gv = ptr<T>(tp.grad_slot(pv));
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < cols; ++c) gv[c] += g[r * cols + c];
      }
    });
  });
  return out;
}

Tensor scale_rows(Tape* tape, const Tensor& a, const Tensor& s) {
  same_dtype(a, s, "scale_rows");
  if (s.ndim() != 1 || s.dim(0) != leading_rows(a))
    throw ConfigError("scale_rows: scale shape " + shape_str(s.shape()) + " vs " +
                      shape_str(a.shape()));
  const int64_t rows = leading_rows(a), cols = row_width(a);
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = ptr<T>(a);
    const T* psc = ptr<T>(s);
    T* po = ptr<T>(out);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < cols; ++c) po[r * cols + c] = pa[r * cols + c] * psc[r];
  });
  record(tape, out, {&a, &s}, [a, s, rows, cols](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a), ps = tp.node_of(s);
    dispatch(a.dtype(), [&]<class T>() {
      const T* g = ptr<T>(go);
      const T* av = ptr<T>(a);
      const T* sv = ptr<T>(s);
      if (pa >= 0) {
        T* ga = ptr<T>(tp.grad_slot(pa));
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r * cols + c] * sv[r];
      }
      if (ps >= 0) {
        T* gs = ptr<T>(tp.grad_slot(ps));
        for (int64_t r = 0; r < rows; ++r) {
          T acc = 0;
          for (int64_t c = 0; c < cols; ++c) acc += g[r * cols + c] * av[r * cols + c];
          gs[r] += acc;
        }
      }
    });
  });
  return out;
}

// ---- softmax family --------------------------------------------------------

namespace {

// Applies f(row_in, row_out) over the last dimension.
template <class F>
void rows_lastdim(const Tensor& in, Tensor& out, F f) {
  const int64_t cols = in.shape().back();
  const int64_t rows = cols == 0 ? 0 : in.size() / cols;
  dispatch(in.dtype(), [&]<class T>() {
    const T* pi = ptr<T>(in);
    T* po = ptr<T>(out);
    for (int64_t r = 0; r < rows; ++r) f(pi + r * cols, po + r * cols, cols);
  });
}

}  // namespace

Tensor softmax(Tape* tape, const Tensor& a) {
  if (a.ndim() == 0 || a.shape().back() == 0) throw ConfigError("softmax: empty last dim");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  rows_lastdim(a, out, [](const auto* x, auto* y, int64_t n) {
    using T = std::remove_cvref_t<decltype(*y)>;
    Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> xv(x, n);
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> yv(y, n);
    T mx = xv.maxCoeff();
    yv = (xv - mx).exp();
    yv /= yv.sum();
  });
  record(tape, out, {&a}, [a, out](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a);
    if (pa < 0) return;
    Tensor& ga = tp.grad_slot(pa);
    const int64_t cols = a.shape().back();
    const int64_t rows = a.size() / cols;
    dispatch(a.dtype(), [&]<class T>() {
      const T* g = ptr<T>(go);
      const T* y = ptr<T>(out);
      T* gi = ptr<T>(ga);
      for (int64_t r = 0; r < rows; ++r) {
        double dot = 0;
        for (int64_t c = 0; c < cols; ++c)
          dot += static_cast<double>(g[r * cols + c]) * static_cast<double>(y[r * cols + c]);
        for (int64_t c = 0; c < cols; ++c)
          gi[r * cols + c] += static_cast<T>(
              static_cast<double>(y[r * cols + c]) * (static_cast<double>(g[r * cols + c]) - dot));
      }
    });
  });
  return out;
}

Tensor log_softmax(Tape* tape, const Tensor& a) {
  if (a.ndim() == 0 || a.shape().back() == 0) throw ConfigError("log_softmax: empty last dim");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  rows_lastdim(a, out, [](const auto* x, auto* y, int64_t n) {
    using T = std::remove_cvref_t<decltype(*y)>;
    Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> xv(x, n);
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> yv(y, n);
    T mx = xv.maxCoeff();
    T lse = mx + std::log((xv - mx).exp().sum());
    yv = xv - lse;
  });
  record(tape, out, {&a}, [a, out](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a);
    if (pa < 0) return;
    Tensor& ga = tp.grad_slot(pa);
    const int64_t cols = a.shape().back();
    const int64_t rows = a.size() / cols;
    dispatch(a.dtype(), [&]<class T>() {
      const T* g = ptr<T>(go);
      const T* y = ptr<T>(out);  // log-probs
      T* gi = ptr<T>(ga);
      for (int64_t r = 0; r < rows; ++r) {
        double gsum = 0;
        for (int64_t c = 0; c < cols; ++c) gsum += static_cast<double>(g[r * cols + c]);
        for (int64_t c = 0; c < cols; ++c)
          gi[r * cols + c] += static_cast<T>(static_cast<double>(g[r * cols + c]) -
                                             gsum * std::exp(static_cast<double>(y[r * cols + c])));
      }
    });
  });
  return out;
}

Tensor logsumexp(Tape* tape, const Tensor& a) {
  if (a.ndim() == 0 || a.shape().back() == 0) throw ConfigError("logsumexp: empty last dim");
  const int64_t cols = a.shape().back();
  const int64_t rows = a.size() / cols;
  std::vector<int64_t> out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out = Tensor::zeros(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* x = ptr<T>(a);
    T* y = ptr<T>(out);
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = x + r * cols;
      T mx = *std::max_element(row, row + cols);
      if (!std::isfinite(static_cast<double>(mx))) {
        y[r] = mx;  // all -inf rows stay -inf
        continue;
      }
      double z = 0;
      for (int64_t i = 0; i < cols; ++i) z += std::exp(static_cast<double>(row[i] - mx));
      y[r] = static_cast<T>(static_cast<double>(mx) + std::log(z));
    }
  });
  record(tape, out, {&a}, [a, out, rows, cols](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a);
    if (pa < 0) return;
    Tensor& ga = tp.grad_slot(pa);
    dispatch(a.dtype(), [&]<class T>() {
      const T* g = ptr<T>(go);
      const T* x = ptr<T>(a);
      const T* y = ptr<T>(out);
      T* gi = ptr<T>(ga);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c)
          gi[r * cols + c] += static_cast<T>(
              static_cast<double>(g[r]) *
              std::exp(static_cast<double>(x[r * cols + c]) - static_cast<double>(y[r])));
    });
  });
  return out;
}

// ---- dropout ---------------------------------------------------------------

Tensor dropout(Tape* tape, const Tensor& a, double rate, std::mt19937_64& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return a;
  Tensor mask = Tensor::zeros(a.shape(), a.dtype());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep = 1.0 - rate;
  for (int64_t i = 0; i < mask.size(); ++i) mask.set(i, u(rng) < keep ? 1.0 / keep : 0.0);
  return mul(tape, a, mask);
}

// ---- shape ops -------------------------------------------------------------

Tensor concat_cols(Tape* tape, const Tensor& a, const Tensor& b) {
  same_dtype(a, b, "concat_cols");
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0))
    throw ConfigError("concat_cols: shapes " + shape_str(a.shape()) + ", " + shape_str(b.shape()));
  const int64_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor out = Tensor::zeros({rows, ca + cb}, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = ptr<T>(a);
    const T* pb = ptr<T>(b);
    T* po = ptr<T>(out);
    for (int64_t r = 0; r < rows; ++r) {
      std::copy(pa + r * ca, pa + (r + 1) * ca, po + r * (ca + cb));
      std::copy(pb + r * cb, pb + (r + 1) * cb, po + r * (ca + cb) + ca);
    }
  });
  record(tape, out, {&a, &b}, [a, b, rows, ca, cb](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a), pb = tp.node_of(b);
    dispatch(a.dtype(), [&]<class T>() {
      const T* g = ptr<T>(go);
      if (pa >= 0) {
        T* ga = ptr<T>(tp.grad_slot(pa));
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < ca; ++c) ga[r * ca + c] += g[r * (ca + cb) + c];
      }
      if (pb >= 0) {
        T* gb = ptr<T>(tp.grad_slot(pb));
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < cb; ++c) gb[r * cb + c] += g[r * (ca + cb) + ca + c];
      }
    });
  });
  return out;
}

Tensor concat_rows(Tape* tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no inputs");
  const int64_t cols = row_width(parts[0]);
  int64_t rows = 0;
  for (const Tensor& p : parts) {
    same_dtype(parts[0], p, "concat_rows");
    if (row_width(p) != cols) throw ConfigError("concat_rows: column mismatch");
    rows += leading_rows(p);
  }
  Tensor out = Tensor::zeros({rows, cols}, parts[0].dtype());
  int64_t off = 0;
  std::vector<int64_t> offsets;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    dispatch(p.dtype(), [&]<class T>() {
      std::copy(ptr<T>(p), ptr<T>(p) + p.size(), ptr<T>(out) + off * cols);
    });
    off += leading_rows(p);
  }
  if (tape) {
    bool any = false;
    for (const Tensor& p : parts)
      if (tape->owns(p)) any = true;
    if (any) {
      std::vector<Tensor> saved(parts.begin(), parts.end());
      Tape::Node n;
      for (const Tensor& p : parts) n.parents.push_back(tape->node_of(p));
      n.out_shape = out.shape();
      n.out_dtype = out.dtype();
      n.backward = [saved = std::move(saved), offsets, cols](Tape& tp, int32_t self) {
        const Tensor& go = tp.grad_slot(self);
        for (size_t i = 0; i < saved.size(); ++i) {
          int32_t p = tp.node_of(saved[i]);
          if (p < 0) continue;
          Tensor& gp = tp.grad_slot(p);
          dispatch(go.dtype(), [&]<class T>() {
            const T* g = ptr<T>(go) + offsets[i] * cols;
            T* gpp = ptr<T>(gp);
            for (int64_t j = 0; j < gp.size(); ++j) gpp[j] += g[j];
          });
        }
      };
      tape->bind(out, tape->emit(std::move(n)));
    }
  }
  return out;
}

Tensor pad_rows(Tape* tape, const Tensor& a, int64_t len) {
  const int64_t rows = leading_rows(a), cols = row_width(a);
  if (len < rows) throw ConfigError("pad_rows: target shorter than input");
  std::vector<int64_t> out_shape = a.shape();
  out_shape[0] = len;
  Tensor out = Tensor::zeros(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<class T>() { std::copy(ptr<T>(a), ptr<T>(a) + a.size(), ptr<T>(out)); });
  record(tape, out, {&a}, [a, rows, cols](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a);
    if (pa < 0) return;
    Tensor& ga = tp.grad_slot(pa);
    dispatch(a.dtype(), [&]<class T>() {
      const T* g = ptr<T>(go);
      T* gp = ptr<T>(ga);
      for (int64_t i = 0; i < rows * cols; ++i) gp[i] += g[i];
    });
  });
  return out;
}

Tensor slice_cols(Tape* tape, const Tensor& a, int64_t begin, int64_t end) {
  if (a.ndim() != 2) throw ConfigError("slice_cols: needs 2-D input");
  const int64_t rows = a.dim(0), cols = a.dim(1);
  if (begin < 0 || end > cols || begin > end) throw ConfigError("slice_cols: bad range");
  const int64_t w = end - begin;
  Tensor out = Tensor::zeros({rows, w}, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = ptr<T>(a);
    T* po = ptr<T>(out);
    for (int64_t r = 0; r < rows; ++r)
      std::copy(pa + r * cols + begin, pa + r * cols + end, po + r * w);
  });
  record(tape, out, {&a}, [a, rows, cols, begin, w](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a);
    if (pa < 0) return;
    Tensor& ga = tp.grad_slot(pa);
    dispatch(a.dtype(), [&]<class T>() {
      const T* g = ptr<T>(go);
      T* gp = ptr<T>(ga);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < w; ++c) gp[r * cols + begin + c] += g[r * w + c];
    });
  });
  return out;
}

Tensor slice_rows(Tape* tape, const Tensor& a, int64_t begin, int64_t end) {
  const int64_t rows = leading_rows(a), cols = row_width(a);
  if (begin < 0 || end > rows || begin > end) throw ConfigError("slice_rows: bad range");
  std::vector<int64_t> out_shape = a.shape();
  out_shape[0] = end - begin;
  Tensor out = Tensor::zeros(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    std::copy(ptr<T>(a) + begin * cols, ptr<T>(a) + end * cols, ptr<T>(out));
  });
  record(tape, out, {&a}, [a, cols, begin, end](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a);
    if (pa < 0) return;
    Tensor& ga = tp.grad_slot(pa);
    dispatch(a.dtype(), [&]<class T>() {
      const T* g = ptr<T>(go);
      T* gp = ptr<T>(ga) + begin * cols;
      for (int64_t i = 0; i < (end - begin) * cols; ++i) gp[i] += g[i];
    });
  });
  return out;
}

Tensor reshape(Tape* tape, const Tensor& a, std::vector<int64_t> shape) {
  if (shape_size(shape) != a.size())
    throw ConfigError("reshape: size mismatch " + shape_str(a.shape()) + " -> " +
                      shape_str(shape));
  Tensor out = OpAccess::alias(a, std::move(shape));
  record(tape, out, {&a}, [a](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a);
    if (pa < 0) return;
    accumulate(tp, pa, go);  // same element order
  });
  return out;
}

// ---- indexed ops -----------------------------------------------------------

Tensor indexed_select(Tape* tape, const Tensor& a, const IndexVec& rows) {
  check_rows_in_bounds(rows, leading_rows(a), "indexed_select");
  const int64_t cols = row_width(a);
  std::vector<int64_t> out_shape = a.shape();
  out_shape[0] = static_cast<int64_t>(rows.size());
  Tensor out = Tensor::zeros(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = ptr<T>(a);
    T* po = ptr<T>(out);
    for (size_t i = 0; i < rows.size(); ++i)
      std::copy(pa + rows[i] * cols, pa + (rows[i] + 1) * cols,
                po + static_cast<int64_t>(i) * cols);
  });
  record(tape, out, {&a}, [a, rows, cols](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a);
    if (pa < 0) return;
    Tensor& ga = tp.grad_slot(pa);
    dispatch(a.dtype(), [&]<class T>() {
      const T* g = ptr<T>(go);
      T* gp = ptr<T>(ga);
      for (size_t i = 0; i < rows.size(); ++i)
        for (int64_t c = 0; c < cols; ++c)
          gp[rows[i] * cols + c] += g[static_cast<int64_t>(i) * cols + c];
    });
  });
  return out;
}

Tensor indexed_select(Tape* tape, const Tensor& a, const IndexVec& rows, const IndexVec& cols) {
  if (a.ndim() != 2) throw ConfigError("indexed_select: (rows,cols) needs 2-D input");
  if (rows.size() != cols.size()) throw ConfigError("indexed_select: rows/cols length mismatch");
  check_rows_in_bounds(rows, a.dim(0), "indexed_select");
  check_rows_in_bounds(cols, a.dim(1), "indexed_select");
  const int64_t width = a.dim(1);
  Tensor out = Tensor::zeros({static_cast<int64_t>(rows.size())}, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = ptr<T>(a);
    T* po = ptr<T>(out);
    for (size_t i = 0; i < rows.size(); ++i) po[i] = pa[rows[i] * width + cols[i]];
  });
  record(tape, out, {&a}, [a, rows, cols, width](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a);
    if (pa < 0) return;
    Tensor& ga = tp.grad_slot(pa);
    dispatch(a.dtype(), [&]<class T>() {
      const T* g = ptr<T>(go);
      T* gp = ptr<T>(ga);
      for (size_t i = 0; i < rows.size(); ++i) gp[rows[i] * width + cols[i]] += g[i];
    });
  });
  return out;
}

namespace {

void check_no_duplicates(const IndexVec& rows, const IndexVec* cols, int64_t stride,
                         const char* op) {
  // Strictly increasing targets (the common case) need no hashing.
  bool increasing = true;
  for (size_t i = 1; i < rows.size() && increasing; ++i) {
    int64_t prev = cols ? rows[i - 1] * stride + (*cols)[i - 1] : rows[i - 1];
    int64_t cur = cols ? rows[i] * stride + (*cols)[i] : rows[i];
    increasing = cur > prev;
  }
  if (increasing) return;
  std::unordered_set<int64_t> seen;
  seen.reserve(rows.size() * 2);
  for (size_t i = 0; i < rows.size(); ++i) {
    int64_t key = cols ? rows[i] * stride + (*cols)[i] : rows[i];
    if (!seen.insert(key).second)
      throw ConfigError(std::string(op) + ": duplicate target index " + std::to_string(rows[i]));
  }
}

}  // namespace

Tensor indexed_assign(Tape* tape, Tensor a, const IndexVec& rows, const Tensor& v) {
  same_dtype(a, v, "indexed_assign");
  check_rows_in_bounds(rows, leading_rows(a), "indexed_assign");
  check_no_duplicates(rows, nullptr, 0, "indexed_assign");
  const int64_t cols = row_width(a);
  if (leading_rows(v) != static_cast<int64_t>(rows.size()) || row_width(v) != cols)
    throw ConfigError("indexed_assign: value shape " + shape_str(v.shape()) +
                      " does not cover targets");
  const bool in_place = tape == nullptr && a.unique();
  Tensor out = in_place ? std::move(a) : a.clone();
  dispatch(out.dtype(), [&]<class T>() {
    const T* pv = ptr<T>(v);
    T* po = ptr<T>(out);
    for (size_t i = 0; i < rows.size(); ++i)
      std::copy(pv + static_cast<int64_t>(i) * cols, pv + static_cast<int64_t>(i + 1) * cols,
                po + rows[i] * cols);
  });
  if (tape)
    record(tape, out, {&a, &v}, [a, v, rows, cols](Tape& tp, int32_t self) {
      const Tensor& go = tp.grad_slot(self);
      int32_t pa = tp.node_of(a), pv = tp.node_of(v);
      dispatch(go.dtype(), [&]<class T>() {
        const T* g = ptr<T>(go);
        if (pa >= 0) {
          // Unselected slots of a pass through; selected slots were replaced.
          Tensor& ga = tp.grad_slot(pa);
          T* gp = ptr<T>(ga);
          std::vector<char> hit(static_cast<size_t>(a.shape()[0]), 0);
          for (int64_t r : rows) hit[static_cast<size_t>(r)] = 1;
          for (int64_t r = 0; r < a.shape()[0]; ++r) {
            if (hit[static_cast<size_t>(r)]) continue;
            for (int64_t c = 0; c < cols; ++c) gp[r * cols + c] += g[r * cols + c];
          }
        }
        if (pv >= 0) {
          Tensor& gv = tp.grad_slot(pv);
          T* gp = ptr<T>(gv);
          for (size_t i = 0; i < rows.size(); ++i)
            for (int64_t c = 0; c < cols; ++c)
              gp[static_cast<int64_t>(i) * cols + c] += g[rows[i] * cols + c];
        }
      });
    });
  return out;
}

Tensor indexed_assign(Tape* tape, Tensor a, const IndexVec& rows, const IndexVec& cols,
                      const Tensor& v) {
  same_dtype(a, v, "indexed_assign");
  if (a.ndim() != 2) throw ConfigError("indexed_assign: (rows,cols) needs 2-D input");
  if (rows.size() != cols.size() || v.size() != static_cast<int64_t>(rows.size()))
    throw ConfigError("indexed_assign: rows/cols/value length mismatch");
  check_rows_in_bounds(rows, a.dim(0), "indexed_assign");
  check_rows_in_bounds(cols, a.dim(1), "indexed_assign");
  check_no_duplicates(rows, &cols, a.dim(1), "indexed_assign");
  const int64_t width = a.dim(1);
  const bool in_place = tape == nullptr && a.unique();
  Tensor out = in_place ? std::move(a) : a.clone();
  dispatch(out.dtype(), [&]<class T>() {
    const T* pv = ptr<T>(v);
    T* po = ptr<T>(out);
    for (size_t i = 0; i < rows.size(); ++i) po[rows[i] * width + cols[i]] = pv[i];
  });
  if (tape)
    record(tape, out, {&a, &v}, [a, v, rows, cols, width](Tape& tp, int32_t self) {
      const Tensor& go = tp.grad_slot(self);
      int32_t pa = tp.node_of(a), pv = tp.node_of(v);
      dispatch(go.dtype(), [&]<class T>() {
        const T* g = ptr<T>(go);
        if (pa >= 0) {
          Tensor& ga = tp.grad_slot(pa);
          T* gp = ptr<T>(ga);
          std::unordered_set<int64_t> hit;
          for (size_t i = 0; i < rows.size(); ++i) hit.insert(rows[i] * width + cols[i]);
          for (int64_t i = 0; i < go.size(); ++i)
            if (!hit.count(i)) gp[i] += g[i];
        }
        if (pv >= 0) {
          Tensor& gv = tp.grad_slot(pv);
          T* gp = ptr<T>(gv);
          for (size_t i = 0; i < rows.size(); ++i) gp[i] += g[rows[i] * width + cols[i]];
        }
      });
    });
  return out;
}

Tensor sum(Tape* tape, const Tensor& a) {
  Tensor out = Tensor::zeros({1}, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    const T* pa = ptr<T>(a);
    // Ordered reduction keeps 64-bit results independent of batch layout.
    double acc = 0;
    for (int64_t i = 0; i < a.size(); ++i) acc += static_cast<double>(pa[i]);
    ptr<T>(out)[0] = static_cast<T>(acc);
  });
  record(tape, out, {&a}, [a](Tape& tp, int32_t self) {
    const Tensor& go = tp.grad_slot(self);
    int32_t pa = tp.node_of(a);
    if (pa < 0) return;
    Tensor& ga = tp.grad_slot(pa);
    dispatch(a.dtype(), [&]<class T>() {
      T g = ptr<T>(go)[0];
      T* gp = ptr<T>(ga);
      for (int64_t i = 0; i < ga.size(); ++i) gp[i] += g;
    });
  });
  return out;
}

}  // namespace rnng

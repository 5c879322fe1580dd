// Dense row-major tensors with reverse-mode differentiation on a per-thread
// tape. Templated on the scalar type: float for training, double when
// gradients are verified against finite differences.
//
// A Tensor is a shared handle to its storage; primitives below build new
// tensors and, while a Tape is active and some operand requires gradients,
// record a backward rule. Tape::backward walks the recorded list in reverse,
// accumulating into .grad additively so fan-out just works.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sarc/rng.hpp"

namespace sarc {

using Shape = std::vector<int>;

inline long numel_of(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return s.empty() ? 0 : n;
}

inline std::string shape_str(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out.empty() ? "<empty>" : out;
}

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // sized like values only while gradients are tracked
  bool requires_grad = false;
  // Registration on the tape that last touched this tensor.
  const void* tape_tag = nullptr;
  std::uint64_t tape_epoch = 0;
  long node_id = -1;
};

template <typename T>
class Tape;

template <typename T>
class Tensor {
 public:
  Tensor() : d_(std::make_shared<TensorData<T>>()) {}

  explicit Tensor(Shape shape, T fill = T(0)) : d_(std::make_shared<TensorData<T>>()) {
    check_shape(shape);
    d_->shape = std::move(shape);
    d_->values.assign(numel_of(d_->shape), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : d_(std::make_shared<TensorData<T>>()) {
    check_shape(shape);
    if (static_cast<long>(values.size()) != numel_of(shape))
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + shape_str(shape));
    d_->shape = std::move(shape);
    d_->values = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor({1, 1}, std::vector<T>{v}); }
  static Tensor row(std::vector<T> v) {
    int n = static_cast<int>(v.size());
    return Tensor({1, n}, std::move(v));
  }

  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int rows() const { return rank() == 0 ? 0 : (rank() == 1 ? 1 : d_->shape[0]); }
  int cols() const { return rank() == 0 ? 0 : (rank() == 1 ? d_->shape[0] : d_->shape[1]); }
  long numel() const { return static_cast<long>(d_->values.size()); }
  bool is_scalar() const { return numel() == 1; }

  T value() const {
    if (!is_scalar()) throw std::invalid_argument("value(): tensor is not scalar, shape " + shape_str(shape()));
    return d_->values[0];
  }

  T& at(int i, int j) { return d_->values[static_cast<long>(i) * cols() + j]; }
  const T& at(int i, int j) const { return d_->values[static_cast<long>(i) * cols() + j]; }

  std::vector<T>& values() { return d_->values; }
  const std::vector<T>& values() const { return d_->values; }
  const std::vector<T>& grad() const { return d_->grad; }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    d_->requires_grad = b;
    if (!b) d_->grad.clear();
    return *this;
  }

  void zero_grad() {
    if (d_->requires_grad) d_->grad.assign(d_->values.size(), T(0));
  }

  // Gradient entry, zero when no gradient has been accumulated.
  T grad_at(long i) const { return i < static_cast<long>(d_->grad.size()) ? d_->grad[i] : T(0); }

  long node_id() const { return d_->node_id; }
  std::shared_ptr<TensorData<T>> data() const { return d_; }

  Tensor clone() const {
    Tensor c(d_->shape, d_->values);
    c.d_->requires_grad = d_->requires_grad;
    return c;
  }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 2)
      throw std::invalid_argument("tensor: rank must be 1 or 2, got " + shape_str(shape));
    for (int d : shape)
      if (d < 0) throw std::invalid_argument("tensor: negative dimension in " + shape_str(shape));
  }

  std::shared_ptr<TensorData<T>> d_;
};

template <typename T>
class Tape {
 public:
  using DataPtr = std::shared_ptr<TensorData<T>>;

  struct Op {
    std::vector<DataPtr> in;
    DataPtr out;
    void (*backward)(Op&);
    std::vector<T> saved;    // activations a backward rule needs
    std::vector<int> idx;    // integer payload (gather indices, split points)
    T a = T(0);              // scalar payload
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& active_slot() {
    thread_local Tape* t = nullptr;
    return t;
  }
  static Tape* active() { return active_slot(); }

  // RAII activation; nests, restoring the previous tape on exit.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_slot()) { active_slot() = &t; }
    ~Scope() { active_slot() = prev_; }
    Scope(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  Op& record(std::vector<DataPtr> in, DataPtr out, void (*bw)(Op&)) {
    for (auto& p : in) register_node(*p);
    register_node(*out);
    ops_.push_back(Op{std::move(in), std::move(out), bw, {}, {}, T(0)});
    return ops_.back();
  }

  void backward(const Tensor<T>& loss) {
    if (!loss.is_scalar())
      throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (ops_.empty()) throw std::runtime_error("backward: tape is empty");
    auto ld = loss.data();
    if (ld->tape_tag != this || ld->tape_epoch != epoch_ || !ld->requires_grad)
      throw std::invalid_argument("backward: loss was not produced on the active tape");
    for (auto& op : ops_) {
      for (auto& p : op.in)
        if (p->requires_grad) p->grad.assign(p->values.size(), T(0));
      if (op.out->requires_grad) op.out->grad.assign(op.out->values.size(), T(0));
    }
    ld->grad.assign(1, T(1));
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward(*it);
  }

  void clear() {
    ops_.clear();
    ++epoch_;
    next_id_ = 0;
  }

  std::size_t size() const { return ops_.size(); }
  const std::vector<Op>& ops() const { return ops_; }

 private:
  void register_node(TensorData<T>& d) {
    if (d.tape_tag == this && d.tape_epoch == epoch_) return;
    d.tape_tag = this;
    d.tape_epoch = epoch_;
    d.node_id = next_id_++;
  }

  std::vector<Op> ops_;
  std::uint64_t epoch_ = 1;
  long next_id_ = 0;
};

namespace detail {

template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> ins) {
  if (!Tape<T>::active()) return false;
  for (const Tensor<T>* p : ins)
    if (p->requires_grad()) return true;
  return false;
}

template <typename T>
typename Tape<T>::Op* record_if(bool rec, std::initializer_list<Tensor<T>> ins, Tensor<T>& out,
                                void (*bw)(typename Tape<T>::Op&)) {
  if (!rec) return nullptr;
  out.set_requires_grad(true);
  std::vector<typename Tape<T>::DataPtr> in;
  in.reserve(ins.size());
  for (const Tensor<T>& t : ins) in.push_back(t.data());
  return &Tape<T>::active()->record(std::move(in), out.data(), bw);
}

template <typename T>
void accum(TensorData<T>& d, long i, T v) {
  if (d.requires_grad) d.grad[i] += v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
void matmul_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  auto& B = *op.in[1];
  auto& O = *op.out;
  int m = op.idx[0], k = op.idx[1], n = op.idx[2];
  const T* go = O.grad.data();
  if (A.requires_grad) {
    // gA += gO * B^T
    T* ga = A.grad.data();
    const T* bv = B.values.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        T g = go[i * n + j];
        if (g == T(0)) continue;
        const T* brow = bv;  // B[kk][j] walk
        for (int kk = 0; kk < k; ++kk) ga[i * k + kk] += g * brow[kk * n + j];
      }
  }
  if (B.requires_grad) {
    // gB += A^T * gO
    T* gb = B.grad.data();
    const T* av = A.values.data();
    for (int i = 0; i < m; ++i)
      for (int kk = 0; kk < k; ++kk) {
        T a = av[i * k + kk];
        if (a == T(0)) continue;
        for (int j = 0; j < n; ++j) gb[kk * n + j] += a * go[i * n + j];
      }
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> out({m, n});
  const T* av = a.values().data();
  const T* bv = b.values().data();
  T* ov = out.values().data();
  for (int i = 0; i < m; ++i) {
    const T* arow = av + static_cast<long>(i) * k;
    T* orow = ov + static_cast<long>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      T av_ik = arow[kk];
      if (av_ik == T(0)) continue;
      const T* brow = bv + static_cast<long>(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += av_ik * brow[j];
    }
  }
  if (auto* op = detail::record_if(detail::recording<T>({&a, &b}), {a, b}, out, &matmul_bw<T>))
    op->idx = {m, k, n};
  return out;
}

// ---------------------------------------------------------------------------
// elementwise add / sub / mul with scalar and row broadcasting
// ---------------------------------------------------------------------------

namespace detail {

enum BroadcastKind { kSame = 0, kScalarRhs = 1, kRowRhs = 2, kScalarLhs = 3 };

template <typename T>
int broadcast_kind(const Tensor<T>& a, const Tensor<T>& b, const char* name, bool allow_lhs_scalar) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return kSame;
  if (b.is_scalar()) return kScalarRhs;
  if (b.rows() == 1 && b.cols() == a.cols() && a.rows() > 1) return kRowRhs;
  if (allow_lhs_scalar && a.is_scalar()) return kScalarLhs;
  throw std::invalid_argument(std::string(name) + ": shape mismatch: " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
}

}  // namespace detail

template <typename T>
void add_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  auto& B = *op.in[1];
  const auto& go = op.out->grad;
  int kind = op.idx[0];
  T sign = op.a;
  if (A.requires_grad)
    for (std::size_t i = 0; i < go.size(); ++i) A.grad[i] += go[i];
  if (B.requires_grad) {
    if (kind == detail::kSame) {
      for (std::size_t i = 0; i < go.size(); ++i) B.grad[i] += sign * go[i];
    } else if (kind == detail::kScalarRhs) {
      T s = T(0);
      for (T g : go) s += g;
      B.grad[0] += sign * s;
    } else {  // row broadcast
      int cols = static_cast<int>(B.values.size());
      int rows = static_cast<int>(go.size()) / cols;
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) B.grad[j] += sign * go[i * cols + j];
    }
  }
}

namespace detail {

template <typename T>
Tensor<T> add_like(const Tensor<T>& a, const Tensor<T>& b, T sign, const char* name) {
  int kind = broadcast_kind(a, b, name, false);
  Tensor<T> out(Shape{a.rows(), a.cols()});
  const T* av = a.values().data();
  const T* bv = b.values().data();
  T* ov = out.values().data();
  long n = a.numel();
  int cols = a.cols();
  if (kind == kSame) {
    for (long i = 0; i < n; ++i) ov[i] = av[i] + sign * bv[i];
  } else if (kind == kScalarRhs) {
    T s = sign * bv[0];
    for (long i = 0; i < n; ++i) ov[i] = av[i] + s;
  } else {
    for (long i = 0; i < n; ++i) ov[i] = av[i] + sign * bv[i % cols];
  }
  if (auto* op = record_if(recording<T>({&a, &b}), {a, b}, out, &add_bw<T>)) {
    op->idx = {kind};
    op->a = sign;
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::add_like(a, b, T(1), "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::add_like(a, b, T(-1), "sub");
}

template <typename T>
void mul_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  auto& B = *op.in[1];
  const auto& go = op.out->grad;
  int kind = op.idx[0];
  const auto& av = A.values;
  const auto& bv = B.values;
  if (kind == detail::kSame) {
    for (std::size_t i = 0; i < go.size(); ++i) {
      detail::accum(A, i, go[i] * bv[i]);
      detail::accum(B, i, go[i] * av[i]);
    }
  } else if (kind == detail::kScalarRhs) {
    T s = T(0);
    for (std::size_t i = 0; i < go.size(); ++i) {
      detail::accum(A, i, go[i] * bv[0]);
      s += go[i] * av[i];
    }
    detail::accum(B, 0, s);
  } else {  // scalar lhs
    T s = T(0);
    for (std::size_t i = 0; i < go.size(); ++i) {
      detail::accum(B, i, go[i] * av[0]);
      s += go[i] * bv[i];
    }
    detail::accum(A, 0, s);
  }
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  int kind = detail::broadcast_kind(a, b, "mul", true);
  if (kind == detail::kRowRhs)
    throw std::invalid_argument("mul: shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const Tensor<T>& big = (kind == detail::kScalarLhs) ? b : a;
  Tensor<T> out(Shape{big.rows(), big.cols()});
  const T* av = a.values().data();
  const T* bv = b.values().data();
  T* ov = out.values().data();
  long n = big.numel();
  if (kind == detail::kSame) {
    for (long i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
  } else if (kind == detail::kScalarRhs) {
    for (long i = 0; i < n; ++i) ov[i] = av[i] * bv[0];
  } else {
    for (long i = 0; i < n; ++i) ov[i] = av[0] * bv[i];
  }
  if (auto* op = detail::record_if(detail::recording<T>({&a, &b}), {a, b}, out, &mul_bw<T>)) op->idx = {kind};
  return out;
}

// ---------------------------------------------------------------------------
// scale by a compile-time constant factor
// ---------------------------------------------------------------------------

template <typename T>
void scale_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  const auto& go = op.out->grad;
  for (std::size_t i = 0; i < go.size(); ++i) A.grad[i] += op.a * go[i];
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (long i = 0; i < a.numel(); ++i) out.values()[i] = factor * a.values()[i];
  if (auto* op = detail::record_if(detail::recording<T>({&a}), {a}, out, &scale_bw<T>)) op->a = factor;
  return out;
}

// ---------------------------------------------------------------------------
// pointwise nonlinearities
// ---------------------------------------------------------------------------

template <typename T>
void sigmoid_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  const auto& y = op.out->values;
  const auto& go = op.out->grad;
  for (std::size_t i = 0; i < go.size(); ++i) A.grad[i] += go[i] * y[i] * (T(1) - y[i]);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (long i = 0; i < a.numel(); ++i) {
    T x = a.values()[i];
    out.values()[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  }
  detail::record_if(detail::recording<T>({&a}), {a}, out, &sigmoid_bw<T>);
  return out;
}

template <typename T>
void tanh_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  const auto& y = op.out->values;
  const auto& go = op.out->grad;
  for (std::size_t i = 0; i < go.size(); ++i) A.grad[i] += go[i] * (T(1) - y[i] * y[i]);
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (long i = 0; i < a.numel(); ++i) out.values()[i] = std::tanh(a.values()[i]);
  detail::record_if(detail::recording<T>({&a}), {a}, out, &tanh_bw<T>);
  return out;
}

template <typename T>
void relu_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  const auto& x = A.values;
  const auto& go = op.out->grad;
  for (std::size_t i = 0; i < go.size(); ++i)
    if (x[i] > T(0)) A.grad[i] += go[i];
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (long i = 0; i < a.numel(); ++i) out.values()[i] = a.values()[i] > T(0) ? a.values()[i] : T(0);
  detail::record_if(detail::recording<T>({&a}), {a}, out, &relu_bw<T>);
  return out;
}

template <typename T>
void exp_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  const auto& y = op.out->values;
  const auto& go = op.out->grad;
  for (std::size_t i = 0; i < go.size(); ++i) A.grad[i] += go[i] * y[i];
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (long i = 0; i < a.numel(); ++i) out.values()[i] = std::exp(a.values()[i]);
  detail::record_if(detail::recording<T>({&a}), {a}, out, &exp_bw<T>);
  return out;
}

inline constexpr double kLogClamp = 1e-12;

template <typename T>
void log_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  const auto& x = A.values;
  const auto& go = op.out->grad;
  for (std::size_t i = 0; i < go.size(); ++i)
    if (x[i] > T(kLogClamp)) A.grad[i] += go[i] / x[i];
}

// log(max(x, 1e-12)); the clamp keeps vanishing probabilities finite.
template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (long i = 0; i < a.numel(); ++i)
    out.values()[i] = std::log(std::max(a.values()[i], T(kLogClamp)));
  detail::record_if(detail::recording<T>({&a}), {a}, out, &log_bw<T>);
  return out;
}

// ---------------------------------------------------------------------------
// row-wise softmax and L2 normalization
// ---------------------------------------------------------------------------

template <typename T>
void softmax_rows_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  const auto& y = op.out->values;
  const auto& go = op.out->grad;
  int rows = op.idx[0], cols = op.idx[1];
  for (int i = 0; i < rows; ++i) {
    const T* yr = y.data() + static_cast<long>(i) * cols;
    const T* gr = go.data() + static_cast<long>(i) * cols;
    T dot = T(0);
    for (int j = 0; j < cols; ++j) dot += yr[j] * gr[j];
    for (int j = 0; j < cols; ++j) A.grad[static_cast<long>(i) * cols + j] += yr[j] * (gr[j] - dot);
  }
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  int rows = a.rows(), cols = a.cols();
  if (cols == 0) throw std::invalid_argument("softmax_rows: empty row, shape " + shape_str(a.shape()));
  Tensor<T> out(Shape{rows, cols});
  for (int i = 0; i < rows; ++i) {
    const T* x = a.values().data() + static_cast<long>(i) * cols;
    T* y = out.values().data() + static_cast<long>(i) * cols;
    T mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    T sum = T(0);
    for (int j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < cols; ++j) y[j] /= sum;
  }
  if (auto* op = detail::record_if(detail::recording<T>({&a}), {a}, out, &softmax_rows_bw<T>))
    op->idx = {rows, cols};
  return out;
}

inline constexpr double kNormEps = 1e-12;

template <typename T>
void l2_normalize_rows_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  const auto& x = A.values;
  const auto& go = op.out->grad;
  int rows = op.idx[0], cols = op.idx[1];
  for (int i = 0; i < rows; ++i) {
    T r = op.saved[i];
    T denom = r + T(kNormEps);
    const T* xr = x.data() + static_cast<long>(i) * cols;
    const T* gr = go.data() + static_cast<long>(i) * cols;
    T dot = T(0);
    for (int j = 0; j < cols; ++j) dot += gr[j] * xr[j];
    for (int j = 0; j < cols; ++j) {
      T g = gr[j] / denom;
      if (r > T(0)) g -= dot * xr[j] / (r * denom * denom);
      A.grad[static_cast<long>(i) * cols + j] += g;
    }
  }
}

// Rows divided by (norm + 1e-12); zero rows stay zero.
template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& a) {
  int rows = a.rows(), cols = a.cols();
  if (cols == 0) throw std::invalid_argument("l2_normalize_rows: empty row, shape " + shape_str(a.shape()));
  Tensor<T> out(Shape{rows, cols});
  std::vector<T> norms(rows);
  for (int i = 0; i < rows; ++i) {
    const T* x = a.values().data() + static_cast<long>(i) * cols;
    T* y = out.values().data() + static_cast<long>(i) * cols;
    T ss = T(0);
    for (int j = 0; j < cols; ++j) ss += x[j] * x[j];
    T r = std::sqrt(ss);
    norms[i] = r;
    T denom = r + T(kNormEps);
    for (int j = 0; j < cols; ++j) y[j] = x[j] / denom;
  }
  if (auto* op = detail::record_if(detail::recording<T>({&a}), {a}, out, &l2_normalize_rows_bw<T>)) {
    op->idx = {rows, cols};
    op->saved = std::move(norms);
  }
  return out;
}

// ---------------------------------------------------------------------------
// concatenation, reductions, transpose, reshape
// ---------------------------------------------------------------------------

template <typename T>
void concat_cols_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  auto& B = *op.in[1];
  const auto& go = op.out->grad;
  int rows = op.idx[0], ca = op.idx[1], cb = op.idx[2];
  int cols = ca + cb;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < ca; ++j) detail::accum(A, static_cast<long>(i) * ca + j, go[static_cast<long>(i) * cols + j]);
    for (int j = 0; j < cb; ++j)
      detail::accum(B, static_cast<long>(i) * cb + j, go[static_cast<long>(i) * cols + ca + j]);
  }
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("concat_cols: row counts differ: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  int rows = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor<T> out(Shape{rows, ca + cb});
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < ca; ++j) out.at(i, j) = a.at(i, j);
    for (int j = 0; j < cb; ++j) out.at(i, ca + j) = b.at(i, j);
  }
  if (auto* op = detail::record_if(detail::recording<T>({&a, &b}), {a, b}, out, &concat_cols_bw<T>))
    op->idx = {rows, ca, cb};
  return out;
}

template <typename T>
void concat_rows_bw(typename Tape<T>::Op& op) {
  const auto& go = op.out->grad;
  int cols = op.idx[0];
  long row0 = 0;
  for (auto& in : op.in) {
    long r = static_cast<long>(in->values.size()) / cols;
    if (in->requires_grad)
      for (long i = 0; i < r * cols; ++i) in->grad[i] += go[row0 * cols + i];
    row0 += r;
  }
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no tensors given");
  int cols = parts[0].cols();
  int rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols)
      throw std::invalid_argument("concat_rows: column counts differ: " + shape_str(parts[0].shape()) + " vs " +
                                  shape_str(p.shape()));
    rows += p.rows();
  }
  Tensor<T> out(Shape{rows, cols});
  long at = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + at);
    at += p.numel();
  }
  bool rec = false;
  if (Tape<T>::active())
    for (const auto& p : parts)
      if (p.requires_grad()) rec = true;
  if (rec) {
    out.set_requires_grad(true);
    std::vector<typename Tape<T>::DataPtr> in;
    for (const auto& p : parts) in.push_back(p.data());
    auto& op = Tape<T>::active()->record(std::move(in), out.data(), &concat_rows_bw<T>);
    op.idx = {cols};
  }
  return out;
}

template <typename T>
void mean_rows_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  const auto& go = op.out->grad;
  int rows = op.idx[0], cols = op.idx[1];
  T inv = T(1) / T(rows);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) A.grad[static_cast<long>(i) * cols + j] += go[j] * inv;
}

// Column means over all rows: (rows x cols) -> (1 x cols).
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  int rows = a.rows(), cols = a.cols();
  if (rows == 0) throw std::invalid_argument("mean_rows: no rows, shape " + shape_str(a.shape()));
  Tensor<T> out(Shape{1, cols});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out.values()[j] += a.at(i, j);
  for (int j = 0; j < cols; ++j) out.values()[j] /= T(rows);
  if (auto* op = detail::record_if(detail::recording<T>({&a}), {a}, out, &mean_rows_bw<T>))
    op->idx = {rows, cols};
  return out;
}

template <typename T>
void sum_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  T g = op.out->grad[0];
  for (std::size_t i = 0; i < A.grad.size(); ++i) A.grad[i] += g;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.values()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  detail::record_if(detail::recording<T>({&a}), {a}, out, &sum_bw<T>);
  return out;
}

template <typename T>
void transpose_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  const auto& go = op.out->grad;
  int rows = op.idx[0], cols = op.idx[1];
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) A.grad[static_cast<long>(i) * cols + j] += go[static_cast<long>(j) * rows + i];
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  int rows = a.rows(), cols = a.cols();
  Tensor<T> out(Shape{cols, rows});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out.at(j, i) = a.at(i, j);
  if (auto* op = detail::record_if(detail::recording<T>({&a}), {a}, out, &transpose_bw<T>))
    op->idx = {rows, cols};
  return out;
}

template <typename T>
void reshape_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  const auto& go = op.out->grad;
  for (std::size_t i = 0; i < go.size(); ++i) A.grad[i] += go[i];
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Tensor<T> out(std::move(shape), a.values());
  detail::record_if(detail::recording<T>({&a}), {a}, out, &reshape_bw<T>);
  return out;
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

template <typename T>
void dropout_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  const auto& go = op.out->grad;
  for (std::size_t i = 0; i < go.size(); ++i) A.grad[i] += go[i] * op.saved[i];
}

// Inverted dropout driven by an explicit mask of kept positions.
template <typename T>
Tensor<T> dropout_with_mask(const Tensor<T>& a, const std::vector<char>& kept, T keep_prob) {
  if (static_cast<long>(kept.size()) != a.numel())
    throw std::invalid_argument("dropout: mask has " + std::to_string(kept.size()) + " entries for shape " +
                                shape_str(a.shape()));
  Tensor<T> out(a.shape());
  std::vector<T> mask(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    mask[i] = kept[i] ? T(1) / keep_prob : T(0);
    out.values()[i] = a.values()[i] * mask[i];
  }
  if (auto* op = detail::record_if(detail::recording<T>({&a}), {a}, out, &dropout_bw<T>))
    op->saved = std::move(mask);
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, RunRng& rng, bool train) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!train || rate == 0.0) return a;
  T keep = T(1.0 - rate);
  std::vector<char> kept(a.numel());
  for (long i = 0; i < a.numel(); ++i) kept[i] = rng.uniform() >= rate ? 1 : 0;
  return dropout_with_mask(a, kept, keep);
}

// ---------------------------------------------------------------------------
// embedding-row gather
// ---------------------------------------------------------------------------

template <typename T>
void gather_rows_bw(typename Tape<T>::Op& op) {
  auto& A = *op.in[0];
  const auto& go = op.out->grad;
  int cols = static_cast<int>(A.shape.size() == 1 ? A.shape[0] : A.shape[1]);
  for (std::size_t i = 0; i < op.idx.size(); ++i) {
    long src = static_cast<long>(i) * cols;
    long dst = static_cast<long>(op.idx[i]) * cols;
    for (int j = 0; j < cols; ++j) A.grad[dst + j] += go[src + j];
  }
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& indices) {
  int rows = table.rows(), cols = table.cols();
  Tensor<T> out(Shape{static_cast<int>(indices.size()), cols});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    int r = indices[i];
    if (r < 0 || r >= rows)
      throw std::invalid_argument("gather_rows: index " + std::to_string(r) + " outside table with " +
                                  std::to_string(rows) + " rows");
    std::copy(table.values().begin() + static_cast<long>(r) * cols,
              table.values().begin() + static_cast<long>(r + 1) * cols,
              out.values().begin() + static_cast<long>(i) * cols);
  }
  if (auto* op = detail::record_if(detail::recording<T>({&table}), {table}, out, &gather_rows_bw<T>))
    op->idx = indices;
  return out;
}

// ---------------------------------------------------------------------------
// fused GRU cell (the recurrent hot path; one tape record per step)
// ---------------------------------------------------------------------------

template <typename T>
void gru_cell_bw(typename Tape<T>::Op& op) {
  auto& X = *op.in[0];
  auto& H = *op.in[1];
  auto& Wz = *op.in[2];
  auto& Wr = *op.in[3];
  auto& Wh = *op.in[4];
  auto& Uz = *op.in[5];
  auto& Ur = *op.in[6];
  auto& Uh = *op.in[7];
  auto& Bz = *op.in[8];
  auto& Br = *op.in[9];
  auto& Bh = *op.in[10];
  int di = static_cast<int>(X.values.size());
  int dh = static_cast<int>(H.values.size());
  const T* z = op.saved.data();
  const T* r = z + dh;
  const T* c = r + dh;
  const T* h = H.values.data();
  const T* x = X.values.data();
  const T* go = op.out->grad.data();
  T m = op.a;

  std::vector<T> gaz(dh), gar(dh), gah(dh), gh(dh, T(0)), rh(dh);
  for (int j = 0; j < dh; ++j) {
    T ghn = m * go[j];
    gh[j] += (T(1) - m) * go[j];
    T gz = ghn * (c[j] - h[j]);
    T gc = ghn * z[j];
    gh[j] += ghn * (T(1) - z[j]);
    gah[j] = gc * (T(1) - c[j] * c[j]);
    gaz[j] = gz * z[j] * (T(1) - z[j]);
    rh[j] = r[j] * h[j];
  }
  // through the candidate path: ah = x*Wh + (r.h)*Uh + bh
  std::vector<T> grh(dh, T(0));
  for (int j = 0; j < dh; ++j) {
    T g = gah[j];
    if (Bh.requires_grad) Bh.grad[j] += g;
  }
  if (X.requires_grad || Wh.requires_grad) {
    for (int i = 0; i < di; ++i) {
      T acc = T(0);
      for (int j = 0; j < dh; ++j) {
        if (Wh.requires_grad) Wh.grad[static_cast<long>(i) * dh + j] += x[i] * gah[j];
        acc += gah[j] * Wh.values[static_cast<long>(i) * dh + j];
      }
      if (X.requires_grad) X.grad[i] += acc;
    }
  }
  for (int i = 0; i < dh; ++i) {
    T acc = T(0);
    for (int j = 0; j < dh; ++j) {
      if (Uh.requires_grad) Uh.grad[static_cast<long>(i) * dh + j] += rh[i] * gah[j];
      acc += gah[j] * Uh.values[static_cast<long>(i) * dh + j];
    }
    grh[i] = acc;
  }
  for (int j = 0; j < dh; ++j) {
    T gr = grh[j] * h[j];
    gh[j] += grh[j] * r[j];
    gar[j] = gr * r[j] * (T(1) - r[j]);
  }
  // gate paths: az = x*Wz + h*Uz + bz, ar likewise
  for (int j = 0; j < dh; ++j) {
    if (Bz.requires_grad) Bz.grad[j] += gaz[j];
    if (Br.requires_grad) Br.grad[j] += gar[j];
  }
  if (X.requires_grad || Wz.requires_grad || Wr.requires_grad) {
    for (int i = 0; i < di; ++i) {
      T acc = T(0);
      for (int j = 0; j < dh; ++j) {
        if (Wz.requires_grad) Wz.grad[static_cast<long>(i) * dh + j] += x[i] * gaz[j];
        if (Wr.requires_grad) Wr.grad[static_cast<long>(i) * dh + j] += x[i] * gar[j];
        acc += gaz[j] * Wz.values[static_cast<long>(i) * dh + j] + gar[j] * Wr.values[static_cast<long>(i) * dh + j];
      }
      if (X.requires_grad) X.grad[i] += acc;
    }
  }
  for (int i = 0; i < dh; ++i) {
    T acc = T(0);
    for (int j = 0; j < dh; ++j) {
      if (Uz.requires_grad) Uz.grad[static_cast<long>(i) * dh + j] += h[i] * gaz[j];
      if (Ur.requires_grad) Ur.grad[static_cast<long>(i) * dh + j] += h[i] * gar[j];
      acc += gaz[j] * Uz.values[static_cast<long>(i) * dh + j] + gar[j] * Ur.values[static_cast<long>(i) * dh + j];
    }
    gh[i] += acc;
  }
  if (H.requires_grad)
    for (int j = 0; j < dh; ++j) H.grad[j] += gh[j];
}

// One GRU step. x: 1 x d_in, h_prev: 1 x d_h, gate weights d_in x d_h,
// recurrent weights d_h x d_h, biases 1 x d_h. mask 0 carries h_prev through.
//   z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br)
//   c = tanh(x Wh + (r.h) Uh + bh), h' = (1-z).h + z.c
template <typename T>
Tensor<T> gru_cell(const Tensor<T>& x, const Tensor<T>& h_prev, const Tensor<T>& wz, const Tensor<T>& wr,
                   const Tensor<T>& wh, const Tensor<T>& uz, const Tensor<T>& ur, const Tensor<T>& uh,
                   const Tensor<T>& bz, const Tensor<T>& br, const Tensor<T>& bh, T mask = T(1)) {
  int di = x.cols(), dh = h_prev.cols();
  if (x.rows() != 1 || h_prev.rows() != 1)
    throw std::invalid_argument("gru_cell: x and h_prev must be single rows, got " + shape_str(x.shape()) +
                                " and " + shape_str(h_prev.shape()));
  if (wz.rows() != di || wz.cols() != dh || uz.rows() != dh || uz.cols() != dh)
    throw std::invalid_argument("gru_cell: weight shapes " + shape_str(wz.shape()) + " / " + shape_str(uz.shape()) +
                                " do not match input " + shape_str(x.shape()) + " and state " +
                                shape_str(h_prev.shape()));
  const T* xv = x.values().data();
  const T* hv = h_prev.values().data();
  std::vector<T> pre(3 * static_cast<std::size_t>(dh));
  T* az = pre.data();
  T* ar = az + dh;
  T* ah = ar + dh;
  for (int j = 0; j < dh; ++j) {
    az[j] = bz.values()[j];
    ar[j] = br.values()[j];
    ah[j] = bh.values()[j];
  }
  for (int i = 0; i < di; ++i) {
    T xi = xv[i];
    if (xi == T(0)) continue;
    const T* wzr = wz.values().data() + static_cast<long>(i) * dh;
    const T* wrr = wr.values().data() + static_cast<long>(i) * dh;
    const T* whr = wh.values().data() + static_cast<long>(i) * dh;
    for (int j = 0; j < dh; ++j) {
      az[j] += xi * wzr[j];
      ar[j] += xi * wrr[j];
      ah[j] += xi * whr[j];
    }
  }
  std::vector<T> zrc(3 * static_cast<std::size_t>(dh));
  T* z = zrc.data();
  T* r = z + dh;
  T* c = r + dh;
  for (int i = 0; i < dh; ++i) {
    T hi = hv[i];
    if (hi == T(0)) continue;
    const T* uzr = uz.values().data() + static_cast<long>(i) * dh;
    const T* urr = ur.values().data() + static_cast<long>(i) * dh;
    for (int j = 0; j < dh; ++j) {
      az[j] += hi * uzr[j];
      ar[j] += hi * urr[j];
    }
  }
  auto sig = [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); };
  for (int j = 0; j < dh; ++j) {
    z[j] = sig(az[j]);
    r[j] = sig(ar[j]);
  }
  for (int i = 0; i < dh; ++i) {
    T rh = r[i] * hv[i];
    if (rh == T(0)) continue;
    const T* uhr = uh.values().data() + static_cast<long>(i) * dh;
    for (int j = 0; j < dh; ++j) ah[j] += rh * uhr[j];
  }
  Tensor<T> out(Shape{1, dh});
  for (int j = 0; j < dh; ++j) {
    c[j] = std::tanh(ah[j]);
    T hn = (T(1) - z[j]) * hv[j] + z[j] * c[j];
    out.values()[j] = mask * hn + (T(1) - mask) * hv[j];
  }
  if (auto* op = detail::record_if(
          detail::recording<T>({&x, &h_prev, &wz, &wr, &wh, &uz, &ur, &uh, &bz, &br, &bh}),
          {x, h_prev, wz, wr, wh, uz, ur, uh, bz, br, bh}, out, &gru_cell_bw<T>)) {
    op->saved = std::move(zrc);
    op->a = mask;
  }
  return out;
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// fn must build its scalar result from the tensor it is handed, so the same
// callable serves both the taped pass and the finite-difference evaluations.
template <typename F>
double grad_check(F&& fn, const Tensor<double>& point, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw std::invalid_argument("grad_check: eps " + std::to_string(eps) + " outside [1e-7, 1e-3]");
  Tensor<double> x(point.shape(), point.values());
  x.set_requires_grad(true);
  std::vector<double> analytic(x.numel(), 0.0);
  {
    Tape<double> tape;
    typename Tape<double>::Scope scope(tape);
    Tensor<double> loss = fn(static_cast<const Tensor<double>&>(x));
    if (!loss.is_scalar())
      throw std::invalid_argument("grad_check: fn must be scalar-valued, got shape " + shape_str(loss.shape()));
    if (loss.requires_grad()) {
      tape.backward(loss);
      for (long i = 0; i < x.numel(); ++i) analytic[i] = x.grad_at(i);
    }
  }
  Tensor<double> p(point.shape(), point.values());
  double max_err = 0.0;
  for (long i = 0; i < p.numel(); ++i) {
    double orig = p.values()[i];
    p.values()[i] = orig + eps;
    double fp = fn(static_cast<const Tensor<double>&>(p)).value();
    p.values()[i] = orig - eps;
    double fm = fn(static_cast<const Tensor<double>&>(p)).value();
    p.values()[i] = orig;
    double numeric = (fp - fm) / (2.0 * eps);
    double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace sarc

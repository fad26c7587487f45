// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#include "gsnerf/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "gsnerf/parallel.hpp"

namespace gsnerf::ad {

namespace {

constexpr int64_t kParallelCutoff = 1 << 15;

template <class F>
void eltwise(int64_t n, F&& f) {
  if (n < kParallelCutoff) {
    f(0, n);
  } else {
    parallel_for(n, [&](int64_t b, int64_t e, int) { f(b, e); });
  }
}

inline int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

// C[M,N] = A[M,K] * B[K,N]
template <class T>
void matmul_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  parallel_for(m, [&](int64_t mb, int64_t me, int) {
    for (int64_t i = mb; i < me; ++i) {
      T* crow = c + i * n;
      std::fill(crow, crow + n, T(0));
      const T* arow = a + i * k;
      for (int64_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = b + p * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// C[M,K] += A[M,N] * B[K,N]^T
template <class T>
void matmul_nt_acc(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k) {
  parallel_for(m, [&](int64_t mb, int64_t me, int) {
    for (int64_t i = mb; i < me; ++i) {
      const T* arow = a + i * n;
      T* crow = c + i * k;
      for (int64_t p = 0; p < k; ++p) {
        const T* brow = b + p * n;
        T acc = T(0);
        for (int64_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
        crow[p] += acc;
      }
    }
  });
}

// C[K,N] += A[M,K]^T * B[M,N]. Fixed chunking keeps the summation order
// independent of the worker count.
template <class T>
void matmul_tn_acc(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  constexpr int kChunks = 8;
  std::vector<std::vector<T>> partial(kChunks);
  parallel_chunks(m, kChunks, [&](int64_t mb, int64_t me, int ci) {
    auto& buf = partial[static_cast<size_t>(ci)];
    buf.assign(static_cast<size_t>(k * n), T(0));
    for (int64_t i = mb; i < me; ++i) {
      const T* arow = a + i * k;
      const T* brow = b + i * n;
      for (int64_t p = 0; p < k; ++p) {
        const T av = arow[p];
        T* crow = buf.data() + p * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
  for (auto& buf : partial) {
    if (buf.empty()) continue;
    for (int64_t i = 0; i < k * n; ++i) c[i] += buf[static_cast<size_t>(i)];
  }
}

}  // namespace

template <class T>
struct Graph<T>::Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool needs_grad = false;
  bool grad_alloc = false;
  std::function<void()> bw;
};

template <class T>
Graph<T>::Graph(bool grad_enabled) : grad_enabled_(grad_enabled) {
  nodes_.reserve(256);
}

template <class T>
Graph<T>::~Graph() = default;

template <class T>
void Graph<T>::check_open() const {
  if (finalized_)
    throw std::logic_error("Graph: backward() already ran; record a new forward pass");
}

template <class T>
bool Graph<T>::any_needs_grad(const std::vector<Var>& vs) const {
  for (Var v : vs)
    if (nodes_[static_cast<size_t>(v.id)].needs_grad) return true;
  return false;
}

template <class T>
Var Graph<T>::emit(Tensor<T> value, std::vector<Var> parents, std::function<void()> bw) {
  check_open();
  Node node;
  node.value = std::move(value);
  node.needs_grad = grad_enabled_ && any_needs_grad(parents);
  if (node.needs_grad) node.bw = std::move(bw);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

template <class T>
Var Graph<T>::input(Tensor<T> value, bool needs_grad) {
  check_open();
  Node node;
  node.value = std::move(value);
  node.needs_grad = grad_enabled_ && needs_grad;
  nodes_.push_back(std::move(node));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

template <class T>
const Tensor<T>& Graph<T>::val(Var v) const {
  return nodes_.at(static_cast<size_t>(v.id)).value;
}

template <class T>
Tensor<T>& Graph<T>::grad_buf(Var v) {
  Node& n = nodes_.at(static_cast<size_t>(v.id));
  if (!n.grad_alloc) {
    n.grad = Tensor<T>(n.value.shape);
    n.grad_alloc = true;
  }
  return n.grad;
}

template <class T>
const Tensor<T>& Graph<T>::grad(Var v) const {
  const Node& n = nodes_.at(static_cast<size_t>(v.id));
  if (!n.grad_alloc) throw std::logic_error("Graph: no gradient recorded for node");
  return n.grad;
}

template <class T>
bool Graph<T>::has_grad(Var v) const {
  return nodes_.at(static_cast<size_t>(v.id)).grad_alloc;
}

template <class T>
int64_t Graph<T>::num_nodes() const {
  return static_cast<int64_t>(nodes_.size());
}

template <class T>
Var Graph<T>::custom(Tensor<T> value, const std::vector<Var>& parents,
                     std::function<void()> bw) {
  return emit(std::move(value), parents, std::move(bw));
}

template <class T>
bool Graph<T>::need_grad(Var v) const {
  return nodes_.at(static_cast<size_t>(v.id)).needs_grad;
}

template <class T>
void Graph<T>::backward(Var loss) {
  check_open();
  if (!grad_enabled_) throw std::logic_error("Graph: backward on a no-grad graph");
  Node& ln = nodes_.at(static_cast<size_t>(loss.id));
  if (ln.value.numel() != 1)
    throw std::invalid_argument("Graph: backward target must be scalar");
  grad_buf(loss)[0] = T(1);
  for (int64_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.needs_grad && n.grad_alloc && n.bw) n.bw();
    n.bw = nullptr;  // release closures (and cached tables) as we go
  }
  finalized_ = true;
}

#define GSNERF_NEXT_ID() Var{static_cast<int32_t>(nodes_.size())}

// ---------------------------------------------------------------------------
// elementwise binary

template <class T>
Var Graph<T>::add(Var a, Var b) {
  const Tensor<T>&av = val(a), &bv = val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  eltwise(n, [&](int64_t s, int64_t e) {
    for (int64_t i = s; i < e; ++i) out[i] = av[i] + bv[i];
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a, b}, [this, a, b, o, n]() {
    const Tensor<T>& g = grad(o);
    if (nodes_[size_t(a.id)].needs_grad) {
      Tensor<T>& ga = grad_buf(a);
      eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] += g[i]; });
    }
    if (nodes_[size_t(b.id)].needs_grad) {
      Tensor<T>& gb = grad_buf(b);
      eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) gb[i] += g[i]; });
    }
  });
}

template <class T>
Var Graph<T>::sub(Var a, Var b) {
  const Tensor<T>&av = val(a), &bv = val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("sub: shape mismatch");
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  eltwise(n, [&](int64_t s, int64_t e) {
    for (int64_t i = s; i < e; ++i) out[i] = av[i] - bv[i];
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a, b}, [this, a, b, o, n]() {
    const Tensor<T>& g = grad(o);
    if (nodes_[size_t(a.id)].needs_grad) {
      Tensor<T>& ga = grad_buf(a);
      eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] += g[i]; });
    }
    if (nodes_[size_t(b.id)].needs_grad) {
      Tensor<T>& gb = grad_buf(b);
      eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) gb[i] -= g[i]; });
    }
  });
}

template <class T>
Var Graph<T>::mul(Var a, Var b) {
  const Tensor<T>&av = val(a), &bv = val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("mul: shape mismatch");
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  eltwise(n, [&](int64_t s, int64_t e) {
    for (int64_t i = s; i < e; ++i) out[i] = av[i] * bv[i];
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a, b}, [this, a, b, o, n]() {
    const Tensor<T>& g = grad(o);
    const Tensor<T>&av2 = val(a), &bv2 = val(b);
    if (nodes_[size_t(a.id)].needs_grad) {
      Tensor<T>& ga = grad_buf(a);
      eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] += g[i] * bv2[i]; });
    }
    if (nodes_[size_t(b.id)].needs_grad) {
      Tensor<T>& gb = grad_buf(b);
      eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) gb[i] += g[i] * av2[i]; });
    }
  });
}

template <class T>
Var Graph<T>::div(Var a, Var b) {
  const Tensor<T>&av = val(a), &bv = val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("div: shape mismatch");
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  eltwise(n, [&](int64_t s, int64_t e) {
    for (int64_t i = s; i < e; ++i) out[i] = av[i] / bv[i];
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a, b}, [this, a, b, o, n]() {
    const Tensor<T>& g = grad(o);
    const Tensor<T>&av2 = val(a), &bv2 = val(b);
    if (nodes_[size_t(a.id)].needs_grad) {
      Tensor<T>& ga = grad_buf(a);
      eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] += g[i] / bv2[i]; });
    }
    if (nodes_[size_t(b.id)].needs_grad) {
      Tensor<T>& gb = grad_buf(b);
      eltwise(n, [&](int64_t s, int64_t e) {
        for (int64_t i = s; i < e; ++i) gb[i] -= g[i] * av2[i] / (bv2[i] * bv2[i]);
      });
    }
  });
}

template <class T>
Var Graph<T>::add_const(Var a, const Tensor<T>& c) {
  const Tensor<T>& av = val(a);
  if (!av.same_shape(c)) throw std::invalid_argument("add_const: shape mismatch");
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = av[i] + c[i];
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, n]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& ga = grad_buf(a);
    eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] += g[i]; });
  });
}

template <class T>
Var Graph<T>::sub_const(Var a, const Tensor<T>& c) {
  const Tensor<T>& av = val(a);
  if (!av.same_shape(c)) throw std::invalid_argument("sub_const: shape mismatch");
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = av[i] - c[i];
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, n]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& ga = grad_buf(a);
    eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] += g[i]; });
  });
}

template <class T>
Var Graph<T>::mul_const(Var a, const Tensor<T>& c) {
  const Tensor<T>& av = val(a);
  if (!av.same_shape(c)) throw std::invalid_argument("mul_const: shape mismatch");
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = av[i] * c[i];
  const Var o = GSNERF_NEXT_ID();
  Tensor<T> ccopy = c;
  return emit(std::move(out), {a}, [this, a, o, n, ccopy = std::move(ccopy)]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& ga = grad_buf(a);
    eltwise(n, [&](int64_t s, int64_t e) {
      for (int64_t i = s; i < e; ++i) ga[i] += g[i] * ccopy[i];
    });
  });
}

template <class T>
Var Graph<T>::add_scalar(Var a, T sVal) {
  const Tensor<T>& av = val(a);
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = av[i] + sVal;
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, n]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& ga = grad_buf(a);
    eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] += g[i]; });
  });
}

template <class T>
Var Graph<T>::mul_scalar(Var a, T sVal) {
  const Tensor<T>& av = val(a);
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = av[i] * sVal;
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, n, sVal]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& ga = grad_buf(a);
    eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] += g[i] * sVal; });
  });
}

template <class T>
Var Graph<T>::rsub_scalar(T sVal, Var a) {
  const Tensor<T>& av = val(a);
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = sVal - av[i];
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, n]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& ga = grad_buf(a);
    eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] -= g[i]; });
  });
}

// ---------------------------------------------------------------------------
// elementwise unary

template <class T>
Var Graph<T>::exp(Var a) {
  const Tensor<T>& av = val(a);
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  eltwise(n, [&](int64_t s, int64_t e) {
    for (int64_t i = s; i < e; ++i) out[i] = std::exp(av[i]);
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, n]() {
    const Tensor<T>&g = grad(o), &y = val(o);
    Tensor<T>& ga = grad_buf(a);
    eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] += g[i] * y[i]; });
  });
}

template <class T>
Var Graph<T>::log(Var a) {
  const Tensor<T>& av = val(a);
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = std::log(av[i]);
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, n]() {
    const Tensor<T>& g = grad(o);
    const Tensor<T>& x = val(a);
    Tensor<T>& ga = grad_buf(a);
    eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] += g[i] / x[i]; });
  });
}

template <class T>
Var Graph<T>::tanh(Var a) {
  const Tensor<T>& av = val(a);
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  eltwise(n, [&](int64_t s, int64_t e) {
    for (int64_t i = s; i < e; ++i) out[i] = std::tanh(av[i]);
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, n]() {
    const Tensor<T>&g = grad(o), &y = val(o);
    Tensor<T>& ga = grad_buf(a);
    eltwise(n, [&](int64_t s, int64_t e) {
      for (int64_t i = s; i < e; ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
    });
  });
}

template <class T>
Var Graph<T>::sigmoid(Var a) {
  const Tensor<T>& av = val(a);
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  eltwise(n, [&](int64_t s, int64_t e) {
    for (int64_t i = s; i < e; ++i) {
      const T x = av[i];
      out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                         : std::exp(x) / (T(1) + std::exp(x));
    }
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, n]() {
    const Tensor<T>&g = grad(o), &y = val(o);
    Tensor<T>& ga = grad_buf(a);
    eltwise(n, [&](int64_t s, int64_t e) {
      for (int64_t i = s; i < e; ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  });
}

template <class T>
Var Graph<T>::softplus(Var a) {
  const Tensor<T>& av = val(a);
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  eltwise(n, [&](int64_t s, int64_t e) {
    for (int64_t i = s; i < e; ++i) {
      const T x = av[i];
      out[i] = x > T(30) ? x : std::log1p(std::exp(x));
    }
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, n]() {
    const Tensor<T>& g = grad(o);
    const Tensor<T>& x = val(a);
    Tensor<T>& ga = grad_buf(a);
    eltwise(n, [&](int64_t s, int64_t e) {
      for (int64_t i = s; i < e; ++i) {
        const T xv = x[i];
        const T sg = xv >= T(0) ? T(1) / (T(1) + std::exp(-xv))
                                : std::exp(xv) / (T(1) + std::exp(xv));
        ga[i] += g[i] * sg;
      }
    });
  });
}

template <class T>
Var Graph<T>::abs(Var a) {
  const Tensor<T>& av = val(a);
  Tensor<T> out(av.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = std::abs(av[i]);
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, n]() {
    const Tensor<T>& g = grad(o);
    const Tensor<T>& x = val(a);
    Tensor<T>& ga = grad_buf(a);
    for (int64_t i = 0; i < n; ++i)
      ga[i] += g[i] * (x[i] > T(0) ? T(1) : (x[i] < T(0) ? T(-1) : T(0)));
  });
}

// ---------------------------------------------------------------------------
// shape

template <class T>
Var Graph<T>::reshape(Var a, std::vector<int64_t> shape) {
  const Tensor<T>& av = val(a);
  if (Tensor<T>::numel_of(shape) != av.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor<T> out(std::move(shape), av.data);
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& ga = grad_buf(a);
    const int64_t n = g.numel();
    eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] += g[i]; });
  });
}

template <class T>
Var Graph<T>::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  int64_t rows = -1, total_cols = 0;
  std::vector<int64_t> cols(parts.size());
  for (size_t p = 0; p < parts.size(); ++p) {
    const Tensor<T>& v = val(parts[p]);
    const int64_t c = v.shape.back();
    const int64_t r = v.numel() / c;
    if (rows < 0) rows = r;
    if (r != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols[p] = c;
    total_cols += c;
  }
  Tensor<T> out({rows, total_cols});
  int64_t off = 0;
  for (size_t p = 0; p < parts.size(); ++p) {
    const Tensor<T>& v = val(parts[p]);
    const int64_t c = cols[p];
    parallel_for(rows, [&](int64_t rb, int64_t re, int) {
      for (int64_t r = rb; r < re; ++r)
        std::memcpy(out.ptr() + r * total_cols + off, v.ptr() + r * c,
                    sizeof(T) * static_cast<size_t>(c));
    });
    off += c;
  }
  const Var o = GSNERF_NEXT_ID();
  std::vector<Var> ps = parts;
  return emit(std::move(out), ps,
              [this, ps, cols, rows, total_cols, o]() {
    const Tensor<T>& g = grad(o);
    int64_t off2 = 0;
    for (size_t p = 0; p < ps.size(); ++p) {
      const int64_t c = cols[p];
      if (nodes_[size_t(ps[p].id)].needs_grad) {
        Tensor<T>& gp = grad_buf(ps[p]);
        parallel_for(rows, [&](int64_t rb, int64_t re, int) {
          for (int64_t r = rb; r < re; ++r) {
            const T* src = g.ptr() + r * total_cols + off2;
            T* dst = gp.ptr() + r * c;
            for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
          }
        });
      }
      off2 += c;
    }
  });
}

template <class T>
Var Graph<T>::slice_cols(Var a, int64_t lo, int64_t hi) {
  const Tensor<T>& av = val(a);
  const int64_t c = av.shape.back();
  const int64_t rows = av.numel() / c;
  if (lo < 0 || hi > c || lo >= hi) throw std::invalid_argument("slice_cols: bad range");
  const int64_t w = hi - lo;
  Tensor<T> out({rows, w});
  for (int64_t r = 0; r < rows; ++r)
    std::memcpy(out.ptr() + r * w, av.ptr() + r * c + lo, sizeof(T) * static_cast<size_t>(w));
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, lo, w, c, rows]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& ga = grad_buf(a);
    for (int64_t r = 0; r < rows; ++r) {
      const T* src = g.ptr() + r * w;
      T* dst = ga.ptr() + r * c + lo;
      for (int64_t j = 0; j < w; ++j) dst[j] += src[j];
    }
  });
}

// ---------------------------------------------------------------------------
// linear algebra

template <class T>
Var Graph<T>::matmul(Var a, Var b) {
  const Tensor<T>&av = val(a), &bv = val(b);
  if (av.ndim() < 2 || bv.ndim() != 2) throw std::invalid_argument("matmul: need 2-D");
  const int64_t k = av.shape.back();
  const int64_t m = av.numel() / k;
  if (bv.shape[0] != k) throw std::invalid_argument("matmul: inner dim mismatch");
  const int64_t n = bv.shape[1];
  Tensor<T> out({m, n});
  matmul_nn(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a, b}, [this, a, b, o, m, k, n]() {
    const Tensor<T>& g = grad(o);
    const Tensor<T>&av2 = val(a), &bv2 = val(b);
    if (nodes_[size_t(a.id)].needs_grad)
      matmul_nt_acc(g.ptr(), bv2.ptr(), grad_buf(a).ptr(), m, n, k);
    if (nodes_[size_t(b.id)].needs_grad)
      matmul_tn_acc(av2.ptr(), g.ptr(), grad_buf(b).ptr(), m, k, n);
  });
}

template <class T>
Var Graph<T>::add_rowvec(Var a, Var bias) {
  const Tensor<T>&av = val(a), &bv = val(bias);
  const int64_t c = av.shape.back();
  if (bv.numel() != c) throw std::invalid_argument("add_rowvec: bias size mismatch");
  const int64_t rows = av.numel() / c;
  Tensor<T> out(av.shape);
  parallel_for(rows, [&](int64_t rb, int64_t re, int) {
    for (int64_t r = rb; r < re; ++r) {
      const T* src = av.ptr() + r * c;
      T* dst = out.ptr() + r * c;
      for (int64_t j = 0; j < c; ++j) dst[j] = src[j] + bv[j];
    }
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a, bias}, [this, a, bias, o, rows, c]() {
    const Tensor<T>& g = grad(o);
    if (nodes_[size_t(a.id)].needs_grad) {
      Tensor<T>& ga = grad_buf(a);
      const int64_t n = rows * c;
      eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] += g[i]; });
    }
    if (nodes_[size_t(bias.id)].needs_grad) {
      Tensor<T>& gb = grad_buf(bias);
      for (int64_t r = 0; r < rows; ++r) {
        const T* src = g.ptr() + r * c;
        for (int64_t j = 0; j < c; ++j) gb[j] += src[j];
      }
    }
  });
}

template <class T>
Var Graph<T>::mul_rows(Var a, Var w) {
  const Tensor<T>&av = val(a), &wv = val(w);
  const int64_t c = av.shape.back();
  const int64_t rows = av.numel() / c;
  if (wv.numel() != rows) throw std::invalid_argument("mul_rows: weight size mismatch");
  Tensor<T> out(av.shape);
  parallel_for(rows, [&](int64_t rb, int64_t re, int) {
    for (int64_t r = rb; r < re; ++r) {
      const T wr = wv[r];
      const T* src = av.ptr() + r * c;
      T* dst = out.ptr() + r * c;
      for (int64_t j = 0; j < c; ++j) dst[j] = src[j] * wr;
    }
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a, w}, [this, a, w, o, rows, c]() {
    const Tensor<T>& g = grad(o);
    const Tensor<T>&av2 = val(a), &wv2 = val(w);
    if (nodes_[size_t(a.id)].needs_grad) {
      Tensor<T>& ga = grad_buf(a);
      parallel_for(rows, [&](int64_t rb, int64_t re, int) {
        for (int64_t r = rb; r < re; ++r) {
          const T wr = wv2[r];
          const T* gr = g.ptr() + r * c;
          T* dst = ga.ptr() + r * c;
          for (int64_t j = 0; j < c; ++j) dst[j] += gr[j] * wr;
        }
      });
    }
    if (nodes_[size_t(w.id)].needs_grad) {
      Tensor<T>& gw = grad_buf(w);
      parallel_for(rows, [&](int64_t rb, int64_t re, int) {
        for (int64_t r = rb; r < re; ++r) {
          const T* gr = g.ptr() + r * c;
          const T* ar = av2.ptr() + r * c;
          T acc = T(0);
          for (int64_t j = 0; j < c; ++j) acc += gr[j] * ar[j];
          gw[r] += acc;
        }
      });
    }
  });
}

template <class T>
Var Graph<T>::mul_cols(Var a, const Tensor<T>& v) {
  const Tensor<T>& av = val(a);
  const int64_t c = av.shape.back();
  if (v.numel() != c) throw std::invalid_argument("mul_cols: vector size mismatch");
  const int64_t rows = av.numel() / c;
  Tensor<T> out(av.shape);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j) out[r * c + j] = av[r * c + j] * v[j];
  const Var o = GSNERF_NEXT_ID();
  Tensor<T> vcopy = v;
  return emit(std::move(out), {a}, [this, a, o, rows, c, vcopy = std::move(vcopy)]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& ga = grad_buf(a);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < c; ++j) ga[r * c + j] += g[r * c + j] * vcopy[j];
  });
}

// ---------------------------------------------------------------------------
// reductions

template <class T>
Var Graph<T>::sum_all(Var a) {
  const Tensor<T>& av = val(a);
  const int64_t n = av.numel();
  // Fixed-chunk pairwise-ish summation for determinism and accuracy.
  constexpr int kChunks = 16;
  T partial[kChunks] = {};
  parallel_chunks(n, kChunks, [&](int64_t s, int64_t e, int ci) {
    T acc = T(0);
    for (int64_t i = s; i < e; ++i) acc += av[i];
    partial[ci] = acc;
  });
  T total = T(0);
  for (int ci = 0; ci < kChunks; ++ci) total += partial[ci];
  const Var o = GSNERF_NEXT_ID();
  return emit(Tensor<T>::scalar(total), {a}, [this, a, o, n]() {
    const T g = grad(o)[0];
    Tensor<T>& ga = grad_buf(a);
    eltwise(n, [&](int64_t s, int64_t e) { for (int64_t i = s; i < e; ++i) ga[i] += g; });
  });
}

template <class T>
Var Graph<T>::mean_all(Var a) {
  const int64_t n = val(a).numel();
  if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
  return mul_scalar(sum_all(a), T(1) / static_cast<T>(n));
}

template <class T>
Var Graph<T>::sum_mid(Var a, int64_t b, int64_t k, int64_t f) {
  const Tensor<T>& av = val(a);
  if (av.numel() != b * k * f) throw std::invalid_argument("sum_mid: size mismatch");
  Tensor<T> out({b, f});
  parallel_for(b, [&](int64_t bb, int64_t be, int) {
    for (int64_t i = bb; i < be; ++i) {
      T* dst = out.ptr() + i * f;
      std::fill(dst, dst + f, T(0));
      const T* src = av.ptr() + i * k * f;
      for (int64_t j = 0; j < k; ++j)
        for (int64_t t = 0; t < f; ++t) dst[t] += src[j * f + t];
    }
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, b, k, f]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& ga = grad_buf(a);
    parallel_for(b, [&](int64_t bb, int64_t be, int) {
      for (int64_t i = bb; i < be; ++i) {
        const T* gr = g.ptr() + i * f;
        T* dst = ga.ptr() + i * k * f;
        for (int64_t j = 0; j < k; ++j)
          for (int64_t t = 0; t < f; ++t) dst[j * f + t] += gr[t];
      }
    });
  });
}

template <class T>
Var Graph<T>::softmax_rows(Var a) {
  const Tensor<T>& av = val(a);
  const int64_t c = av.shape.back();
  const int64_t rows = av.numel() / c;
  Tensor<T> out(av.shape);
  parallel_for(rows, [&](int64_t rb, int64_t re, int) {
    for (int64_t r = rb; r < re; ++r) {
      const T* x = av.ptr() + r * c;
      T* y = out.ptr() + r * c;
      T mx = x[0];
      for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
      T denom = T(0);
      for (int64_t j = 0; j < c; ++j) {
        y[j] = std::exp(x[j] - mx);
        denom += y[j];
      }
      const T inv = T(1) / denom;
      for (int64_t j = 0; j < c; ++j) y[j] *= inv;
    }
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, rows, c]() {
    const Tensor<T>&g = grad(o), &y = val(o);
    Tensor<T>& ga = grad_buf(a);
    parallel_for(rows, [&](int64_t rb, int64_t re, int) {
      for (int64_t r = rb; r < re; ++r) {
        const T* gr = g.ptr() + r * c;
        const T* yr = y.ptr() + r * c;
        T dot = T(0);
        for (int64_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
        T* dst = ga.ptr() + r * c;
        for (int64_t j = 0; j < c; ++j) dst[j] += yr[j] * (gr[j] - dot);
      }
    });
  });
}

template <class T>
Var Graph<T>::cross_entropy_rows(Var logits, const std::vector<int32_t>& labels) {
  const Tensor<T>& lv = val(logits);
  const int64_t c = lv.shape.back();
  const int64_t rows = lv.numel() / c;
  if (static_cast<int64_t>(labels.size()) != rows)
    throw std::invalid_argument("cross_entropy_rows: label count mismatch");
  for (int32_t l : labels)
    if (l < 0 || l >= c) throw std::invalid_argument("cross_entropy_rows: label out of range");
  Tensor<T> out({rows});
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = lv.ptr() + r * c;
    T mx = x[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T denom = T(0);
    for (int64_t j = 0; j < c; ++j) denom += std::exp(x[j] - mx);
    out[r] = mx + std::log(denom) - x[labels[static_cast<size_t>(r)]];
  }
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {logits}, [this, logits, o, rows, c, labels]() {
    const Tensor<T>& g = grad(o);
    const Tensor<T>& lv2 = val(logits);
    Tensor<T>& gl = grad_buf(logits);
    for (int64_t r = 0; r < rows; ++r) {
      const T* x = lv2.ptr() + r * c;
      T mx = x[0];
      for (int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
      T denom = T(0);
      for (int64_t j = 0; j < c; ++j) denom += std::exp(x[j] - mx);
      T* dst = gl.ptr() + r * c;
      const T gr = g[r];
      for (int64_t j = 0; j < c; ++j) {
        const T p = std::exp(x[j] - mx) / denom;
        dst[j] += gr * (p - (j == labels[static_cast<size_t>(r)] ? T(1) : T(0)));
      }
    }
  });
}

template <class T>
Var Graph<T>::exclusive_cumsum_rows(Var a) {
  const Tensor<T>& av = val(a);
  const int64_t c = av.shape.back();
  const int64_t rows = av.numel() / c;
  Tensor<T> out(av.shape);
  parallel_for(rows, [&](int64_t rb, int64_t re, int) {
    for (int64_t r = rb; r < re; ++r) {
      const T* x = av.ptr() + r * c;
      T* y = out.ptr() + r * c;
      T acc = T(0);
      for (int64_t j = 0; j < c; ++j) {
        y[j] = acc;
        acc += x[j];
      }
    }
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, rows, c]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& ga = grad_buf(a);
    parallel_for(rows, [&](int64_t rb, int64_t re, int) {
      for (int64_t r = rb; r < re; ++r) {
        const T* gr = g.ptr() + r * c;
        T* dst = ga.ptr() + r * c;
        T acc = T(0);
        for (int64_t j = c - 1; j >= 0; --j) {
          dst[j] += acc;
          acc += gr[j];
        }
      }
    });
  });
}

// ---------------------------------------------------------------------------
// structured ops

template <class T>
Var Graph<T>::gather(Var src, std::shared_ptr<GatherTable> table) {
  const Tensor<T>& sv = val(src);
  const int64_t f = sv.shape.back();
  const int64_t srows = sv.numel() / f;
  const int64_t rows = table->rows;
  const int taps = table->taps;
  Tensor<T> out({rows, f});
  parallel_for(rows, [&](int64_t rb, int64_t re, int) {
    for (int64_t r = rb; r < re; ++r) {
      T* dst = out.ptr() + r * f;
      std::fill(dst, dst + f, T(0));
      for (int t = 0; t < taps; ++t) {
        const int32_t ix = table->idx[static_cast<size_t>(r * taps + t)];
        if (ix < 0) continue;
        if (ix >= srows) throw std::out_of_range("gather: index out of range");
        const T w = static_cast<T>(table->w[static_cast<size_t>(r * taps + t)]);
        const T* srow = sv.ptr() + static_cast<int64_t>(ix) * f;
        for (int64_t j = 0; j < f; ++j) dst[j] += w * srow[j];
      }
    }
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {src}, [this, src, o, table, f]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& gs = grad_buf(src);
    const int64_t rows = table->rows;
    const int taps = table->taps;
    for (int64_t r = 0; r < rows; ++r) {
      const T* gr = g.ptr() + r * f;
      for (int t = 0; t < taps; ++t) {
        const int32_t ix = table->idx[static_cast<size_t>(r * taps + t)];
        if (ix < 0) continue;
        const T w = static_cast<T>(table->w[static_cast<size_t>(r * taps + t)]);
        T* dst = gs.ptr() + static_cast<int64_t>(ix) * f;
        for (int64_t j = 0; j < f; ++j) dst[j] += w * gr[j];
      }
    }
  });
}

template <class T>
Var Graph<T>::conv3x3(Var x, Var weight, Var bias, int h, int w) {
  const Tensor<T>& xv = val(x);
  const Tensor<T>& wv = val(weight);
  const Tensor<T>& bv = val(bias);
  if (wv.ndim() != 4 || wv.shape[1] != 3 || wv.shape[2] != 3)
    throw std::invalid_argument("conv3x3: weight must be [Cout,3,3,Cin]");
  const int64_t cout = wv.shape[0];
  const int64_t cin = wv.shape[3];
  if (xv.numel() != int64_t(h) * w * cin)
    throw std::invalid_argument("conv3x3: input size mismatch");
  if (bv.numel() != cout) throw std::invalid_argument("conv3x3: bias size mismatch");
  Tensor<T> out({int64_t(h), int64_t(w), cout});
  parallel_for(h, [&](int64_t yb, int64_t ye, int) {
    for (int64_t y = yb; y < ye; ++y) {
      for (int64_t xx = 0; xx < w; ++xx) {
        T* dst = out.ptr() + (y * w + xx) * cout;
        for (int64_t co = 0; co < cout; ++co) dst[co] = bv[co];
        for (int dy = -1; dy <= 1; ++dy) {
          const int sy = reflect(static_cast<int>(y) + dy, h);
          for (int dx = -1; dx <= 1; ++dx) {
            const int sx = reflect(static_cast<int>(xx) + dx, w);
            const T* src = xv.ptr() + (int64_t(sy) * w + sx) * cin;
            const T* wk = wv.ptr() + ((dy + 1) * 3 + (dx + 1)) * cin;
            for (int64_t co = 0; co < cout; ++co) {
              const T* wrow = wk + co * 9 * cin;
              T acc = T(0);
              for (int64_t ci = 0; ci < cin; ++ci) acc += src[ci] * wrow[ci];
              dst[co] += acc;
            }
          }
        }
      }
    }
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {x, weight, bias},
              [this, x, weight, bias, o, h, w, cout, cin]() {
    const Tensor<T>& g = grad(o);
    const Tensor<T>& xv2 = val(x);
    const Tensor<T>& wv2 = val(weight);
    const bool need_x = nodes_[size_t(x.id)].needs_grad;
    const bool need_w = nodes_[size_t(weight.id)].needs_grad;
    const bool need_b = nodes_[size_t(bias.id)].needs_grad;
    Tensor<T>* gx = need_x ? &grad_buf(x) : nullptr;
    Tensor<T>* gw = need_w ? &grad_buf(weight) : nullptr;
    Tensor<T>* gb = need_b ? &grad_buf(bias) : nullptr;
    // Scatter form; serial to keep reflect-border accumulation exact.
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t xx = 0; xx < w; ++xx) {
        const T* gr = g.ptr() + (y * w + xx) * cout;
        for (int dy = -1; dy <= 1; ++dy) {
          const int sy = reflect(static_cast<int>(y) + dy, h);
          for (int dx = -1; dx <= 1; ++dx) {
            const int sx = reflect(static_cast<int>(xx) + dx, w);
            const int64_t soff = (int64_t(sy) * w + sx) * cin;
            const int64_t koff = int64_t((dy + 1) * 3 + (dx + 1)) * cin;
            for (int64_t co = 0; co < cout; ++co) {
              const T gv = gr[co];
              if (gv == T(0)) continue;
              const T* wrow = wv2.ptr() + co * 9 * cin + koff;
              if (gx) {
                T* dst = gx->ptr() + soff;
                for (int64_t ci = 0; ci < cin; ++ci) dst[ci] += gv * wrow[ci];
              }
              if (gw) {
                const T* src = xv2.ptr() + soff;
                T* wdst = gw->ptr() + co * 9 * cin + koff;
                for (int64_t ci = 0; ci < cin; ++ci) wdst[ci] += gv * src[ci];
              }
            }
          }
        }
        if (gb)
          for (int64_t co = 0; co < cout; ++co) (*gb)[co] += gr[co];
      }
    }
  });
}

template <class T>
Var Graph<T>::mean3x3(Var x, int h, int w) {
  const Tensor<T>& xv = val(x);
  const int64_t c = xv.numel() / (int64_t(h) * w);
  if (xv.numel() != int64_t(h) * w * c) throw std::invalid_argument("mean3x3: size mismatch");
  Tensor<T> out(xv.shape);
  const T k = T(1) / T(9);
  parallel_for(h, [&](int64_t yb, int64_t ye, int) {
    for (int64_t y = yb; y < ye; ++y)
      for (int64_t xx = 0; xx < w; ++xx) {
        T* dst = out.ptr() + (y * w + xx) * c;
        std::fill(dst, dst + c, T(0));
        for (int dy = -1; dy <= 1; ++dy) {
          const int sy = reflect(static_cast<int>(y) + dy, h);
          for (int dx = -1; dx <= 1; ++dx) {
            const int sx = reflect(static_cast<int>(xx) + dx, w);
            const T* src = xv.ptr() + (int64_t(sy) * w + sx) * c;
            for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
          }
        }
        for (int64_t j = 0; j < c; ++j) dst[j] *= k;
      }
  });
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {x}, [this, x, o, h, w, c, k]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& gx = grad_buf(x);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) {
        const T* gr = g.ptr() + (y * w + xx) * c;
        for (int dy = -1; dy <= 1; ++dy) {
          const int sy = reflect(static_cast<int>(y) + dy, h);
          for (int dx = -1; dx <= 1; ++dx) {
            const int sx = reflect(static_cast<int>(xx) + dx, w);
            T* dst = gx.ptr() + (int64_t(sy) * w + sx) * c;
            for (int64_t j = 0; j < c; ++j) dst[j] += k * gr[j];
          }
        }
      }
  });
}

template <class T>
Var Graph<T>::diff_x(Var a, int h, int w) {
  const Tensor<T>& av = val(a);
  if (av.numel() != int64_t(h) * w) throw std::invalid_argument("diff_x: size mismatch");
  Tensor<T> out({int64_t(h), int64_t(w - 1)});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t xx = 0; xx + 1 < w; ++xx)
      out[y * (w - 1) + xx] = av[y * w + xx + 1] - av[y * w + xx];
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, h, w]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& ga = grad_buf(a);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx + 1 < w; ++xx) {
        const T gv = g[y * (w - 1) + xx];
        ga[y * w + xx + 1] += gv;
        ga[y * w + xx] -= gv;
      }
  });
}

template <class T>
Var Graph<T>::diff_y(Var a, int h, int w) {
  const Tensor<T>& av = val(a);
  if (av.numel() != int64_t(h) * w) throw std::invalid_argument("diff_y: size mismatch");
  Tensor<T> out({int64_t(h - 1), int64_t(w)});
  for (int64_t y = 0; y + 1 < h; ++y)
    for (int64_t xx = 0; xx < w; ++xx)
      out[y * w + xx] = av[(y + 1) * w + xx] - av[y * w + xx];
  const Var o = GSNERF_NEXT_ID();
  return emit(std::move(out), {a}, [this, a, o, h, w]() {
    const Tensor<T>& g = grad(o);
    Tensor<T>& ga = grad_buf(a);
    for (int64_t y = 0; y + 1 < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) {
        const T gv = g[y * w + xx];
        ga[(y + 1) * w + xx] += gv;
        ga[y * w + xx] -= gv;
      }
  });
}

template <class T>
Var Graph<T>::smooth_l1_mean(Var a, const Tensor<T>& target,
                             const std::vector<uint8_t>& mask) {
  const Tensor<T>& av = val(a);
  const int64_t n = av.numel();
  if (target.numel() != n || static_cast<int64_t>(mask.size()) != n)
    throw std::invalid_argument("smooth_l1_mean: size mismatch");
  int64_t m = 0;
  for (uint8_t v : mask) m += v ? 1 : 0;
  if (m == 0) throw std::invalid_argument("smooth_l1_mean: no valid entries");
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    const T d = av[i] - target[i];
    const T ad = std::abs(d);
    acc += ad < T(1) ? T(0.5) * d * d : ad - T(0.5);
  }
  const T inv_m = T(1) / static_cast<T>(m);
  const Var o = GSNERF_NEXT_ID();
  Tensor<T> tcopy = target;
  std::vector<uint8_t> mcopy = mask;
  return emit(Tensor<T>::scalar(acc * inv_m), {a},
              [this, a, o, n, inv_m, tcopy = std::move(tcopy), mcopy = std::move(mcopy)]() {
    const T g = grad(o)[0] * inv_m;
    const Tensor<T>& av2 = val(a);
    Tensor<T>& ga = grad_buf(a);
    for (int64_t i = 0; i < n; ++i) {
      if (!mcopy[static_cast<size_t>(i)]) continue;
      const T d = av2[i] - tcopy[i];
      ga[i] += g * std::clamp(d, T(-1), T(1));
    }
  });
}

#undef GSNERF_NEXT_ID

template class Graph<float>;
template class Graph<double>;

}  // namespace gsnerf::ad

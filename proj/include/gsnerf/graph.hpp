// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gsnerf/tensor.hpp"

namespace gsnerf::ad {

// Opaque handle into a Graph's tape.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Fixed gather table: out[r, :] = sum_t w[r, t] * src[idx[r, t], :].
// Used for bilinear (4 taps) and trilinear (8 taps) lookups whose
// coordinates are decided outside the graph. idx < 0 marks a dead tap.
struct GatherTable {
  int64_t rows = 0;
  int taps = 0;
  std::vector<int32_t> idx;   // rows * taps
  std::vector<double> w;      // rows * taps
};

// Reverse-mode tape over Tensor<T>. Ops append nodes; parents always have
// smaller ids, so walking the tape backwards is a valid topological order.
// A graph records one forward pass and supports one backward() call; build
// a fresh graph per step.
template <class T>
class Graph {
public:
  explicit Graph(bool grad_enabled = true);
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // ---- leaves -------------------------------------------------------------
  Var input(Tensor<T> value, bool needs_grad = false);
  Var constant(Tensor<T> value) { return input(std::move(value), false); }
  Var scalar(T v) { return input(Tensor<T>::scalar(v), false); }

  // ---- elementwise --------------------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var add_const(Var a, const Tensor<T>& c);
  Var sub_const(Var a, const Tensor<T>& c);   // a - c
  Var mul_const(Var a, const Tensor<T>& c);
  Var add_scalar(Var a, T s);
  Var mul_scalar(Var a, T s);
  Var rsub_scalar(T s, Var a);                // s - a
  Var neg(Var a) { return mul_scalar(a, T(-1)); }
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var abs(Var a);
  Var square(Var a) { return mul(a, a); }

  // ---- shape / assembly ---------------------------------------------------
  Var reshape(Var a, std::vector<int64_t> shape);
  // Concatenate along the last axis; all parts share leading row count.
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var a, int64_t lo, int64_t hi);
  // Stack R tensors of identical shape [F] rows... not needed; use concat.

  // ---- linear algebra -----------------------------------------------------
  Var matmul(Var a, Var b);                   // [M,K] x [K,N]
  Var add_rowvec(Var a, Var bias);            // [R,N] + [N]
  Var mul_rows(Var a, Var w);                 // [R,N] * w[R] per row
  Var mul_cols(Var a, const Tensor<T>& v);    // [R,N] * v[N] per column

  // ---- reductions ---------------------------------------------------------
  Var sum_all(Var a);
  Var mean_all(Var a);
  // Sum over the middle axis of a logical [B, K, F] view.
  Var sum_mid(Var a, int64_t b, int64_t k, int64_t f);
  Var softmax_rows(Var a);                    // softmax over last axis
  // Per-row cross entropy of softmax(logits) against integer labels -> [R].
  Var cross_entropy_rows(Var logits, const std::vector<int32_t>& labels);
  // Exclusive prefix sum along rows of [R, N].
  Var exclusive_cumsum_rows(Var a);

  // ---- structured ops -----------------------------------------------------
  Var gather(Var src, std::shared_ptr<GatherTable> table);
  // 3x3 stride-1 convolution with reflect padding over [H, W, Cin].
  Var conv3x3(Var x, Var weight, Var bias, int h, int w);
  // 3x3 box mean filter with reflect padding over [H, W, C].
  Var mean3x3(Var x, int h, int w);
  // Forward differences along x/y of an [H, W] map -> [H, W-1] / [H-1, W].
  Var diff_x(Var a, int h, int w);
  Var diff_y(Var a, int h, int w);
  // Mean of smooth-L1(a - target) over mask-selected entries (beta = 1).
  Var smooth_l1_mean(Var a, const Tensor<T>& target, const std::vector<uint8_t>& mask);

  // ---- custom ops -----------------------------------------------------------
  // Appends a node whose value was computed by the caller. `bw` must read
  // grad(out) and accumulate into grad_accum(parent) for parents that
  // need_grad(). The next emitted node id is num_nodes().
  Var custom(Tensor<T> value, const std::vector<Var>& parents, std::function<void()> bw);
  Tensor<T>& grad_accum(Var v) { return grad_buf(v); }
  bool need_grad(Var v) const;

  // ---- backward -----------------------------------------------------------
  // Seeds d(loss)/d(loss) = 1 and propagates through the tape. The loss must
  // be scalar. A second call without a new forward graph throws.
  void backward(Var loss);

  const Tensor<T>& val(Var v) const;
  const Tensor<T>& grad(Var v) const;
  bool has_grad(Var v) const;
  int64_t num_nodes() const;

private:
  struct Node;
  Var emit(Tensor<T> value, std::vector<Var> parents, std::function<void()> bw);
  Tensor<T>& grad_buf(Var v);
  bool any_needs_grad(const std::vector<Var>& vs) const;
  void check_open() const;

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool finalized_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace gsnerf::ad

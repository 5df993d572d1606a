// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

// Dense row-major tensor primitives with hand-written backward passes.
//
// Every reduction runs in a fixed, sequential order that does not depend on
// how many rows are processed together. A row computed alone, inside a
// batch, or from cached keys/values therefore comes out bit-identical, which
// is what the cache and speculative-decoding equivalence guarantees rest on.
//
// All functions are templated on the scalar type. Production code uses
// float; the finite-difference oracles in the tests instantiate double.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "arvis/error.hpp"

namespace arvis {

template <class T>
class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("tensor data length " +
                           std::to_string(data_.size()) + " != " +
                           std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* row(std::size_t r) { return data_.data() + r * cols_; }
  const T* row(std::size_t r) const { return data_.data() + r * cols_; }
  std::span<T> row_span(std::size_t r) { return {row(r), cols_}; }
  std::span<const T> row_span(std::size_t r) const { return {row(r), cols_}; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Tensor2D& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  template <class U>
  Tensor2D<U> cast() const {
    Tensor2D<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out.data()[i] = static_cast<U>(data_[i]);
    }
    return out;
  }

  friend bool operator==(const Tensor2D& a, const Tensor2D& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// A gradient has the shape of the tensor it differentiates and accumulates
// additively.
template <class T>
using Gradient = Tensor2D<T>;

// Counts multiply-add work in FLOPs (2 per multiply-accumulate).
struct FlopCounter {
  std::uint64_t flops = 0;
  void add(std::uint64_t n) { flops += n; }
};

template <class T>
bool all_finite(std::span<const T> v) {
  for (T x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// c[m x n] (+)= a[m x k] * b[k x n], all row-major. Each output element is
// accumulated over k in increasing order starting from zero (or from the
// existing value when accumulating), independent of m.
template <class T>
void matmul_kernel(const T* a, std::size_t m, std::size_t k, const T* b,
                   std::size_t n, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  constexpr std::size_t kRowBlock = 4;
  std::size_t i = 0;
  for (; i + kRowBlock <= m; i += kRowBlock) {
    T* __restrict c0 = c + (i + 0) * n;
    T* __restrict c1 = c + (i + 1) * n;
    T* __restrict c2 = c + (i + 2) * n;
    T* __restrict c3 = c + (i + 3) * n;
    const T* a0 = a + (i + 0) * k;
    const T* a1 = a + (i + 1) * k;
    const T* a2 = a + (i + 2) * k;
    const T* a3 = a + (i + 3) * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* __restrict brow = b + kk * n;
      const T s0 = a0[kk], s1 = a1[kk], s2 = a2[kk], s3 = a3[kk];
      for (std::size_t j = 0; j < n; ++j) {
        const T bj = brow[j];
        c0[j] += s0 * bj;
        c1[j] += s1 * bj;
        c2[j] += s2 * bj;
        c3[j] += s3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    T* __restrict ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* __restrict brow = b + kk * n;
      const T s = ai[kk];
      for (std::size_t j = 0; j < n; ++j) ci[j] += s * brow[j];
    }
  }
}

template <class T>
Tensor2D<T> transpose(const Tensor2D<T>& a) {
  Tensor2D<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

template <class T>
Tensor2D<T> matmul(const Tensor2D<T>& a, const Tensor2D<T>& b,
                   FlopCounter* flops = nullptr) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " * " +
                         std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
  Tensor2D<T> c(a.rows(), b.cols());
  matmul_kernel(a.data(), a.rows(), a.cols(), b.data(), b.cols(), c.data(),
                false);
  if (flops) flops->add(2ull * a.rows() * a.cols() * b.cols());
  return c;
}

// Accumulates da += dc * b^T and db += a^T * dc. Either output may be null.
template <class T>
void matmul_backward(const Tensor2D<T>& a, const Tensor2D<T>& b,
                     const Tensor2D<T>& dc, Gradient<T>* da,
                     Gradient<T>* db) {
  if (a.cols() != b.rows() || dc.rows() != a.rows() ||
      dc.cols() != b.cols()) {
    throw DimensionError("matmul_backward: shape mismatch");
  }
  if (da) {
    if (!da->same_shape(a)) throw DimensionError("matmul_backward: da shape");
    const Tensor2D<T> bt = transpose(b);
    matmul_kernel(dc.data(), dc.rows(), dc.cols(), bt.data(), bt.cols(),
                  da->data(), true);
  }
  if (db) {
    if (!db->same_shape(b)) throw DimensionError("matmul_backward: db shape");
    // db[k][j] += sum_i a[i][k] * dc[i][j], accumulated over i in order.
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
      const T* __restrict dci = dc.row(i);
      const T* ai = a.row(i);
      for (std::size_t kk = 0; kk < a.cols(); ++kk) {
        const T s = ai[kk];
        T* __restrict dbk = db->row(kk);
        for (std::size_t j = 0; j < n; ++j) dbk[j] += s * dci[j];
      }
    }
  }
}

// Numerically stable softmax of v / temperature.
template <class T>
void softmax_into(std::span<const T> v, T temperature, std::span<T> out) {
  if (!(temperature > T{0})) {
    throw ParameterError("softmax: temperature must be positive");
  }
  if (v.size() != out.size()) throw DimensionError("softmax: output length");
  if (v.empty()) return;
  T mx = v[0];
  for (T x : v) mx = std::max(mx, x);
  T sum{0};
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp((v[i] - mx) / temperature);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
}

template <class T>
std::vector<T> softmax(std::span<const T> v, T temperature = T{1}) {
  std::vector<T> out(v.size());
  softmax_into<T>(v, temperature, out);
  return out;
}

// Given p = softmax(v / t) and dL/dp, returns dL/dv.
template <class T>
std::vector<T> softmax_backward(std::span<const T> p, std::span<const T> dp,
                                T temperature = T{1}) {
  if (p.size() != dp.size()) throw DimensionError("softmax_backward: length");
  T dot{0};
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * dp[i];
  std::vector<T> dv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    dv[i] = p[i] * (dp[i] - dot) / temperature;
  }
  return dv;
}

template <class T>
inline constexpr T kRmsEps = T(1e-6);

// y = gain * x / sqrt(mean(x^2) + eps). Returns the inverse RMS factor.
template <class T>
T rms_norm_into(std::span<const T> x, std::span<const T> gain,
                std::span<T> y) {
  if (x.empty() || x.size() != gain.size() || y.size() != x.size()) {
    throw DimensionError("rms_norm: length mismatch");
  }
  T ss{0};
  for (T v : x) ss += v * v;
  const T inv = T{1} / std::sqrt(ss / static_cast<T>(x.size()) + kRmsEps<T>);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gain[i] * (x[i] * inv);
  return inv;
}

template <class T>
std::vector<T> rms_norm(std::span<const T> x, std::span<const T> gain) {
  std::vector<T> y(x.size());
  rms_norm_into<T>(x, gain, y);
  return y;
}

// Accumulates dx and dgain for one row. `inv` is the value returned by the
// forward call.
template <class T>
void rms_norm_backward(std::span<const T> x, std::span<const T> gain, T inv,
                       std::span<const T> dy, std::span<T> dx,
                       std::span<T> dgain) {
  const std::size_t n = x.size();
  if (gain.size() != n || dy.size() != n || dx.size() != n ||
      dgain.size() != n) {
    throw DimensionError("rms_norm_backward: length mismatch");
  }
  T dot{0};
  for (std::size_t i = 0; i < n; ++i) dot += gain[i] * dy[i] * x[i];
  const T coef = inv * inv * inv * dot / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    dx[i] += inv * gain[i] * dy[i] - coef * x[i];
    dgain[i] += dy[i] * x[i] * inv;
  }
}

// One query row of multi-head causal attention. `keys[j]` / `values[j]`
// point at full model-dim rows; head h uses columns [h*hd, (h+1)*hd).
// Writes the attention weights of every head into probs[h * n_keys + j]
// when probs is non-null.
template <class T>
void attend_row(const T* q, std::span<const T* const> keys,
                std::span<const T* const> values, std::size_t n_heads,
                std::size_t head_dim, T* out, T* probs, T* scratch) {
  const std::size_t n = keys.size();
  const T scale = T{1} / std::sqrt(static_cast<T>(head_dim));
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * head_dim;
    const T* qh = q + off;
    T* p = probs ? probs + h * n : scratch;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const T* kj = keys[j] + off;
      T s{0};
      for (std::size_t t = 0; t < head_dim; ++t) s += qh[t] * kj[t];
      p[j] = s * scale;
      mx = std::max(mx, p[j]);
    }
    T sum{0};
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = std::exp(p[j] - mx);
      sum += p[j];
    }
    for (std::size_t j = 0; j < n; ++j) p[j] /= sum;
    T* oh = out + off;
    std::fill(oh, oh + head_dim, T{0});
    for (std::size_t j = 0; j < n; ++j) {
      const T* vj = values[j] + off;
      const T pj = p[j];
      for (std::size_t t = 0; t < head_dim; ++t) oh[t] += pj * vj[t];
    }
  }
}

template <class T>
struct AttentionResult {
  Tensor2D<T> out;
  // probs[h] is L x L; row i holds weights over keys 0..i (rest zero).
  std::vector<Tensor2D<T>> probs;
};

template <class T>
void check_attention_shapes(const Tensor2D<T>& q, const Tensor2D<T>& k,
                            const Tensor2D<T>& v, std::size_t n_heads) {
  if (!q.same_shape(k) || !q.same_shape(v)) {
    throw DimensionError("attention: q/k/v shapes differ");
  }
  if (n_heads == 0 || q.cols() % n_heads != 0) {
    throw DimensionError("attention: head count must divide model dim");
  }
}

// Causal multi-head attention over full sequences (rows = positions).
template <class T>
AttentionResult<T> causal_attention(const Tensor2D<T>& q,
                                    const Tensor2D<T>& k,
                                    const Tensor2D<T>& v,
                                    std::size_t n_heads,
                                    FlopCounter* flops = nullptr) {
  check_attention_shapes(q, k, v, n_heads);
  const std::size_t len = q.rows();
  const std::size_t hd = q.cols() / n_heads;
  AttentionResult<T> r;
  r.out = Tensor2D<T>(len, q.cols());
  r.probs.assign(n_heads, Tensor2D<T>(len, len));
  std::vector<const T*> krows(len), vrows(len);
  for (std::size_t j = 0; j < len; ++j) {
    krows[j] = k.row(j);
    vrows[j] = v.row(j);
  }
  std::vector<T> p(n_heads * len);
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t nk = i + 1;
    attend_row<T>(q.row(i), std::span(krows.data(), nk),
                  std::span(vrows.data(), nk), n_heads, hd, r.out.row(i),
                  p.data(), nullptr);
    for (std::size_t h = 0; h < n_heads; ++h) {
      std::copy(p.begin() + h * nk, p.begin() + (h + 1) * nk,
                r.probs[h].row(i));
    }
    if (flops) flops->add(4ull * nk * q.cols());
  }
  return r;
}

// Accumulates dq, dk, dv given the forward probabilities and dL/dout.
template <class T>
void causal_attention_backward(const Tensor2D<T>& q, const Tensor2D<T>& k,
                               const Tensor2D<T>& v,
                               const std::vector<Tensor2D<T>>& probs,
                               const Tensor2D<T>& dout, Gradient<T>& dq,
                               Gradient<T>& dk, Gradient<T>& dv) {
  const std::size_t n_heads = probs.size();
  check_attention_shapes(q, k, v, n_heads);
  if (!dout.same_shape(q) || !dq.same_shape(q) || !dk.same_shape(k) ||
      !dv.same_shape(v)) {
    throw DimensionError("attention_backward: gradient shapes");
  }
  const std::size_t len = q.rows();
  const std::size_t hd = q.cols() / n_heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
  std::vector<T> dp(len);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    const Tensor2D<T>& P = probs[h];
    for (std::size_t i = 0; i < len; ++i) {
      const T* doi = dout.row(i) + off;
      const T* pi = P.row(i);
      T dot{0};
      for (std::size_t j = 0; j <= i; ++j) {
        const T* vj = v.row(j) + off;
        T s{0};
        for (std::size_t t = 0; t < hd; ++t) s += doi[t] * vj[t];
        dp[j] = s;
        dot += pi[j] * s;
        T* dvj = dv.row(j) + off;
        for (std::size_t t = 0; t < hd; ++t) dvj[t] += pi[j] * doi[t];
      }
      const T* qi = q.row(i) + off;
      T* dqi = dq.row(i) + off;
      for (std::size_t j = 0; j <= i; ++j) {
        const T ds = pi[j] * (dp[j] - dot) * scale;
        const T* kj = k.row(j) + off;
        T* dkj = dk.row(j) + off;
        for (std::size_t t = 0; t < hd; ++t) {
          dqi[t] += ds * kj[t];
          dkj[t] += ds * qi[t];
        }
      }
    }
  }
}

// Row lookup into an embedding table.
template <class T>
Tensor2D<T> embed(const Tensor2D<T>& table, std::span<const std::int32_t> ids) {
  Tensor2D<T> out(ids.size(), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw DimensionError("embed: id " + std::to_string(ids[i]) +
                           " out of range");
    }
    std::copy_n(table.row(static_cast<std::size_t>(ids[i])), table.cols(),
                out.row(i));
  }
  return out;
}

template <class T>
void embed_backward(std::span<const std::int32_t> ids, const Tensor2D<T>& dout,
                    Gradient<T>& dtable) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    T* dst = dtable.row(static_cast<std::size_t>(ids[i]));
    const T* src = dout.row(i);
    for (std::size_t c = 0; c < dout.cols(); ++c) dst[c] += src[c];
  }
}

}  // namespace arvis

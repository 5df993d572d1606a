// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

// Decoder-only causal transformer over the unified text+image vocabulary.
// Pre-norm blocks (RMS norm), rotary positions in 1D or 2D layout, gated
// SiLU feed-forward, untied embedding and unembedding.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "arvis/error.hpp"
#include "arvis/kv_cache.hpp"
#include "arvis/numerics.hpp"
#include "arvis/random.hpp"
#include "arvis/tokenization.hpp"

namespace arvis {

enum class RopeMode : std::uint8_t { k1D = 1, k2D = 2 };

inline std::string to_string(RopeMode m) { return m == RopeMode::k1D ? "1d" : "2d"; }

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int model_dim = 128;
  int ffn_dim = 512;
  int total_vocab = VocabLayout{}.total_vocab();
  int max_seq_len = 600;
  RopeMode rope_mode = RopeMode::k1D;
  float rope_base = 10000.0f;
  // Image codebook size of the vocabulary layout the model was built for.
  int image_codebook = VocabLayout{}.image_codebook_size;

  int head_dim() const { return n_heads > 0 ? model_dim / n_heads : 0; }

  VocabLayout layout() const {
    return {total_vocab - image_codebook - VocabLayout::kNumSpecial,
            image_codebook};
  }

  void validate() const {
    if (n_layers < 1 || n_heads < 1 || model_dim < 1 || ffn_dim < 1 ||
        max_seq_len < 1) {
      throw ConfigError("model dimensions must be positive");
    }
    if (model_dim % n_heads != 0) {
      throw ConfigError("model_dim must be divisible by n_heads");
    }
    if (head_dim() % 2 != 0) throw ConfigError("head_dim must be even for RoPE");
    if (rope_mode == RopeMode::k2D && head_dim() % 4 != 0) {
      throw ConfigError("2D RoPE needs head_dim divisible by 4");
    }
    if (!(rope_base > 1.0f)) throw ConfigError("rope_base must exceed 1");
    if (image_codebook < 1 ||
        total_vocab <= image_codebook + VocabLayout::kNumSpecial) {
      throw ConfigError("total_vocab inconsistent with image codebook size");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct LayerParams {
  Tensor2D<T> attn_norm;  // 1 x d
  Tensor2D<T> wq, wk, wv, wo;  // d x d
  Tensor2D<T> ffn_norm;  // 1 x d
  Tensor2D<T> w_gate, w_up;  // d x f
  Tensor2D<T> w_down;  // f x d
};

template <class T>
struct Parameters {
  Tensor2D<T> tok_emb;  // V x d
  std::vector<LayerParams<T>> layers;
  Tensor2D<T> final_norm;  // 1 x d
  Tensor2D<T> unembed;  // d x V
};

// Visits every tensor in canonical declaration order with its stable name.
template <class P, class F>
void for_each_tensor(P& params, F&& f) {
  f(std::string("tok_emb"), params.tok_emb);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& l = params.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    f(p + "attn_norm", l.attn_norm);
    f(p + "wq", l.wq);
    f(p + "wk", l.wk);
    f(p + "wv", l.wv);
    f(p + "wo", l.wo);
    f(p + "ffn_norm", l.ffn_norm);
    f(p + "w_gate", l.w_gate);
    f(p + "w_up", l.w_up);
    f(p + "w_down", l.w_down);
  }
  f(std::string("final_norm"), params.final_norm);
  f(std::string("unembed"), params.unembed);
}

template <class T>
Parameters<T> zero_parameters(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.model_dim);
  const auto f = static_cast<std::size_t>(c.ffn_dim);
  const auto v = static_cast<std::size_t>(c.total_vocab);
  Parameters<T> p;
  p.tok_emb = Tensor2D<T>(v, d);
  for (int i = 0; i < c.n_layers; ++i) {
    LayerParams<T> l;
    l.attn_norm = Tensor2D<T>(1, d);
    l.wq = l.wk = l.wv = l.wo = Tensor2D<T>(d, d);
    l.ffn_norm = Tensor2D<T>(1, d);
    l.w_gate = l.w_up = Tensor2D<T>(d, f);
    l.w_down = Tensor2D<T>(f, d);
    p.layers.push_back(std::move(l));
  }
  p.final_norm = Tensor2D<T>(1, d);
  p.unembed = Tensor2D<T>(d, v);
  return p;
}

template <class T>
struct Model {
  ModelConfig config;
  Parameters<T> params;

  VocabLayout layout() const { return config.layout(); }

  template <class U>
  Model<U> cast() const {
    Model<U> m{config, zero_parameters<U>(config)};
    auto dst = collect_ptrs(m.params);
    std::size_t i = 0;
    for_each_tensor(params, [&](const std::string&, const Tensor2D<T>& t) {
      *dst[i++] = t.template cast<U>();
    });
    return m;
  }

 private:
  template <class U>
  static std::vector<Tensor2D<U>*> collect_ptrs(Parameters<U>& p) {
    std::vector<Tensor2D<U>*> out;
    for_each_tensor(p, [&](const std::string&, Tensor2D<U>& t) { out.push_back(&t); });
    return out;
  }
};

// Seeded Gaussian init (std 0.02); norm gains one; the attention output and
// feed-forward down projections of every block start at zero.
template <class T = float>
Model<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model<T> m{config, zero_parameters<T>(config)};
  Rng rng(seed);
  constexpr double kStd = 0.02;
  for_each_tensor(m.params, [&](const std::string& name, Tensor2D<T>& t) {
    const bool is_norm = name.ends_with("norm");
    const bool zero_init = name.ends_with(".wo") || name.ends_with(".w_down");
    for (auto& x : t.values()) {
      if (is_norm) {
        x = T{1};
      } else if (zero_init) {
        x = T{0};
      } else {
        x = static_cast<T>(rng.normal() * kStd);
      }
    }
  });
  return m;
}

// ---------------------------------------------------------------------------
// Positions and rotary encoding.

// 1D: row holds the sequence index, col is 0. 2D: prefix tokens sit at
// (index, 0); image token k sits at (prefix_len + k / w, k % w); EOI follows
// on the next row.
struct Position {
  std::int32_t row = 0;
  std::int32_t col = 0;
  friend bool operator==(const Position&, const Position&) = default;
  friend auto operator<=>(const Position&, const Position&) = default;
};

inline Position position_at(int index, int prompt_len, int grid_w,
                            RopeMode mode) {
  const int prefix = prompt_len + 2;
  if (mode == RopeMode::k1D || index < prefix || grid_w <= 0) {
    return {index, 0};
  }
  const int k = index - prefix;
  return {prefix + k / grid_w, k % grid_w};
}

inline std::vector<Position> assign_positions(int length, int prompt_len,
                                              int image_len, int grid_w,
                                              RopeMode mode) {
  std::vector<Position> out;
  out.reserve(static_cast<std::size_t>(length));
  const int prefix = prompt_len + 2;
  for (int i = 0; i < length; ++i) {
    if (mode == RopeMode::k2D && i == prefix + image_len && grid_w > 0) {
      // EOI starts the row after the last image row.
      out.push_back({prefix + (image_len + grid_w - 1) / grid_w, 0});
    } else {
      out.push_back(position_at(i, prompt_len, grid_w, mode));
    }
  }
  return out;
}

inline std::vector<Position> assign_positions(const TokenSequence& seq,
                                              int grid_w, RopeMode mode) {
  return assign_positions(static_cast<int>(seq.ids.size()), seq.prompt_len,
                          seq.image_len, grid_w, mode);
}

// cos/sin of every rotary pair for one position.
template <class T>
struct RopeAngles {
  std::vector<T> cos, sin;
};

template <class T>
RopeAngles<T> rope_angles(Position pos, std::size_t head_dim, RopeMode mode,
                          double base) {
  if (head_dim % 2 != 0) throw ConfigError("RoPE needs an even head_dim");
  const std::size_t pairs = head_dim / 2;
  RopeAngles<T> a{std::vector<T>(pairs), std::vector<T>(pairs)};
  for (std::size_t i = 0; i < pairs; ++i) {
    double p = pos.row;
    double freq;
    if (mode == RopeMode::k1D) {
      freq = std::pow(base, -2.0 * static_cast<double>(i) /
                                static_cast<double>(head_dim));
    } else {
      if (head_dim % 4 != 0) throw ConfigError("2D RoPE needs head_dim % 4 == 0");
      const std::size_t half = pairs / 2;
      const std::size_t j = i < half ? i : i - half;
      if (i >= half) p = pos.col;
      freq = std::pow(base, -2.0 * static_cast<double>(j) /
                                static_cast<double>(head_dim / 2));
    }
    a.cos[i] = static_cast<T>(std::cos(p * freq));
    a.sin[i] = static_cast<T>(std::sin(p * freq));
  }
  return a;
}

template <class T>
void apply_rope(T* v, std::size_t head_dim, const RopeAngles<T>& a,
                bool inverse = false) {
  for (std::size_t i = 0; i < head_dim / 2; ++i) {
    const T c = a.cos[i];
    const T s = inverse ? -a.sin[i] : a.sin[i];
    const T x0 = v[2 * i], x1 = v[2 * i + 1];
    v[2 * i] = x0 * c - x1 * s;
    v[2 * i + 1] = x0 * s + x1 * c;
  }
}

// Rotates one head vector in place.
template <class T>
void rope_rotate(std::span<T> v, Position pos, RopeMode mode,
                 double base = 10000.0) {
  apply_rope(v.data(), v.size(), rope_angles<T>(pos, v.size(), mode, base));
}

// ---------------------------------------------------------------------------
// Shared row-wise building blocks (used identically by training and
// inference paths).

namespace detail {

template <class T>
void rope_rows(Tensor2D<T>& x, std::span<const Position> pos,
               const ModelConfig& c) {
  const auto hd = static_cast<std::size_t>(c.head_dim());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto a = rope_angles<T>(pos[r], hd, c.rope_mode, c.rope_base);
    for (int h = 0; h < c.n_heads; ++h) {
      apply_rope(x.row(r) + static_cast<std::size_t>(h) * hd, hd, a);
    }
  }
}

template <class T>
Tensor2D<T> norm_rows(const Tensor2D<T>& x, const Tensor2D<T>& gain,
                      std::vector<T>* inv_out) {
  Tensor2D<T> y(x.rows(), x.cols());
  if (inv_out) inv_out->resize(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T inv = rms_norm_into<T>(x.row_span(r), gain.row_span(0), y.row_span(r));
    if (inv_out) (*inv_out)[r] = inv;
  }
  return y;
}

template <class T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

template <class T>
Tensor2D<T> swiglu(const Tensor2D<T>& a, const Tensor2D<T>& b) {
  Tensor2D<T> u(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T x = a.data()[i];
    u.data()[i] = x * sigmoid(x) * b.data()[i];
  }
  return u;
}

template <class T>
void add_into(Tensor2D<T>& x, const Tensor2D<T>& y) {
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += y.data()[i];
}

inline void check_tokens(std::span<const TokenId> ids, const ModelConfig& c) {
  if (ids.size() > static_cast<std::size_t>(c.max_seq_len)) {
    throw CapacityError("sequence of " + std::to_string(ids.size()) +
                        " tokens exceeds max_seq_len " +
                        std::to_string(c.max_seq_len));
  }
  for (TokenId t : ids) {
    if (t < 0 || t >= c.total_vocab) {
      throw VocabularyError("token " + std::to_string(t) + " outside vocabulary");
    }
  }
}

inline std::uint64_t row_flops(const ModelConfig& c) {
  const std::uint64_t d = static_cast<std::uint64_t>(c.model_dim);
  const std::uint64_t f = static_cast<std::uint64_t>(c.ffn_dim);
  const std::uint64_t v = static_cast<std::uint64_t>(c.total_vocab);
  return static_cast<std::uint64_t>(c.n_layers) * (2 * 4 * d * d + 2 * 3 * d * f) +
         2 * d * v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Full-sequence forward with stored activations, and its backward pass.

template <class T>
struct LayerTrace {
  Tensor2D<T> x_in;
  std::vector<T> inv_attn;
  Tensor2D<T> h_attn;
  Tensor2D<T> q, k, v;  // q, k after rotation
  AttentionResult<T> att;
  Tensor2D<T> x_mid;
  std::vector<T> inv_ffn;
  Tensor2D<T> h_ffn;
  Tensor2D<T> gate, up, act;
};

template <class T>
struct ForwardTrace {
  std::vector<TokenId> ids;
  std::vector<Position> positions;
  std::vector<LayerTrace<T>> layers;
  Tensor2D<T> x_final;
  std::vector<T> inv_final;
  Tensor2D<T> h_final;
  Tensor2D<T> logits;  // L x V
};

template <class T>
ForwardTrace<T> forward_train(const Model<T>& m, std::span<const TokenId> ids,
                              std::span<const Position> positions,
                              FlopCounter* flops = nullptr) {
  const ModelConfig& c = m.config;
  detail::check_tokens(ids, c);
  if (positions.size() != ids.size()) {
    throw DimensionError("forward: positions length != tokens length");
  }
  ForwardTrace<T> tr;
  tr.ids.assign(ids.begin(), ids.end());
  tr.positions.assign(positions.begin(), positions.end());
  Tensor2D<T> x = embed(m.params.tok_emb, ids);
  for (const auto& lp : m.params.layers) {
    LayerTrace<T> lt;
    lt.x_in = x;
    lt.h_attn = detail::norm_rows(x, lp.attn_norm, &lt.inv_attn);
    lt.q = matmul(lt.h_attn, lp.wq, flops);
    lt.k = matmul(lt.h_attn, lp.wk, flops);
    lt.v = matmul(lt.h_attn, lp.wv, flops);
    detail::rope_rows(lt.q, positions, c);
    detail::rope_rows(lt.k, positions, c);
    lt.att = causal_attention(lt.q, lt.k, lt.v,
                              static_cast<std::size_t>(c.n_heads), flops);
    detail::add_into(x, matmul(lt.att.out, lp.wo, flops));
    lt.x_mid = x;
    lt.h_ffn = detail::norm_rows(x, lp.ffn_norm, &lt.inv_ffn);
    lt.gate = matmul(lt.h_ffn, lp.w_gate, flops);
    lt.up = matmul(lt.h_ffn, lp.w_up, flops);
    lt.act = detail::swiglu(lt.gate, lt.up);
    detail::add_into(x, matmul(lt.act, lp.w_down, flops));
    tr.layers.push_back(std::move(lt));
  }
  tr.x_final = x;
  tr.h_final = detail::norm_rows(x, m.params.final_norm, &tr.inv_final);
  tr.logits = matmul(tr.h_final, m.params.unembed, flops);
  return tr;
}

// Accumulates parameter gradients of a scalar loss given dL/dlogits.
template <class T>
void backward(const Model<T>& m, const ForwardTrace<T>& tr,
              const Tensor2D<T>& dlogits, Parameters<T>& grads) {
  const ModelConfig& c = m.config;
  const std::size_t len = tr.ids.size();
  const std::size_t d = static_cast<std::size_t>(c.model_dim);
  const std::size_t hd = static_cast<std::size_t>(c.head_dim());
  if (dlogits.rows() != len ||
      dlogits.cols() != static_cast<std::size_t>(c.total_vocab)) {
    throw DimensionError("backward: dlogits shape");
  }

  Tensor2D<T> dh(len, d);
  matmul_backward(tr.h_final, m.params.unembed, dlogits, &dh, &grads.unembed);
  Tensor2D<T> dx(len, d);
  for (std::size_t r = 0; r < len; ++r) {
    rms_norm_backward<T>(tr.x_final.row_span(r), m.params.final_norm.row_span(0),
                         tr.inv_final[r], dh.row_span(r), dx.row_span(r),
                         grads.final_norm.row_span(0));
  }

  for (std::size_t li = c.n_layers; li-- > 0;) {
    const auto& lp = m.params.layers[li];
    const auto& lt = tr.layers[li];
    auto& lg = grads.layers[li];

    // Feed-forward branch: x = x_mid + act * w_down.
    Tensor2D<T> dact(len, static_cast<std::size_t>(c.ffn_dim));
    matmul_backward(lt.act, lp.w_down, dx, &dact, &lg.w_down);
    Tensor2D<T> dgate(lt.gate.rows(), lt.gate.cols());
    Tensor2D<T> dup(lt.up.rows(), lt.up.cols());
    for (std::size_t i = 0; i < lt.gate.size(); ++i) {
      const T a = lt.gate.data()[i];
      const T sg = detail::sigmoid(a);
      const T silu = a * sg;
      dup.data()[i] = dact.data()[i] * silu;
      dgate.data()[i] =
          dact.data()[i] * lt.up.data()[i] * sg * (T{1} + a * (T{1} - sg));
    }
    Tensor2D<T> dhf(len, d);
    matmul_backward(lt.h_ffn, lp.w_gate, dgate, &dhf, &lg.w_gate);
    matmul_backward(lt.h_ffn, lp.w_up, dup, &dhf, &lg.w_up);
    for (std::size_t r = 0; r < len; ++r) {
      rms_norm_backward<T>(lt.x_mid.row_span(r), lp.ffn_norm.row_span(0),
                           lt.inv_ffn[r], dhf.row_span(r), dx.row_span(r),
                           lg.ffn_norm.row_span(0));
    }

    // Attention branch: x_mid = x_in + att * wo.
    Tensor2D<T> datt(len, d);
    matmul_backward(lt.att.out, lp.wo, dx, &datt, &lg.wo);
    Tensor2D<T> dq(len, d), dk(len, d), dv(len, d);
    causal_attention_backward(lt.q, lt.k, lt.v, lt.att.probs, datt, dq, dk, dv);
    for (std::size_t r = 0; r < len; ++r) {
      const auto a = rope_angles<T>(tr.positions[r], hd, c.rope_mode, c.rope_base);
      for (int h = 0; h < c.n_heads; ++h) {
        apply_rope(dq.row(r) + static_cast<std::size_t>(h) * hd, hd, a, true);
        apply_rope(dk.row(r) + static_cast<std::size_t>(h) * hd, hd, a, true);
      }
    }
    Tensor2D<T> dha(len, d);
    matmul_backward(lt.h_attn, lp.wq, dq, &dha, &lg.wq);
    matmul_backward(lt.h_attn, lp.wk, dk, &dha, &lg.wk);
    matmul_backward(lt.h_attn, lp.wv, dv, &dha, &lg.wv);
    for (std::size_t r = 0; r < len; ++r) {
      rms_norm_backward<T>(lt.x_in.row_span(r), lp.attn_norm.row_span(0),
                           lt.inv_attn[r], dha.row_span(r), dx.row_span(r),
                           lg.attn_norm.row_span(0));
    }
  }
  embed_backward<T>(tr.ids, dx, grads.tok_emb);
}

// ---------------------------------------------------------------------------
// Inference forward: computes only positions past the cached prefix.

template <class T>
struct CacheRef {
  BlockPool<T>* pool = nullptr;
  CacheHandle* handle = nullptr;
};

template <class T>
struct ForwardRequest {
  std::span<const TokenId> ids;        // full sequence
  std::span<const Position> positions;  // full sequence
  CacheRef<T> cache;                    // optional
  // Rows to append to the cache after the pass; -1 appends every new row.
  long commit = -1;
};

template <class T>
struct ForwardResult {
  std::size_t first_row = 0;  // sequence index of logits row 0
  Tensor2D<T> logits;         // new rows x V
  KvRows<T> new_kv;           // keys/values of the new rows
};

// Runs several independent sequences in one pass. Projections operate on
// the stacked new rows of all requests; attention reads each request's own
// cache. Each row's arithmetic is identical to running it alone.
template <class T>
std::vector<ForwardResult<T>> forward_batch(const Model<T>& m,
                                            std::span<ForwardRequest<T>> reqs,
                                            FlopCounter* flops = nullptr) {
  const ModelConfig& c = m.config;
  const std::size_t d = static_cast<std::size_t>(c.model_dim);
  const std::size_t nl = static_cast<std::size_t>(c.n_layers);
  const std::size_t nh = static_cast<std::size_t>(c.n_heads);
  const std::size_t hd = static_cast<std::size_t>(c.head_dim());

  std::vector<std::size_t> start(reqs.size()), offset(reqs.size() + 1, 0);
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    auto& r = reqs[i];
    detail::check_tokens(r.ids, c);
    if (r.positions.size() != r.ids.size()) {
      throw DimensionError("forward: positions length != tokens length");
    }
    std::size_t s = 0;
    if (r.cache.handle) {
      const CacheHandle& h = *r.cache.handle;
      r.cache.pool->check(h);
      const auto& cached = h.tokens();
      if (cached.size() > r.ids.size() ||
          !std::equal(cached.begin(), cached.end(), r.ids.begin())) {
        throw CacheError("cached prefix does not match the sequence");
      }
      s = h.filled();
    }
    start[i] = s;
    offset[i + 1] = offset[i] + (r.ids.size() - s);
  }
  const std::size_t rows = offset.back();

  std::vector<TokenId> new_ids;
  std::vector<Position> new_pos;
  new_ids.reserve(rows);
  new_pos.reserve(rows);
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    new_ids.insert(new_ids.end(), reqs[i].ids.begin() + static_cast<long>(start[i]),
                   reqs[i].ids.end());
    new_pos.insert(new_pos.end(),
                   reqs[i].positions.begin() + static_cast<long>(start[i]),
                   reqs[i].positions.end());
  }

  std::vector<ForwardResult<T>> out(reqs.size());
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    out[i].first_row = start[i];
    out[i].new_kv = KvRows<T>(nl, offset[i + 1] - offset[i], d);
  }

  Tensor2D<T> x = embed(m.params.tok_emb, std::span<const TokenId>(new_ids));
  std::vector<const T*> krows, vrows;
  std::vector<T> scratch;
  for (std::size_t li = 0; li < nl; ++li) {
    const auto& lp = m.params.layers[li];
    Tensor2D<T> h = detail::norm_rows(x, lp.attn_norm, static_cast<std::vector<T>*>(nullptr));
    Tensor2D<T> q = matmul(h, lp.wq, flops);
    Tensor2D<T> k = matmul(h, lp.wk, flops);
    Tensor2D<T> v = matmul(h, lp.wv, flops);
    detail::rope_rows(q, std::span<const Position>(new_pos), c);
    detail::rope_rows(k, std::span<const Position>(new_pos), c);
    Tensor2D<T> att(rows, d);
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      const std::size_t n_new = offset[i + 1] - offset[i];
      const std::size_t total = start[i] + n_new;
      krows.resize(total);
      vrows.resize(total);
      scratch.resize(total);
      for (std::size_t j = 0; j < start[i]; ++j) {
        krows[j] = reqs[i].cache.pool->key_row(*reqs[i].cache.handle, li, j);
        vrows[j] = reqs[i].cache.pool->value_row(*reqs[i].cache.handle, li, j);
      }
      for (std::size_t j = 0; j < n_new; ++j) {
        krows[start[i] + j] = k.row(offset[i] + j);
        vrows[start[i] + j] = v.row(offset[i] + j);
        std::copy_n(k.row(offset[i] + j), d, out[i].new_kv.k[li].row(j));
        std::copy_n(v.row(offset[i] + j), d, out[i].new_kv.v[li].row(j));
      }
      for (std::size_t j = 0; j < n_new; ++j) {
        const std::size_t nk = start[i] + j + 1;
        attend_row<T>(q.row(offset[i] + j), std::span(krows.data(), nk),
                      std::span(vrows.data(), nk), nh, hd,
                      att.row(offset[i] + j), nullptr, scratch.data());
        if (flops) flops->add(4ull * nk * d);
      }
    }
    detail::add_into(x, matmul(att, lp.wo, flops));
    Tensor2D<T> h2 = detail::norm_rows(x, lp.ffn_norm, static_cast<std::vector<T>*>(nullptr));
    Tensor2D<T> act = detail::swiglu(matmul(h2, lp.w_gate, flops),
                                     matmul(h2, lp.w_up, flops));
    detail::add_into(x, matmul(act, lp.w_down, flops));
  }
  Tensor2D<T> hf = detail::norm_rows(x, m.params.final_norm, static_cast<std::vector<T>*>(nullptr));
  Tensor2D<T> logits = matmul(hf, m.params.unembed, flops);

  const std::size_t vocab = static_cast<std::size_t>(c.total_vocab);
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    const std::size_t n_new = offset[i + 1] - offset[i];
    out[i].logits = Tensor2D<T>(n_new, vocab);
    std::copy_n(logits.row(offset[i]), n_new * vocab, out[i].logits.data());
    auto& r = reqs[i];
    if (r.cache.handle) {
      const std::size_t n_commit =
          r.commit < 0 ? n_new : std::min<std::size_t>(n_new, static_cast<std::size_t>(r.commit));
      r.cache.pool->append(*r.cache.handle, out[i].new_kv, n_commit,
                           r.ids.subspan(start[i], n_commit));
    }
  }
  return out;
}

template <class T>
ForwardResult<T> forward(const Model<T>& m, std::span<const TokenId> ids,
                         std::span<const Position> positions,
                         CacheRef<T> cache = {}, long commit = -1,
                         FlopCounter* flops = nullptr) {
  ForwardRequest<T> req{ids, positions, cache, commit};
  return std::move(forward_batch<T>(m, std::span(&req, 1), flops).front());
}

}  // namespace arvis

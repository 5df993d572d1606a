// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

// Language-model loss over image tokens, AdamW, gradient clipping, and the
// toyworld data source for the pretrain and SFT stages.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "arvis/error.hpp"
#include "arvis/numerics.hpp"
#include "arvis/parallel.hpp"
#include "arvis/random.hpp"
#include "arvis/tokenization.hpp"
#include "arvis/toyworld.hpp"
#include "arvis/transformer.hpp"

namespace arvis {

template <class T>
struct LossResult {
  double loss = 0.0;
  Tensor2D<T> dlogits;  // d loss / d logits
  int tokens = 0;
};

// Mean over masked rows of -log softmax(logits[r])[targets[r]].
template <class T>
LossResult<T> lm_loss(const Tensor2D<T>& logits, std::span<const TokenId> targets,
                      std::span<const std::uint8_t> mask) {
  if (targets.size() != logits.rows() || mask.size() != logits.rows()) {
    throw DimensionError("lm_loss: targets/mask length != logits rows");
  }
  LossResult<T> r;
  r.dlogits = Tensor2D<T>(logits.rows(), logits.cols());
  for (auto m : mask) r.tokens += m ? 1 : 0;
  if (r.tokens == 0) throw DegenerateBatchError("lm_loss: empty loss mask");
  const T inv_n = T{1} / static_cast<T>(r.tokens);
  std::vector<T> p(logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    const auto t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= logits.cols()) {
      throw VocabularyError("lm_loss: target id out of range");
    }
    const auto row = logits.row_span(i);
    T mx = row[0];
    for (T x : row) mx = std::max(mx, x);
    T sum{0};
    for (T x : row) sum += std::exp(x - mx);
    const T lse = mx + std::log(sum);
    r.loss += static_cast<double>(lse - row[static_cast<std::size_t>(t)]);
    T* d = r.dlogits.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) d[j] = std::exp(row[j] - lse) * inv_n;
    d[static_cast<std::size_t>(t)] -= inv_n;
  }
  r.loss /= r.tokens;
  return r;
}

// Next-token targets and the mask of rows that predict image tokens.
inline void image_targets(const TokenSequence& seq, std::vector<TokenId>& targets,
                          std::vector<std::uint8_t>& mask) {
  const std::size_t n = seq.ids.size();
  targets.assign(n, 0);
  mask.assign(n, 0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    targets[i] = seq.ids[i + 1];
    const int next = static_cast<int>(i) + 1;
    mask[i] = next >= seq.image_begin() && next < seq.image_end();
  }
}

// ---------------------------------------------------------------------------
// Optimizer.

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <class T>
struct OptimState {
  Parameters<T> m;
  Parameters<T> v;
  std::int64_t step = 0;
  AdamWConfig cfg;

  OptimState() = default;
  OptimState(const ModelConfig& c, AdamWConfig a)
      : m(zero_parameters<T>(c)), v(zero_parameters<T>(c)), cfg(a) {}
};

template <class T>
std::vector<Tensor2D<T>*> tensor_list(Parameters<T>& p) {
  std::vector<Tensor2D<T>*> out;
  for_each_tensor(p, [&](const std::string&, Tensor2D<T>& t) { out.push_back(&t); });
  return out;
}

template <class T>
std::vector<const Tensor2D<T>*> tensor_list(const Parameters<T>& p) {
  std::vector<const Tensor2D<T>*> out;
  for_each_tensor(p, [&](const std::string&, const Tensor2D<T>& t) { out.push_back(&t); });
  return out;
}

// Decoupled decay p <- p(1 - lr*wd), then the bias-corrected Adam update.
// A non-finite gradient aborts before anything changes.
template <class T>
void adamw_step(Parameters<T>& params, const Parameters<T>& grads,
                OptimState<T>& st, double lr) {
  auto ps = tensor_list(params);
  auto gs = tensor_list(grads);
  auto ms = tensor_list(st.m);
  auto vs = tensor_list(st.v);
  if (ps.size() != gs.size() || ps.size() != ms.size()) {
    throw DimensionError("adamw: parameter/gradient structure mismatch");
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!ps[i]->same_shape(*gs[i]) || !ps[i]->same_shape(*ms[i])) {
      throw DimensionError("adamw: tensor shape mismatch");
    }
    if (!all_finite(gs[i]->values())) {
      throw DivergenceError("non-finite gradient; optimizer step aborted");
    }
  }
  const auto& c = st.cfg;
  st.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  const double decay = 1.0 - lr * c.weight_decay;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto p = ps[i]->values();
    auto g = gs[i]->values();
    auto m = ms[i]->values();
    auto v = vs[i]->values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double upd = (mj / bc1) / (std::sqrt(vj / bc2) + c.eps);
      p[j] = static_cast<T>(static_cast<double>(p[j]) * decay - lr * upd);
    }
  }
}

template <class T>
double global_norm(const Parameters<T>& g) {
  double s = 0.0;
  for (const auto* t : tensor_list(g)) {
    for (T x : t->values()) s += static_cast<double>(x) * static_cast<double>(x);
  }
  return std::sqrt(s);
}

// Scales gradients so their global norm is at most max_norm; returns the
// norm before clipping.
template <class T>
double clip_grad_norm(Parameters<T>& g, double max_norm) {
  const double n = global_norm(g);
  if (max_norm > 0.0 && n > max_norm) {
    const T s = static_cast<T>(max_norm / n);
    for (auto* t : tensor_list(g)) {
      for (T& x : t->values()) x *= s;
    }
  }
  return n;
}

template <class T>
void add_parameters(Parameters<T>& acc, const Parameters<T>& g, T scale = T{1}) {
  auto a = tensor_list(acc);
  auto b = tensor_list(g);
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto x = a[i]->values();
    auto y = b[i]->values();
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += scale * y[j];
  }
}

// ---------------------------------------------------------------------------
// Data.

struct Example {
  Scene scene;
  std::string caption;
  std::vector<TokenId> prompt;  // text ids, or {NULLPROMPT} after dropout
  ImageTokenGrid grid;
};

struct DataSpec {
  int grid_h = 8;
  int grid_w = 8;
  bool canonical = false;  // SFT: single style, exact captions
  double prompt_dropout = 0.1;
  double texture_prob = 0.05;  // pretrain background noise
};

inline Example make_example(Rng& rng, const DataSpec& spec, const VocabLayout& layout) {
  Example ex;
  const auto cat = kAllCategories[rng.below(kAllCategories.size())];
  ex.scene = sample_scene(rng, cat);
  ex.caption = caption(ex.scene, cat);
  RenderStyle style;
  if (!spec.canonical) {
    style.random_glyph_style = true;
    style.texture_prob = spec.texture_prob;
  }
  ex.grid = render_scene(ex.scene, spec.grid_h, spec.grid_w,
                         layout.image_codebook_size, style, &rng);
  if (rng.uniform() < spec.prompt_dropout) {
    ex.prompt = {layout.null_prompt()};
  } else {
    ex.prompt = encode_text(ex.caption, layout);
  }
  return ex;
}

template <class T>
struct BatchGradient {
  double loss = 0.0;  // mean of per-sequence losses
  Parameters<T> grads;
};

// Mean image-token LM loss over the batch and its parameter gradient.
// Per-sequence gradients are summed in index order, so the result does not
// depend on the worker count.
template <class T>
BatchGradient<T> lm_batch_gradient(const Model<T>& model,
                                   const std::vector<TokenSequence>& batch,
                                   int grid_w, int threads,
                                   FlopCounter* flops = nullptr) {
  if (batch.empty()) throw DegenerateBatchError("empty batch");
  const std::size_t n = batch.size();
  std::vector<Parameters<T>> per(n);
  std::vector<double> losses(n);
  std::vector<FlopCounter> counters(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto& seq = batch[i];
    const auto pos = assign_positions(seq, grid_w, model.config.rope_mode);
    auto tr = forward_train<T>(model, seq.ids, pos, &counters[i]);
    std::vector<TokenId> targets;
    std::vector<std::uint8_t> mask;
    image_targets(seq, targets, mask);
    auto lr = lm_loss<T>(tr.logits, targets, mask);
    const T scale = T{1} / static_cast<T>(n);
    for (T& x : lr.dlogits.values()) x *= scale;
    per[i] = zero_parameters<T>(model.config);
    backward<T>(model, tr, lr.dlogits, per[i]);
    losses[i] = lr.loss;
  });
  BatchGradient<T> out;
  out.grads = std::move(per[0]);
  for (std::size_t i = 1; i < n; ++i) add_parameters(out.grads, per[i]);
  for (std::size_t i = 0; i < n; ++i) {
    out.loss += losses[i];
    if (flops) flops->add(counters[i].flops);
  }
  out.loss /= static_cast<double>(n);
  return out;
}

}  // namespace arvis

// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

// Inference engine: classifier-free guidance, top-k / greedy sampling,
// sequential generation with or without the paged cache, lockstep batched
// generation with prefix sharing, and speculative Jacobi decoding.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arvis/error.hpp"
#include "arvis/kv_cache.hpp"
#include "arvis/random.hpp"
#include "arvis/tokenization.hpp"
#include "arvis/transformer.hpp"

namespace arvis {

enum class SamplingMode : std::uint8_t { kGreedy, kTopK };

struct SamplerConfig {
  SamplingMode mode = SamplingMode::kTopK;
  int top_k = 0;  // 0 selects the whole image codebook
  float temperature = 1.0f;
  float cfg_scale = 2.0f;
  std::uint64_t seed = 0;

  void validate(int codebook) const {
    if (mode == SamplingMode::kGreedy) return;
    if (top_k < 0 || top_k > codebook) {
      throw ConfigError("top_k must lie in [1, codebook] (0 = codebook)");
    }
    if (!(temperature > 0.0f)) throw ConfigError("temperature must be positive");
    if (!(cfg_scale >= 0.0f)) throw ConfigError("cfg_scale must be >= 0");
  }
};

enum class Acceptance : std::uint8_t { kGreedy, kSpeculative };

struct SjdConfig {
  int window = 0;  // 0: the whole remaining suffix
  int max_jacobi_iters = 0;  // 0: number of image tokens
  Acceptance acceptance = Acceptance::kGreedy;
};

struct DecodeStats {
  std::uint64_t forward_passes = 0;  // per stream
  std::uint64_t tokens_accepted = 0;
  double wall_time = 0.0;  // seconds
  std::uint64_t flops = 0;
  int streams = 0;
  // accepted_per_pass[k] = passes that accepted k tokens.
  std::vector<std::uint64_t> accepted_per_pass;
};

// l = uncond + s * (cond - uncond), with s = 1 and s = 0 returning the
// respective stream exactly.
template <class T>
std::vector<T> cfg_combine(std::span<const T> cond, std::span<const T> uncond,
                           T scale) {
  if (cond.size() != uncond.size()) {
    throw DimensionError("cfg_combine: logit lengths differ");
  }
  if (scale == T{1}) return {cond.begin(), cond.end()};
  if (scale == T{0}) return {uncond.begin(), uncond.end()};
  std::vector<T> out(cond.size());
  for (std::size_t i = 0; i < cond.size(); ++i) {
    out[i] = uncond[i] + scale * (cond[i] - uncond[i]);
  }
  return out;
}

// Lowest index among the maxima.
template <class T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// Probability over the given logits that sample_next draws from: a point
// mass at the argmax (greedy) or the temperature softmax renormalized over
// the k largest logits (ties broken toward lower ids).
template <class T>
std::vector<double> sampling_distribution(std::span<const T> logits,
                                          const SamplerConfig& cfg) {
  const std::size_t n = logits.size();
  bool any = false;
  for (T x : logits) any = any || x > -std::numeric_limits<T>::infinity();
  if (n == 0 || !any) {
    throw DegenerateDistributionError("every logit is -inf");
  }
  std::vector<double> p(n, 0.0);
  if (cfg.mode == SamplingMode::kGreedy) {
    p[argmax(logits)] = 1.0;
    return p;
  }
  const std::size_t k =
      cfg.top_k <= 0 ? n : std::min<std::size_t>(n, static_cast<std::size_t>(cfg.top_k));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return logits[a] > logits[b];
  });
  const double t = cfg.temperature;
  const double mx = static_cast<double>(logits[order[0]]);
  double sum = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    const double x = static_cast<double>(logits[order[r]]);
    const double e = std::isfinite(x) ? std::exp((x - mx) / t) : 0.0;
    p[order[r]] = e;
    sum += e;
  }
  for (auto& x : p) x /= sum;
  return p;
}

// Inverse-CDF draw in ascending index order.
inline std::size_t draw(std::span<const double> p, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    acc += p[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

// Returns an index into `logits`. Greedy mode does not consume randomness.
template <class T>
std::size_t sample_next(std::span<const T> logits, const SamplerConfig& cfg,
                        Rng& rng) {
  const auto p = sampling_distribution(logits, cfg);
  if (cfg.mode == SamplingMode::kGreedy) return argmax(std::span<const double>(p));
  return draw(p, rng);
}

// log softmax over a logit slice, evaluated at one index.
template <class T>
T log_softmax_at(std::span<const T> logits, std::size_t index) {
  T mx = logits[0];
  for (T x : logits) mx = std::max(mx, x);
  T sum{0};
  for (T x : logits) sum += std::exp(x - mx);
  return (logits[index] - mx) - std::log(sum);
}

// ---------------------------------------------------------------------------
// Sequential generation.

struct GenerateOptions {
  bool use_cache = true;
  bool record_logits = false;    // combined image-range logits per step
  bool record_logprobs = false;  // conditional-stream log-prob of each token
  FlopCounter* flops = nullptr;
};

template <class T>
struct GenerateResult {
  ImageTokenGrid grid;
  DecodeStats stats;
  std::vector<std::vector<T>> step_logits;
  std::vector<T> logprobs;
};

struct GenerateRequest {
  std::vector<TokenId> prompt;
  SamplerConfig sampler;
};

namespace decode_detail {

template <class T>
struct Stream {
  std::size_t request = 0;
  bool conditional = true;
  int prompt_len = 0;
  std::vector<TokenId> ids;
  std::vector<Position> positions;
  CacheHandle handle;
  std::vector<T> last_logits;  // image-code slice of the latest row
};

inline std::vector<TokenId> stream_prompt(const std::vector<TokenId>& prompt,
                                          bool conditional,
                                          const VocabLayout& layout) {
  if (conditional) return prompt;
  return {layout.null_prompt()};
}

template <class T>
void push_token(Stream<T>& s, TokenId t, int grid_w, RopeMode mode) {
  s.positions.push_back(position_at(static_cast<int>(s.ids.size()),
                                    s.prompt_len, grid_w, mode));
  s.ids.push_back(t);
}

template <class T>
std::vector<T> image_slice(const Tensor2D<T>& logits, std::size_t row,
                           const VocabLayout& layout) {
  const T* r = logits.row(row) + layout.image_base();
  return {r, r + layout.image_codebook_size};
}

// Stream roles for a guidance scale: s = 1 needs only the conditional
// stream, s = 0 only the unconditional one.
inline std::vector<bool> stream_roles(float cfg_scale) {
  if (cfg_scale == 1.0f) return {true};
  if (cfg_scale == 0.0f) return {false};
  return {true, false};
}

}  // namespace decode_detail

// Lockstep generation of several requests. With the cache on, identical
// prompt prefixes are prefilled once and forked, and every decode step runs
// all streams in a single batched forward. Outputs are bit-identical to
// generating each request alone.
template <class T>
std::vector<GenerateResult<T>> generate_batch(
    const Model<T>& model, const std::vector<GenerateRequest>& requests,
    int grid_h, int grid_w, const GenerateOptions& opt = {},
    BlockPool<T>* shared_pool = nullptr) {
  using namespace decode_detail;
  const auto t0 = std::chrono::steady_clock::now();
  const VocabLayout layout = model.layout();
  const ModelConfig& mc = model.config;
  const int hw = grid_h * grid_w;
  if (grid_h <= 0 || grid_w <= 0) throw DimensionError("grid dims must be positive");

  std::vector<Stream<T>> streams;
  std::vector<GenerateResult<T>> results(requests.size());
  std::vector<Rng> rngs;
  for (std::size_t r = 0; r < requests.size(); ++r) {
    const auto& req = requests[r];
    req.sampler.validate(layout.image_codebook_size);
    check_prompt(req.prompt, layout);
    rngs.emplace_back(req.sampler.seed);
    for (bool cond : stream_roles(req.sampler.cfg_scale)) {
      Stream<T> s;
      s.request = r;
      s.conditional = cond;
      const auto p = stream_prompt(req.prompt, cond, layout);
      s.prompt_len = static_cast<int>(p.size());
      for (TokenId t : prompt_prefix(p, layout)) push_token(s, t, grid_w, mc.rope_mode);
      if (s.ids.size() + static_cast<std::size_t>(hw) > static_cast<std::size_t>(mc.max_seq_len)) {
        throw CapacityError("prompt plus image exceeds max_seq_len");
      }
      streams.push_back(std::move(s));
    }
    results[r].grid = ImageTokenGrid(grid_h, grid_w);
    results[r].stats.streams = static_cast<int>(stream_roles(req.sampler.cfg_scale).size());
  }

  std::optional<BlockPool<T>> local_pool;
  BlockPool<T>* pool = shared_pool;
  if (opt.use_cache && !pool) {
    std::size_t blocks = 0;
    for (const auto& s : streams) {
      blocks += (s.ids.size() + static_cast<std::size_t>(hw) + BlockPool<T>::kDefaultBlockSize - 1) /
                    BlockPool<T>::kDefaultBlockSize + 1;
    }
    local_pool.emplace(static_cast<std::size_t>(mc.n_layers),
                       static_cast<std::size_t>(mc.model_dim), blocks);
    pool = &*local_pool;
  }

  FlopCounter local_flops;
  FlopCounter* flops = opt.flops ? opt.flops : &local_flops;
  const std::uint64_t flops_before = flops->flops;

  auto run = [&](std::vector<std::size_t> which) {
    std::vector<ForwardRequest<T>> fr;
    fr.reserve(which.size());
    for (auto i : which) {
      auto& s = streams[i];
      CacheRef<T> ref{};
      if (opt.use_cache) ref = {pool, &s.handle};
      fr.push_back({s.ids, s.positions, ref, -1});
    }
    auto out = forward_batch<T>(model, fr, flops);
    for (std::size_t j = 0; j < which.size(); ++j) {
      auto& s = streams[which[j]];
      s.last_logits = image_slice(out[j].logits, out[j].logits.rows() - 1, layout);
    }
  };

  // Prefill: one forward per distinct prefix, forks for the rest.
  std::vector<std::size_t> all(streams.size());
  for (std::size_t i = 0; i < streams.size(); ++i) all[i] = i;
  if (opt.use_cache) {
    std::map<std::vector<TokenId>, std::size_t> owner;
    std::vector<std::size_t> leaders, followers;
    for (std::size_t i = 0; i < streams.size(); ++i) {
      auto [it, fresh] = owner.emplace(streams[i].ids, i);
      (fresh ? leaders : followers).push_back(i);
      if (fresh) streams[i].handle = pool->allocate(0);
    }
    run(leaders);
    for (auto i : followers) {
      const auto& lead = streams[owner.at(streams[i].ids)];
      streams[i].handle = pool->fork(lead.handle);
      streams[i].last_logits = lead.last_logits;
    }
  } else {
    run(all);
  }

  for (int step = 0; step < hw; ++step) {
    for (std::size_t r = 0; r < requests.size(); ++r) {
      const auto& cfg = requests[r].sampler;
      const Stream<T>* cond = nullptr;
      const Stream<T>* uncond = nullptr;
      for (const auto& s : streams) {
        if (s.request != r) continue;
        (s.conditional ? cond : uncond) = &s;
      }
      std::vector<T> combined;
      if (cond && uncond) {
        combined = cfg_combine<T>(cond->last_logits, uncond->last_logits,
                                  static_cast<T>(cfg.cfg_scale));
      } else {
        combined = (cond ? cond : uncond)->last_logits;
      }
      const std::size_t code = sample_next<T>(combined, cfg, rngs[r]);
      auto& res = results[r];
      res.grid.codes[static_cast<std::size_t>(step)] = static_cast<std::int32_t>(code);
      if (opt.record_logits) res.step_logits.push_back(combined);
      if (opt.record_logprobs && cond) {
        res.logprobs.push_back(log_softmax_at<T>(cond->last_logits, code));
      }
      for (auto& s : streams) {
        if (s.request == r) push_token(s, layout.image_token(static_cast<std::int32_t>(code)), grid_w, mc.rope_mode);
      }
    }
    if (step + 1 < hw) run(all);
  }

  if (opt.use_cache) {
    for (auto& s : streams) pool->free(s.handle);
  }
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (auto& res : results) {
    res.stats.forward_passes = static_cast<std::uint64_t>(hw);
    res.stats.tokens_accepted = static_cast<std::uint64_t>(hw);
    res.stats.wall_time = wall;
    res.stats.flops = (flops->flops - flops_before) / std::max<std::size_t>(1, requests.size());
    res.stats.accepted_per_pass.assign(2, 0);
    res.stats.accepted_per_pass[1] = static_cast<std::uint64_t>(hw);
  }
  return results;
}

template <class T>
GenerateResult<T> generate(const Model<T>& model,
                           const std::vector<TokenId>& prompt, int grid_h,
                           int grid_w, const SamplerConfig& sampler,
                           const GenerateOptions& opt = {}) {
  std::vector<GenerateRequest> reqs{{prompt, sampler}};
  return std::move(generate_batch<T>(model, reqs, grid_h, grid_w, opt).front());
}

// ---------------------------------------------------------------------------
// Speculative Jacobi decoding.

// Each iteration runs one forward over the committed-but-uncached tokens plus
// the draft window, yielding a distribution for every window slot. Greedy
// acceptance keeps the longest prefix whose drafts equal the argmax (plus the
// corrected token at the first mismatch); speculative acceptance applies
// rejection sampling against each draft's stored distribution and resamples
// from the residual at the first rejection. Accepted tokens' keys/values are
// committed to the cache; the rest of the window is recomputed next time.
template <class T>
GenerateResult<T> generate_sjd(const Model<T>& model,
                               const std::vector<TokenId>& prompt, int grid_h,
                               int grid_w, const SamplerConfig& sampler,
                               const SjdConfig& sjd,
                               FlopCounter* flops_out = nullptr) {
  using namespace decode_detail;
  const auto t0 = std::chrono::steady_clock::now();
  const VocabLayout layout = model.layout();
  const ModelConfig& mc = model.config;
  const int hw = grid_h * grid_w;
  if (grid_h <= 0 || grid_w <= 0) throw DimensionError("grid dims must be positive");
  if (sjd.window < 0) throw ConfigError("SJD window must be >= 0");
  sampler.validate(layout.image_codebook_size);
  check_prompt(prompt, layout);
  const bool greedy = sjd.acceptance == Acceptance::kGreedy;
  const std::size_t window =
      sjd.window == 0 ? static_cast<std::size_t>(hw) : static_cast<std::size_t>(sjd.window);
  const std::uint64_t max_iters =
      sjd.max_jacobi_iters > 0 ? static_cast<std::uint64_t>(sjd.max_jacobi_iters)
                               : static_cast<std::uint64_t>(hw);

  const auto roles = stream_roles(sampler.cfg_scale);
  std::vector<Stream<T>> streams;
  std::size_t blocks = 0;
  for (bool cond : roles) {
    Stream<T> s;
    s.conditional = cond;
    const auto p = stream_prompt(prompt, cond, layout);
    s.prompt_len = static_cast<int>(p.size());
    for (TokenId t : prompt_prefix(p, layout)) push_token(s, t, grid_w, mc.rope_mode);
    if (s.ids.size() + static_cast<std::size_t>(hw) > static_cast<std::size_t>(mc.max_seq_len)) {
      throw CapacityError("prompt plus image exceeds max_seq_len");
    }
    blocks += (s.ids.size() + static_cast<std::size_t>(hw)) / BlockPool<T>::kDefaultBlockSize + 2;
    streams.push_back(std::move(s));
  }
  BlockPool<T> pool(static_cast<std::size_t>(mc.n_layers),
                    static_cast<std::size_t>(mc.model_dim), blocks);
  for (auto& s : streams) s.handle = pool.allocate(0);

  Rng rng(sampler.seed);
  FlopCounter local_flops;
  FlopCounter* flops = flops_out ? flops_out : &local_flops;
  const std::uint64_t flops_before = flops->flops;

  GenerateResult<T> res;
  res.grid = ImageTokenGrid(grid_h, grid_w);
  res.stats.streams = static_cast<int>(streams.size());
  res.stats.accepted_per_pass.assign(window + 1, 0);

  std::vector<TokenId> drafts;  // token ids; BOI placeholder allowed
  std::vector<std::optional<std::vector<double>>> draft_dist;
  int committed = 0;
  std::uint64_t iters = 0;
  const std::size_t image_base = static_cast<std::size_t>(layout.image_base());
  const std::size_t codebook = static_cast<std::size_t>(layout.image_codebook_size);

  while (committed < hw) {
    if (++iters > max_iters) {
      throw ProgressStallError("speculative Jacobi decoding exceeded " +
                               std::to_string(max_iters) + " iterations");
    }
    const std::size_t want = std::min(window, static_cast<std::size_t>(hw - committed));
    if (drafts.size() > want) {
      drafts.resize(want);
      draft_dist.resize(want);
    }
    while (drafts.size() < want) {
      const TokenId last = drafts.empty() ? streams.front().ids.back() : drafts.back();
      drafts.push_back(last);
      draft_dist.emplace_back(std::nullopt);
    }

    // One parallel pass per stream over [uncached committed..., drafts[0..want-2]].
    std::vector<std::vector<T>> cond_rows(want), uncond_rows(want);
    std::vector<ForwardResult<T>> outs;
    std::vector<std::vector<TokenId>> seqs;
    std::vector<std::vector<Position>> poss;
    std::vector<ForwardRequest<T>> reqs;
    for (auto& s : streams) {
      std::vector<TokenId> ids = s.ids;
      std::vector<Position> pos = s.positions;
      for (std::size_t j = 0; j + 1 < want; ++j) {
        pos.push_back(position_at(static_cast<int>(ids.size()), s.prompt_len,
                                  grid_w, mc.rope_mode));
        ids.push_back(drafts[j]);
      }
      seqs.push_back(std::move(ids));
      poss.push_back(std::move(pos));
    }
    for (std::size_t si = 0; si < streams.size(); ++si) {
      reqs.push_back({seqs[si], poss[si], {&pool, &streams[si].handle}, 0});
    }
    outs = forward_batch<T>(model, reqs, flops);
    std::vector<std::vector<double>> p(want);
    std::vector<std::vector<T>> combined(want);
    for (std::size_t j = 0; j < want; ++j) {
      std::vector<T> rows[2];
      for (std::size_t si = 0; si < streams.size(); ++si) {
        const std::size_t seq_index = streams[si].ids.size() - 1 + j;
        rows[si] = image_slice(outs[si].logits, seq_index - outs[si].first_row, layout);
      }
      if (streams.size() == 2) {
        combined[j] = cfg_combine<T>(rows[0], rows[1], static_cast<T>(sampler.cfg_scale));
      } else {
        combined[j] = std::move(rows[0]);
      }
    }

    std::vector<std::int32_t> accepted;
    std::size_t examined = 0;
    for (std::size_t j = 0; j < want; ++j) {
      examined = j + 1;
      const TokenId d = drafts[j];
      const bool d_is_image = layout.is_image(d);
      const std::size_t dc = d_is_image ? static_cast<std::size_t>(layout.image_code(d)) : codebook;
      if (greedy) {
        const std::size_t a = argmax(std::span<const T>(combined[j]));
        accepted.push_back(static_cast<std::int32_t>(a));
        if (dc != a) break;
        continue;
      }
      p[j] = sampling_distribution<T>(combined[j], sampler);
      double ratio = 0.0;
      if (d_is_image) {
        if (draft_dist[j]) {
          const double q = (*draft_dist[j])[dc];
          ratio = q > 0.0 ? std::min(1.0, p[j][dc] / q) : 0.0;
        } else {
          ratio = p[j][dc];
        }
      }
      if (rng.uniform() < ratio) {
        accepted.push_back(static_cast<std::int32_t>(dc));
        continue;
      }
      std::vector<double> resid(codebook, 0.0);
      double total = 0.0;
      for (std::size_t c = 0; c < codebook; ++c) {
        double q = 0.0;
        if (draft_dist[j]) {
          q = (*draft_dist[j])[c];
        } else if (c == dc) {
          q = 1.0;
        }
        resid[c] = std::max(0.0, p[j][c] - q);
        total += resid[c];
      }
      if (total > 0.0) {
        for (auto& x : resid) x /= total;
      } else {
        resid = p[j];
      }
      accepted.push_back(static_cast<std::int32_t>(draw(resid, rng)));
      break;
    }
    const std::size_t k = accepted.size();

    // Commit keys/values of tokens that are now part of the fixed prefix.
    for (std::size_t si = 0; si < streams.size(); ++si) {
      auto& s = streams[si];
      const std::size_t upto = s.ids.size() - 1 + k;  // exclusive
      const std::size_t n_commit = upto - s.handle.filled();
      pool.append(s.handle, outs[si].new_kv, n_commit,
                  std::span<const TokenId>(seqs[si]).subspan(s.handle.filled(), n_commit));
    }
    for (std::size_t a = 0; a < k; ++a) {
      res.grid.codes[static_cast<std::size_t>(committed)] = accepted[a];
      ++committed;
      for (auto& s : streams) {
        push_token(s, layout.image_token(accepted[a]), grid_w, mc.rope_mode);
      }
    }
    res.stats.accepted_per_pass[k]++;

    // Refresh the drafts past the accepted prefix from this pass.
    std::vector<TokenId> next;
    std::vector<std::optional<std::vector<double>>> next_dist;
    for (std::size_t j = examined; j < want; ++j) {
      if (greedy) {
        next.push_back(layout.image_token(
            static_cast<std::int32_t>(argmax(std::span<const T>(combined[j])))));
        next_dist.emplace_back(std::nullopt);
      } else {
        auto pj = sampling_distribution<T>(combined[j], sampler);
        next.push_back(layout.image_token(static_cast<std::int32_t>(draw(pj, rng))));
        next_dist.emplace_back(std::move(pj));
      }
    }
    drafts = std::move(next);
    draft_dist = std::move(next_dist);
    (void)image_base;
  }

  for (auto& s : streams) pool.free(s.handle);
  res.stats.forward_passes = iters;
  res.stats.tokens_accepted = static_cast<std::uint64_t>(hw);
  res.stats.flops = flops->flops - flops_before;
  res.stats.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace arvis

// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

// Group relative policy optimization: group-standardized advantages, the
// clipped token-mean surrogate with a k3 KL penalty, rollouts with shared
// prompt prefixes, and the per-step update.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "arvis/decoding.hpp"
#include "arvis/error.hpp"
#include "arvis/parallel.hpp"
#include "arvis/toyworld.hpp"
#include "arvis/training.hpp"
#include "arvis/transformer.hpp"

namespace arvis {

struct GrpoConfig {
  int group_size = 8;
  double clip_eps = 0.2;
  double kl_beta = 0.04;
  int inner_epochs = 1;
  double std_floor = 1e-6;

  void validate() const {
    if (group_size < 2) throw ConfigError("GRPO group size must be >= 2");
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("clip epsilon must lie in (0, 1)");
    if (!(kl_beta >= 0.0)) throw ConfigError("KL coefficient must be >= 0");
    if (inner_epochs < 1) throw ConfigError("inner epochs must be >= 1");
    if (!(std_floor > 0.0)) throw ConfigError("advantage std floor must be positive");
  }
};

// A_i = (r_i - mean) / max(popstd, floor)
inline std::vector<double> grpo_advantages(const std::vector<double>& rewards,
                                           double std_floor) {
  if (rewards.size() < 2) throw ConfigError("advantages need a group of >= 2");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::max(std::sqrt(var / n), std_floor);
  std::vector<double> a;
  a.reserve(rewards.size());
  for (double r : rewards) a.push_back((r - mean) / sd);
  return a;
}

// k3 estimator r - ln r - 1 with r = pi_ref / pi_theta, averaged over tokens.
inline double kl_term(const std::vector<double>& logp_theta,
                      const std::vector<double>& logp_ref) {
  if (logp_theta.size() != logp_ref.size()) {
    throw DimensionError("kl_term: token counts differ");
  }
  if (logp_theta.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t t = 0; t < logp_theta.size(); ++t) {
    const double d = logp_ref[t] - logp_theta[t];
    s += std::exp(d) - d - 1.0;
  }
  return s / static_cast<double>(logp_theta.size());
}

struct SurrogateResult {
  double objective = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  // d objective / d log pi_theta for every output token.
  std::vector<std::vector<double>> dlogp;
};

// mean_i [ mean_t min(rho A_i, clip(rho, 1-eps, 1+eps) A_i) - beta k3_t ],
// rho = pi_theta / pi_old per token.
inline SurrogateResult grpo_surrogate(const std::vector<std::vector<double>>& logp,
                                      const std::vector<std::vector<double>>& old_logp,
                                      const std::vector<std::vector<double>>& ref_logp,
                                      const std::vector<double>& advantages,
                                      double clip_eps, double kl_beta) {
  const std::size_t g = logp.size();
  if (old_logp.size() != g || ref_logp.size() != g || advantages.size() != g || g == 0) {
    throw RolloutStateError("surrogate: outputs, old/ref log-probs and advantages must align");
  }
  SurrogateResult r;
  r.dlogp.resize(g);
  std::size_t clipped = 0, total = 0;
  for (std::size_t i = 0; i < g; ++i) {
    const std::size_t n = logp[i].size();
    if (old_logp[i].size() != n || ref_logp[i].size() != n || n == 0) {
      throw RolloutStateError("surrogate: missing per-token old or reference log-probs");
    }
    const double a = advantages[i];
    const double w = 1.0 / (static_cast<double>(g) * static_cast<double>(n));
    r.dlogp[i].resize(n);
    double kl_i = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double rho = std::exp(logp[i][t] - old_logp[i][t]);
      const double rho_c = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps);
      const double unclipped = rho * a, clipped_term = rho_c * a;
      double d = 0.0;
      if (unclipped <= clipped_term) {
        r.objective += w * unclipped;
        d = unclipped;
      } else {
        r.objective += w * clipped_term;
        ++clipped;
      }
      const double lr = ref_logp[i][t] - logp[i][t];
      const double ratio = std::exp(lr);
      const double k3 = ratio - lr - 1.0;
      r.objective -= w * kl_beta * k3;
      kl_i += k3;
      // d k3 / d log pi_theta = 1 - ratio
      r.dlogp[i][t] = w * (d - kl_beta * (1.0 - ratio));
      ++total;
    }
    r.kl += kl_i / static_cast<double>(n) / static_cast<double>(g);
  }
  r.clip_fraction = total ? static_cast<double>(clipped) / static_cast<double>(total) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Model-level pieces.

template <class T>
struct RolloutOutput {
  ImageTokenGrid grid;
  std::vector<T> old_logprobs;  // under pi_old, cond stream, image range
  std::vector<T> ref_logprobs;  // under pi_ref
  double reward = 0.0;
};

template <class T>
struct GroupSample {
  std::string prompt_text;
  std::vector<TokenId> prompt;
  std::vector<RolloutOutput<T>> outputs;
  std::vector<double> advantages;
};

template <class T>
struct PolicySnapshot {
  Model<T> old_policy;  // refreshed per rollout batch
  Model<T> reference;   // fixed for the whole stage
};

// Conditional sequence [BOS, prompt, BOI, image codes] and its positions.
template <class T>
void policy_sequence(const Model<T>& m, const std::vector<TokenId>& prompt,
                     const ImageTokenGrid& grid, std::vector<TokenId>& ids,
                     std::vector<Position>& pos) {
  const VocabLayout layout = m.layout();
  ids = prompt_prefix(prompt, layout);
  for (auto c : grid.codes) ids.push_back(layout.image_token(c));
  pos = assign_positions(static_cast<int>(ids.size()), static_cast<int>(prompt.size()),
                         static_cast<int>(grid.size()), grid.width, m.config.rope_mode);
}

// Image-range log-probabilities of the grid's tokens; optionally the trace.
template <class T>
std::vector<T> token_logprobs(const Model<T>& m, const std::vector<TokenId>& prompt,
                              const ImageTokenGrid& grid,
                              ForwardTrace<T>* trace_out = nullptr) {
  std::vector<TokenId> ids;
  std::vector<Position> pos;
  policy_sequence(m, prompt, grid, ids, pos);
  auto tr = forward_train<T>(m, ids, pos);
  const VocabLayout layout = m.layout();
  const std::size_t first = prompt.size() + 1;  // row of BOI predicts code 0
  const std::size_t cb = static_cast<std::size_t>(layout.image_codebook_size);
  std::vector<T> out(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    std::span<const T> row(tr.logits.row(first + k) + layout.image_base(), cb);
    out[k] = log_softmax_at<T>(row, static_cast<std::size_t>(grid.codes[k]));
  }
  if (trace_out) *trace_out = std::move(tr);
  return out;
}

template <class T>
struct ObjectiveResult {
  double objective = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  Parameters<T> grads;  // ascent direction: d objective / d theta
};

// Surrogate over every output of every group (each group weighted equally)
// and its gradient with respect to the current parameters.
template <class T>
ObjectiveResult<T> grpo_objective(const std::vector<GroupSample<T>>& groups,
                                  const Model<T>& current, const GrpoConfig& cfg,
                                  int threads = 1) {
  struct Item {
    std::size_t group, output;
  };
  std::vector<Item> items;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    if (groups[gi].advantages.size() != groups[gi].outputs.size()) {
      throw RolloutStateError("group advantages not computed");
    }
    for (std::size_t o = 0; o < groups[gi].outputs.size(); ++o) items.push_back({gi, o});
  }
  if (items.empty()) throw DegenerateBatchError("GRPO objective over zero outputs");
  const VocabLayout layout = current.layout();
  const std::size_t cb = static_cast<std::size_t>(layout.image_codebook_size);

  std::vector<ForwardTrace<T>> traces(items.size());
  std::vector<std::vector<double>> logp(items.size()), old_lp(items.size()),
      ref_lp(items.size());
  std::vector<double> adv(items.size());
  parallel_for(items.size(), threads, [&](std::size_t k) {
    const auto& grp = groups[items[k].group];
    const auto& out = grp.outputs[items[k].output];
    if (out.old_logprobs.size() != out.grid.size() || out.ref_logprobs.size() != out.grid.size()) {
      throw RolloutStateError("rollout is missing per-token old or reference log-probs");
    }
    const auto lp = token_logprobs<T>(current, grp.prompt, out.grid, &traces[k]);
    logp[k].assign(lp.begin(), lp.end());
    old_lp[k].assign(out.old_logprobs.begin(), out.old_logprobs.end());
    ref_lp[k].assign(out.ref_logprobs.begin(), out.ref_logprobs.end());
    adv[k] = grp.advantages[items[k].output];
  });
  auto sr = grpo_surrogate(logp, old_lp, ref_lp, adv, cfg.clip_eps, cfg.kl_beta);

  std::vector<Parameters<T>> per(items.size());
  parallel_for(items.size(), threads, [&](std::size_t k) {
    const auto& grp = groups[items[k].group];
    const auto& out = grp.outputs[items[k].output];
    const auto& tr = traces[k];
    Tensor2D<T> dlogits(tr.logits.rows(), tr.logits.cols());
    const std::size_t first = grp.prompt.size() + 1;
    for (std::size_t t = 0; t < out.grid.size(); ++t) {
      const T* row = tr.logits.row(first + t) + layout.image_base();
      T mx = row[0];
      for (std::size_t j = 0; j < cb; ++j) mx = std::max(mx, row[j]);
      T sum{0};
      for (std::size_t j = 0; j < cb; ++j) sum += std::exp(row[j] - mx);
      const T d = static_cast<T>(sr.dlogp[k][t]);
      T* drow = dlogits.row(first + t) + layout.image_base();
      for (std::size_t j = 0; j < cb; ++j) drow[j] = -d * (std::exp(row[j] - mx) / sum);
      drow[static_cast<std::size_t>(out.grid.codes[t])] += d;
    }
    per[k] = zero_parameters<T>(current.config);
    backward<T>(current, tr, dlogits, per[k]);
    traces[k] = {};
  });
  ObjectiveResult<T> res;
  res.grads = std::move(per[0]);
  for (std::size_t k = 1; k < per.size(); ++k) add_parameters(res.grads, per[k]);
  res.objective = sr.objective;
  res.kl = sr.kl;
  res.clip_fraction = sr.clip_fraction;
  return res;
}

struct RolloutOptions {
  int grid_h = 16;
  int grid_w = 16;
  std::uint64_t seed = 0;
  int threads = 1;
};

// G samples per prompt from pi_old (prompt prefix prefilled once and forked
// per sample), scored by the verifier, with advantages and reference
// log-probs attached. A group whose scoring fails is resampled once.
template <class T>
std::vector<GroupSample<T>> grpo_rollout(const PolicySnapshot<T>& snap,
                                         const std::vector<std::string>& prompts,
                                         const GrpoConfig& cfg,
                                         const SamplerConfig& sampler,
                                         const RolloutOptions& opt) {
  cfg.validate();
  const VocabLayout layout = snap.old_policy.layout();
  std::vector<GroupSample<T>> groups(prompts.size());
  parallel_for(prompts.size(), opt.threads, [&](std::size_t p) {
    auto& grp = groups[p];
    grp.prompt_text = prompts[p];
    grp.prompt = encode_text(prompts[p], layout);
    for (int attempt = 0;; ++attempt) {
      std::vector<GenerateRequest> reqs;
      for (int i = 0; i < cfg.group_size; ++i) {
        SamplerConfig s = sampler;
        s.seed = Rng::derive(opt.seed, p * 2 + static_cast<std::size_t>(attempt),
                             static_cast<std::uint64_t>(i))
                     .next_u64();
        reqs.push_back({grp.prompt, s});
      }
      GenerateOptions gopt;
      gopt.record_logprobs = true;
      if (sampler.cfg_scale == 0.0f) {
        throw RolloutStateError("rollouts need the conditional stream (cfg_scale > 0)");
      }
      auto res = generate_batch<T>(snap.old_policy, reqs, opt.grid_h, opt.grid_w, gopt);
      grp.outputs.clear();
      try {
        for (auto& r : res) {
          RolloutOutput<T> o;
          o.grid = std::move(r.grid);
          o.old_logprobs = std::move(r.logprobs);
          o.reward = verify(grp.prompt_text, o.grid).reward;
          grp.outputs.push_back(std::move(o));
        }
      } catch (const VerifierError&) {
        if (attempt >= 1) throw;
        continue;
      }
      break;
    }
    std::vector<double> rewards;
    for (auto& o : grp.outputs) {
      o.ref_logprobs = token_logprobs<T>(snap.reference, grp.prompt, o.grid);
      rewards.push_back(o.reward);
    }
    grp.advantages = grpo_advantages(rewards, cfg.std_floor);
  });
  return groups;
}

}  // namespace arvis

// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

// Stage runners and the run-directory layout shared by the CLI:
//   <run>/checkpoints/{pretrain,sft,grpo}.ckpt
//   <run>/logs/<stage>.log         metrics records
//   <run>/reports/*.txt            eval, bench and summary reports
//   <run>/images/                  generated PPM images
//   <run>/config/<command>.txt     effective configuration snapshots

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "arvis/checkpoint.hpp"
#include "arvis/config.hpp"
#include "arvis/decoding.hpp"
#include "arvis/error.hpp"
#include "arvis/grpo.hpp"
#include "arvis/parallel.hpp"
#include "arvis/toyworld.hpp"
#include "arvis/training.hpp"
#include "arvis/transformer.hpp"

namespace arvis {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Typed views of the flat configuration.

inline ModelConfig model_config(const Config& c) {
  ModelConfig m;
  m.n_layers = static_cast<int>(c.integer("model.n_layers"));
  m.n_heads = static_cast<int>(c.integer("model.n_heads"));
  m.model_dim = static_cast<int>(c.integer("model.model_dim"));
  m.ffn_dim = static_cast<int>(c.integer("model.ffn_dim"));
  m.max_seq_len = static_cast<int>(c.integer("model.max_seq_len"));
  const auto& mode = c.str("model.rope_mode");
  if (mode == "1d") {
    m.rope_mode = RopeMode::k1D;
  } else if (mode == "2d") {
    m.rope_mode = RopeMode::k2D;
  } else {
    throw ConfigError("model.rope_mode must be 1d or 2d");
  }
  m.rope_base = static_cast<float>(c.real("model.rope_base"));
  m.image_codebook = static_cast<int>(c.integer("model.image_codebook"));
  m.total_vocab = VocabLayout{VocabLayout{}.text_vocab_size, m.image_codebook}.total_vocab();
  m.validate();
  return m;
}

inline SamplerConfig sampler_config(const Config& c, int codebook) {
  SamplerConfig s;
  const auto& mode = c.str("sample.mode");
  if (mode == "topk") {
    s.mode = SamplingMode::kTopK;
  } else if (mode == "greedy") {
    s.mode = SamplingMode::kGreedy;
  } else {
    throw ConfigError("sample.mode must be topk or greedy");
  }
  s.top_k = static_cast<int>(c.integer("sample.top_k"));
  s.temperature = static_cast<float>(c.real("sample.temperature"));
  s.cfg_scale = static_cast<float>(c.real("sample.cfg_scale"));
  s.seed = static_cast<std::uint64_t>(c.integer("seed"));
  s.validate(codebook);
  return s;
}

inline SjdConfig sjd_config(const Config& c) {
  SjdConfig s;
  s.window = static_cast<int>(c.integer("sjd.window"));
  s.max_jacobi_iters = static_cast<int>(c.integer("sjd.max_iters"));
  const auto& a = c.str("sjd.acceptance");
  if (a == "greedy") {
    s.acceptance = Acceptance::kGreedy;
  } else if (a == "speculative") {
    s.acceptance = Acceptance::kSpeculative;
  } else {
    throw ConfigError("sjd.acceptance must be greedy or speculative");
  }
  if (s.window < 0) throw ConfigError("sjd.window must be >= 0");
  return s;
}

inline AdamWConfig adamw_config(const Config& c) {
  return {c.real("optim.beta1"), c.real("optim.beta2"), c.real("optim.eps"),
          c.real("optim.weight_decay")};
}

inline GrpoConfig grpo_config(const Config& c) {
  GrpoConfig g;
  g.group_size = static_cast<int>(c.integer("grpo.group_size"));
  g.clip_eps = c.real("grpo.clip_eps");
  g.kl_beta = c.real("grpo.kl_beta");
  g.inner_epochs = static_cast<int>(c.integer("grpo.inner_epochs"));
  g.std_floor = c.real("grpo.std_floor");
  g.validate();
  return g;
}

// Checks every typed view so configuration errors surface before compute.
inline void validate_config(const Config& c) {
  const auto mc = model_config(c);
  sampler_config(c, mc.image_codebook);
  sjd_config(c);
  grpo_config(c);
  for (const char* stage : {"pretrain", "sft", "grpo"}) {
    const std::string s(stage);
    if (!(c.real(s + ".lr") > 0.0)) throw ConfigError(s + ".lr must be positive");
    if (c.integer(s + ".steps") < 0) throw ConfigError(s + ".steps must be >= 0");
    const auto h = c.integer(s + ".grid_h"), w = c.integer(s + ".grid_w");
    check_render_grid(static_cast<int>(h), static_cast<int>(w));
    // prompt (at most 7 words) + BOS + BOI + image + EOI
    if (h * w + 10 > mc.max_seq_len) {
      throw ConfigError(s + " grid does not fit model.max_seq_len");
    }
  }
  if (c.integer("pretrain.batch") < 1 || c.integer("sft.batch") < 1) {
    throw ConfigError("batch sizes must be >= 1");
  }
  if (c.integer("grpo.prompts") < 1) throw ConfigError("grpo.prompts must be >= 1");
  if (c.integer("bench.prompts") < 1 || c.integer("bench.batch") < 1) {
    throw ConfigError("bench.prompts and bench.batch must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// Run directory.

struct RunDir {
  fs::path root;

  fs::path checkpoint(const std::string& stage) const {
    return root / "checkpoints" / (stage + ".ckpt");
  }
  fs::path log(const std::string& name) const { return root / "logs" / (name + ".log"); }
  fs::path report(const std::string& name) const { return root / "reports" / (name + ".txt"); }
  fs::path images() const { return root / "images"; }

  void create() const {
    for (const char* d : {"checkpoints", "images", "logs", "reports", "config"}) {
      fs::create_directories(root / d);
    }
  }

  void snapshot(const std::string& command, const Config& c) const {
    create();
    write_file_atomic(root / "config" / (command + ".txt"), c.snapshot());
  }

  Model<float> require(const std::string& stage) const {
    const auto p = checkpoint(stage);
    if (!fs::exists(p)) {
      throw MissingPrerequisiteError(p.string());
    }
    return load_checkpoint(p);
  }

  // Most-trained checkpoint available.
  fs::path latest() const {
    for (const char* s : {"grpo", "sft", "pretrain"}) {
      if (fs::exists(checkpoint(s))) return checkpoint(s);
    }
    throw MissingPrerequisiteError("no checkpoint under " + (root / "checkpoints").string());
  }
};

inline std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

inline std::string metrics_line(const std::string& stage, long step, double loss,
                                std::optional<double> reward, std::optional<double> kl) {
  return "stage=" + stage + " step=" + std::to_string(step) + " loss=" + fmt("%.6f", loss) +
         " reward=" + (reward ? fmt("%.6f", *reward) : "na") +
         " kl=" + (kl ? fmt("%.6f", *kl) : "na") + "\n";
}

using Progress = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Language-model stages.

struct LmStageResult {
  double initial_loss = 0.0;  // held-out loss before the first update
  double final_loss = 0.0;    // held-out loss after the last update
  std::vector<double> step_losses;
};

inline std::vector<TokenSequence> make_batch(Rng& rng, const DataSpec& spec,
                                             const VocabLayout& layout, int n) {
  std::vector<TokenSequence> out;
  for (int i = 0; i < n; ++i) {
    const Example ex = make_example(rng, spec, layout);
    out.push_back(build_sequence(ex.prompt, ex.grid, layout));
  }
  return out;
}

inline double heldout_loss(const Model<float>& m, const std::vector<TokenSequence>& batch,
                           int grid_w, int threads) {
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    const auto pos = assign_positions(batch[i], grid_w, m.config.rope_mode);
    auto tr = forward_train<float>(m, batch[i].ids, pos);
    std::vector<TokenId> targets;
    std::vector<std::uint8_t> mask;
    image_targets(batch[i], targets, mask);
    losses[i] = lm_loss<float>(tr.logits, targets, mask).loss;
  });
  double s = 0.0;
  for (double l : losses) s += l;
  return s / static_cast<double>(batch.size());
}

// Pretraining (random styles) or SFT (canonical style) on toyworld data.
inline LmStageResult run_lm_stage(const std::string& stage, Model<float>& model,
                                  const Config& c, std::ostream& log, int threads,
                                  const Progress& progress = {}) {
  DataSpec spec;
  spec.grid_h = static_cast<int>(c.integer(stage + ".grid_h"));
  spec.grid_w = static_cast<int>(c.integer(stage + ".grid_w"));
  spec.canonical = stage == "sft";
  spec.prompt_dropout = c.real(stage + ".prompt_dropout");
  spec.texture_prob = stage == "pretrain" ? c.real("pretrain.texture_prob") : 0.0;
  const auto seed = static_cast<std::uint64_t>(c.integer("seed"));
  const std::uint64_t stage_tag = stage == "sft" ? 2 : 1;
  const VocabLayout layout = model.layout();
  const int batch = static_cast<int>(c.integer(stage + ".batch"));
  const long steps = static_cast<long>(c.integer(stage + ".steps"));
  const double lr = c.real(stage + ".lr");
  const double clip = c.real("optim.grad_clip");

  Rng held_rng = Rng::derive(seed, stage_tag, 0xe7a1ULL);
  const auto heldout = make_batch(held_rng, spec, layout, 32);
  LmStageResult res;
  res.initial_loss = heldout_loss(model, heldout, spec.grid_w, threads);

  OptimState<float> opt(model.config, adamw_config(c));
  Rng data = Rng::derive(seed, stage_tag, 0xda7aULL);
  for (long step = 1; step <= steps; ++step) {
    const auto seqs = make_batch(data, spec, layout, batch);
    auto bg = lm_batch_gradient<float>(model, seqs, spec.grid_w, threads);
    clip_grad_norm(bg.grads, clip);
    adamw_step(model.params, bg.grads, opt, lr);
    res.step_losses.push_back(bg.loss);
    log << metrics_line(stage, step, bg.loss, std::nullopt, std::nullopt);
    if (progress && (step % 25 == 0 || step == steps)) {
      progress(stage + " step " + std::to_string(step) + "/" + std::to_string(steps) +
               " loss " + fmt("%.4f", bg.loss));
    }
  }
  res.final_loss = heldout_loss(model, heldout, spec.grid_w, threads);
  return res;
}

// ---------------------------------------------------------------------------
// GRPO stage.

struct GrpoStageResult {
  std::vector<double> step_rewards;
  double reward_start = 0.0;  // mean over the first window of steps
  double reward_end = 0.0;    // mean over the last window of steps
  bool reference_unchanged = true;
};

inline std::vector<std::string> grpo_prompts(std::uint64_t seed, long step, int n) {
  std::vector<std::string> out;
  for (int j = 0; j < n; ++j) {
    const auto idx = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(n) +
                     static_cast<std::uint64_t>(j);
    const Category cat = kAllCategories[idx % kAllCategories.size()];
    Rng rng = Rng::derive(seed, 0x67727030ULL, idx);
    out.push_back(caption(sample_scene(rng, cat), cat));
  }
  return out;
}

inline GrpoStageResult run_grpo_stage(Model<float>& model, const Config& c,
                                      std::ostream& log, int threads,
                                      const Progress& progress = {}) {
  const GrpoConfig gc = grpo_config(c);
  const SamplerConfig sampler = sampler_config(c, model.config.image_codebook);
  const auto seed = static_cast<std::uint64_t>(c.integer("seed"));
  const long steps = static_cast<long>(c.integer("grpo.steps"));
  const int n_prompts = static_cast<int>(c.integer("grpo.prompts"));
  const double lr = c.real("grpo.lr");
  const double clip = c.real("optim.grad_clip");
  RolloutOptions ro;
  ro.grid_h = static_cast<int>(c.integer("grpo.grid_h"));
  ro.grid_w = static_cast<int>(c.integer("grpo.grid_w"));
  ro.threads = threads;

  PolicySnapshot<float> snap{model, model};
  const std::string ref_bytes = serialize_checkpoint(snap.reference);
  OptimState<float> opt(model.config, adamw_config(c));
  GrpoStageResult res;
  for (long step = 1; step <= steps; ++step) {
    snap.old_policy = model;
    ro.seed = Rng::derive(seed, 0x726f6c6cULL, static_cast<std::uint64_t>(step)).next_u64();
    const auto prompts = grpo_prompts(seed, step, n_prompts);
    auto groups = grpo_rollout<float>(snap, prompts, gc, sampler, ro);
    double reward = 0.0;
    std::size_t n = 0;
    for (const auto& g : groups) {
      for (const auto& o : g.outputs) reward += o.reward, ++n;
    }
    reward /= static_cast<double>(n);
    double objective = 0.0, kl = 0.0;
    for (int epoch = 0; epoch < gc.inner_epochs; ++epoch) {
      auto obj = grpo_objective<float>(groups, model, gc, threads);
      if (epoch == 0) objective = obj.objective, kl = obj.kl;
      for (auto* t : tensor_list(obj.grads)) {
        for (float& x : t->values()) x = -x;
      }
      clip_grad_norm(obj.grads, clip);
      adamw_step(model.params, obj.grads, opt, lr);
    }
    res.step_rewards.push_back(reward);
    log << metrics_line("grpo", step, -objective, reward, kl);
    if (progress && (step % 5 == 0 || step == steps)) {
      progress("grpo step " + std::to_string(step) + "/" + std::to_string(steps) +
               " reward " + fmt("%.4f", reward));
    }
  }
  const std::size_t win = std::max<std::size_t>(1, res.step_rewards.size() / 4);
  for (std::size_t i = 0; i < win && i < res.step_rewards.size(); ++i) {
    res.reward_start += res.step_rewards[i] / static_cast<double>(win);
    res.reward_end += res.step_rewards[res.step_rewards.size() - 1 - i] / static_cast<double>(win);
  }
  res.reference_unchanged = serialize_checkpoint(snap.reference) == ref_bytes;
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation and images.

inline void write_grid_image(const fs::path& path, const ImageTokenGrid& g, int patch_px) {
  std::ostringstream os;
  write_ppm(os, detokenize_to_image(g, patch_px));
  write_file_atomic(path, os.str());
}

inline GenevalReport run_eval(const Model<float>& model, const Config& c, int threads) {
  GenevalOptions opt;
  opt.n_per_category = static_cast<int>(c.integer("eval.n_per_category"));
  opt.seed = static_cast<std::uint64_t>(c.integer("eval.seed"));
  opt.grid_h = static_cast<int>(c.integer("sample.grid_h"));
  opt.grid_w = static_cast<int>(c.integer("sample.grid_w"));
  opt.batch = static_cast<int>(c.integer("eval.batch"));
  opt.threads = threads;
  return toy_geneval<float>(model, sampler_config(c, model.config.image_codebook), opt);
}

// Report plus the first two images of every category.
inline void write_eval(const RunDir& run, const std::string& name, const GenevalReport& rep,
                       const Config& c) {
  write_file_atomic(run.report("eval_" + name), rep.to_string());
  const int n = rep.n_per_category;
  const int patch = static_cast<int>(c.integer("sample.patch_px"));
  for (std::size_t k = 0; k < kAllCategories.size(); ++k) {
    for (int i = 0; i < std::min(n, 2); ++i) {
      const auto& g = rep.grids[k * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)];
      write_grid_image(run.images() / ("eval_" + name) /
                           (std::string(category_name(kAllCategories[k])) + "_" +
                            std::to_string(i) + ".ppm"),
                       g, patch);
    }
  }
}

// ---------------------------------------------------------------------------
// Bench.

struct BenchRecord {
  std::string method;
  int prompts = 0;
  int grid_h = 0, grid_w = 0;
  double fwd_passes = 0.0;  // mean per prompt, per stream
  double wall_s = 0.0;      // total for all prompts
  double flops = 0.0;       // mean per prompt

  std::string to_string() const {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "method=%s prompts=%d grid=%dx%d fwd_passes=%.2f wall_s=%.4f flops=%.4e",
                  method.c_str(), prompts, grid_h, grid_w, fwd_passes, wall_s, flops);
    return buf;
  }
};

inline bool valid_bench_method(const std::string& m) {
  if (m == "nocache" || m == "kvcache" || m == "paged+batched" || m == "sjd-greedy") return true;
  if (m.rfind("sjd-w", 0) == 0 && m.size() > 5) {
    return m.find_first_not_of("0123456789", 5) == std::string::npos && std::stoi(m.substr(5)) > 0;
  }
  return false;
}

inline std::vector<std::string> bench_prompts(std::uint64_t seed, int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    const Category cat = kAllCategories[static_cast<std::size_t>(i) % kAllCategories.size()];
    Rng rng = Rng::derive(seed, 0x62656e63ULL, static_cast<std::uint64_t>(i));
    out.push_back(caption(sample_scene(rng, cat), cat));
  }
  return out;
}

struct BenchOptions {
  std::vector<std::string> methods;
  int prompts = 8;
  int batch = 8;
  int grid_h = 16, grid_w = 16;
  SjdConfig sjd;  // acceptance and iteration guard for the sjd methods
};

inline std::vector<BenchRecord> run_bench(const Model<float>& model, const SamplerConfig& sampler,
                                          const BenchOptions& opt, std::uint64_t seed) {
  for (const auto& m : opt.methods) {
    if (!valid_bench_method(m)) throw ConfigError("unknown bench method: " + m);
  }
  const VocabLayout layout = model.layout();
  const auto texts = bench_prompts(seed, opt.prompts);
  std::vector<GenerateRequest> reqs;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    SamplerConfig s = sampler;
    s.seed = Rng::derive(seed, 0x62736565ULL, i).next_u64();
    reqs.push_back({encode_text(texts[i], layout), s});
  }
  std::vector<BenchRecord> out;
  for (const auto& method : opt.methods) {
    BenchRecord rec{method, opt.prompts, opt.grid_h, opt.grid_w};
    FlopCounter flops;
    std::uint64_t passes = 0;
    const auto t0 = std::chrono::steady_clock::now();
    if (method == "nocache" || method == "kvcache") {
      GenerateOptions g;
      g.use_cache = method == "kvcache";
      g.flops = &flops;
      for (const auto& r : reqs) {
        passes += generate<float>(model, r.prompt, opt.grid_h, opt.grid_w, r.sampler, g)
                      .stats.forward_passes;
      }
    } else if (method == "paged+batched") {
      GenerateOptions g;
      g.flops = &flops;
      for (std::size_t lo = 0; lo < reqs.size(); lo += static_cast<std::size_t>(opt.batch)) {
        const std::vector<GenerateRequest> chunk(
            reqs.begin() + static_cast<long>(lo),
            reqs.begin() + static_cast<long>(std::min(reqs.size(), lo + static_cast<std::size_t>(opt.batch))));
        for (const auto& r : generate_batch<float>(model, chunk, opt.grid_h, opt.grid_w, g)) {
          passes += r.stats.forward_passes;
        }
      }
    } else {
      SjdConfig sc = opt.sjd;
      if (method == "sjd-greedy") {
        sc.window = 0;
        sc.acceptance = Acceptance::kGreedy;
      } else {
        sc.window = std::stoi(method.substr(5));
      }
      for (const auto& r : reqs) {
        passes += generate_sjd<float>(model, r.prompt, opt.grid_h, opt.grid_w, r.sampler, sc, &flops)
                      .stats.forward_passes;
      }
    }
    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.fwd_passes = static_cast<double>(passes) / static_cast<double>(reqs.size());
    rec.flops = static_cast<double>(flops.flops) / static_cast<double>(reqs.size());
    out.push_back(rec);
  }
  return out;
}

inline BenchOptions bench_options(const Config& c) {
  BenchOptions o;
  o.methods = c.list("bench.methods");
  o.prompts = static_cast<int>(c.integer("bench.prompts"));
  o.batch = static_cast<int>(c.integer("bench.batch"));
  o.grid_h = static_cast<int>(c.integer("bench.grid_h"));
  o.grid_w = static_cast<int>(c.integer("bench.grid_w"));
  o.sjd = sjd_config(c);
  for (const auto& m : o.methods) {
    if (!valid_bench_method(m)) throw ConfigError("unknown bench method: " + m);
  }
  return o;
}

// ---------------------------------------------------------------------------
// Commands.

inline LmStageResult command_lm_stage(const std::string& stage, const RunDir& run,
                                      const Config& c, int threads, const Progress& progress) {
  Model<float> model;
  if (stage == "pretrain") {
    model = init_params<float>(model_config(c),
                               Rng::derive(static_cast<std::uint64_t>(c.integer("seed")), 0x1417ULL).next_u64());
  } else {
    model = run.require("pretrain");
    if (!(model.config == model_config(c))) {
      throw ConfigError("model.* settings differ from the pretrain checkpoint");
    }
  }
  std::ostringstream log;
  auto res = run_lm_stage(stage, model, c, log, threads, progress);
  write_file_atomic(run.log(stage), log.str());
  save_checkpoint(model, run.checkpoint(stage));
  std::string rep = "stage=" + stage + " initial_loss=" + fmt("%.6f", res.initial_loss) +
                    " final_loss=" + fmt("%.6f", res.final_loss) +
                    " ln_vocab=" + fmt("%.6f", std::log(static_cast<double>(model.config.total_vocab))) + "\n";
  write_file_atomic(run.report(stage), rep);
  return res;
}

inline GrpoStageResult command_grpo(const RunDir& run, const Config& c, int threads,
                                    const Progress& progress) {
  Model<float> model = run.require("sft");
  std::ostringstream log;
  auto res = run_grpo_stage(model, c, log, threads, progress);
  write_file_atomic(run.log("grpo"), log.str());
  save_checkpoint(model, run.checkpoint("grpo"));
  write_file_atomic(run.report("grpo"),
                    "stage=grpo reward_start=" + fmt("%.6f", res.reward_start) +
                        " reward_end=" + fmt("%.6f", res.reward_end) +
                        " reference_unchanged=" + (res.reference_unchanged ? "yes" : "no") + "\n");
  return res;
}

struct ReproduceSummary {
  LmStageResult pretrain, sft;
  GrpoStageResult grpo;
  GenevalReport eval_sft, eval_grpo;
  std::vector<BenchRecord> bench;
  double ln_vocab = 0.0;

  // Deterministic: no wall-clock quantities.
  std::string to_string() const {
    std::ostringstream os;
    os << "# reproduce_all summary\n";
    os << "lm_loss fresh=" << fmt("%.4f", pretrain.initial_loss)
       << " ln_vocab=" << fmt("%.4f", ln_vocab)
       << " pretrained=" << fmt("%.4f", pretrain.final_loss)
       << " half_ln_vocab=" << fmt("%.4f", 0.5 * ln_vocab)
       << " [fresh loss ~ ln V; pretraining drives it below 0.5 ln V]\n";
    os << "sft_loss start=" << fmt("%.4f", sft.initial_loss) << " end=" << fmt("%.4f", sft.final_loss)
       << "\n";
    os << "grpo_reward start=" << fmt("%.4f", grpo.reward_start)
       << " end=" << fmt("%.4f", grpo.reward_end)
       << " relative_gain=" << fmt("%.4f", grpo.reward_start > 0 ? grpo.reward_end / grpo.reward_start - 1.0 : 0.0)
       << " [group reward rises during RL]\n";
    os << "toy_geneval sft=" << fmt("%.4f", eval_sft.overall)
       << " grpo=" << fmt("%.4f", eval_grpo.overall)
       << " [RL checkpoint scores strictly higher]\n";
    for (std::size_t k = 0; k < eval_sft.scores.size(); ++k) {
      os << "  category=" << category_name(eval_sft.scores[k].first)
         << " sft=" << fmt("%.4f", eval_sft.scores[k].second)
         << " grpo=" << fmt("%.4f", eval_grpo.scores[k].second) << "\n";
    }
    os << "reference_policy_unchanged=" << (grpo.reference_unchanged ? "yes" : "no") << "\n";
    for (const auto& b : bench) {
      os << "bench method=" << b.method << " fwd_passes=" << fmt("%.2f", b.fwd_passes)
         << " flops=" << fmt("%.4e", b.flops) << "\n";
    }
    os << "[wall-clock bench numbers: reports/bench.txt]\n";
    return os.str();
  }
};

inline void write_bench(const RunDir& run, const std::vector<BenchRecord>& recs) {
  std::string out;
  for (const auto& r : recs) out += r.to_string() + "\n";
  write_file_atomic(run.report("bench"), out);
}

// pretrain -> sft -> eval(sft) -> grpo -> eval(grpo) -> bench -> summary.
inline ReproduceSummary reproduce_all(const RunDir& run, const Config& c, int threads,
                                      const Progress& progress = {}) {
  validate_config(c);
  run.snapshot("reproduce", c);
  ReproduceSummary s;
  auto stage = [&](const std::string& name, auto&& fn) {
    if (progress) progress("== " + name);
    try {
      fn();
    } catch (const Error& e) {
      throw PipelineError("stage " + name + " failed: " + e.kind() + ": " + e.what());
    }
  };
  stage("pretrain", [&] { s.pretrain = command_lm_stage("pretrain", run, c, threads, progress); });
  stage("sft", [&] { s.sft = command_lm_stage("sft", run, c, threads, progress); });
  stage("eval-sft", [&] {
    s.eval_sft = run_eval(run.require("sft"), c, threads);
    write_eval(run, "sft", s.eval_sft, c);
  });
  stage("grpo", [&] { s.grpo = command_grpo(run, c, threads, progress); });
  stage("eval-grpo", [&] {
    s.eval_grpo = run_eval(run.require("grpo"), c, threads);
    write_eval(run, "grpo", s.eval_grpo, c);
  });
  stage("bench", [&] {
    const auto model = run.require("grpo");
    s.bench = run_bench(model, sampler_config(c, model.config.image_codebook), bench_options(c),
                        static_cast<std::uint64_t>(c.integer("seed")));
    write_bench(run, s.bench);
  });
  s.ln_vocab = std::log(static_cast<double>(model_config(c).total_vocab));
  write_file_atomic(run.report("summary"), s.to_string());
  return s;
}

}  // namespace arvis

// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.
//
//   arvis_acceptance [--work DIR] [--only 1,5,7] [--keep]
//
// Criteria 4, 6, 8, 9 and 12 need the full default pipeline, which runs
// twice (the second run only for the byte comparison).

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>

#include "arvis/pipeline.hpp"
#include "fd_checks.hpp"
#include "grpo_checks.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace arvis;
using namespace arvis::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string f4(double x) { return fmt("%.4g", x); }

struct Outcome {
  bool pass;
  std::string detail;
};

std::vector<TokenId> random_prompt(Rng& rng, const VocabLayout& layout) {
  std::vector<TokenId> p;
  const int n = 1 + static_cast<int>(rng.below(8));
  for (int i = 0; i < n; ++i) p.push_back(static_cast<TokenId>(1 + rng.below(static_cast<std::uint64_t>(layout.text_vocab_size - 1))));
  return p;
}

SamplerConfig greedy_cfg(float scale) {
  SamplerConfig s;
  s.mode = SamplingMode::kGreedy;
  s.cfg_scale = scale;
  return s;
}

// ---------------------------------------------------------------------------

Outcome cache_equivalence() {
  const auto t0 = Clock::now();
  const auto cfg = tiny_config(16, 2, 2, 64);
  int identical = 0;
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const auto seed = static_cast<std::uint64_t>(i);
    const auto m = random_model<float>(cfg, 1000 + seed);
    Rng rng(seed);
    const auto prompt = random_prompt(rng, m.layout());
    GenerateOptions with, without;
    with.record_logits = without.record_logits = true;
    without.use_cache = false;
    const auto a = generate<float>(m, prompt, 16, 16, greedy_cfg(2.0f), with);
    const auto b = generate<float>(m, prompt, 16, 16, greedy_cfg(2.0f), without);
    identical += a.grid.codes == b.grid.codes;
    for (std::size_t s = 0; s < a.step_logits.size(); ++s) {
      for (std::size_t j = 0; j < a.step_logits[s].size(); ++j) {
        worst = std::max(worst, static_cast<double>(std::abs(a.step_logits[s][j] - b.step_logits[s][j])));
      }
    }
  }
  const double t = seconds_since(t0);
  return {identical == 100 && worst <= 1e-4 && t < 120,
          "identical_grids=" + std::to_string(identical) + "/100 max_abs_logit_diff=" + f4(worst) +
              " runtime_s=" + fmt("%.1f", t)};
}

Outcome sjd_exactness() {
  const auto t0 = Clock::now();
  const auto cfg = tiny_config(16, 2, 2, 64);
  int ok = 0, total = 0;
  std::uint64_t passes = 0;
  for (int i = 0; i < 100; ++i) {
    const auto seed = static_cast<std::uint64_t>(i);
    const auto m = random_model<float>(cfg, 2000 + seed);
    Rng rng(seed + 7);
    const auto prompt = random_prompt(rng, m.layout());
    const auto ref = generate<float>(m, prompt, 16, 16, greedy_cfg(2.0f));
    for (int w : {0, 8, 16, 32}) {
      SjdConfig sj;
      sj.window = w;
      const auto r = generate_sjd<float>(m, prompt, 16, 16, greedy_cfg(2.0f), sj);
      ok += r.grid.codes == ref.grid.codes;
      passes += r.stats.forward_passes;
      ++total;
    }
  }
  const double t = seconds_since(t0);
  return {ok == total && t < 300,
          "identical=" + std::to_string(ok) + "/" + std::to_string(total) +
              " mean_passes=" + fmt("%.1f", static_cast<double>(passes) / total) +
              " runtime_s=" + fmt("%.1f", t)};
}

Outcome sjd_distribution() {
  const auto t0 = Clock::now();
  // Codebook of 6 codes, a 2x2 image (4 tokens); 6^4 = 1296 sequences.
  const auto cfg = tiny_config(8, 1, 2, 6);
  const auto m = random_model<float>(cfg, 11, 0.8);
  const std::vector<TokenId> prompt{1};
  SamplerConfig base;
  base.cfg_scale = 2.0f;
  const auto exact = exact_sequence_distribution(m, prompt, 2, 2, base);
  SjdConfig sj;
  sj.acceptance = Acceptance::kSpeculative;
  const int n = 100000;
  std::map<std::vector<std::int32_t>, double> counts;
  std::uint64_t passes = 0;
  for (int i = 0; i < n; ++i) {
    SamplerConfig s = base;
    s.seed = static_cast<std::uint64_t>(i);
    const auto r = generate_sjd<float>(m, prompt, 2, 2, s, sj);
    counts[r.grid.codes] += 1;
    passes += r.stats.forward_passes;
  }
  const double tv = total_variation(counts, n, exact);
  const double t = seconds_since(t0);
  return {tv <= 0.02 && t < 300,
          "tv=" + f4(tv) + " expected_sampling_tv=" + f4(expected_tv(exact, n)) +
              " support=" + std::to_string(exact.size()) + " mean_passes=" +
              fmt("%.3f", static_cast<double>(passes) / n) + " runtime_s=" + fmt("%.1f", t)};
}

Outcome sjd_step_reduction(const fs::path& ckpt) {
  const auto m = load_checkpoint(ckpt);
  const auto texts = bench_prompts(4242, 200);
  const float scale = Config{}.real("sample.cfg_scale");
  std::string detail;
  double primary = 0;
  for (int w : {0, 16, 32}) {
    SjdConfig sj;
    sj.window = w;
    std::uint64_t passes = 0;
    for (const auto& p : texts) {
      passes += generate_sjd<float>(m, encode_text(p, m.layout()), 16, 16, greedy_cfg(scale), sj)
                    .stats.forward_passes;
    }
    const double mean = static_cast<double>(passes) / static_cast<double>(texts.size());
    if (w == 0) primary = mean;
    detail += (detail.empty() ? "" : " ") + std::string("w") + std::to_string(w) + "_mean_passes=" + fmt("%.2f", mean);
  }
  return {primary <= 0.85 * 256, detail + " bound=" + fmt("%.1f", 0.85 * 256) + " (primary: w0)"};
}

Outcome kv_complexity() {
  const auto m = init_params<float>(model_config(Config{}), 1);
  const auto prompt = encode_text("a red square above a blue circle", m.layout());
  const std::vector<std::pair<int, int>> grids{{8, 8}, {8, 16}, {16, 16}};
  bool pass = true;
  std::string detail;
  for (bool cache : {false, true}) {
    std::vector<double> f;
    for (auto [h, w] : grids) {
      FlopCounter fc;
      GenerateOptions o;
      o.use_cache = cache;
      o.flops = &fc;
      generate<float>(m, prompt, h, w, greedy_cfg(2.0f), o);
      f.push_back(static_cast<double>(fc.flops));
    }
    const double want = cache ? 2.0 : 4.0;
    for (std::size_t k = 1; k < f.size(); ++k) {
      const double r = f[k] / f[k - 1];
      pass = pass && std::abs(r / want - 1.0) <= 0.15;
      detail += std::string(cache ? " cache" : " nocache") + "_ratio_" +
                std::to_string(64 << (k - 1)) + "to" + std::to_string(64 << k) + "=" + fmt("%.3f", r);
    }
  }
  return {pass, detail.substr(1) + " (expect 4 without cache, 2 with, +/-15%)"};
}

Outcome throughput(const std::vector<BenchRecord>& bench) {
  std::map<std::string, const BenchRecord*> by;
  for (const auto& b : bench) by[b.method] = &b;
  if (!by.count("nocache") || !by.count("kvcache") || !by.count("paged+batched")) {
    return {false, "bench is missing a method"};
  }
  const double no = by["nocache"]->wall_s, kv = by["kvcache"]->wall_s, pb = by["paged+batched"]->wall_s;
  const double speedup = (by["paged+batched"]->prompts / pb) / (by["nocache"]->prompts / no);
  return {kv < no && speedup >= 3.0,
          "nocache_s=" + f4(no) + " kvcache_s=" + f4(kv) + " paged_batched_s=" + f4(pb) +
              " paged_batched_throughput_x=" + fmt("%.1f", speedup)};
}

Outcome grpo_gradient() {
  double fd = 0, gap = 0, model = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    fd = std::max(fd, grpo_micro_fd(s));
    gap = std::max(gap, grpo_reinforce_gap(s));
  }
  for (std::uint64_t s = 0; s < 5; ++s) model = std::max(model, grpo_model_fd(s));
  return {fd <= 1e-3 && gap <= 1e-6 && model <= 1e-3,
          "micro_fd_max_rel=" + f4(fd) + " reinforce_max_abs_gap=" + f4(gap) +
              " model_fd_max_rel=" + f4(model)};
}

Outcome lm_loss_sanity(const ReproduceSummary& s) {
  const double rel = std::abs(s.pretrain.initial_loss / s.ln_vocab - 1.0);
  return {rel <= 0.05 && s.pretrain.final_loss < 0.5 * s.ln_vocab,
          "fresh=" + f4(s.pretrain.initial_loss) + " ln_vocab=" + f4(s.ln_vocab) +
              " rel_dev=" + f4(rel) + " pretrained=" + f4(s.pretrain.final_loss) +
              " half_ln_vocab=" + f4(0.5 * s.ln_vocab)};
}

Outcome rl_improvement(const ReproduceSummary& s, double pipeline_s) {
  const double gain = s.grpo.reward_start > 0 ? s.grpo.reward_end / s.grpo.reward_start - 1.0 : 0.0;
  return {gain >= 0.05 && s.eval_grpo.overall > s.eval_sft.overall && pipeline_s <= 3600,
          "reward_start=" + f4(s.grpo.reward_start) + " reward_end=" + f4(s.grpo.reward_end) +
              " rel_gain=" + f4(gain) + " geneval_sft=" + f4(s.eval_sft.overall) +
              " geneval_grpo=" + f4(s.eval_grpo.overall) + " pipeline_s=" + fmt("%.0f", pipeline_s)};
}

Outcome tokenization() {
  Rng rng(10);
  int ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const int h = 1 + static_cast<int>(rng.below(64)), w = 1 + static_cast<int>(rng.below(64));
    ImageTokenGrid g(h, w);
    for (auto& c : g.codes) c = static_cast<std::int32_t>(rng.below(64));
    const auto flat = flatten_raster(g);
    bool good = flat.size() == static_cast<std::size_t>(h * w);
    for (int k = 0; good && k < 16; ++k) {
      const int r = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
      const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
      good = flat[static_cast<std::size_t>(r * w + c)] == g.at(r, c);
    }
    const auto back = unflatten_raster(flat, h, w);
    ok += good && back.codes == g.codes && back.height == h && back.width == w;
  }
  const auto n64 = flatten_raster(ImageTokenGrid(64, 64)).size();
  return {ok == 1000 && n64 == 4096,
          "round_trips=" + std::to_string(ok) + "/1000 tokens_64x64=" + std::to_string(n64)};
}

Outcome numerics() {
  bool pass = true;
  std::string detail;
  for (const auto& [name, fn] : primitive_checks()) {
    double worst = 0;
    for (std::uint64_t s = 0; s < 100; ++s) worst = std::max(worst, fn(s));
    pass = pass && worst <= 1e-3;
    detail += name + "=" + f4(worst) + " ";
  }
  double model = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    model = std::max({model, fd_model(s, RopeMode::k1D), fd_model(s, RopeMode::k2D)});
  }
  pass = pass && model <= 1e-3;
  return {pass, detail + "model=" + f4(model) + " (max rel err over 100 seeds)"};
}

// Byte comparison of every artifact under checkpoints/, images/, reports/.
// Wall-clock fields in the bench report are the only masked content.
Outcome determinism(const fs::path& a, const fs::path& b) {
  static const std::regex wall(R"(wall_s=[0-9.eE+-]+)");
  auto read = [](const fs::path& p, bool mask) {
    std::ifstream in(p, std::ios::binary);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return mask ? std::regex_replace(s, wall, "wall_s=*") : s;
  };
  auto files = [](const fs::path& root) {
    std::set<std::string> out;
    for (const char* d : {"checkpoints", "images", "reports"}) {
      if (!fs::exists(root / d)) continue;
      for (const auto& e : fs::recursive_directory_iterator(root / d)) {
        if (e.is_regular_file()) out.insert(fs::relative(e.path(), root).string());
      }
    }
    return out;
  };
  const auto fa = files(a), fb = files(b);
  if (fa != fb) return {false, "file sets differ"};
  int differ = 0;
  std::string first;
  for (const auto& f : fa) {
    const bool mask = f == "reports/bench.txt";
    if (read(a / f, mask) != read(b / f, mask)) {
      if (!differ++) first = f;
    }
  }
  return {fa.size() > 0 && differ == 0,
          "files=" + std::to_string(fa.size()) + " differing=" + std::to_string(differ) +
              (first.empty() ? "" : " first=" + first) + " (bench wall_s masked)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string work = (fs::temp_directory_path() / "arvis_acceptance").string();
  std::vector<int> only;
  bool keep = false;
  app.add_option("--work", work, "scratch directory for pipeline runs");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_flag("--keep", keep, "keep pipeline run directories");
  CLI11_PARSE(app, argc, argv);

  auto want = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };
  const fs::path root(work);
  const int threads = resolve_threads(0);
  const Progress progress = [](const std::string& m) { std::cerr << "  " << m << "\n"; };

  std::optional<ReproduceSummary> summary;
  double pipeline_s = 0;
  const RunDir run_a{root / "run_a"};
  if (want(4) || want(6) || want(8) || want(9) || want(12)) {
    fs::remove_all(run_a.root);
    std::cerr << "reproduce_all (run A, threads=" << threads << ")\n";
    const auto t0 = Clock::now();
    summary = reproduce_all(run_a, Config{}, threads, progress);
    pipeline_s = seconds_since(t0);
  }

  struct Row {
    int id;
    std::string name;
    std::function<Outcome()> fn;
  };
  const std::vector<Row> rows = {
      {1, "cache-equivalence", cache_equivalence},
      {2, "sjd-exactness", sjd_exactness},
      {3, "sjd-distribution", sjd_distribution},
      {4, "sjd-step-reduction", [&] { return sjd_step_reduction(run_a.checkpoint("grpo")); }},
      {5, "kv-complexity", kv_complexity},
      {6, "throughput-ordering", [&] { return throughput(summary->bench); }},
      {7, "grpo-gradient", grpo_gradient},
      {8, "lm-loss", [&] { return lm_loss_sanity(*summary); }},
      {9, "rl-improvement", [&] { return rl_improvement(*summary, pipeline_s); }},
      {10, "tokenization", tokenization},
      {11, "numerics", numerics},
      {12, "determinism",
       [&] {
         // Second run with a different worker count.
         const RunDir run_b{root / "run_b"};
         fs::remove_all(run_b.root);
         std::cerr << "reproduce_all (run B, threads=" << threads + 1 << ")\n";
         reproduce_all(run_b, Config{}, threads + 1, progress);
         auto o = determinism(run_a.root, run_b.root);
         if (!keep) fs::remove_all(run_b.root);
         return o;
       }},
  };

  int failed = 0, ran = 0;
  for (const auto& r : rows) {
    if (!want(r.id)) continue;
    ++ran;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = r.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << r.id << " " << r.name << ": " << (o.pass ? "PASS" : "FAIL") << " "
              << o.detail << " [" << fmt("%.1f", seconds_since(t0)) << "s]" << std::endl;
  }
  if (!keep) fs::remove_all(run_a.root);
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << ran - failed << "/" << ran << std::endl;
  return failed ? 1 : 0;
}

// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Exit codes: 0 success, 2 configuration error or
// missing prerequisite, 1 any other failure. Errors go to stderr as one line
// "<kind>: <message>".

#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "arvis/pipeline.hpp"

namespace arvis {

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string out = "run";
  std::optional<long long> seed;
  int threads = 0;
};

inline void add_common(CLI::App* app, CommonArgs& a) {
  app->add_option("--config", a.config_file, "key=value configuration file");
  app->add_option("--set", a.overrides, "override one key (key=value), repeatable")
      ->take_all()
      ->allow_extra_args(false);
  app->add_option("--out", a.out, "run directory")->capture_default_str();
  app->add_option("--seed", a.seed, "master seed");
  app->add_option("--threads", a.threads, "worker threads (default: ARVIS_THREADS or all cores)");
}

inline Config effective_config(const CommonArgs& a) {
  Config c;
  if (!a.config_file.empty()) c.load_file(a.config_file);
  for (const auto& kv : a.overrides) c.set_assignment(kv);
  if (a.seed) c.set("seed", std::to_string(*a.seed));
  if (a.threads > 0) c.set("threads", std::to_string(a.threads));
  validate_config(c);
  return c;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Autoregressive toy text-to-image pipeline"};
  app.require_subcommand(1, 1);
  CommonArgs common;

  auto* pretrain = app.add_subcommand("pretrain", "LM pretraining on random-style scenes");
  auto* sft = app.add_subcommand("sft", "supervised fine-tuning on canonical scenes");
  auto* grpo = app.add_subcommand("grpo", "GRPO post-training with the verifier reward");
  auto* sample = app.add_subcommand("sample", "generate one image");
  auto* eval = app.add_subcommand("eval", "toy-GenEval report for a checkpoint");
  auto* bench = app.add_subcommand("bench", "decoding benchmark");
  auto* reproduce = app.add_subcommand("reproduce", "full seed-pinned pipeline with summary");
  for (auto* s : {pretrain, sft, grpo, sample, eval, bench, reproduce}) add_common(s, common);

  std::string prompt, checkpoint, methods, image_path;
  std::optional<double> cfg_scale;
  std::optional<int> window;
  bool use_sjd = false;
  sample->add_option("--prompt", prompt, "caption to render")->required();
  sample->add_option("--cfg", cfg_scale, "guidance scale");
  sample->add_flag("--sjd", use_sjd, "speculative Jacobi decoding");
  sample->add_option("--window", window, "SJD draft window (0: whole image)");
  sample->add_option("--image", image_path, "output PPM path");
  for (auto* s : {sample, eval, bench}) {
    s->add_option("--checkpoint", checkpoint, "checkpoint (default: latest in the run dir)");
  }
  bench->add_option("--methods", methods, "comma-separated bench methods");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    Config c = effective_config(common);
    if (cfg_scale) c.set("sample.cfg_scale", std::to_string(*cfg_scale));
    if (window) c.set("sjd.window", std::to_string(*window));
    if (!methods.empty()) c.set("bench.methods", methods);
    validate_config(c);
    const int threads = resolve_threads(static_cast<int>(c.integer("threads")));
    const RunDir run{common.out};
    auto* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    run.snapshot(name, c);
    const Progress progress = [&](const std::string& m) { err << m << "\n"; };

    auto load_model = [&]() {
      if (!checkpoint.empty()) {
        if (!fs::exists(checkpoint)) throw MissingPrerequisiteError(checkpoint);
        return load_checkpoint(checkpoint);
      }
      return load_checkpoint(run.latest());
    };

    if (name == "pretrain" || name == "sft") {
      auto r = command_lm_stage(name, run, c, threads, progress);
      out << "stage=" << name << " initial_loss=" << fmt("%.6f", r.initial_loss)
          << " final_loss=" << fmt("%.6f", r.final_loss) << "\n";
    } else if (name == "grpo") {
      auto r = command_grpo(run, c, threads, progress);
      out << "stage=grpo reward_start=" << fmt("%.6f", r.reward_start)
          << " reward_end=" << fmt("%.6f", r.reward_end) << "\n";
    } else if (name == "sample") {
      const auto model = load_model();
      const auto layout = model.layout();
      const auto sampler = sampler_config(c, model.config.image_codebook);
      const int h = static_cast<int>(c.integer("sample.grid_h"));
      const int w = static_cast<int>(c.integer("sample.grid_w"));
      const auto ids = encode_text(prompt, layout);
      GenerateResult<float> res =
          use_sjd ? generate_sjd<float>(model, ids, h, w, sampler, sjd_config(c))
                  : generate<float>(model, ids, h, w, sampler);
      const fs::path img = image_path.empty()
                               ? run.images() / ("sample_seed" + c.str("seed") + ".ppm")
                               : fs::path(image_path);
      write_grid_image(img, res.grid, static_cast<int>(c.integer("sample.patch_px")));
      std::ostringstream grid_text;
      write_grid_text(grid_text, res.grid);
      auto grid_path = img;
      grid_path.replace_extension(".grid");
      write_file_atomic(grid_path, grid_text.str());
      out << "image=" << img.string() << " fwd_passes=" << res.stats.forward_passes
          << " tokens=" << res.stats.tokens_accepted << " streams=" << res.stats.streams
          << " wall_s=" << fmt("%.4f", res.stats.wall_time) << "\n";
    } else if (name == "eval") {
      const auto path = checkpoint.empty() ? run.latest() : fs::path(checkpoint);
      if (!fs::exists(path)) throw MissingPrerequisiteError(path.string());
      const auto rep = run_eval(load_checkpoint(path), c, threads);
      write_eval(run, path.stem().string(), rep, c);
      out << rep.to_string();
    } else if (name == "bench") {
      const auto model = load_model();
      const auto recs = run_bench(model, sampler_config(c, model.config.image_codebook),
                                  bench_options(c), static_cast<std::uint64_t>(c.integer("seed")));
      write_bench(run, recs);
      for (const auto& r : recs) out << r.to_string() << "\n";
    } else if (name == "reproduce") {
      const auto s = reproduce_all(run, c, threads, progress);
      out << s.to_string();
    }
    return 0;
  } catch (const ConfigError& e) {
    err << e.kind() << ": " << e.what() << "\n";
    return 2;
  } catch (const MissingPrerequisiteError& e) {
    err << e.kind() << ": " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << e.kind() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace arvis

// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

// Flat key=value run configuration. Every key has a documented default;
// unknown keys are rejected.

#pragma once

#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "arvis/error.hpp"

namespace arvis {

struct ConfigKey {
  std::string_view key;
  std::string_view default_value;
  std::string_view doc;
};

// clang-format off
inline constexpr ConfigKey kConfigKeys[] = {
    {"seed", "1234", "master seed for every stage"},
    {"threads", "0", "worker threads (0: ARVIS_THREADS, else all cores)"},

    {"model.n_layers", "3", "transformer blocks"},
    {"model.n_heads", "4", "attention heads"},
    {"model.model_dim", "64", "residual width"},
    {"model.ffn_dim", "256", "feed-forward hidden width"},
    {"model.max_seq_len", "600", "longest sequence the model accepts"},
    {"model.rope_mode", "1d", "rotary layout: 1d or 2d"},
    {"model.rope_base", "10000", "rotary frequency base"},
    {"model.image_codebook", "64", "image codes in the vocabulary"},

    {"optim.beta1", "0.9", "AdamW first-moment decay"},
    {"optim.beta2", "0.95", "AdamW second-moment decay"},
    {"optim.eps", "1e-8", "AdamW denominator epsilon"},
    {"optim.weight_decay", "0.01", "decoupled weight decay"},
    {"optim.grad_clip", "1.0", "global gradient-norm clip (0 disables)"},

    {"pretrain.lr", "1e-3", "pretraining learning rate"},
    {"pretrain.steps", "300", "pretraining optimizer steps"},
    {"pretrain.batch", "8", "sequences per pretraining step"},
    {"pretrain.grid_h", "8", "pretraining image grid height"},
    {"pretrain.grid_w", "8", "pretraining image grid width"},
    {"pretrain.prompt_dropout", "0.1", "chance a caption is replaced by NULLPROMPT"},
    {"pretrain.texture_prob", "0.05", "chance a background code is textured"},

    {"sft.lr", "1e-3", "SFT learning rate"},
    {"sft.steps", "700", "SFT optimizer steps"},
    {"sft.batch", "8", "sequences per SFT step"},
    {"sft.grid_h", "16", "SFT image grid height"},
    {"sft.grid_w", "16", "SFT image grid width"},
    {"sft.prompt_dropout", "0.1", "chance a caption is replaced by NULLPROMPT"},

    {"grpo.lr", "1e-4", "GRPO learning rate"},
    {"grpo.steps", "30", "GRPO optimizer steps"},
    {"grpo.prompts", "4", "prompts per GRPO step"},
    {"grpo.group_size", "8", "samples per prompt (G)"},
    {"grpo.clip_eps", "0.2", "ratio clipping epsilon"},
    {"grpo.kl_beta", "0.04", "KL penalty coefficient"},
    {"grpo.inner_epochs", "1", "updates per rollout batch"},
    {"grpo.std_floor", "1e-6", "advantage standard-deviation floor"},
    {"grpo.grid_h", "16", "rollout grid height"},
    {"grpo.grid_w", "16", "rollout grid width"},

    {"sample.mode", "topk", "sampler: topk or greedy"},
    {"sample.top_k", "0", "top-k cutoff (0: whole image codebook)"},
    {"sample.temperature", "1.0", "sampling temperature"},
    {"sample.cfg_scale", "2.0", "classifier-free guidance scale"},
    {"sample.grid_h", "16", "generated grid height"},
    {"sample.grid_w", "16", "generated grid width"},
    {"sample.patch_px", "8", "pixels per code in written images"},

    {"sjd.window", "0", "draft window (0: whole remaining image)"},
    {"sjd.acceptance", "greedy", "SJD acceptance: greedy or speculative"},
    {"sjd.max_iters", "0", "Jacobi iteration guard (0: image token count)"},

    {"eval.n_per_category", "50", "prompts per toy-GenEval category"},
    {"eval.seed", "777", "seed of the evaluation prompt set"},
    {"eval.batch", "8", "requests decoded in lockstep"},

    {"bench.methods", "nocache,kvcache,paged+batched,sjd-greedy,sjd-w16", "bench methods"},
    {"bench.prompts", "8", "prompts per bench method"},
    {"bench.batch", "8", "lockstep batch of the paged+batched method"},
    {"bench.grid_h", "16", "bench grid height"},
    {"bench.grid_w", "16", "bench grid width"},
};
// clang-format on

class Config {
 public:
  Config() {
    for (const auto& k : kConfigKeys) values_[std::string(k.key)] = std::string(k.default_value);
  }

  static bool known(std::string_view key) {
    for (const auto& k : kConfigKeys) {
      if (k.key == key) return true;
    }
    return false;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown config key: " + key);
    values_[key] = value;
  }

  // "key=value"
  void set_assignment(std::string_view kv) {
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("expected key=value, got \"" + std::string(kv) + "\"");
    }
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  // Lines of key=value; blank lines and '#' comments are ignored.
  void load(std::istream& is, const std::string& origin = "config") {
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
      ++n;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      if (trim(line).empty()) continue;
      try {
        set_assignment(line);
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  }

  void load_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    load(is, path.string());
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
  }

  long long integer(const std::string& key) const {
    const auto& s = str(key);
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (errno || end == s.c_str() || *end) {
      throw ConfigError(key + ": expected an integer, got \"" + s + "\"");
    }
    return v;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (errno || end == s.c_str() || *end) {
      throw ConfigError(key + ": expected a number, got \"" + s + "\"");
    }
    return v;
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream is(str(key));
    std::string item;
    while (std::getline(is, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  // Every key in table order, one "key=value" per line.
  std::string snapshot() const {
    std::string out;
    for (const auto& k : kConfigKeys) {
      out += std::string(k.key) + "=" + values_.at(std::string(k.key)) + "\n";
    }
    return out;
  }

 private:
  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
  }

  std::map<std::string, std::string> values_;
};

}  // namespace arvis

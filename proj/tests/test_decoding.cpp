// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <map>

#include "arvis/decoding.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace arvis;
using namespace arvis::testing;

namespace {

SamplerConfig greedy(float cfg = 2.0f) {
  SamplerConfig s;
  s.mode = SamplingMode::kGreedy;
  s.cfg_scale = cfg;
  return s;
}

SamplerConfig topk(std::uint64_t seed, float cfg = 2.0f, int k = 0, float temp = 1.0f) {
  SamplerConfig s;
  s.seed = seed;
  s.cfg_scale = cfg;
  s.top_k = k;
  s.temperature = temp;
  return s;
}

}  // namespace

TEST(Decoding, CfgCombine) {
  std::vector<float> c{1, 2, 3}, u{0.5f, 2.5f, -1};
  EXPECT_EQ(cfg_combine<float>(c, u, 1.0f), c);
  EXPECT_EQ(cfg_combine<float>(c, u, 0.0f), u);
  const auto g = cfg_combine<float>(c, u, 3.0f);
  EXPECT_FLOAT_EQ(g[0], 0.5f + 3 * 0.5f);
  EXPECT_FLOAT_EQ(g[1], 2.5f - 3 * 0.5f);
  EXPECT_FLOAT_EQ(g[2], -1 + 3 * 4.0f);
  std::vector<float> short_v{1};
  EXPECT_THROW(cfg_combine<float>(c, short_v, 2.0f), DimensionError);
}

TEST(Decoding, ArgmaxPrefersLowestIndex) {
  std::vector<float> v{1, 3, 3, 2};
  EXPECT_EQ(argmax<float>(v), 1u);
}

TEST(Decoding, SamplingDistributionTopKAndTemperature) {
  std::vector<double> l{0.0, 2.0, 1.0, 2.0};
  auto p = sampling_distribution<double>(l, topk(0, 1, 2));
  EXPECT_NEAR(p[1], 0.5, 1e-12);
  EXPECT_NEAR(p[3], 0.5, 1e-12);
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(p[2], 0.0);
  auto q = sampling_distribution<double>(l, topk(0, 1, 0, 0.5f));
  const double z = 1 + 2 * std::exp(4.0) + std::exp(2.0);
  EXPECT_NEAR(q[0], 1 / z, 1e-12);
  EXPECT_NEAR(q[2], std::exp(2.0) / z, 1e-12);
  auto g = sampling_distribution<double>(l, greedy());
  EXPECT_EQ(g[1], 1.0);
  EXPECT_EQ(g[3], 0.0);
}

TEST(Decoding, DegenerateLogitsThrow) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> l{-inf, -inf};
  EXPECT_THROW(sampling_distribution<double>(l, topk(0)), DegenerateDistributionError);
  std::vector<double> one{-inf, 0.0};
  EXPECT_EQ(sampling_distribution<double>(one, topk(0))[1], 1.0);
}

TEST(Decoding, SamplerConfigValidation) {
  auto s = topk(0);
  s.top_k = 65;
  EXPECT_THROW(s.validate(64), ConfigError);
  s = topk(0);
  s.temperature = 0;
  EXPECT_THROW(s.validate(64), ConfigError);
  s = topk(0);
  s.cfg_scale = -1;
  EXPECT_THROW(s.validate(64), ConfigError);
}

TEST(Decoding, SampleNextMatchesDistribution) {
  std::vector<float> l{0.1f, 1.5f, -0.7f, 0.9f, 0.0f};
  const auto cfg = topk(0, 1, 4, 0.8f);
  const auto p = sampling_distribution<float>(l, cfg);
  Rng rng(99);
  std::vector<double> counts(5, 0);
  const int n = 200000;
  for (int i = 0; i < n; ++i) counts[sample_next<float>(l, cfg, rng)] += 1;
  double tv = 0;
  for (std::size_t i = 0; i < 5; ++i) tv += std::abs(counts[i] / n - p[i]);
  EXPECT_LT(tv / 2, 0.005);
  EXPECT_EQ(counts[2], 0);  // outside the top 4
}

TEST(Decoding, GreedyConsumesNoRandomness) {
  std::vector<float> l{0.1f, 1.5f};
  Rng a(5), b(5);
  sample_next<float>(l, greedy(), a);
  EXPECT_TRUE(a == b);
}

TEST(Decoding, CachedAndUncachedGenerationAgree) {
  const auto c = tiny_config();
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto m = random_model(c, seed);
    const std::vector<TokenId> prompt{1, 5, 9};
    for (const auto& s : {greedy(), topk(seed), topk(seed, 1.0f, 5)}) {
      GenerateOptions on, off;
      on.record_logits = off.record_logits = true;
      off.use_cache = false;
      const auto a = generate<float>(m, prompt, 4, 4, s, on);
      const auto b = generate<float>(m, prompt, 4, 4, s, off);
      ASSERT_EQ(a.grid.codes, b.grid.codes);
      ASSERT_EQ(a.step_logits, b.step_logits);
      EXPECT_EQ(a.stats.forward_passes, 16u);
    }
  }
}

TEST(Decoding, CacheFlopsGrowLinearly) {
  const auto c = tiny_config();
  const auto m = init_params<float>(c, 1);
  auto run = [&](int h, bool cache) {
    FlopCounter f;
    GenerateOptions o;
    o.use_cache = cache;
    o.flops = &f;
    generate<float>(m, {1}, h, 8, greedy(1.0f), o);
    return static_cast<double>(f.flops);
  };
  EXPECT_LT(run(4, true) / run(2, true), 2.5);
  EXPECT_GT(run(4, false) / run(2, false), 3.0);
}

TEST(Decoding, StreamCountFollowsGuidanceScale) {
  const auto m = random_model(tiny_config(), 3);
  EXPECT_EQ(generate<float>(m, {1}, 2, 2, greedy(1.0f)).stats.streams, 1);
  EXPECT_EQ(generate<float>(m, {1}, 2, 2, greedy(0.0f)).stats.streams, 1);
  EXPECT_EQ(generate<float>(m, {1}, 2, 2, greedy(2.0f)).stats.streams, 2);
  // s = 0 ignores the prompt entirely.
  EXPECT_EQ(generate<float>(m, {1}, 3, 3, greedy(0.0f)).grid.codes,
            generate<float>(m, {7, 2}, 3, 3, greedy(0.0f)).grid.codes);
}

TEST(Decoding, BatchMatchesIndividualRequests) {
  const auto m = random_model(tiny_config(), 4);
  std::vector<GenerateRequest> reqs{{{1, 2}, topk(1)},
                                    {{1, 2}, topk(2)},
                                    {{3}, greedy()},
                                    {{1, 2}, topk(3, 1.0f)}};
  GenerateOptions o;
  o.record_logprobs = true;
  const auto batch = generate_batch<float>(m, reqs, 4, 4, o);
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    const auto single = generate<float>(m, reqs[i].prompt, 4, 4, reqs[i].sampler, o);
    EXPECT_EQ(batch[i].grid.codes, single.grid.codes) << i;
    EXPECT_EQ(batch[i].logprobs, single.logprobs) << i;
  }
}

TEST(Decoding, SharedPrefixUsesOnePrefill) {
  const auto c = tiny_config();
  const auto m = random_model(c, 4);
  std::vector<GenerateRequest> same, distinct;
  for (int i = 0; i < 4; ++i) {
    same.push_back({{1, 2, 3, 4, 5, 6}, topk(static_cast<std::uint64_t>(i), 1.0f)});
    distinct.push_back({{1, 2, 3, 4, 5, static_cast<TokenId>(6 + i)}, topk(static_cast<std::uint64_t>(i), 1.0f)});
  }
  FlopCounter fs, fd;
  GenerateOptions os, od;
  os.flops = &fs;
  od.flops = &fd;
  generate_batch<float>(m, same, 1, 1, os);
  generate_batch<float>(m, distinct, 1, 1, od);
  EXPECT_LT(fs.flops * 3, fd.flops);
}

TEST(Decoding, SeedsAreReproducible) {
  const auto m = random_model(tiny_config(), 6);
  const auto a = generate<float>(m, {1}, 4, 4, topk(10));
  const auto b = generate<float>(m, {1}, 4, 4, topk(10));
  const auto d = generate<float>(m, {1}, 4, 4, topk(11));
  EXPECT_EQ(a.grid.codes, b.grid.codes);
  EXPECT_NE(a.grid.codes, d.grid.codes);
}

TEST(Decoding, PromptTooLongThrows) {
  auto c = tiny_config();
  c.max_seq_len = 19;
  const auto m = init_params<float>(c, 1);
  EXPECT_THROW(generate<float>(m, {1, 2}, 4, 4, greedy()), CapacityError);
}

TEST(Sjd, GreedyMatchesSequentialGreedy) {
  const auto c = tiny_config();
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto m = random_model(c, seed);
    const std::vector<TokenId> prompt{static_cast<TokenId>(seed % 20), 3};
    const auto ref = generate<float>(m, prompt, 4, 4, greedy());
    for (int w : {0, 1, 3, 8, 16, 32}) {
      SjdConfig sj;
      sj.window = w;
      const auto r = generate_sjd<float>(m, prompt, 4, 4, greedy(), sj);
      ASSERT_EQ(r.grid.codes, ref.grid.codes) << "seed " << seed << " window " << w;
      EXPECT_LE(r.stats.forward_passes, 16u);
      std::uint64_t accepted = 0;
      for (std::size_t k = 0; k < r.stats.accepted_per_pass.size(); ++k) {
        accepted += k * r.stats.accepted_per_pass[k];
      }
      EXPECT_EQ(accepted, 16u);
    }
  }
}

TEST(Sjd, WindowOneIsSequential) {
  const auto m = random_model(tiny_config(), 2);
  SjdConfig sj;
  sj.window = 1;
  EXPECT_EQ(generate_sjd<float>(m, {1}, 3, 3, greedy(), sj).stats.forward_passes, 9u);
}

TEST(Sjd, IterationGuard) {
  const auto m = random_model(tiny_config(), 2);
  SjdConfig sj;
  sj.window = 1;
  sj.max_jacobi_iters = 3;
  EXPECT_THROW(generate_sjd<float>(m, {1}, 3, 3, greedy(), sj), ProgressStallError);
  sj.window = -1;
  EXPECT_THROW(generate_sjd<float>(m, {1}, 3, 3, greedy(), sj), ConfigError);
}

TEST(Sjd, SpeculativeMatchesExactDistribution) {
  auto c = tiny_config(8, 1, 2, 4);
  const auto m = random_model(c, 7, 0.8);
  SjdConfig sj;
  sj.acceptance = Acceptance::kSpeculative;
  const auto exact = exact_sequence_distribution(m, {1}, 1, 3, topk(0, 2.0f));
  const int n = 20000;
  std::map<std::vector<std::int32_t>, double> counts;
  for (int i = 0; i < n; ++i) {
    counts[generate_sjd<float>(m, {1}, 1, 3, topk(static_cast<std::uint64_t>(i), 2.0f), sj).grid.codes] += 1;
  }
  EXPECT_LT(total_variation(counts, n, exact), 2.5 * expected_tv(exact, n));
}

TEST(Decoding, SequentialSamplerMatchesExactDistribution) {
  auto c = tiny_config(8, 1, 2, 4);
  const auto m = random_model(c, 8, 0.8);
  const auto exact = exact_sequence_distribution(m, {2}, 1, 3, topk(0, 1.5f, 3, 0.7f));
  const int n = 20000;
  std::map<std::vector<std::int32_t>, double> counts;
  for (int i = 0; i < n; ++i) {
    counts[generate<float>(m, {2}, 1, 3, topk(static_cast<std::uint64_t>(i), 1.5f, 3, 0.7f)).grid.codes] += 1;
  }
  EXPECT_LT(total_variation(counts, n, exact), 2.5 * expected_tv(exact, n));
}

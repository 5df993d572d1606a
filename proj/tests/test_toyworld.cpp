// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>

#include "arvis/toyworld.hpp"
#include "test_util.hpp"

using namespace arvis;
using namespace arvis::testing;

namespace {

std::vector<Cell> all_cells() {
  std::vector<Cell> out;
  for (int r = 0; r < kLattice; ++r) {
    for (int c = 0; c < kLattice; ++c) out.push_back({r, c});
  }
  return out;
}

}  // namespace

TEST(Toyworld, SampledScenesSatisfyTheirCaptions) {
  Rng rng(1);
  for (int i = 0; i < 3000; ++i) {
    const auto cat = kAllCategories[static_cast<std::size_t>(i) % kAllCategories.size()];
    const Scene s = sample_scene(rng, cat);
    for (int h : {8, 16}) {
      const auto v = verify(caption(s), render_scene(s, h, h));
      ASSERT_EQ(v.reward, 1.0) << serialize_scene(s) << " at " << h;
      ASSERT_TRUE(v.success());
    }
    // Randomized styles keep glyph identity, so the caption still holds.
    const auto styled = render_scene(s, 16, 16, 64, RenderStyle{true, 0.05}, &rng);
    ASSERT_EQ(verify(caption(s), styled).reward, 1.0) << serialize_scene(s);
  }
}

TEST(Toyworld, EveryPlacementOfOneAndTwoObjectsVerifies) {
  for (int sh = 0; sh < kNumShapes; ++sh) {
    for (int co = 0; co < kNumColors; ++co) {
      for (auto cell : all_cells()) {
        Scene s{Category::kColors, {{static_cast<Shape>(sh), static_cast<Color>(co), {cell}}}, {}};
        ASSERT_EQ(verify(caption(s), render_scene(s, 16, 16)).reward, 1.0) << serialize_scene(s);
      }
    }
  }
  for (auto a : all_cells()) {
    for (auto b : all_cells()) {
      if (a == b) continue;
      for (int r = 0; r < 4; ++r) {
        const auto rel = static_cast<Relation>(r);
        if (!relation_holds(rel, a, b)) continue;
        Scene s{Category::kPosition,
                {{Shape::kStar, Color::kRed, {a}}, {Shape::kCircle, Color::kBlue, {b}}},
                rel};
        ASSERT_EQ(verify(caption(s), render_scene(s, 8, 8)).reward, 1.0) << serialize_scene(s);
      }
    }
  }
}

TEST(Toyworld, SamplerCoversTheSceneSpace) {
  Rng rng(2);
  std::set<std::string> captions;
  std::set<int> counts;
  std::set<int> relations;
  for (int i = 0; i < 10000; ++i) {
    const auto cat = kAllCategories[rng.below(kAllCategories.size())];
    const Scene s = sample_scene(rng, cat);
    captions.insert(caption(s));
    if (cat == Category::kCounting) counts.insert(s.groups[0].count());
    if (cat == Category::kPosition) relations.insert(static_cast<int>(s.relation));
    if (cat == Category::kColorAttr || cat == Category::kPosition) {
      ASSERT_NE(s.groups[0].color, s.groups[1].color);
    }
    if (s.groups.size() == 2) ASSERT_NE(s.groups[0].shape, s.groups[1].shape);
  }
  EXPECT_EQ(counts, (std::set<int>{1, 2, 3, 4}));
  EXPECT_EQ(relations.size(), 4u);
  EXPECT_GT(captions.size(), 300u);
}

TEST(Toyworld, LowResolutionIsDownsampledHighResolution) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Scene s = sample_scene(rng, kAllCategories[rng.below(6)]);
    EXPECT_EQ(downsample2(render_scene(s, 16, 16)).codes, render_scene(s, 8, 8).codes);
  }
}

TEST(Toyworld, CaptionsUseKnownWordsOnly) {
  Rng rng(4);
  const VocabLayout layout;
  for (int i = 0; i < 2000; ++i) {
    const Scene s = sample_scene(rng, kAllCategories[rng.below(6)]);
    for (TokenId t : encode_text(caption(s), layout)) ASSERT_NE(t, kUnkToken) << caption(s);
  }
}

TEST(Toyworld, SceneRecordRoundTrip) {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const Scene s = sample_scene(rng, kAllCategories[rng.below(6)]);
    EXPECT_EQ(parse_scene(serialize_scene(s)), s);
  }
  EXPECT_THROW(parse_scene("single 0 blob:red:0.0"), IoError);
  EXPECT_THROW(parse_scene("single 0 square:red:0.0,0.0"), RenderError);
}

TEST(Toyworld, RenderRejectsBadGrids) {
  Rng rng(6);
  const Scene s = sample_scene(rng, Category::kSingle);
  EXPECT_THROW(render_scene(s, 12, 16), RenderError);
  EXPECT_THROW(render_scene(s, 16, 16, 64, RenderStyle{true, 0.0}, nullptr), RenderError);
}

TEST(Verifier, BlankImageScoresZero) {
  const ImageTokenGrid blank(16, 16, kBackgroundCode);
  for (const auto& p : eval_prompts(5, 1)) {
    EXPECT_EQ(verify(p.text, blank).reward, 0.0) << p.text;
  }
}

TEST(Verifier, SwappedPositionsScoreHalf) {
  Scene s{Category::kPosition,
          {{Shape::kSquare, Color::kRed, {{0, 1}}}, {Shape::kTriangle, Color::kGreen, {{2, 1}}}},
          Relation::kAbove};
  const auto g = render_scene(s, 16, 16);
  EXPECT_EQ(verify("a red square above a green triangle", g).reward, 1.0);
  EXPECT_EQ(verify("a red square below a green triangle", g).reward, 0.5);
  EXPECT_EQ(verify("a green triangle above a red square", g).reward, 0.5);
}

TEST(Verifier, RewardGrowsAsObjectsAreAdded) {
  Scene s{Category::kColorAttr,
          {{Shape::kStar, Color::kYellow, {{1, 1}}}, {Shape::kCircle, Color::kBlue, {{3, 0}}}},
          {}};
  const std::string p = caption(s);
  Scene partial = s;
  partial.groups.pop_back();
  Scene wrong_color = s;
  wrong_color.groups[1].color = Color::kRed;
  const double r0 = verify(p, ImageTokenGrid(16, 16)).reward;
  const double r1 = verify(p, render_scene(partial, 16, 16)).reward;
  const double r2 = verify(p, render_scene(wrong_color, 16, 16)).reward;
  const double r3 = verify(p, render_scene(s, 16, 16)).reward;
  EXPECT_LT(r0, r1);
  EXPECT_LT(r1, r2);
  EXPECT_LT(r2, r3);
  EXPECT_EQ(r3, 1.0);
}

TEST(Verifier, CountingIsExact) {
  Scene s{Category::kCounting, {{Shape::kCircle, Color::kGreen, {{0, 0}, {1, 2}, {3, 3}}}}, {}};
  const auto g = render_scene(s, 16, 16);
  EXPECT_EQ(verify("three circles", g).reward, 1.0);
  EXPECT_EQ(verify("two circles", g).reward, 0.5);
  EXPECT_EQ(verify("four stars", g).reward, 0.0);
}

TEST(Verifier, MalformedBlobsAreIgnored) {
  ImageTokenGrid g(16, 16);
  const auto code = glyph_code(Shape::kSquare, Color::kRed);
  // A 3x2 blob is not an object footprint.
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 2; ++c) g.at(r, c) = code;
  }
  EXPECT_TRUE(detect_objects(g).empty());
  EXPECT_EQ(verify("a square", g).reward, 0.0);
}

TEST(Verifier, UnparseablePromptThrows) {
  const ImageTokenGrid g(16, 16);
  EXPECT_THROW(verify("a purple square", g), VerifierError);
  EXPECT_THROW(verify("a square next to a circle", g), VerifierError);
  EXPECT_THROW(verify("", g), VerifierError);
  EXPECT_THROW(verify("a square", ImageTokenGrid(12, 12)), VerifierError);
}

TEST(Geneval, DeterministicAndNearZeroForUntrainedModel) {
  const auto cfg = tiny_config(16, 1, 2, 64);
  const auto m = init_params<float>(cfg, 1);
  SamplerConfig sc;
  sc.mode = SamplingMode::kTopK;
  sc.top_k = 32;
  sc.cfg_scale = 2.0f;
  GenevalOptions o;
  o.n_per_category = 10;
  o.seed = 3;
  const auto a = toy_geneval(m, sc, o);
  o.threads = 2;
  const auto b = toy_geneval(m, sc, o);
  EXPECT_EQ(a.to_string(), b.to_string());
  for (std::size_t i = 0; i < a.grids.size(); ++i) EXPECT_EQ(a.grids[i].codes, b.grids[i].codes);
  EXPECT_LT(a.overall, 0.05);
  EXPECT_EQ(a.scores.size(), 6u);
}

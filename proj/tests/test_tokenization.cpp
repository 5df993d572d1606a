// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "arvis/random.hpp"
#include "arvis/tokenization.hpp"

using namespace arvis;

namespace {

ImageTokenGrid random_grid(Rng& rng, int h, int w, int codebook) {
  ImageTokenGrid g(h, w);
  for (auto& c : g.codes) c = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(codebook)));
  return g;
}

}  // namespace

TEST(Tokenization, VocabLayoutIsContiguous) {
  VocabLayout l;
  EXPECT_EQ(l.total_vocab(), 93);
  EXPECT_EQ(l.image_base(), 24);
  EXPECT_EQ(l.image_token(0), 24);
  EXPECT_EQ(l.bos(), 88);
  EXPECT_EQ(l.null_prompt(), 92);
  for (TokenId t = 0; t < l.total_vocab(); ++t) {
    EXPECT_EQ(int(l.is_text(t)) + int(l.is_image(t)) + int(l.is_special(t)), 1) << t;
  }
  EXPECT_FALSE(l.is_text(-1));
  EXPECT_FALSE(l.is_special(93));
}

TEST(Tokenization, RasterRoundTripRandomGrids) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const int h = 1 + static_cast<int>(rng.below(20)), w = 1 + static_cast<int>(rng.below(20));
    const auto g = random_grid(rng, h, w, 64);
    const auto flat = flatten_raster(g);
    ASSERT_EQ(flat.size(), static_cast<std::size_t>(h * w));
    const auto back = unflatten_raster(flat, h, w);
    ASSERT_EQ(back.codes, g.codes);
    const int r = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
    const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
    EXPECT_EQ(flat[static_cast<std::size_t>(r * w + c)], g.at(r, c));
  }
}

TEST(Tokenization, RasterOrderIsRowMajor) {
  ImageTokenGrid g(2, 3);
  g.codes = {0, 1, 2, 3, 4, 5};
  EXPECT_EQ(g.at(1, 0), 3);
  EXPECT_EQ(flatten_raster(g), (std::vector<std::int32_t>{0, 1, 2, 3, 4, 5}));
}

TEST(Tokenization, LargeGridTokenCount) {
  ImageTokenGrid g(64, 64);
  EXPECT_EQ(flatten_raster(g).size(), 4096u);
}

TEST(Tokenization, UnflattenRejectsWrongLength) {
  std::vector<std::int32_t> t(10);
  EXPECT_THROW(unflatten_raster(t, 3, 3), DimensionError);
}

TEST(Tokenization, TextEncodingIsCaseInsensitiveWithUnk) {
  const auto ids = encode_text("A  Red SQUARE zebra");
  ASSERT_EQ(ids.size(), 4u);
  EXPECT_NE(ids[0], kUnkToken);
  EXPECT_EQ(ids[3], kUnkToken);
  EXPECT_EQ(decode_text(encode_text("a red square")), "a red square");
  EXPECT_EQ(normalize_text("  A\tRed  square "), "a red square");
}

TEST(Tokenization, TextRoundTripOverLexicon) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::string s;
    for (int k = 0; k < 1 + static_cast<int>(rng.below(8)); ++k) {
      if (!s.empty()) s += ' ';
      s += kLexicon[1 + rng.below(kLexicon.size() - 1)];
    }
    EXPECT_EQ(decode_text(encode_text(s)), normalize_text(s));
  }
}

TEST(Tokenization, SequenceLayout) {
  VocabLayout l;
  ImageTokenGrid g(2, 2);
  g.codes = {1, 2, 3, 4};
  const auto p = encode_text("a red square");
  const auto seq = build_sequence(p, g, l);
  ASSERT_EQ(seq.ids.size(), 3u + 2 + 4 + 1);
  EXPECT_EQ(seq.ids.front(), l.bos());
  EXPECT_EQ(seq.ids[static_cast<std::size_t>(seq.boi_index())], l.boi());
  EXPECT_EQ(seq.ids[static_cast<std::size_t>(seq.eoi_index())], l.eoi());
  EXPECT_EQ(seq.ids.back(), l.eoi());
  EXPECT_EQ(image_segment(seq, 2, 2, l).codes, g.codes);
}

TEST(Tokenization, PromptRejectsNonText) {
  VocabLayout l;
  std::vector<TokenId> bad{1, l.image_token(3)};
  EXPECT_THROW(prompt_prefix(bad, l), VocabularyError);
  std::vector<TokenId> null{l.null_prompt()};
  EXPECT_NO_THROW(prompt_prefix(null, l));
}

TEST(Tokenization, GridRejectsOutOfRangeCodes) {
  ImageTokenGrid g(2, 2);
  g.codes[3] = 64;
  EXPECT_THROW(check_grid(g, 64), VocabularyError);
}

TEST(Tokenization, GlyphCodesRoundTrip) {
  for (int s = 0; s < kNumShapes; ++s) {
    for (int c = 0; c < kNumColors; ++c) {
      for (auto st : {GlyphStyle::kSolid, GlyphStyle::kOutline}) {
        const auto code = glyph_code(Shape(s), Color(c), st);
        ASSERT_TRUE(is_glyph_code(code));
        const auto info = glyph_info(code);
        EXPECT_EQ(info.shape, Shape(s));
        EXPECT_EQ(info.color, Color(c));
        EXPECT_EQ(info.style, st);
      }
    }
  }
  EXPECT_FALSE(is_glyph_code(kBackgroundCode));
  EXPECT_FALSE(is_glyph_code(kFirstTextureCode));
}

TEST(Tokenization, ImageRoundTripEveryCode) {
  Rng rng(11);
  for (int patch : {1, 4, 8}) {
    const auto g = random_grid(rng, 6, 5, 64);
    const auto img = detokenize_to_image(g, patch);
    EXPECT_EQ(img.width, 5 * patch);
    EXPECT_EQ(tokenize_image(img, patch, 64).codes, g.codes);
  }
}

TEST(Tokenization, PpmAndGridTextRoundTrip) {
  Rng rng(2);
  const auto g = random_grid(rng, 4, 7, 64);
  std::stringstream grid_io;
  write_grid_text(grid_io, g);
  EXPECT_EQ(read_grid_text(grid_io).codes, g.codes);

  const auto img = detokenize_to_image(g, 8);
  std::stringstream ppm(std::ios::in | std::ios::out | std::ios::binary);
  write_ppm(ppm, img);
  const auto back = read_ppm(ppm);
  EXPECT_EQ(back.pixels, img.pixels);
  std::stringstream broken("P3\n1 1\n255\n");
  EXPECT_THROW(read_ppm(broken), IoError);
}

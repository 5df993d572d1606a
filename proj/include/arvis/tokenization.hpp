// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

// Toy text tokenizer, fixed-palette image "codebook", raster flattening and
// the unified text+image token sequence layout.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "arvis/error.hpp"

namespace arvis {

using TokenId = std::int32_t;

// Word table of the toyworld caption templates. Index 0 is reserved for
// unknown words.
inline constexpr std::array<std::string_view, 24> kLexicon = {
    "<unk>", "a",       "and",     "above",    "below",   "left",
    "right", "of",      "one",     "two",      "three",   "four",
    "square", "squares", "circle", "circles",  "triangle", "triangles",
    "star",  "stars",   "red",     "blue",     "green",   "yellow"};

inline constexpr TokenId kUnkToken = 0;

// Id space: [0, text) text words, [text, text + image) image codes, then
// BOS, BOI, EOI, PAD, NULLPROMPT.
struct VocabLayout {
  std::int32_t text_vocab_size = static_cast<std::int32_t>(kLexicon.size());
  std::int32_t image_codebook_size = 64;

  static constexpr std::int32_t kNumSpecial = 5;

  TokenId image_base() const { return text_vocab_size; }
  TokenId bos() const { return text_vocab_size + image_codebook_size; }
  TokenId boi() const { return bos() + 1; }
  TokenId eoi() const { return bos() + 2; }
  TokenId pad() const { return bos() + 3; }
  TokenId null_prompt() const { return bos() + 4; }
  std::int32_t total_vocab() const {
    return text_vocab_size + image_codebook_size + kNumSpecial;
  }

  bool is_text(TokenId t) const { return t >= 0 && t < text_vocab_size; }
  bool is_image(TokenId t) const {
    return t >= image_base() && t < image_base() + image_codebook_size;
  }
  bool is_special(TokenId t) const { return t >= bos() && t < total_vocab(); }

  TokenId image_token(std::int32_t code) const { return image_base() + code; }
  std::int32_t image_code(TokenId t) const { return t - image_base(); }

  void validate() const {
    if (text_vocab_size < 1 || image_codebook_size < 1) {
      throw ConfigError("vocab layout needs at least one text and one image id");
    }
  }

  friend bool operator==(const VocabLayout&, const VocabLayout&) = default;
};

inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : s) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(
          std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

// Whitespace split, lowercased, looked up in the lexicon. Unknown words
// become kUnkToken. Only ids below the layout's text size are emitted.
inline std::vector<TokenId> encode_text(std::string_view prompt,
                                        const VocabLayout& layout = {}) {
  std::vector<TokenId> out;
  for (const auto& w : split_words(prompt)) {
    TokenId id = kUnkToken;
    for (std::size_t i = 1; i < kLexicon.size(); ++i) {
      if (kLexicon[i] == w) {
        id = static_cast<TokenId>(i);
        break;
      }
    }
    if (id >= layout.text_vocab_size) id = kUnkToken;
    out.push_back(id);
  }
  return out;
}

inline std::string decode_text(const std::vector<TokenId>& ids) {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out.push_back(' ');
    if (id < 0 || static_cast<std::size_t>(id) >= kLexicon.size()) {
      out += kLexicon[kUnkToken];
    } else {
      out += kLexicon[static_cast<std::size_t>(id)];
    }
  }
  return out;
}

inline std::string normalize_text(std::string_view s) {
  std::string out;
  for (const auto& w : split_words(s)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

// h x w grid of codebook indices in [0, image_codebook_size).
struct ImageTokenGrid {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> codes;

  ImageTokenGrid() = default;
  ImageTokenGrid(int h, int w, std::int32_t fill = 0)
      : height(h), width(w), codes(static_cast<std::size_t>(h * w), fill) {}

  std::int32_t& at(int r, int c) {
    return codes[static_cast<std::size_t>(r * width + c)];
  }
  std::int32_t at(int r, int c) const {
    return codes[static_cast<std::size_t>(r * width + c)];
  }
  std::size_t size() const { return codes.size(); }

  friend bool operator==(const ImageTokenGrid&,
                         const ImageTokenGrid&) = default;
};

inline void check_grid(const ImageTokenGrid& g, std::int32_t codebook) {
  if (g.height <= 0 || g.width <= 0 ||
      g.codes.size() != static_cast<std::size_t>(g.height * g.width)) {
    throw DimensionError("grid: codes length does not match h*w");
  }
  for (auto c : g.codes) {
    if (c < 0 || c >= codebook) {
      throw VocabularyError("grid: code " + std::to_string(c) +
                            " outside codebook of " + std::to_string(codebook));
    }
  }
}

// Row-major, top-to-bottom, left-to-right.
inline std::vector<std::int32_t> flatten_raster(const ImageTokenGrid& g) {
  if (g.codes.size() != static_cast<std::size_t>(g.height * g.width)) {
    throw DimensionError("flatten_raster: malformed grid");
  }
  return g.codes;
}

inline ImageTokenGrid unflatten_raster(std::span<const std::int32_t> tokens,
                                       int h, int w) {
  if (h <= 0 || w <= 0 || tokens.size() != static_cast<std::size_t>(h * w)) {
    throw DimensionError("unflatten_raster: " + std::to_string(tokens.size()) +
                         " tokens for a " + std::to_string(h) + "x" +
                         std::to_string(w) + " grid");
  }
  ImageTokenGrid g(h, w);
  std::copy(tokens.begin(), tokens.end(), g.codes.begin());
  return g;
}

// [BOS, t_1..t_N, BOI, z_1..z_{h*w}, EOI]
struct TokenSequence {
  std::vector<TokenId> ids;
  int prompt_len = 0;
  int image_len = 0;

  int boi_index() const { return prompt_len + 1; }
  int image_begin() const { return prompt_len + 2; }
  int image_end() const { return image_begin() + image_len; }
  int eoi_index() const { return image_end(); }
};

inline void check_prompt(std::span<const TokenId> prompt,
                         const VocabLayout& layout) {
  for (TokenId t : prompt) {
    if (!layout.is_text(t) && t != layout.null_prompt()) {
      throw VocabularyError("prompt token " + std::to_string(t) +
                            " outside the text range");
    }
  }
}

// Prompt tokens may be text ids or the single NULLPROMPT id.
inline std::vector<TokenId> prompt_prefix(std::span<const TokenId> prompt,
                                          const VocabLayout& layout) {
  check_prompt(prompt, layout);
  std::vector<TokenId> ids;
  ids.reserve(prompt.size() + 2);
  ids.push_back(layout.bos());
  ids.insert(ids.end(), prompt.begin(), prompt.end());
  ids.push_back(layout.boi());
  return ids;
}

inline TokenSequence build_sequence(std::span<const TokenId> prompt,
                                    const ImageTokenGrid& grid,
                                    const VocabLayout& layout) {
  check_grid(grid, layout.image_codebook_size);
  TokenSequence seq;
  seq.ids = prompt_prefix(prompt, layout);
  seq.prompt_len = static_cast<int>(prompt.size());
  seq.image_len = static_cast<int>(grid.size());
  for (auto c : flatten_raster(grid)) seq.ids.push_back(layout.image_token(c));
  seq.ids.push_back(layout.eoi());
  return seq;
}

inline ImageTokenGrid image_segment(const TokenSequence& seq, int h, int w,
                                    const VocabLayout& layout) {
  if (seq.image_len != h * w) {
    throw DimensionError("image_segment: image length != h*w");
  }
  std::vector<std::int32_t> codes;
  codes.reserve(static_cast<std::size_t>(seq.image_len));
  for (int i = seq.image_begin(); i < seq.image_end(); ++i) {
    codes.push_back(layout.image_code(seq.ids[static_cast<std::size_t>(i)]));
  }
  return unflatten_raster(codes, h, w);
}

// ---------------------------------------------------------------------------
// Glyph palette. Code 0 is plain background; codes 1..16 are solid glyphs
// for (shape, color); 17..32 the outlined variant of the same glyphs; every
// higher code is a textured background variant.

enum class Shape : std::uint8_t { kSquare, kCircle, kTriangle, kStar };
enum class Color : std::uint8_t { kRed, kBlue, kGreen, kYellow };

inline constexpr int kNumShapes = 4;
inline constexpr int kNumColors = 4;
inline constexpr std::int32_t kBackgroundCode = 0;
inline constexpr std::int32_t kFirstGlyphCode = 1;
inline constexpr std::int32_t kGlyphsPerStyle = kNumShapes * kNumColors;
inline constexpr std::int32_t kFirstTextureCode = 1 + 2 * kGlyphsPerStyle;

enum class GlyphStyle : std::uint8_t { kSolid, kOutline };

inline std::int32_t glyph_code(Shape s, Color c,
                               GlyphStyle style = GlyphStyle::kSolid) {
  return kFirstGlyphCode +
         (style == GlyphStyle::kOutline ? kGlyphsPerStyle : 0) +
         static_cast<std::int32_t>(s) * kNumColors +
         static_cast<std::int32_t>(c);
}

struct GlyphInfo {
  Shape shape;
  Color color;
  GlyphStyle style;
};

inline bool is_glyph_code(std::int32_t code) {
  return code >= kFirstGlyphCode && code < kFirstTextureCode;
}

inline GlyphInfo glyph_info(std::int32_t code) {
  if (!is_glyph_code(code)) throw VocabularyError("not a glyph code");
  std::int32_t k = code - kFirstGlyphCode;
  const auto style =
      k >= kGlyphsPerStyle ? GlyphStyle::kOutline : GlyphStyle::kSolid;
  k %= kGlyphsPerStyle;
  return {static_cast<Shape>(k / kNumColors), static_cast<Color>(k % kNumColors),
          style};
}

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  RgbImage() = default;
  RgbImage(int w, int h)
      : width(w), height(h), pixels(static_cast<std::size_t>(w * h * 3), 0) {}

  Rgb get(int x, int y) const {
    const auto i = static_cast<std::size_t>((y * width + x) * 3);
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
  void set(int x, int y, Rgb c) {
    const auto i = static_cast<std::size_t>((y * width + x) * 3);
    pixels[i] = c.r;
    pixels[i + 1] = c.g;
    pixels[i + 2] = c.b;
  }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

namespace palette_detail {

inline Rgb color_rgb(Color c) {
  switch (c) {
    case Color::kRed: return {220, 40, 40};
    case Color::kBlue: return {40, 80, 220};
    case Color::kGreen: return {40, 170, 60};
    case Color::kYellow: return {230, 200, 30};
  }
  return {};
}

// Background tint unique per code; the patch corner always shows it, which
// makes the palette invertible at any patch size.
inline Rgb tint(std::int32_t code) {
  return {static_cast<std::uint8_t>(245 - code % 16),
          static_cast<std::uint8_t>(245 - (code / 16) % 16),
          static_cast<std::uint8_t>(240 - (code / 256) % 16)};
}

inline bool inside_shape(Shape s, double x, double y) {
  // x, y in [0, 1] patch coordinates of the inner glyph area.
  switch (s) {
    case Shape::kSquare:
      return x >= 0.1 && x <= 0.9 && y >= 0.1 && y <= 0.9;
    case Shape::kCircle:
      return (x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5) <= 0.16;
    case Shape::kTriangle: {
      if (y < 0.1 || y > 0.9) return false;
      const double half = 0.4 * (y - 0.1) / 0.8;
      return x >= 0.5 - half && x <= 0.5 + half;
    }
    case Shape::kStar: {
      const double dx = std::abs(x - 0.5), dy = std::abs(y - 0.5);
      return (dx <= 0.12 && dy <= 0.42) || (dy <= 0.12 && dx <= 0.42) ||
             (dx + dy <= 0.3);
    }
  }
  return false;
}

}  // namespace palette_detail

// Paints one code as a patch_px x patch_px patch.
inline void paint_patch(RgbImage& img, int x0, int y0, int patch_px,
                        std::int32_t code) {
  using namespace palette_detail;
  const Rgb bg = tint(code);
  for (int y = 0; y < patch_px; ++y) {
    for (int x = 0; x < patch_px; ++x) img.set(x0 + x, y0 + y, bg);
  }
  if (patch_px < 3) return;
  // Inner area leaves a one-pixel tinted frame so the corner stays readable.
  const int inner = patch_px - 2;
  if (is_glyph_code(code)) {
    const GlyphInfo g = glyph_info(code);
    const Rgb fg = color_rgb(g.color);
    for (int y = 0; y < inner; ++y) {
      for (int x = 0; x < inner; ++x) {
        const double u = (x + 0.5) / inner, v = (y + 0.5) / inner;
        if (!inside_shape(g.shape, u, v)) continue;
        bool paint = true;
        if (g.style == GlyphStyle::kOutline) {
          const double d = 1.5 / inner;
          paint = !(inside_shape(g.shape, u - d, v) &&
                    inside_shape(g.shape, u + d, v) &&
                    inside_shape(g.shape, u, v - d) &&
                    inside_shape(g.shape, u, v + d));
        }
        if (paint) img.set(x0 + 1 + x, y0 + 1 + y, fg);
      }
    }
  } else if (code >= kFirstTextureCode) {
    // Sparse dot texture, pattern keyed by the code.
    const Rgb dot{150, 150, 150};
    for (int y = 0; y < inner; ++y) {
      for (int x = 0; x < inner; ++x) {
        if (((x * 7 + y * 13 + code * 5) % 11) == 0) {
          img.set(x0 + 1 + x, y0 + 1 + y, dot);
        }
      }
    }
  }
}

inline RgbImage detokenize_to_image(const ImageTokenGrid& grid, int patch_px) {
  if (patch_px < 1) throw ParameterError("detokenize: patch_px must be >= 1");
  RgbImage img(grid.width * patch_px, grid.height * patch_px);
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      paint_patch(img, c * patch_px, r * patch_px, patch_px, grid.at(r, c));
    }
  }
  return img;
}

// Inverse palette lookup: identifies each patch by its corner tint and
// checks the full patch matches the palette entry.
inline ImageTokenGrid tokenize_image(const RgbImage& img, int patch_px,
                                     std::int32_t codebook) {
  if (patch_px < 1 || img.width % patch_px || img.height % patch_px) {
    throw DimensionError("tokenize_image: image size not a patch multiple");
  }
  ImageTokenGrid g(img.height / patch_px, img.width / patch_px);
  RgbImage ref(patch_px, patch_px);
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      const Rgb corner = img.get(c * patch_px, r * patch_px);
      const std::int32_t code = (245 - corner.r) + 16 * (245 - corner.g) +
                                256 * (240 - corner.b);
      if (code < 0 || code >= codebook) {
        throw VocabularyError("tokenize_image: unknown patch");
      }
      paint_patch(ref, 0, 0, patch_px, code);
      for (int y = 0; y < patch_px; ++y) {
        for (int x = 0; x < patch_px; ++x) {
          if (!(ref.get(x, y) == img.get(c * patch_px + x, r * patch_px + y))) {
            throw VocabularyError("tokenize_image: patch does not match palette");
          }
        }
      }
      g.at(r, c) = code;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// File formats.

inline void write_ppm(std::ostream& os, const RgbImage& img) {
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  write_ppm(os, img);
}

inline RgbImage read_ppm(std::istream& is) {
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w <= 0 || h <= 0) {
    throw IoError("read_ppm: expected binary P6 with maxval 255");
  }
  is.get();
  RgbImage img(w, h);
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw IoError("read_ppm: truncated pixel data");
  return img;
}

// "h w" then h lines of w integers.
inline void write_grid_text(std::ostream& os, const ImageTokenGrid& g) {
  os << g.height << " " << g.width << "\n";
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      if (c) os << ' ';
      os << g.at(r, c);
    }
    os << "\n";
  }
}

inline ImageTokenGrid read_grid_text(std::istream& is) {
  int h = 0, w = 0;
  if (!(is >> h >> w) || h <= 0 || w <= 0) {
    throw IoError("read_grid_text: bad header");
  }
  ImageTokenGrid g(h, w);
  for (auto& c : g.codes) {
    if (!(is >> c)) throw IoError("read_grid_text: truncated grid");
  }
  return g;
}

}  // namespace arvis

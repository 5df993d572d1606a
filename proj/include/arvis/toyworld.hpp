// Copyright (C) 2026 The Arvis Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic compositional domain: shapes of four colors placed on a 4x4
// lattice, rendered to glyph-code grids, captioned from fixed templates and
// checked by a programmatic verifier.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "arvis/decoding.hpp"
#include "arvis/error.hpp"
#include "arvis/parallel.hpp"
#include "arvis/random.hpp"
#include "arvis/tokenization.hpp"

namespace arvis {

inline constexpr int kLattice = 4;

enum class Category : std::uint8_t {
  kSingle,
  kTwoObj,
  kCounting,
  kColors,
  kPosition,
  kColorAttr
};
inline constexpr std::array<Category, 6> kAllCategories = {
    Category::kSingle,   Category::kTwoObj,   Category::kCounting,
    Category::kColors,   Category::kPosition, Category::kColorAttr};

enum class Relation : std::uint8_t { kAbove, kBelow, kLeftOf, kRightOf };

inline std::string_view category_name(Category c) {
  constexpr std::array<std::string_view, 6> names = {
      "single", "two_obj", "counting", "colors", "position", "color_attr"};
  return names[static_cast<std::size_t>(c)];
}

inline Category parse_category(std::string_view s) {
  for (auto c : kAllCategories) {
    if (category_name(c) == s) return c;
  }
  throw ConfigError("unknown category: " + std::string(s));
}

inline std::string_view shape_name(Shape s, bool plural = false) {
  constexpr std::array<std::string_view, 4> one = {"square", "circle", "triangle", "star"};
  constexpr std::array<std::string_view, 4> many = {"squares", "circles", "triangles", "stars"};
  return (plural ? many : one)[static_cast<std::size_t>(s)];
}

inline std::string_view color_name(Color c) {
  constexpr std::array<std::string_view, 4> names = {"red", "blue", "green", "yellow"};
  return names[static_cast<std::size_t>(c)];
}

inline std::string_view relation_name(Relation r) {
  constexpr std::array<std::string_view, 4> names = {"above", "below", "left of", "right of"};
  return names[static_cast<std::size_t>(r)];
}

inline std::string_view count_word(int n) {
  constexpr std::array<std::string_view, 4> names = {"one", "two", "three", "four"};
  return names.at(static_cast<std::size_t>(n - 1));
}

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

inline bool relation_holds(Relation r, Cell a, Cell b) {
  switch (r) {
    case Relation::kAbove: return a.row < b.row;
    case Relation::kBelow: return a.row > b.row;
    case Relation::kLeftOf: return a.col < b.col;
    case Relation::kRightOf: return a.col > b.col;
  }
  return false;
}

struct ObjectGroup {
  Shape shape = Shape::kSquare;
  Color color = Color::kRed;
  std::vector<Cell> cells;  // one per instance; count = cells.size()
  int count() const { return static_cast<int>(cells.size()); }
  friend bool operator==(const ObjectGroup&, const ObjectGroup&) = default;
};

struct Scene {
  Category category = Category::kSingle;
  std::vector<ObjectGroup> groups;
  Relation relation = Relation::kAbove;  // position scenes: groups[0] vs groups[1]

  void validate() const {
    if (groups.empty() || groups.size() > 3) {
      throw RenderError("scene needs 1-3 object groups");
    }
    std::vector<Cell> used;
    for (const auto& g : groups) {
      if (g.count() < 1 || g.count() > 4) throw RenderError("group count must be 1-4");
      for (auto c : g.cells) {
        if (c.row < 0 || c.row >= kLattice || c.col < 0 || c.col >= kLattice) {
          throw RenderError("object outside the placement lattice");
        }
        if (std::find(used.begin(), used.end(), c) != used.end()) {
          throw RenderError("objects overlap on a lattice cell");
        }
        used.push_back(c);
      }
    }
  }
  friend bool operator==(const Scene&, const Scene&) = default;
};

namespace toy_detail {

inline std::vector<Cell> distinct_cells(Rng& rng, int n) {
  std::array<int, kLattice * kLattice> idx{};
  for (int i = 0; i < kLattice * kLattice; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(i) +
                   rng.below(static_cast<std::uint64_t>(kLattice * kLattice - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  std::vector<Cell> out;
  for (int i = 0; i < n; ++i) {
    out.push_back({idx[static_cast<std::size_t>(i)] / kLattice,
                   idx[static_cast<std::size_t>(i)] % kLattice});
  }
  return out;
}

inline Shape any_shape(Rng& rng) { return static_cast<Shape>(rng.below(kNumShapes)); }
inline Color any_color(Rng& rng) { return static_cast<Color>(rng.below(kNumColors)); }

template <class E>
E other_than(Rng& rng, E e, int n) {
  return static_cast<E>((static_cast<int>(e) + 1 + static_cast<int>(rng.below(
                             static_cast<std::uint64_t>(n - 1)))) % n);
}

}  // namespace toy_detail

inline Scene sample_scene(Rng& rng, Category category) {
  using namespace toy_detail;
  Scene s;
  s.category = category;
  switch (category) {
    case Category::kSingle:
    case Category::kColors: {
      s.groups.push_back({any_shape(rng), any_color(rng), distinct_cells(rng, 1)});
      break;
    }
    case Category::kCounting: {
      const int n = 1 + static_cast<int>(rng.below(4));
      s.groups.push_back({any_shape(rng), any_color(rng), distinct_cells(rng, n)});
      break;
    }
    case Category::kTwoObj:
    case Category::kColorAttr:
    case Category::kPosition: {
      const Shape a = any_shape(rng);
      const Shape b = other_than(rng, a, kNumShapes);
      const Color ca = any_color(rng);
      const Color cb = category == Category::kTwoObj ? any_color(rng)
                                                     : other_than(rng, ca, kNumColors);
      std::vector<Cell> cells;
      if (category == Category::kPosition) {
        s.relation = static_cast<Relation>(rng.below(4));
        do {
          cells = distinct_cells(rng, 2);
        } while (!relation_holds(s.relation, cells[0], cells[1]));
      } else {
        cells = distinct_cells(rng, 2);
      }
      s.groups.push_back({a, ca, {cells[0]}});
      s.groups.push_back({b, cb, {cells[1]}});
      break;
    }
  }
  return s;
}

inline std::string caption(const Scene& s, Category category) {
  auto phrase = [](const ObjectGroup& g, bool colored) {
    std::string out = "a ";
    if (colored) out += std::string(color_name(g.color)) + " ";
    return out + std::string(shape_name(g.shape));
  };
  const auto need = [&](std::size_t n) {
    if (s.groups.size() < n) throw RenderError("scene has too few groups for the category");
  };
  need(1);
  switch (category) {
    case Category::kSingle: return phrase(s.groups[0], false);
    case Category::kColors: return phrase(s.groups[0], true);
    case Category::kCounting: {
      const auto& g = s.groups[0];
      return std::string(count_word(g.count())) + " " +
             std::string(shape_name(g.shape, g.count() > 1));
    }
    case Category::kTwoObj:
      need(2);
      return phrase(s.groups[0], false) + " and " + phrase(s.groups[1], false);
    case Category::kColorAttr:
      need(2);
      return phrase(s.groups[0], true) + " and " + phrase(s.groups[1], true);
    case Category::kPosition:
      need(2);
      return phrase(s.groups[0], true) + " " + std::string(relation_name(s.relation)) +
             " " + phrase(s.groups[1], true);
  }
  return {};
}

inline std::string caption(const Scene& s) { return caption(s, s.category); }

// ---------------------------------------------------------------------------
// Rendering. Each lattice cell spans (h/4) x (w/4) codes; an object fills the
// top-left (h/8) x (w/8) block of its cell, so objects never touch.

struct RenderStyle {
  bool random_glyph_style = false;  // solid or outline per group
  double texture_prob = 0.0;        // chance a background code is textured
};

inline void check_render_grid(int h, int w) {
  if (h < 8 || w < 8 || h % 8 != 0 || w % 8 != 0) {
    throw RenderError("scene too large for grid: dims must be multiples of 8, got " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
}

inline ImageTokenGrid render_scene(const Scene& s, int h, int w,
                                   std::int32_t codebook = 64,
                                   const RenderStyle& style = {},
                                   Rng* rng = nullptr) {
  check_render_grid(h, w);
  s.validate();
  if (codebook < kFirstTextureCode) {
    throw RenderError("codebook too small for the glyph palette");
  }
  const bool randomized = style.random_glyph_style || style.texture_prob > 0.0;
  if (randomized && !rng) throw RenderError("randomized render style needs a generator");
  ImageTokenGrid g(h, w, kBackgroundCode);
  if (style.texture_prob > 0.0 && codebook > kFirstTextureCode) {
    for (auto& c : g.codes) {
      if (rng->uniform() < style.texture_prob) {
        c = kFirstTextureCode +
            static_cast<std::int32_t>(rng->below(static_cast<std::uint64_t>(codebook - kFirstTextureCode)));
      }
    }
  }
  const int ch = h / kLattice, cw = w / kLattice;
  for (const auto& grp : s.groups) {
    GlyphStyle gs = GlyphStyle::kSolid;
    if (style.random_glyph_style && rng->below(2) == 1) gs = GlyphStyle::kOutline;
    const std::int32_t code = glyph_code(grp.shape, grp.color, gs);
    for (auto cell : grp.cells) {
      for (int r = 0; r < ch / 2; ++r) {
        for (int c = 0; c < cw / 2; ++c) g.at(cell.row * ch + r, cell.col * cw + c) = code;
      }
    }
  }
  return g;
}

// 2x block downsampling keeping the top-left code of each block.
inline ImageTokenGrid downsample2(const ImageTokenGrid& g) {
  if (g.height % 2 || g.width % 2) throw DimensionError("downsample2: odd grid");
  ImageTokenGrid out(g.height / 2, g.width / 2);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) out.at(r, c) = g.at(2 * r, 2 * c);
  }
  return out;
}

// One-line record: "<category> <relation> <shape>:<color>:<r>.<c>[,<r>.<c>] ..."
inline std::string serialize_scene(const Scene& s) {
  std::ostringstream os;
  os << category_name(s.category) << ' ' << static_cast<int>(s.relation);
  for (const auto& g : s.groups) {
    os << ' ' << shape_name(g.shape) << ':' << color_name(g.color) << ':';
    for (std::size_t i = 0; i < g.cells.size(); ++i) {
      if (i) os << ',';
      os << g.cells[i].row << '.' << g.cells[i].col;
    }
  }
  return os.str();
}

inline Scene parse_scene(const std::string& line) {
  std::istringstream is(line);
  std::string cat, tok;
  int rel = 0;
  if (!(is >> cat >> rel) || rel < 0 || rel > 3) throw IoError("scene record: bad header");
  Scene s;
  s.category = parse_category(cat);
  s.relation = static_cast<Relation>(rel);
  while (is >> tok) {
    const auto a = tok.find(':'), b = tok.rfind(':');
    if (a == std::string::npos || a == b) throw IoError("scene record: bad group " + tok);
    ObjectGroup g;
    bool ok_shape = false, ok_color = false;
    for (int i = 0; i < kNumShapes; ++i) {
      if (shape_name(static_cast<Shape>(i)) == tok.substr(0, a)) {
        g.shape = static_cast<Shape>(i), ok_shape = true;
      }
    }
    for (int i = 0; i < kNumColors; ++i) {
      if (color_name(static_cast<Color>(i)) == tok.substr(a + 1, b - a - 1)) {
        g.color = static_cast<Color>(i), ok_color = true;
      }
    }
    if (!ok_shape || !ok_color) throw IoError("scene record: bad group " + tok);
    std::istringstream cells(tok.substr(b + 1));
    std::string c;
    while (std::getline(cells, c, ',')) {
      int r = 0, col = 0;
      if (std::sscanf(c.c_str(), "%d.%d", &r, &col) != 2) {
        throw IoError("scene record: bad cell " + c);
      }
      g.cells.push_back({r, col});
    }
    s.groups.push_back(std::move(g));
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Verifier.

struct ObjectSpec {
  Shape shape = Shape::kSquare;
  std::optional<Color> color;
  int count = 0;  // 0: not constrained
};

struct ParsedPrompt {
  Category category = Category::kSingle;
  std::vector<ObjectSpec> objects;
  std::optional<Relation> relation;
};

// Grammar:
//   prompt  := count | phrase | phrase "and" phrase | phrase rel phrase
//   count   := ("one" shape) | ("two"|"three"|"four") shapes
//   phrase  := "a" [color] shape
//   rel     := "above" | "below" | "left" "of" | "right" "of"
inline ParsedPrompt parse_prompt(std::string_view prompt) {
  const auto words = split_words(prompt);
  std::size_t i = 0;
  auto fail = [&](const std::string& why) -> ParsedPrompt {
    throw VerifierError("cannot parse prompt \"" + std::string(prompt) + "\": " + why);
  };
  auto peek = [&]() -> std::string { return i < words.size() ? words[i] : std::string(); };
  auto shape_of = [](const std::string& w, bool plural) -> std::optional<Shape> {
    for (int s = 0; s < kNumShapes; ++s) {
      if (shape_name(static_cast<Shape>(s), plural) == w) return static_cast<Shape>(s);
    }
    return std::nullopt;
  };
  auto color_of = [](const std::string& w) -> std::optional<Color> {
    for (int c = 0; c < kNumColors; ++c) {
      if (color_name(static_cast<Color>(c)) == w) return static_cast<Color>(c);
    }
    return std::nullopt;
  };
  auto phrase = [&]() -> std::optional<ObjectSpec> {
    if (peek() != "a") return std::nullopt;
    ++i;
    ObjectSpec o;
    if (auto c = color_of(peek())) o.color = c, ++i;
    auto s = shape_of(peek(), false);
    if (!s) return std::nullopt;
    ++i;
    o.shape = *s;
    return o;
  };

  ParsedPrompt p;
  for (int n = 1; n <= 4; ++n) {
    if (peek() == count_word(n)) {
      ++i;
      auto s = shape_of(peek(), n > 1);
      if (!s) return fail("expected a shape after the count");
      ++i;
      if (i != words.size()) return fail("trailing words");
      p.category = Category::kCounting;
      p.objects.push_back({*s, std::nullopt, n});
      return p;
    }
  }
  auto first = phrase();
  if (!first) return fail("expected \"a [color] shape\"");
  p.objects.push_back(*first);
  if (i == words.size()) {
    p.category = first->color ? Category::kColors : Category::kSingle;
    return p;
  }
  const std::string w = peek();
  ++i;
  if (w == "and") {
    p.category = Category::kTwoObj;
  } else if (w == "above" || w == "below") {
    p.relation = w == "above" ? Relation::kAbove : Relation::kBelow;
  } else if ((w == "left" || w == "right") && peek() == "of") {
    ++i;
    p.relation = w == "left" ? Relation::kLeftOf : Relation::kRightOf;
  } else {
    return fail("unexpected word \"" + w + "\"");
  }
  auto second = phrase();
  if (!second || i != words.size()) return fail("expected a final \"a [color] shape\"");
  p.objects.push_back(*second);
  if (p.relation) {
    p.category = Category::kPosition;
  } else if (first->color || second->color) {
    p.category = Category::kColorAttr;
  }
  return p;
}

struct DetectedObject {
  Shape shape;
  Color color;
  Cell cell;
};

// Objects are 4-connected components of glyph codes with exactly the object
// footprint shape and a single shape and color. A component is placed in the
// lattice cell holding its center. Malformed components are ignored.
inline std::vector<DetectedObject> detect_objects(const ImageTokenGrid& g) {
  if (g.height < 8 || g.width < 8 || g.height % 8 || g.width % 8) {
    throw VerifierError("grid dims must be multiples of 8");
  }
  const int ch = g.height / kLattice, cw = g.width / kLattice;
  const int fh = ch / 2, fw = cw / 2;
  std::vector<char> seen(g.codes.size(), 0);
  std::vector<DetectedObject> out;
  std::vector<std::pair<int, int>> stack, comp;
  for (int r0 = 0; r0 < g.height; ++r0) {
    for (int c0 = 0; c0 < g.width; ++c0) {
      const auto idx0 = static_cast<std::size_t>(r0 * g.width + c0);
      if (seen[idx0] || !is_glyph_code(g.codes[idx0])) continue;
      comp.clear();
      stack.assign(1, {r0, c0});
      seen[idx0] = 1;
      while (!stack.empty()) {
        auto [r, c] = stack.back();
        stack.pop_back();
        comp.push_back({r, c});
        const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int nr = r + dr[k], nc = c + dc[k];
          if (nr < 0 || nc < 0 || nr >= g.height || nc >= g.width) continue;
          const auto ni = static_cast<std::size_t>(nr * g.width + nc);
          if (seen[ni] || !is_glyph_code(g.codes[ni])) continue;
          seen[ni] = 1;
          stack.push_back({nr, nc});
        }
      }
      int rmin = g.height, cmin = g.width, rmax = -1, cmax = -1;
      for (auto [r, c] : comp) {
        rmin = std::min(rmin, r), rmax = std::max(rmax, r);
        cmin = std::min(cmin, c), cmax = std::max(cmax, c);
      }
      if (static_cast<int>(comp.size()) != fh * fw || rmax - rmin + 1 != fh ||
          cmax - cmin + 1 != fw) {
        continue;
      }
      const GlyphInfo first = glyph_info(g.at(rmin, cmin));
      bool uniform = true;
      for (auto [r, c] : comp) {
        const GlyphInfo gi = glyph_info(g.at(r, c));
        uniform = uniform && gi.shape == first.shape && gi.color == first.color;
      }
      if (uniform) out.push_back({first.shape, first.color, {(rmin + fh / 2) / ch, (cmin + fw / 2) / cw}});
    }
  }
  return out;
}

struct VerifyResult {
  double reward = 0.0;
  std::vector<std::pair<std::string, bool>> criteria;
  bool success() const {
    return std::all_of(criteria.begin(), criteria.end(), [](const auto& c) { return c.second; });
  }
};

inline VerifyResult verify(std::string_view prompt, const ImageTokenGrid& grid) {
  const ParsedPrompt p = parse_prompt(prompt);
  const auto objects = detect_objects(grid);
  auto matches = [](const DetectedObject& o, const ObjectSpec& s, bool use_color) {
    return o.shape == s.shape && (!use_color || !s.color || o.color == *s.color);
  };
  auto count = [&](const ObjectSpec& s, bool use_color) {
    return static_cast<int>(std::count_if(objects.begin(), objects.end(), [&](const auto& o) {
      return matches(o, s, use_color);
    }));
  };
  auto label = [](const ObjectSpec& s) {
    std::string out;
    if (s.color) out += std::string(color_name(*s.color)) + " ";
    return out + std::string(shape_name(s.shape));
  };
  VerifyResult v;
  if (p.category == Category::kCounting) {
    const auto& s = p.objects[0];
    v.criteria.push_back({"present " + label(s), count(s, false) > 0});
    v.criteria.push_back({"count " + std::to_string(s.count), count(s, false) == s.count});
  } else if (p.relation) {
    const auto& a = p.objects[0];
    const auto& b = p.objects[1];
    v.criteria.push_back({"present " + label(a) + ", " + label(b),
                          count(a, true) > 0 && count(b, true) > 0});
    bool rel = false;
    for (const auto& oa : objects) {
      for (const auto& ob : objects) {
        if (&oa != &ob && matches(oa, a, true) && matches(ob, b, true) &&
            relation_holds(*p.relation, oa.cell, ob.cell)) {
          rel = true;
        }
      }
    }
    v.criteria.push_back({std::string(relation_name(*p.relation)), rel});
  } else {
    for (const auto& s : p.objects) {
      v.criteria.push_back({"present " + std::string(shape_name(s.shape)), count(s, false) > 0});
      if (s.color) v.criteria.push_back({"present " + label(s), count(s, true) > 0});
    }
  }
  int ok = 0;
  for (const auto& c : v.criteria) ok += c.second ? 1 : 0;
  v.reward = static_cast<double>(ok) / static_cast<double>(v.criteria.size());
  return v;
}

// ---------------------------------------------------------------------------
// Benchmark.

struct EvalPrompt {
  Category category;
  std::string text;
};

// n prompts per category, deterministic in (seed, category, index).
inline std::vector<EvalPrompt> eval_prompts(int n_per_category, std::uint64_t seed) {
  std::vector<EvalPrompt> out;
  for (auto c : kAllCategories) {
    for (int i = 0; i < n_per_category; ++i) {
      Rng rng = Rng::derive(seed, 0x6576616cULL + static_cast<std::uint64_t>(c),
                            static_cast<std::uint64_t>(i));
      out.push_back({c, caption(sample_scene(rng, c), c)});
    }
  }
  return out;
}

struct GenevalReport {
  std::vector<std::pair<Category, double>> scores;
  int n_per_category = 0;
  double overall = 0.0;
  std::vector<ImageTokenGrid> grids;  // in eval_prompts order
  std::vector<double> rewards;

  std::string to_string() const {
    std::string out;
    char buf[128];
    for (const auto& [c, s] : scores) {
      std::snprintf(buf, sizeof buf, "category=%s score=%.4f n=%d\n",
                    std::string(category_name(c)).c_str(), s, n_per_category);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "overall=%.4f\n", overall);
    return out + buf;
  }
};

struct GenevalOptions {
  int n_per_category = 50;
  std::uint64_t seed = 0;
  int grid_h = 16;
  int grid_w = 16;
  int batch = 8;    // requests decoded in lockstep
  int threads = 1;
};

// Score = fraction of prompts whose grid satisfies every criterion.
template <class T>
GenevalReport toy_geneval(const Model<T>& model, const SamplerConfig& sampler,
                          const GenevalOptions& opt) {
  const auto prompts = eval_prompts(opt.n_per_category, opt.seed);
  const VocabLayout layout = model.layout();
  GenevalReport rep;
  rep.n_per_category = opt.n_per_category;
  rep.grids.resize(prompts.size());
  rep.rewards.resize(prompts.size());
  const std::size_t batch = static_cast<std::size_t>(std::max(1, opt.batch));
  const std::size_t chunks = (prompts.size() + batch - 1) / batch;
  parallel_for(chunks, opt.threads, [&](std::size_t ci) {
    std::vector<GenerateRequest> reqs;
    const std::size_t lo = ci * batch, hi = std::min(prompts.size(), lo + batch);
    for (std::size_t i = lo; i < hi; ++i) {
      SamplerConfig s = sampler;
      s.seed = Rng::derive(opt.seed, 0x73616d70ULL, i).next_u64();
      reqs.push_back({encode_text(prompts[i].text, layout), s});
    }
    auto res = generate_batch<T>(model, reqs, opt.grid_h, opt.grid_w);
    for (std::size_t i = lo; i < hi; ++i) {
      rep.grids[i] = std::move(res[i - lo].grid);
      rep.rewards[i] = verify(prompts[i].text, rep.grids[i]).reward;
    }
  });
  double total = 0.0;
  for (std::size_t k = 0; k < kAllCategories.size(); ++k) {
    int ok = 0;
    for (int i = 0; i < opt.n_per_category; ++i) {
      ok += rep.rewards[k * static_cast<std::size_t>(opt.n_per_category) +
                        static_cast<std::size_t>(i)] == 1.0;
    }
    const double score = opt.n_per_category > 0
                             ? static_cast<double>(ok) / opt.n_per_category
                             : 0.0;
    rep.scores.push_back({kAllCategories[k], score});
    total += score;
  }
  rep.overall = total / static_cast<double>(kAllCategories.size());
  return rep;
}

}  // namespace arvis

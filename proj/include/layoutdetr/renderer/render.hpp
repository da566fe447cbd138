#pragma once

// Deterministic banner composition: adaptive font fitting with greedy
// wrap, black/white contrast rules, center alignment, regularity-
// preserving jitter.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "layoutdetr/core/foreground.hpp"
#include "layoutdetr/core/geometry.hpp"
#include "layoutdetr/core/image.hpp"
#include "layoutdetr/core/random.hpp"
#include "layoutdetr/objectives/losses.hpp"
#include "layoutdetr/renderer/font.hpp"

namespace layoutdetr::render {

struct ClassStyle {
  int max_font_size = 0;  // 0: bounded by the box only
  friend bool operator==(const ClassStyle&, const ClassStyle&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ClassStyle, max_font_size)

struct RenderSpec {
  std::string font_family = "Arial";
  int min_font_size = 8;
  int max_font_size = 0;  // 0: bounded by box height
  int button_radius = 8;
  int button_padding = 4;
  double jitter_fraction = 0.2;
  bool center_align = true;
  // "error" raises on overflow; "shrink" goes below min_font_size and
  // skips text that fits at no size.
  std::string on_overflow = "error";
  std::map<std::string, ClassStyle> class_styles;

  void validate() const {
    if (min_font_size < 1) throw ConfigurationError("render: min_font_size must be >= 1");
    if (max_font_size != 0 && max_font_size < min_font_size)
      throw ConfigurationError("render: max_font_size must be >= min_font_size");
    if (!(jitter_fraction >= 0 && jitter_fraction < 1)) throw ConfigurationError("render: jitter_fraction must be in [0,1)");
    if (button_radius < 0 || button_padding < 0) throw ConfigurationError("render: button radius/padding must be >= 0");
    if (on_overflow != "error" && on_overflow != "shrink") throw ConfigurationError("render: on_overflow must be error|shrink");
    for (const auto& [k, v] : class_styles) {
      text_class_or_throw(k);
      if (v.max_font_size < 0) throw ConfigurationError("render: class max_font_size must be >= 0");
    }
  }
  friend bool operator==(const RenderSpec&, const RenderSpec&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RenderSpec, font_family, min_font_size, max_font_size, button_radius,
                                                button_padding, jitter_fraction, center_align, on_overflow,
                                                class_styles)

// ---------------------------------------------------------------- text fitting

struct TextFit {
  int font_size = 0;
  std::vector<std::string> lines;
  std::vector<std::size_t> breaks;  // code-point offsets where lines 2.. start
};

// Greedy wrap of `text` at `size` into `width` pixels. Breaks at spaces;
// a word wider than the line is broken between characters. Empty result
// means some single character does not fit.
inline std::optional<TextFit> wrap_text(std::string_view text, int size, double width) {
  const auto cps = utf8::decode(text);
  auto span_width = [&](std::size_t a, std::size_t b) {
    double u = 0;
    for (std::size_t i = a; i < b; ++i) u += advance_units(cps[i]);
    return u * size / 1000.0;
  };
  const double limit = width + 1e-9;
  std::vector<std::pair<std::size_t, std::size_t>> lines;
  std::size_t line_start = 0, line_end = 0;
  bool open = false;
  std::size_t i = 0;
  while (i < cps.size()) {
    if (cps[i] == U' ') {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < cps.size() && cps[j] != U' ') ++j;
    if (open && span_width(line_start, j) <= limit) {
      line_end = j;
    } else {
      if (open) lines.push_back({line_start, line_end});
      open = false;
      if (span_width(i, j) <= limit) {
        line_start = i;
        line_end = j;
        open = true;
      } else {
        std::size_t a = i;
        while (a < j) {
          std::size_t b = a;
          while (b < j && span_width(a, b + 1) <= limit) ++b;
          if (b == a) return std::nullopt;
          if (b < j) {
            lines.push_back({a, b});
          } else {
            line_start = a;
            line_end = b;
            open = true;
          }
          a = b;
        }
      }
    }
    i = j;
  }
  if (open) lines.push_back({line_start, line_end});
  TextFit fit;
  fit.font_size = size;
  for (std::size_t k = 0; k < lines.size(); ++k) {
    std::string s;
    for (std::size_t c = lines[k].first; c < lines[k].second; ++c) utf8::append(s, cps[c]);
    fit.lines.push_back(std::move(s));
    if (k > 0) fit.breaks.push_back(lines[k].first);
  }
  return fit;
}

inline double block_height(std::size_t lines, int size) { return double(lines) * kLineHeight * size; }

inline std::optional<TextFit> fit_at(std::string_view text, int size, int box_h, int box_w) {
  if (size < 1) return std::nullopt;
  auto fit = wrap_text(text, size, box_w);
  if (!fit || fit->lines.empty() || block_height(fit->lines.size(), size) > box_h + 1e-9) return std::nullopt;
  return fit;
}

inline int font_size_upper_bound(int box_h, int max_font_size) {
  int upper = int(std::floor(box_h / kLineHeight + 1e-9));
  if (max_font_size > 0) upper = std::min(upper, max_font_size);
  return upper;
}

// Largest integer size whose wrap fits the box (binary search, then a
// short upward scan so the result is maximal even where wrapping is not
// monotone).
inline TextFit fit_text_to_box(std::string_view text, int box_h, int box_w, const RenderSpec& spec = {},
                               const std::string& element = "text", int min_size_override = 0) {
  if (utf8::decode(text).empty() || text.find_first_not_of(' ') == std::string_view::npos)
    throw ValidationError("fit_text_to_box: " + element + " has an empty string");
  if (box_h < 1 || box_w < 1) throw ValidationError("fit_text_to_box: " + element + " box must be at least 1x1 px");
  const int lo_bound = min_size_override > 0 ? min_size_override : spec.min_font_size;
  const int upper = font_size_upper_bound(box_h, spec.max_font_size);
  auto at_min = fit_at(text, lo_bound, box_h, box_w);
  if (upper < lo_bound || !at_min)
    throw OverflowError(element + " does not fit its " + std::to_string(box_w) + "x" + std::to_string(box_h) +
                        " px box at font size " + std::to_string(lo_bound));
  int lo = lo_bound, hi = upper;
  while (lo < hi) {
    const int mid = lo + (hi - lo + 1) / 2;
    if (fit_at(text, mid, box_h, box_w))
      lo = mid;
    else
      hi = mid - 1;
  }
  while (lo < upper && fit_at(text, lo + 1, box_h, box_w)) ++lo;
  return *fit_at(text, lo, box_h, box_w);
}

// ---------------------------------------------------------------- colors

enum class Color { black, white };

inline std::string_view to_string(Color c) { return c == Color::black ? "black" : "white"; }

inline std::array<std::uint8_t, 3> rgb(Color c) {
  return c == Color::black ? std::array<std::uint8_t, 3>{0, 0, 0} : std::array<std::uint8_t, 3>{255, 255, 255};
}

inline double mean_luminance(const Image& region) {
  require_valid(region, "pick_contrast_color");
  double s = 0;
  const std::size_t n = std::size_t(region.height) * region.width;
  for (std::size_t i = 0; i < n; ++i) {
    const auto* p = &region.pixels[i * 3];
    s += 0.2126 * (p[0] / 255.0) + 0.7152 * (p[1] / 255.0) + 0.0722 * (p[2] / 255.0);
  }
  return s / double(n);
}

// Ties at exactly 0.5 go to black.
inline Color contrast_for_luminance(double luminance) { return luminance >= 0.5 ? Color::black : Color::white; }

inline Color pick_contrast_color(const Image& region) { return contrast_for_luminance(mean_luminance(region)); }

inline Color pick_button_text_color(Color pad) { return pad == Color::black ? Color::white : Color::black; }

// ---------------------------------------------------------------- layout post-processing

inline Layout enforce_center_alignment(const Layout& in) {
  if (in.empty()) throw ValidationError("enforce_center_alignment: empty layout");
  double m = 0;
  for (const auto& b : in.boxes) m += b.cx;
  m /= double(in.size());
  Layout out = in;
  for (auto& b : out.boxes) b.cx = m;
  return out;
}

inline constexpr double kAlignmentTolerance = 1e-3;

// (i, j, kind) triples, i < j, whose alignment delta is below tolerance.
inline std::vector<std::tuple<int, int, int>> alignment_structure(const Layout& l, double tol = kAlignmentTolerance) {
  std::vector<std::tuple<int, int, int>> out;
  for (std::size_t i = 0; i < l.size(); ++i)
    for (std::size_t j = i + 1; j < l.size(); ++j) {
      const auto d = alignment_deltas(l.boxes[i], l.boxes[j]);
      for (int k = 0; k < kAlignmentKinds; ++k)
        if (d[std::size_t(k)] < tol) out.emplace_back(int(i), int(j), k);
    }
  return out;
}

namespace detail {

// Connected components of boxes linked by any alignment on one axis
// (kinds [k0, k0+3)).
inline std::vector<int> axis_components(const Layout& l, int k0, double tol) {
  const int n = int(l.size());
  std::vector<int> comp(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) comp[std::size_t(i)] = i;
  auto find = [&](int x) {
    while (comp[std::size_t(x)] != x) x = comp[std::size_t(x)] = comp[std::size_t(comp[std::size_t(x)])];
    return x;
  };
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const auto d = alignment_deltas(l.boxes[std::size_t(i)], l.boxes[std::size_t(j)]);
      if (d[std::size_t(k0)] < tol || d[std::size_t(k0 + 1)] < tol || d[std::size_t(k0 + 2)] < tol)
        comp[std::size_t(find(i))] = find(j);
    }
  for (int i = 0; i < n; ++i) comp[std::size_t(i)] = find(i);
  return comp;
}

struct AxisMove {
  double scale = 1, shift = 0, pivot = 0;
};

inline bool edges_kept_inside(const NormalizedBox& in, const NormalizedBox& out) {
  const double e = 1e-12;
  if (!is_valid_box(out)) return false;
  if (in.top() >= -e && out.top() < -e) return false;
  if (in.left() >= -e && out.left() < -e) return false;
  if (in.bottom() <= 1 + e && out.bottom() > 1 + e) return false;
  if (in.right() <= 1 + e && out.right() > 1 + e) return false;
  return true;
}

}  // namespace detail

// Random per-box perturbation within +-fraction of the box's own size that
// keeps regularity: boxes connected by an alignment on an axis share one
// affine move on that axis (so their shared edges stay shared), and a draw
// that would change the alignment structure or increase overlap is
// shrunk, redrawn, or finally reverted.
inline Layout jitter_layout(const Layout& in, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0 && fraction < 1)) throw ValidationError("jitter_layout: fraction must be in [0,1)");
  if (fraction == 0 || in.empty()) return in;
  const auto structure = alignment_structure(in);
  const double overlap0 = in.size() > 1 ? objectives::overlap_loss(in) : 0.0;
  const auto comp_h = detail::axis_components(in, 0, kAlignmentTolerance);
  const auto comp_v = detail::axis_components(in, 3, kAlignmentTolerance);
  const std::size_t n = in.size();
  Rng rng(mix_seed(seed, 0x717733));

  for (int attempt = 0; attempt < 8; ++attempt) {
    std::map<int, detail::AxisMove> mh, mv;
    for (int pass = 0; pass < 2; ++pass) {
      const auto& comp = pass == 0 ? comp_h : comp_v;
      auto& moves = pass == 0 ? mh : mv;
      for (std::size_t i = 0; i < n; ++i) {
        const int c = comp[i];
        if (moves.count(c)) continue;
        double size = 0, centre = 0;
        int members = 0;
        for (std::size_t j = 0; j < n; ++j)
          if (comp[j] == c) {
            size += pass == 0 ? in.boxes[j].w : in.boxes[j].h;
            centre += pass == 0 ? in.boxes[j].cx : in.boxes[j].cy;
            ++members;
          }
        size /= members;
        centre /= members;
        moves[c] = {1 + fraction * rng.uniform(-1, 1), fraction * size * rng.uniform(-1, 1), centre};
      }
    }
    for (double s : {1.0, 0.5, 0.25, 0.125}) {
      Layout out = in;
      bool ok = true;
      for (std::size_t i = 0; i < n && ok; ++i) {
        const auto& h = mh[comp_h[i]];
        const auto& v = mv[comp_v[i]];
        const double ah = 1 + s * (h.scale - 1), av = 1 + s * (v.scale - 1);
        auto& b = out.boxes[i];
        b.cx = h.pivot + ah * (in.boxes[i].cx - h.pivot) + s * h.shift;
        b.w = ah * in.boxes[i].w;
        b.cy = v.pivot + av * (in.boxes[i].cy - v.pivot) + s * v.shift;
        b.h = av * in.boxes[i].h;
        ok = detail::edges_kept_inside(in.boxes[i], b);
      }
      if (!ok) continue;
      if (alignment_structure(out) != structure) continue;
      if (n > 1 && objectives::overlap_loss(out) > overlap0 + 1e-12) continue;
      return out;
    }
  }
  return in;
}

// ---------------------------------------------------------------- composition

inline PixelRect pixel_rect(const NormalizedBox& b, int H, int W) {
  auto r = [](double v) { return int(std::floor(v + 0.5)); };
  int top = r(b.top() * H), left = r(b.left() * W), bottom = r(b.bottom() * H), right = r(b.right() * W);
  if (bottom <= top) bottom = top + 1;
  if (right <= left) right = left + 1;
  return clip_rect({top, left, bottom - top, right - left}, H, W);
}

struct ElementRender {
  std::string kind;  // text class name or "image"
  PixelRect box;
  int font_size = 0;
  std::vector<std::string> lines;
  std::optional<Color> text_color;
  std::optional<Color> pad_color;
  bool overflow = false;
};

struct RenderedDesign {
  Image image;
  Layout layout;  // final boxes after alignment and jitter
  std::vector<ElementRender> elements;
};

inline nlohmann::json to_json_record(const RenderedDesign& d) {
  nlohmann::json els = nlohmann::json::array();
  for (std::size_t i = 0; i < d.elements.size(); ++i) {
    const auto& e = d.elements[i];
    const auto& b = d.layout.boxes[i];
    nlohmann::json j = {{"kind", e.kind},
                        {"box", {b.cy, b.cx, b.h, b.w}},
                        {"pixel_box", {{"top", e.box.top}, {"left", e.box.left}, {"height", e.box.height}, {"width", e.box.width}}}};
    if (e.font_size > 0) j["font_size"] = e.font_size;
    if (!e.lines.empty()) j["lines"] = e.lines;
    if (e.text_color) j["text_color"] = std::string(to_string(*e.text_color));
    if (e.pad_color) j["pad_color"] = std::string(to_string(*e.pad_color));
    if (e.overflow) j["overflow"] = true;
    els.push_back(std::move(j));
  }
  return {{"height", d.image.height}, {"width", d.image.width}, {"elements", els}};
}

// Draws fitted lines centred in `box`. Every inked pixel's centre lies in
// its glyph cell, and cells lie inside the text block, hence inside `box`.
inline void draw_text(Image& img, const PixelRect& box, const TextFit& fit, Color color) {
  const auto c = rgb(color);
  const int size = fit.font_size;
  const double block_h = block_height(fit.lines.size(), size);
  double line_top = box.top + (box.height - block_h) / 2;
  for (const auto& line : fit.lines) {
    const double lw = text_width(line, size);
    double pen = box.left + (box.width - lw) / 2;
    const double y0 = line_top + kGlyphTop * size, y1 = y0 + kGlyphHeight * size;
    for (char32_t cp : utf8::decode(line)) {
      const double adv = advance_units(cp) * size / 1000.0;
      const double x0 = pen, x1 = pen + adv * 5.0 / 6.0;
      const auto& g = glyph(cp);
      const int px0 = std::max({int(std::floor(x0)), box.left, 0});
      const int px1 = std::min({int(std::ceil(x1)), box.right(), img.width});
      const int py0 = std::max({int(std::floor(y0)), box.top, 0});
      const int py1 = std::min({int(std::ceil(y1)), box.bottom(), img.height});
      for (int py = py0; py < py1; ++py) {
        const double cy = py + 0.5;
        if (cy < y0 || cy >= y1) continue;
        const int row = std::min(7, int((cy - y0) / (y1 - y0) * 8));
        for (int px = px0; px < px1; ++px) {
          const double cx = px + 0.5;
          if (cx < x0 || cx >= x1) continue;
          const int col = std::min(4, int((cx - x0) / (x1 - x0) * 5));
          if (g[std::size_t(col)] & (1u << row)) img.set(py, px, c[0], c[1], c[2]);
        }
      }
      pen += adv;
    }
    line_top += kLineHeight * size;
  }
}

inline void draw_rounded_rect(Image& img, const PixelRect& r, int radius, Color color) {
  const auto c = rgb(color);
  const double rad = std::min<double>(radius, std::min(r.height, r.width) / 2.0);
  for (int y = r.top; y < r.bottom(); ++y)
    for (int x = r.left; x < r.right(); ++x) {
      const double cy = y + 0.5, cx = x + 0.5;
      const double ny = std::clamp(cy, r.top + rad, r.bottom() - rad);
      const double nx = std::clamp(cx, r.left + rad, r.right() - rad);
      if ((cy - ny) * (cy - ny) + (cx - nx) * (cx - nx) <= rad * rad) img.set(y, x, c[0], c[1], c[2]);
    }
}

inline void paste(Image& img, const PixelRect& r, const Image& patch) {
  if (r.height < 1 || r.width < 1) return;
  const Image p = resize_bilinear(patch, r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      img.set(r.top + y, r.left + x, p.at(y, x, 0), p.at(y, x, 1), p.at(y, x, 2));
}

// The geometric half of rendering: center alignment, then jitter.
inline Layout prepare_layout(const Layout& layout, const RenderSpec& spec, std::uint64_t seed) {
  if (layout.empty()) return layout;
  Layout out = spec.center_align ? enforce_center_alignment(layout) : layout;
  return jitter_layout(out, spec.jitter_fraction, seed);
}

// Background + foreground + layout -> composed banner. Alignment and jitter
// (fraction from the spec, driven by `seed`) are applied first.
inline RenderedDesign render_design(const Image& background, const ForegroundSet& fg, const Layout& layout,
                                    const RenderSpec& spec = {}, std::uint64_t seed = 0) {
  spec.validate();
  require_valid(background, "render_design");
  if (layout.size() != fg.size()) throw ValidationError("render_design: layout and foreground lengths differ");
  validate_layout(layout);
  validate_foreground(fg);
  RenderedDesign out;
  out.image = background;
  out.layout = layout;
  if (fg.size() == 0) return out;
  out.layout = prepare_layout(layout, spec, seed);

  const int H = background.height, W = background.width;
  std::vector<std::string> overflowing;
  // Image patches first so text is never hidden underneath them.
  for (std::size_t i = 0; i < fg.size(); ++i) {
    ElementRender e;
    e.box = pixel_rect(out.layout.boxes[i], H, W);
    if (const auto* im = std::get_if<ImageElement>(&fg.elements[i])) {
      e.kind = "image";
      paste(out.image, e.box, im->patch);
    }
    out.elements.push_back(std::move(e));
  }
  for (std::size_t i = 0; i < fg.size(); ++i) {
    const auto* t = std::get_if<TextElement>(&fg.elements[i]);
    if (!t) continue;
    ElementRender& e = out.elements[i];
    e.kind = std::string(to_string(t->cls));
    const std::string label = "element " + std::to_string(i) + " (" + e.kind + ")";
    if (e.box.height < 1 || e.box.width < 1) {
      overflowing.push_back(label);
      e.overflow = true;
      continue;
    }
    const Color bg_color = pick_contrast_color(crop(background, e.box));
    PixelRect text_box = e.box;
    if (t->cls == TextClass::button) {
      e.pad_color = bg_color;
      e.text_color = pick_button_text_color(bg_color);
      draw_rounded_rect(out.image, e.box, spec.button_radius, *e.pad_color);
      const int p = spec.button_padding;
      if (e.box.height > 2 * p && e.box.width > 2 * p)
        text_box = {e.box.top + p, e.box.left + p, e.box.height - 2 * p, e.box.width - 2 * p};
    } else {
      e.text_color = bg_color;
    }
    RenderSpec s = spec;
    if (auto it = spec.class_styles.find(e.kind); it != spec.class_styles.end() && it->second.max_font_size > 0)
      s.max_font_size = spec.max_font_size > 0 ? std::min(spec.max_font_size, it->second.max_font_size)
                                               : it->second.max_font_size;
    try {
      const TextFit fit = fit_text_to_box(t->text, text_box.height, text_box.width, s, label);
      e.font_size = fit.font_size;
      e.lines = fit.lines;
      draw_text(out.image, text_box, fit, *e.text_color);
    } catch (const OverflowError&) {
      if (spec.on_overflow == "error") {
        overflowing.push_back(label);
        continue;
      }
      try {
        const TextFit fit = fit_text_to_box(t->text, text_box.height, text_box.width, s, label, 1);
        e.font_size = fit.font_size;
        e.lines = fit.lines;
        draw_text(out.image, text_box, fit, *e.text_color);
      } catch (const OverflowError&) {
        e.overflow = true;
      }
    }
  }
  if (!overflowing.empty()) {
    std::string msg = "text overflow:";
    for (const auto& o : overflowing) msg += " " + o + ";";
    throw OverflowError(msg);
  }
  return out;
}

}  // namespace layoutdetr::render

#pragma once

// Procedural desk-scale dataset: text-free backgrounds with a calm
// "copy space" under a planted, center-aligned, non-overlapping column
// of elements ordered header -> body -> button -> disclaimer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "layoutdetr/core/foreground.hpp"
#include "layoutdetr/core/random.hpp"
#include "layoutdetr/dataset/image_io.hpp"
#include "layoutdetr/dataset/manifest.hpp"

namespace layoutdetr {

struct SynthGrammar {
  std::vector<std::array<int, 2>> sizes = {{256, 256}, {256, 320}, {320, 256}};  // {H, W}
  double body_probability = 0.8;
  double button_probability = 0.7;
  double disclaimer_probability = 0.4;
  double image_probability = 0.3;
  int patch_size = 32;
};

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<DesignSample> samples;  // parallel to manifest.records
};

namespace synth_detail {

inline constexpr std::array<const char*, 48> kWords = {
    "summer", "sale",   "new",     "collection", "save",   "today", "only",   "free",   "shipping", "on",
    "all",    "orders", "discover", "your",      "style",  "limited", "offer", "best",  "deals",    "of",
    "the",    "season", "fresh",   "look",       "shop",   "now",   "get",    "more",   "for",      "less",
    "terms",  "apply",  "while",   "supplies",   "last",   "see",   "store",  "for",    "details",  "join",
    "us",     "learn",  "our",     "home",       "spring", "event", "week",   "deal"};

struct ClassSpec {
  TextClass cls;
  int min_chars, max_chars;
  double font;  // cap height proxy, fraction of image height
};

inline constexpr std::array<ClassSpec, 4> kSpecs = {{{TextClass::header, 8, 28, 0.06},
                                                     {TextClass::body, 24, 80, 0.045},
                                                     {TextClass::disclaimer, 30, 90, 0.04},
                                                     {TextClass::button, 5, 14, 0.045}}};

inline std::string make_text(Rng& rng, int target) {
  std::string s;
  while (int(s.size()) < target) {
    std::string w = kWords[std::size_t(rng.uniform_int(0, int(kWords.size()) - 1))];
    if (!s.empty()) s += ' ';
    s += w;
  }
  if (!s.empty()) s[0] = char(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

inline std::array<std::uint8_t, 3> random_color(Rng& rng) {
  return {std::uint8_t(rng.uniform_int(0, 255)), std::uint8_t(rng.uniform_int(0, 255)),
          std::uint8_t(rng.uniform_int(0, 255))};
}

inline Image make_background(Rng& rng, int H, int W) {
  Image img(H, W);
  const int kind = rng.uniform_int(0, 2);
  const auto c0 = random_color(rng), c1 = random_color(rng);
  if (kind == 0) {  // linear gradient
    const double ang = rng.uniform(0, 2 * 3.141592653589793);
    const double dy = std::sin(ang), dx = std::cos(ang);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double t = std::clamp(0.5 + 0.5 * (dy * (2.0 * y / H - 1) + dx * (2.0 * x / W - 1)), 0.0, 1.0);
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::uint8_t(std::lround(c0[c] * (1 - t) + c1[c] * t));
      }
  } else if (kind == 1) {  // value-noise field, photo-ish texture
    const int g = 6;
    std::vector<double> grid(std::size_t(g + 1) * (g + 1) * 3);
    for (auto& v : grid) v = rng.uniform(0, 255);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double fy = double(y) / H * g, fx = double(x) / W * g;
        const int y0 = int(fy), x0 = int(fx);
        const double ty = fy - y0, tx = fx - x0;
        for (int c = 0; c < 3; ++c) {
          auto at = [&](int gy, int gx) { return grid[(std::size_t(gy) * (g + 1) + gx) * 3 + c]; };
          double v = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x0 + 1)) +
                     ty * ((1 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1));
          v += rng.uniform(-12, 12);
          img.at(y, x, c) = std::uint8_t(std::clamp(std::lround(v), 0L, 255L));
        }
      }
  } else {  // plain
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) img.set(y, x, c0[0], c0[1], c0[2]);
  }
  return img;
}

// Flattens the column area toward one calm color, feathered at the edge.
inline void plant_copy_space(Image& img, double top, double left, double bottom, double right,
                             const std::array<std::uint8_t, 3>& color) {
  const int H = img.height, W = img.width;
  const double feather = 0.04;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double ny = (y + 0.5) / H, nx = (x + 0.5) / W;
      const double d = std::max({top - ny, ny - bottom, left - nx, nx - right});
      const double a = d <= 0 ? 0.85 : std::max(0.0, 0.85 * (1 - d / feather));
      if (a <= 0) continue;
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = std::uint8_t(std::lround(img.at(y, x, c) * (1 - a) + color[c] * a));
    }
}

inline Image make_patch(Rng& rng, int size) {
  const auto bg = random_color(rng), fg = random_color(rng);
  Image p(size, size);
  const bool circle = rng.uniform() < 0.5;
  const double r = size * rng.uniform(0.25, 0.45), c = (size - 1) / 2.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const bool in = circle ? (y - c) * (y - c) + (x - c) * (x - c) <= r * r
                             : std::abs(y - c) <= r && std::abs(x - c) <= r;
      const auto& col = in ? fg : bg;
      p.set(y, x, col[0], col[1], col[2]);
    }
  return p;
}

struct Planned {
  ForegroundElement element;
  double h, w;
};

}  // namespace synth_detail

inline DesignSample synth_sample(std::uint64_t seed, int index, const SynthGrammar& g = {}) {
  using namespace synth_detail;
  Rng rng(mix_seed(seed, std::uint64_t(index)));
  const auto size = g.sizes[std::size_t(rng.uniform_int(0, int(g.sizes.size()) - 1))];
  const int H = size[0], W = size[1];
  const double aspect = double(H) / W;  // converts height-fractions to width-fractions

  std::vector<Planned> plan;
  double col_h = 0;
  for (int attempt = 0;; ++attempt) {
    plan.clear();
    const double max_w = rng.uniform(0.45, 0.8);
    if (rng.uniform() < g.image_probability) {
      const double side = rng.uniform(0.12, 0.2);
      plan.push_back({ImageElement{make_patch(rng, g.patch_size)}, side, side * aspect});
    }
    auto add_text = [&](const ClassSpec& spec) {
      const int target = rng.uniform_int(spec.min_chars, spec.max_chars);
      std::string text = make_text(rng, target);
      const double f = spec.font * rng.uniform(0.9, 1.1);
      const double char_w = 0.55 * f * aspect;
      const double text_w = double(utf8::length(text)) * char_w;
      double w, h;
      if (spec.cls == TextClass::button) {
        w = std::min(text_w + 2 * f * aspect, max_w);
        h = 2.0 * f;
      } else {
        const int lines = std::max(1, int(std::ceil(text_w / max_w)));
        w = std::min(max_w, text_w / lines * 1.05);
        h = lines * 1.25 * f;
      }
      plan.push_back({TextElement{std::move(text), spec.cls}, h, w});
    };
    add_text(kSpecs[0]);
    if (rng.uniform() < g.body_probability) add_text(kSpecs[1]);
    if (rng.uniform() < g.button_probability) add_text(kSpecs[3]);
    if (rng.uniform() < g.disclaimer_probability) add_text(kSpecs[2]);
    col_h = 0;
    for (const auto& p : plan) col_h += p.h;
    col_h += 0.03 * double(plan.size() - 1);
    if (col_h <= 0.85 || attempt > 50) break;
  }

  double col_w = 0;
  for (const auto& p : plan) col_w = std::max(col_w, p.w);
  const double cx = rng.uniform(col_w / 2 + 0.04, 1 - col_w / 2 - 0.04);
  double y = rng.uniform(0.06, std::max(0.06, 0.94 - col_h));

  DesignSample s;
  char id[32];
  std::snprintf(id, sizeof id, "synth-%05d", index);
  s.id = id;
  s.background = make_background(rng, H, W);
  const auto calm = random_color(rng);
  plant_copy_space(s.background, y - 0.03, cx - col_w / 2 - 0.03, y + col_h + 0.03, cx + col_w / 2 + 0.03, calm);

  std::vector<NormalizedBox> boxes;
  for (auto& p : plan) {
    boxes.push_back(clamp_box({y + p.h / 2, cx, p.h, p.w}));
    y += p.h + 0.03;
    s.foreground.elements.push_back(std::move(p.element));
  }
  s.layout = Layout::from_boxes(std::move(boxes));
  validate_sample(s);
  return s;
}

inline AnnotationRecord record_for(const DesignSample& s) {
  AnnotationRecord r;
  r.id = s.id;
  r.background_path = "backgrounds/" + s.id + ".png";
  r.height = s.background.height;
  r.width = s.background.width;
  for (std::size_t k = 0; k < s.foreground.size(); ++k) {
    AnnotationElement e;
    e.box = s.layout.boxes[k];
    if (const auto* t = std::get_if<TextElement>(&s.foreground.elements[k])) {
      e.type = "text";
      e.cls = std::string(to_string(t->cls));
      e.string = t->text;
    } else {
      e.type = "image";
      e.patch_path = "patches/" + s.id + "_" + std::to_string(k) + ".png";
    }
    r.elements.push_back(std::move(e));
  }
  return r;
}

inline SyntheticDataset synth_dataset_generate(int count, std::uint64_t seed, const SynthGrammar& g = {}) {
  if (count < 1) throw ConfigurationError("synth_dataset_generate: count must be >= 1");
  if (g.sizes.empty() || g.patch_size < 1) throw ConfigurationError("synth_dataset_generate: bad grammar");
  SyntheticDataset ds;
  ds.manifest.split_seed = seed;
  for (int i = 0; i < count; ++i) {
    ds.samples.push_back(synth_sample(seed, i, g));
    ds.manifest.records.push_back(record_for(ds.samples.back()));
  }
  return ds;
}

// Writes manifest.json plus PNGs under `dir`; returns the manifest path.
inline std::string write_synthetic_dataset(const std::string& dir, SyntheticDataset& ds) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const auto& r = ds.manifest.records[i];
    io::write_png((std::filesystem::path(dir) / r.background_path).string(), s.background);
    for (std::size_t k = 0; k < r.elements.size(); ++k)
      if (r.elements[k].patch_path)
        io::write_png((std::filesystem::path(dir) / *r.elements[k].patch_path).string(),
                      std::get<ImageElement>(s.foreground.elements[k]).patch);
  }
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  save_dataset(path, ds.manifest);
  ds.manifest.base_dir = dir;
  return path;
}

// Fills 1-3 rectangles (each at most 10% of the area) with a local box
// blur of their own content. Rectangles never touch the layout's boxes.
inline Image mask_random_regions(const Image& bg, const Layout& layout, std::uint64_t seed) {
  require_valid(bg, "mask_random_regions");
  Image out = bg;
  Rng rng(mix_seed(seed, 0x3A5C));
  const int H = bg.height, W = bg.width;
  std::vector<PixelRect> keep;
  for (const auto& b : layout.boxes) {
    const int t = int(std::floor(b.top() * H)), l = int(std::floor(b.left() * W));
    const int bo = int(std::ceil(b.bottom() * H)), r = int(std::ceil(b.right() * W));
    keep.push_back({t, l, bo - t, r - l});
  }
  auto intersects = [](const PixelRect& a, const PixelRect& b) {
    return a.top < b.bottom() && b.top < a.bottom() && a.left < b.right() && b.left < a.right();
  };
  const int n = rng.uniform_int(1, 3);
  const double total = double(H) * W;
  for (int i = 0; i < n; ++i) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double area = total * rng.uniform(0.01, 0.1);
      const double ratio = rng.uniform(0.5, 2.0);
      const int rh = std::clamp(int(std::sqrt(area * ratio)), 1, H);
      const int rw = std::clamp(int(area / std::max(rh, 1)), 1, W);
      if (double(rh) * rw > 0.1 * total) continue;
      const PixelRect r{rng.uniform_int(0, H - rh), rng.uniform_int(0, W - rw), rh, rw};
      if (std::any_of(keep.begin(), keep.end(), [&](const PixelRect& k) { return intersects(r, k); })) continue;
      const int rad = 4;
      for (int y = r.top; y < r.bottom(); ++y)
        for (int x = r.left; x < r.right(); ++x)
          for (int c = 0; c < 3; ++c) {
            int sum = 0, cnt = 0;
            for (int yy = std::max(r.top, y - rad); yy < std::min(r.bottom(), y + rad + 1); ++yy)
              for (int xx = std::max(r.left, x - rad); xx < std::min(r.right(), x + rad + 1); ++xx) {
                sum += bg.at(yy, xx, c);
                ++cnt;
              }
            out.at(y, x, c) = std::uint8_t((sum + cnt / 2) / cnt);
          }
      break;
    }
  }
  return out;
}

}  // namespace layoutdetr

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "layoutdetr/core/errors.hpp"

namespace layoutdetr {

// 8-bit RGB raster, row-major, channels interleaved.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {
    if (h < 1 || w < 1) throw DimensionError("image dimensions must be positive");
  }

  bool empty() const { return height < 1 || width < 1; }

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  void set(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

inline void require_valid(const Image& img, const char* what) {
  if (img.height < 1 || img.width < 1 ||
      img.pixels.size() != static_cast<std::size_t>(img.height) * img.width * 3) {
    throw ValidationError(std::string(what) + ": image must be non-empty H x W x 3");
  }
}

// Bilinear resampling with half-pixel centers.
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
  require_valid(src, "resize");
  if (out_h < 1 || out_w < 1) throw DimensionError("resize target must be positive");
  if (out_h == src.height && out_w == src.width) return src;
  Image dst(out_h, out_w);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c)) +
                         wy * ((1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c));
        dst.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return dst;
}

// Channel values scaled to [0,1], laid out as (H*W) rows of 3.
inline std::vector<double> to_unit_pixels(const Image& img) {
  std::vector<double> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.pixels[i] / 255.0;
  return out;
}

// Pixel-space rectangle: top-left corner plus size.
struct PixelRect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  int bottom() const { return top + height; }
  int right() const { return left + width; }
  bool contains(int y, int x) const { return y >= top && y < bottom() && x >= left && x < right(); }
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

inline PixelRect clip_rect(const PixelRect& r, int h, int w) {
  const int t = std::clamp(r.top, 0, h);
  const int l = std::clamp(r.left, 0, w);
  const int b = std::clamp(r.bottom(), 0, h);
  const int rr = std::clamp(r.right(), 0, w);
  return {t, l, std::max(0, b - t), std::max(0, rr - l)};
}

inline Image crop(const Image& img, const PixelRect& r) {
  const PixelRect c = clip_rect(r, img.height, img.width);
  if (c.height < 1 || c.width < 1) throw DimensionError("crop region is empty");
  Image out(c.height, c.width);
  for (int y = 0; y < c.height; ++y)
    for (int x = 0; x < c.width; ++x)
      for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = img.at(c.top + y, c.left + x, ch);
  return out;
}

}  // namespace layoutdetr

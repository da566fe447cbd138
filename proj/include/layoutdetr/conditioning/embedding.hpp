#pragma once

// Turns backgrounds and foreground elements into token sequences.

#include <cmath>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "layoutdetr/core/foreground.hpp"
#include "layoutdetr/core/image.hpp"
#include "layoutdetr/core/random.hpp"
#include "layoutdetr/core/utf8.hpp"
#include "layoutdetr/networks/config.hpp"
#include "layoutdetr/networks/layers.hpp"
#include "layoutdetr/objectives/losses.hpp"

namespace layoutdetr::conditioning {

using ad::Tensor;
using objectives::quantize_text_length;

// Character n-gram (n = 1..3) feature hashing over code points, signed
// buckets, L2-normalized. Empty strings embed to zero.
inline std::vector<double> hashed_string_embedding(std::string_view s, int dim) {
  std::vector<double> v(dim, 0.0);
  const auto cps = utf8::decode(s);
  for (std::size_t n = 1; n <= 3; ++n) {
    if (cps.size() < n) break;
    for (std::size_t i = 0; i + n <= cps.size(); ++i) {
      std::uint64_t h = 1469598103934665603ULL ^ (n * 0x9E3779B97F4A7C15ULL);
      for (std::size_t k = 0; k < n; ++k) {
        for (int byte = 0; byte < 4; ++byte) {
          h ^= (cps[i + k] >> (8 * byte)) & 0xFF;
          h *= 1099511628211ULL;
        }
      }
      const std::size_t bucket = h % std::uint64_t(dim);
      v[bucket] += ((h >> 63) ? -1.0 : 1.0);
    }
  }
  double norm = 0;
  for (double x : v) norm += x * x;
  if (norm > 0) {
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }
  return v;
}

// Pluggable text encoder: anything producing string_dim values.
using TextEncoder = std::function<std::vector<double>(std::string_view, int)>;

inline std::vector<double> embed_text_string(std::string_view s, const EmbedderConfig& config,
                                             const TextEncoder& encoder = hashed_string_embedding) {
  auto v = encoder(s, config.text_string_dim);
  if (int(v.size()) != config.text_string_dim) throw ShapeError("text encoder returned the wrong dimension");
  return v;
}

// Image -> [patches, 3 p^2] rows in raster order, values centered on 0.
template <class T>
Tensor<T> patchify(const Image& img, int resolution, int patch) {
  require_valid(img, "patchify");
  const Image r = resize_bilinear(img, resolution, resolution);
  const int g = resolution / patch, width = 3 * patch * patch;
  std::vector<T> v(std::size_t(g) * g * width);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      T* row = &v[(std::size_t(gy) * g + gx) * width];
      int k = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < 3; ++c) row[k++] = T(r.at(gy * patch + y, gx * patch + x, c) / 255.0 - 0.5);
    }
  return Tensor<T>::constant(g * g, width, std::move(v));
}

// Patchify -> linear projection -> fixed sinusoidal 2-D encodings ->
// self-attention encoder. Shared by backgrounds and foreground patches.
template <class T>
struct BackgroundEncoder {
  EmbedderConfig config;
  nn::Linear<T> proj;
  std::vector<nn::EncoderLayer<T>> layers;
  nn::LayerNorm<T> norm;
  int model_dim = 0;

  BackgroundEncoder() = default;
  BackgroundEncoder(ad::ParamRegistry<T>& reg, const std::string& name, const EmbedderConfig& ec,
                    const NetworkConfig& nc, Rng& rng)
      : config(ec), model_dim(nc.model_dim) {
    const int p = ec.background_patch_size;
    proj = nn::Linear<T>(reg, name + ".proj", 3 * p * p, nc.model_dim, rng);
    for (int i = 0; i < nc.encoder_depth; ++i)
      layers.emplace_back(reg, name + ".layer" + std::to_string(i), nc.model_dim, nc.num_heads, rng);
    norm = nn::LayerNorm<T>(reg, name + ".norm", nc.model_dim);
  }

  // Encodes pre-patchified rows laid out on a grid x grid map.
  Tensor<T> encode_patches(const Tensor<T>& patches, int grid) const {
    if (patches.rows() != grid * grid) throw ShapeError("background encoder: patch count does not match grid");
    Tensor<T> x = proj(patches);
    if (config.positional_encoding) {
      const auto pe = nn::sinusoidal_2d(grid, model_dim);
      x = x + Tensor<T>::constant(grid * grid, model_dim, std::vector<T>(pe.begin(), pe.end()));
    }
    for (const auto& l : layers) x = l(x);
    return norm(x);
  }

  Tensor<T> operator()(const Image& bg) const {
    return encode_patches(patchify<T>(bg, config.working_resolution, config.background_patch_size), config.grid());
  }
};

enum class Modality { text, image };

struct ForegroundToken {
  std::vector<double> vector;
  Modality modality = Modality::text;
  int element_index = 0;
};

template <class T>
struct ForegroundTokens {
  Tensor<T> tokens;  // [N, token_dim]; undefined when N == 0
  std::vector<Modality> modalities;

  std::size_t size() const { return modalities.size(); }

  std::vector<ForegroundToken> to_list() const {
    std::vector<ForegroundToken> out;
    for (std::size_t i = 0; i < modalities.size(); ++i) {
      ForegroundToken t;
      t.modality = modalities[i];
      t.element_index = int(i);
      for (int c = 0; c < tokens.cols(); ++c) t.vector.push_back(double(tokens.at(int(i), c)));
      out.push_back(std::move(t));
    }
    return out;
  }
};

// Learnable dictionaries and the patch projection. Image patches go
// through the caller's background encoder (weights shared with it).
template <class T>
struct Conditioner {
  EmbedderConfig config;
  Tensor<T> class_dict;   // [4, class_dim]
  Tensor<T> length_dict;  // [256, length_dim]
  nn::Linear<T> patch_proj;
  TextEncoder text_encoder = hashed_string_embedding;

  Conditioner() = default;
  Conditioner(ad::ParamRegistry<T>& reg, const std::string& name, const EmbedderConfig& ec, const NetworkConfig& nc,
              Rng& rng)
      : config(ec) {
    class_dict = reg.add_normal(name + ".class_dict", kTextClassCount, ec.class_dim, 1.0, rng);
    length_dict = reg.add_normal(name + ".length_dict", objectives::kLengthLevels, ec.length_dim, 1.0, rng);
    patch_proj = nn::Linear<T>(reg, name + ".patch_proj", nc.model_dim, ec.patch_dim, rng);
  }

  Tensor<T> embed_text_class(TextClass c) const {
    const int idx = static_cast<int>(c);
    if (idx < 0 || idx >= kTextClassCount) throw ValidationError("unknown text class");
    return ad::gather_rows(class_dict, {idx});
  }

  Tensor<T> embed_text_length(std::size_t length) const {
    return ad::gather_rows(length_dict, {quantize_text_length((long long)length)});
  }

  Tensor<T> embed_text(const TextElement& t) const {
    const auto s = embed_text_string(t.text, config, text_encoder);
    return ad::concat_cols<T>({Tensor<T>::constant(1, config.text_string_dim, std::vector<T>(s.begin(), s.end())),
                               embed_text_class(t.cls), embed_text_length(t.length())});
  }

  Tensor<T> embed_image_patch(const Image& patch, const BackgroundEncoder<T>& encoder) const {
    if (patch.empty()) throw ValidationError("image patch must be non-empty");
    const int g = config.patch_resolution / config.background_patch_size;
    Tensor<T> enc =
        encoder.encode_patches(patchify<T>(patch, config.patch_resolution, config.background_patch_size), g);
    return patch_proj(ad::masked_mean_rows(enc));
  }

  Tensor<T> embed_element(const ForegroundElement& e, const BackgroundEncoder<T>& encoder) const {
    if (const auto* t = std::get_if<TextElement>(&e)) return embed_text(*t);
    return embed_image_patch(std::get<ImageElement>(e).patch, encoder);
  }

  // token i = [noise_i | content_i]. `noise` is [N, noise_dim].
  ForegroundTokens<T> assemble(const ForegroundSet& fg, const Tensor<T>& noise,
                               const BackgroundEncoder<T>& encoder) const {
    ForegroundTokens<T> out;
    if (fg.size() == 0) return out;
    if (!noise.defined() || noise.rows() != int(fg.size()) || noise.cols() != config.noise_dim)
      throw ShapeError("assemble_foreground_tokens: noise must be [N, noise_dim]");
    std::vector<Tensor<T>> content;
    for (const auto& e : fg.elements) {
      content.push_back(embed_element(e, encoder));
      out.modalities.push_back(is_text(e) ? Modality::text : Modality::image);
    }
    out.tokens = ad::concat_cols<T>({noise, ad::concat_rows(content)});
    return out;
  }
};

// Standard-normal per-element noise, [n, dim].
template <class T>
Tensor<T> sample_noise(int n, int dim, Rng& rng) {
  std::vector<T> v(std::size_t(n) * dim);
  for (auto& x : v) x = T(rng.normal());
  return Tensor<T>::constant(n, dim, std::move(v));
}

}  // namespace layoutdetr::conditioning

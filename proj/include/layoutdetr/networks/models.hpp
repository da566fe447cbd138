#pragma once

// The seven networks: generator G, conditional / unconditional
// discriminators Dc / Du, auxiliary decoders Fc / Fu, latent encoder E and
// foreground reconstructor R.

#include <memory>
#include <string>
#include <vector>

#include "layoutdetr/conditioning/embedding.hpp"
#include "layoutdetr/core/foreground.hpp"
#include "layoutdetr/core/geometry.hpp"
#include "layoutdetr/networks/config.hpp"
#include "layoutdetr/networks/layers.hpp"
#include "layoutdetr/objectives/losses.hpp"

namespace layoutdetr::nn {

using conditioning::BackgroundEncoder;
using conditioning::Conditioner;

inline constexpr int kCharBos = 256;
inline constexpr int kCharEos = 257;
inline constexpr int kCharVocab = 258;

template <class T>
Layout to_layout(const Tensor<T>& boxes, int count = -1) {
  if (count < 0) count = boxes.rows();
  std::vector<NormalizedBox> out;
  for (int i = 0; i < count; ++i)
    out.push_back(clamp_box({double(boxes.at(i, 0)), double(boxes.at(i, 1)), double(boxes.at(i, 2)),
                             double(boxes.at(i, 3))}));
  return Layout::from_boxes(std::move(out));
}

// Teacher-forcing sequences over UTF-8 bytes, truncated to max_chars.
struct CharSequence {
  std::vector<int> inputs;   // BOS, b0, b1, ...
  std::vector<int> targets;  // b0, b1, ..., EOS
};

inline CharSequence char_sequence(const std::string& text, int max_chars) {
  CharSequence s;
  s.inputs.push_back(kCharBos);
  const int n = std::min<int>(int(text.size()), max_chars);
  for (int i = 0; i < n; ++i) {
    const int b = static_cast<unsigned char>(text[i]);
    s.inputs.push_back(b);
    s.targets.push_back(b);
  }
  s.targets.push_back(kCharEos);
  return s;
}

inline objectives::TextTarget text_target(const TextElement& t, int max_chars) {
  return {char_sequence(t.text, max_chars).targets, static_cast<int>(t.cls),
          objectives::quantize_text_length((long long)t.length())};
}

// Real patch in [0,1] at the comparison resolution, [1, r*r*3].
template <class T>
Tensor<T> patch_target(const Image& patch) {
  const int r = objectives::kPatchCompareResolution;
  const Image img = resize_bilinear(patch, r, r);
  std::vector<T> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(img.pixels[i] / 255.0);
  const int n = int(v.size());
  return Tensor<T>::constant(1, n, std::move(v));
}

// Background in [0,1] downsampled to the reconstruction resolution, [1, r*r*3].
template <class T>
Tensor<T> background_target(const Image& bg, int r) {
  const Image img = resize_bilinear(bg, r, r);
  std::vector<T> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(img.pixels[i] / 255.0);
  const int n = int(v.size());
  return Tensor<T>::constant(1, n, std::move(v));
}

// Teacher-forced character decoder: h_t = tanh(P f + E[prev_t] + pos_t).
template <class T>
struct CharDecoder {
  Linear<T> feature_proj, out;
  Tensor<T> char_emb, pos_emb;
  int max_chars = 32;

  CharDecoder() = default;
  CharDecoder(ad::ParamRegistry<T>& reg, const std::string& name, int dim, int char_dim, int max_len, Rng& rng)
      : max_chars(max_len) {
    feature_proj = Linear<T>(reg, name + ".feat", dim, char_dim, rng);
    char_emb = reg.add_normal(name + ".char_emb", kCharVocab, char_dim, 0.1, rng);
    pos_emb = reg.add_normal(name + ".pos_emb", max_len + 1, char_dim, 0.1, rng);
    out = Linear<T>(reg, name + ".out", char_dim, kCharVocab, rng);
  }

  // feature [1, d] -> logits [len(inputs), vocab]
  Tensor<T> operator()(const Tensor<T>& feature, const std::vector<int>& inputs) const {
    const int L = int(inputs.size());
    Tensor<T> h = ad::expand_rows(feature_proj(feature), L) + ad::gather_rows(char_emb, inputs) +
                  ad::slice_rows(pos_emb, 0, L);
    return out(ad::tanh(h));
  }
};

template <class T>
struct ForegroundReconstruction {
  std::vector<objectives::TextLogits<T>> texts;  // text elements, in order
  std::vector<Tensor<T>> patches;                // image elements, in order, [1, 64*64*3]
};

// Per-element text and patch heads over feature rows. Used by F^c and R.
template <class T>
struct ForegroundHead {
  Linear<T> cls, len, patch;
  CharDecoder<T> chars;
  int recon = 16;

  ForegroundHead() = default;
  ForegroundHead(ad::ParamRegistry<T>& reg, const std::string& name, const NetworkConfig& nc, Rng& rng)
      : recon(nc.recon_resolution) {
    cls = Linear<T>(reg, name + ".cls", nc.model_dim, kTextClassCount, rng);
    len = Linear<T>(reg, name + ".len", nc.model_dim, objectives::kLengthLevels, rng);
    patch = Linear<T>(reg, name + ".patch", nc.model_dim, recon * recon * 3, rng);
    chars = CharDecoder<T>(reg, name + ".chars", nc.model_dim, nc.char_dim, nc.max_chars, rng);
  }

  ForegroundReconstruction<T> operator()(const Tensor<T>& features, const ForegroundSet& fg) const {
    if (features.rows() < int(fg.size())) throw ShapeError("reconstructor: fewer features than elements");
    ForegroundReconstruction<T> out;
    for (std::size_t i = 0; i < fg.size(); ++i) {
      Tensor<T> row = ad::slice_rows(features, int(i), 1);
      if (const auto* t = std::get_if<TextElement>(&fg.elements[i])) {
        out.texts.push_back({chars(row, char_sequence(t->text, chars.max_chars).inputs), cls(row), len(row)});
      } else {
        const int r = objectives::kPatchCompareResolution;
        Tensor<T> small = ad::reshape(ad::sigmoid(patch(row)), recon * recon, 3);
        out.patches.push_back(ad::reshape(ad::resize_bilinear(small, recon, recon, r, r), 1, r * r * 3));
      }
    }
    return out;
  }
};

template <class T>
struct GeneratorOutput {
  Tensor<T> boxes;     // [N, 4] in (0,1)
  Tensor<T> features;  // [N, model_dim]
  Layout layout() const { return to_layout(boxes); }
};

template <class T>
struct DiscriminatorOutput {
  Tensor<T> logit;     // [1, 1]
  Tensor<T> features;  // [N, model_dim]
};

template <class T>
struct LatentPosterior {
  Tensor<T> mu, logvar;  // [1, latent]
};

// mu + exp(logvar / 2) * z0
template <class T>
Tensor<T> reparameterize(const LatentPosterior<T>& post, const Tensor<T>& z0) {
  return post.mu + ad::exp(post.logvar * T(0.5)) * z0;
}

template <class T>
struct Generator {
  NetworkConfig net;
  EmbedderConfig emb;
  BackgroundEncoder<T> background;
  Conditioner<T> conditioner;
  Linear<T> in_proj, box_head;
  std::vector<DecoderLayer<T>> layers;
  LayerNorm<T> norm;

  Generator() = default;
  Generator(ad::ParamRegistry<T>& reg, const NetworkConfig& nc, const EmbedderConfig& ec, Rng& rng)
      : net(nc), emb(ec) {
    background = BackgroundEncoder<T>(reg, "G.bg", ec, nc, rng);
    conditioner = Conditioner<T>(reg, "G.cond", ec, nc, rng);
    in_proj = Linear<T>(reg, "G.in", ec.token_dim, nc.model_dim, rng);
    for (int i = 0; i < nc.decoder_depth; ++i)
      layers.emplace_back(reg, "G.dec" + std::to_string(i), nc.model_dim, nc.num_heads, rng);
    norm = LayerNorm<T>(reg, "G.norm", nc.model_dim);
    box_head = Linear<T>(reg, "G.box", nc.model_dim, 4, rng);
  }

  Tensor<T> encode_background(const Image& bg) const { return background(bg); }

  conditioning::ForegroundTokens<T> tokens(const ForegroundSet& fg, const Tensor<T>& noise) const {
    return conditioner.assemble(fg, noise, background);
  }

  GeneratorOutput<T> forward(const Tensor<T>& bg_tokens, const Tensor<T>& fg_tokens, const Mask& mask = {},
                             Rng* dropout_rng = nullptr) const {
    if (!fg_tokens.defined() || fg_tokens.rows() == 0) throw ValidationError("generator: empty foreground");
    Tensor<T> x = in_proj(fg_tokens);
    if (dropout_rng) x = ad::dropout(x, net.dropout, *dropout_rng);
    for (const auto& l : layers) {
      x = l(x, bg_tokens, mask);
      if (dropout_rng) x = ad::dropout(x, net.dropout, *dropout_rng);
    }
    x = norm(x);
    return {ad::sigmoid(box_head(x)), x};
  }

  GeneratorOutput<T> operator()(const Image& bg, const ForegroundSet& fg, const Tensor<T>& noise) const {
    return forward(encode_background(bg), tokens(fg, noise).tokens);
  }
};

template <class T>
struct CondDiscriminator {
  NetworkConfig net;
  EmbedderConfig emb;
  BackgroundEncoder<T> background;
  Conditioner<T> conditioner;
  Linear<T> box_proj, in_proj, logit_head;
  std::vector<DecoderLayer<T>> layers;
  LayerNorm<T> norm;

  CondDiscriminator() = default;
  CondDiscriminator(ad::ParamRegistry<T>& reg, const NetworkConfig& nc, const EmbedderConfig& ec, Rng& rng)
      : net(nc), emb(ec) {
    background = BackgroundEncoder<T>(reg, "Dc.bg", ec, nc, rng);
    conditioner = Conditioner<T>(reg, "Dc.cond", ec, nc, rng);
    box_proj = Linear<T>(reg, "Dc.box", 4, nc.model_dim, rng);
    in_proj = Linear<T>(reg, "Dc.in", ec.token_dim, nc.model_dim, rng);
    for (int i = 0; i < nc.decoder_depth; ++i)
      layers.emplace_back(reg, "Dc.dec" + std::to_string(i), nc.model_dim, nc.num_heads, rng);
    norm = LayerNorm<T>(reg, "Dc.norm", nc.model_dim);
    logit_head = Linear<T>(reg, "Dc.logit", nc.model_dim, 1, rng);
  }

  Tensor<T> encode_background(const Image& bg) const { return background(bg); }

  // Foreground tokens carry zero noise on the discriminator side.
  Tensor<T> tokens(const ForegroundSet& fg) const {
    return conditioner.assemble(fg, Tensor<T>::zeros(int(fg.size()), emb.noise_dim), background).tokens;
  }

  DiscriminatorOutput<T> forward(const Tensor<T>& boxes, const Tensor<T>& bg_tokens, const Tensor<T>& fg_tokens,
                                 const Mask& mask = {}) const {
    if (boxes.rows() != fg_tokens.rows()) throw ShapeError("conditional discriminator: layout/foreground length mismatch");
    Tensor<T> x = box_proj(boxes) + in_proj(fg_tokens);
    for (const auto& l : layers) x = l(x, bg_tokens, mask);
    x = norm(x);
    return {logit_head(ad::masked_mean_rows(x, mask)), x};
  }
};

template <class T>
struct UncondDiscriminator {
  Linear<T> box_proj, logit_head;
  std::vector<EncoderLayer<T>> layers;
  LayerNorm<T> norm;

  UncondDiscriminator() = default;
  UncondDiscriminator(ad::ParamRegistry<T>& reg, const NetworkConfig& nc, Rng& rng) {
    box_proj = Linear<T>(reg, "Du.box", 4, nc.model_dim, rng);
    for (int i = 0; i < std::max(1, nc.encoder_depth); ++i)
      layers.emplace_back(reg, "Du.enc" + std::to_string(i), nc.model_dim, nc.num_heads, rng);
    norm = LayerNorm<T>(reg, "Du.norm", nc.model_dim);
    logit_head = Linear<T>(reg, "Du.logit", nc.model_dim, 1, rng);
  }

  DiscriminatorOutput<T> forward(const Tensor<T>& boxes, const Mask& mask = {}) const {
    if (boxes.rows() < 1) throw ValidationError("unconditional discriminator: empty layout");
    Tensor<T> x = box_proj(boxes);
    for (const auto& l : layers) x = l(x, mask);
    x = norm(x);
    return {logit_head(ad::masked_mean_rows(x, mask)), x};
  }
};

template <class T>
struct CondAuxOutput {
  Tensor<T> boxes;       // [N, 4]
  Tensor<T> background;  // [1, r*r*3] in (0,1)
  ForegroundReconstruction<T> foreground;
};

// F^c: features + learned positional embeddings -> layout, background and
// foreground reconstructions.
template <class T>
struct CondAuxDecoder {
  Tensor<T> pos;
  EncoderLayer<T> layer;
  Linear<T> box_head, bg_head;
  ForegroundHead<T> fg_head;

  CondAuxDecoder() = default;
  CondAuxDecoder(ad::ParamRegistry<T>& reg, const NetworkConfig& nc, Rng& rng) {
    pos = reg.add_normal("Fc.pos", nc.max_elements, nc.model_dim, 0.02, rng);
    layer = EncoderLayer<T>(reg, "Fc.enc", nc.model_dim, nc.num_heads, rng);
    box_head = Linear<T>(reg, "Fc.box", nc.model_dim, 4, rng);
    bg_head = Linear<T>(reg, "Fc.bg", nc.model_dim, nc.recon_resolution * nc.recon_resolution * 3, rng);
    fg_head = ForegroundHead<T>(reg, "Fc.fg", nc, rng);
  }

  CondAuxOutput<T> operator()(const Tensor<T>& features, const ForegroundSet& fg, const Mask& mask = {}) const {
    const int n = features.rows();
    if (n > pos.rows()) throw ShapeError("auxiliary decoder: more boxes than positional slots");
    Tensor<T> x = layer(features + ad::slice_rows(pos, 0, n), mask);
    return {ad::sigmoid(box_head(x)), ad::sigmoid(bg_head(ad::masked_mean_rows(x, mask))), fg_head(x, fg)};
  }
};

// F^u: layout only.
template <class T>
struct UncondAuxDecoder {
  Tensor<T> pos;
  EncoderLayer<T> layer;
  Linear<T> box_head;

  UncondAuxDecoder() = default;
  UncondAuxDecoder(ad::ParamRegistry<T>& reg, const NetworkConfig& nc, Rng& rng) {
    pos = reg.add_normal("Fu.pos", nc.max_elements, nc.model_dim, 0.02, rng);
    layer = EncoderLayer<T>(reg, "Fu.enc", nc.model_dim, nc.num_heads, rng);
    box_head = Linear<T>(reg, "Fu.box", nc.model_dim, 4, rng);
  }

  Tensor<T> operator()(const Tensor<T>& features, const Mask& mask = {}) const {
    const int n = features.rows();
    if (n > pos.rows()) throw ShapeError("auxiliary decoder: more boxes than positional slots");
    return ad::sigmoid(box_head(layer(features + ad::slice_rows(pos, 0, n), mask)));
  }
};

// E: layout -> diagonal Gaussian posterior.
template <class T>
struct LatentEncoder {
  Linear<T> box_proj, mu_head, logvar_head;
  EncoderLayer<T> layer;
  LayerNorm<T> norm;

  LatentEncoder() = default;
  LatentEncoder(ad::ParamRegistry<T>& reg, const NetworkConfig& nc, int latent_dim, Rng& rng) {
    box_proj = Linear<T>(reg, "E.box", 4, nc.model_dim, rng);
    layer = EncoderLayer<T>(reg, "E.enc", nc.model_dim, nc.num_heads, rng);
    norm = LayerNorm<T>(reg, "E.norm", nc.model_dim);
    mu_head = Linear<T>(reg, "E.mu", nc.model_dim, latent_dim, rng);
    logvar_head = Linear<T>(reg, "E.logvar", nc.model_dim, latent_dim, rng);
  }

  LatentPosterior<T> operator()(const Tensor<T>& boxes, const Mask& mask = {}) const {
    if (boxes.rows() < 1) throw ValidationError("latent encoder: empty layout");
    Tensor<T> pooled = ad::masked_mean_rows(norm(layer(box_proj(boxes), mask)), mask);
    return {mu_head(pooled), logvar_head(pooled)};
  }
};

// All seven networks. Generator-side parameters (G, E, R) and
// discriminator-side parameters (Dc, Du, Fc, Fu) live in separate
// registries so each half-step can only touch its own group.
template <class T>
class LayoutDetrModel {
 public:
  LayoutDetrModel(const NetworkConfig& nc, const EmbedderConfig& ec, std::uint64_t seed) : net_(nc), emb_(ec) {
    nc.validate();
    ec.validate();
    if (ec.token_dim < 1) throw ConfigurationError("token_dim must be positive");
    Rng rng(seed);
    G = Generator<T>(gen_params, nc, ec, rng);
    E = LatentEncoder<T>(gen_params, nc, ec.noise_dim, rng);
    R = ForegroundHead<T>(gen_params, "R", nc, rng);
    Dc = CondDiscriminator<T>(disc_params, nc, ec, rng);
    Du = UncondDiscriminator<T>(disc_params, nc, rng);
    Fc = CondAuxDecoder<T>(disc_params, nc, rng);
    Fu = UncondAuxDecoder<T>(disc_params, nc, rng);
  }
  LayoutDetrModel(const LayoutDetrModel&) = delete;
  LayoutDetrModel& operator=(const LayoutDetrModel&) = delete;

  const NetworkConfig& network_config() const { return net_; }
  const EmbedderConfig& embedder_config() const { return emb_; }

  std::size_t parameter_count() const { return gen_params.parameter_count() + disc_params.parameter_count(); }

  // Inference: boxes for `fg` on `bg` from per-element noise [N, noise_dim].
  Layout generate(const Tensor<T>& bg_tokens, const ForegroundSet& fg, const Tensor<T>& noise) const {
    ad::NoGradGuard guard;
    auto out = G.forward(bg_tokens, G.tokens(fg, noise).tokens);
    return out.layout();
  }

  ad::ParamRegistry<T> gen_params;
  ad::ParamRegistry<T> disc_params;
  Generator<T> G;
  LatentEncoder<T> E;
  ForegroundHead<T> R;
  CondDiscriminator<T> Dc;
  UncondDiscriminator<T> Du;
  CondAuxDecoder<T> Fc;
  UncondAuxDecoder<T> Fu;

 private:
  NetworkConfig net_;
  EmbedderConfig emb_;
};

}  // namespace layoutdetr::nn

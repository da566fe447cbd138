#pragma once

// Loss terms of the layout objective. Each term has a tensor form used by
// training (differentiable, any float type) and a plain-value form used by
// metrics and tests; the plain form evaluates the tensor form in double.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "layoutdetr/autodiff/tensor.hpp"
#include "layoutdetr/core/foreground.hpp"
#include "layoutdetr/core/geometry.hpp"
#include "layoutdetr/core/image.hpp"
#include "layoutdetr/objectives/weights.hpp"

namespace layoutdetr::objectives {

using ad::Tensor;

// Text-length quantization: 256 levels with everything past 255 clamped.
inline constexpr int kLengthLevels = 256;

inline int quantize_text_length(long long length) {
  if (length < 0) throw ValidationError("text length must be non-negative");
  return static_cast<int>(std::min<long long>(length, kLengthLevels - 1));
}

// Patches are compared at this resolution whenever their sizes differ.
inline constexpr int kPatchCompareResolution = 64;

template <class T>
Tensor<T> boxes_tensor(const Layout& l) {
  std::vector<T> v;
  v.reserve(l.size() * 4);
  for (const auto& b : l.boxes)
    for (double p : b.params()) v.push_back(T(p));
  return Tensor<T>::constant(int(l.size()), 4, std::move(v));
}

// ---------------------------------------------------------------- box geometry on tensors

template <class T>
struct BoxEdges {
  Tensor<T> top, bottom, left, right, h, w;
};

template <class T>
BoxEdges<T> box_edges(const Tensor<T>& boxes) {
  if (boxes.cols() != 4) throw ShapeError("boxes must have 4 columns (cy, cx, h, w)");
  const T eps = T(kBoxEpsilon);
  Tensor<T> cy = ad::slice_cols(boxes, 0, 1), cx = ad::slice_cols(boxes, 1, 1);
  Tensor<T> h = ad::clamp_min(ad::slice_cols(boxes, 2, 1), eps);
  Tensor<T> w = ad::clamp_min(ad::slice_cols(boxes, 3, 1), eps);
  Tensor<T> half_h = h * T(0.5), half_w = w * T(0.5);
  return {cy - half_h, cy + half_h, cx - half_w, cx + half_w, h, w};
}

template <class T>
Tensor<T> pairwise_intersection(const BoxEdges<T>& a, const BoxEdges<T>& b) {
  Tensor<T> ih = ad::clamp_min(ad::minimum(a.bottom, b.bottom) - ad::maximum(a.top, b.top), T(0));
  Tensor<T> iw = ad::clamp_min(ad::minimum(a.right, b.right) - ad::maximum(a.left, b.left), T(0));
  return ih * iw;
}

// Row-wise gIoU of matched boxes, [N,4] x [N,4] -> [N,1].
template <class T>
Tensor<T> giou_rows(const Tensor<T>& a, const Tensor<T>& b) {
  ad::detail::check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "giou");
  const auto ea = box_edges(a), eb = box_edges(b);
  Tensor<T> inter = pairwise_intersection(ea, eb);
  Tensor<T> uni = ea.h * ea.w + eb.h * eb.w - inter;
  Tensor<T> hull = (ad::maximum(ea.bottom, eb.bottom) - ad::minimum(ea.top, eb.top)) *
                   (ad::maximum(ea.right, eb.right) - ad::minimum(ea.left, eb.left));
  return inter / uni + uni / hull + T(-1);
}

// ---------------------------------------------------------------- layout losses (tensor form)

// Mean per-box Euclidean distance of the four parameters.
template <class T>
Tensor<T> layout_l2(const Tensor<T>& fake, const Tensor<T>& real) {
  if (fake.rows() != real.rows() || fake.cols() != real.cols())
    throw ShapeError("layout_l2: layouts differ in length");
  return ad::mean(ad::row_norm(fake - real));
}

// Mean (1 - gIoU), unweighted.
template <class T>
Tensor<T> giou_dissimilarity(const Tensor<T>& fake, const Tensor<T>& real) {
  if (fake.rows() != real.rows()) throw ShapeError("giou_loss: layouts differ in length");
  return ad::mean((-giou_rows(fake, real)) + T(1));
}

// Ordered (i, j), i != j, index lists.
inline std::pair<std::vector<int>, std::vector<int>> ordered_pairs(int n) {
  std::vector<int> first, second;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) {
        first.push_back(i);
        second.push_back(j);
      }
  return {first, second};
}

// Mean over ordered pairs of the fraction of box i covered by box j.
template <class T>
Tensor<T> overlap(const Tensor<T>& boxes) {
  const int n = boxes.rows();
  if (n < 1) throw ShapeError("overlap_loss: empty layout");
  if (n == 1) return Tensor<T>::scalar(T(0)) + ad::sum(boxes) * T(0);
  const auto [first, second] = ordered_pairs(n);
  const auto ea = box_edges(ad::gather_rows(boxes, first));
  const auto eb = box_edges(ad::gather_rows(boxes, second));
  return ad::mean(pairwise_intersection(ea, eb) / (ea.h * ea.w));
}

// Per box, the smallest of the six alignment deltas to any other box;
// averaged over boxes.
template <class T>
Tensor<T> misalignment(const Tensor<T>& boxes) {
  const int n = boxes.rows();
  if (n < 1) throw ShapeError("misalignment_loss: empty layout");
  if (n == 1) return Tensor<T>::scalar(T(0)) + ad::sum(boxes) * T(0);
  const auto [first, second] = ordered_pairs(n);
  Tensor<T> a = ad::gather_rows(boxes, first), b = ad::gather_rows(boxes, second);
  const auto ea = box_edges(a), eb = box_edges(b);
  Tensor<T> cy_a = ad::slice_cols(a, 0, 1), cx_a = ad::slice_cols(a, 1, 1);
  Tensor<T> cy_b = ad::slice_cols(b, 0, 1), cx_b = ad::slice_cols(b, 1, 1);
  Tensor<T> deltas = ad::concat_cols<T>({ad::abs(ea.left - eb.left), ad::abs(cx_a - cx_b),
                                         ad::abs(ea.right - eb.right), ad::abs(ea.top - eb.top),
                                         ad::abs(cy_a - cy_b), ad::abs(ea.bottom - eb.bottom)});
  Tensor<T> per_pair = ad::row_min(deltas);                       // [n(n-1), 1]
  Tensor<T> per_box = ad::row_min(ad::reshape(per_pair, n, n - 1));  // [n, 1]
  return ad::mean(per_box);
}

// ---------------------------------------------------------------- adversarial and latent terms

// -log D(real) - log(1 - D(fake)) with D = sigmoid(logit).
template <class T>
Tensor<T> discriminator_gan_loss(const Tensor<T>& real_logit, const Tensor<T>& fake_logit) {
  return ad::sum(ad::softplus(-real_logit)) + ad::sum(ad::softplus(fake_logit));
}

// Non-saturating -log D(fake), or the minimax log(1 - D(fake)).
template <class T>
Tensor<T> generator_gan_loss(const Tensor<T>& fake_logit, bool saturating = false) {
  if (saturating) return -ad::sum(ad::softplus(fake_logit));
  return ad::sum(ad::softplus(-fake_logit));
}

// KL(N(mu, diag(exp(logvar))) || N(0, I)).
template <class T>
Tensor<T> kl_standard_normal(const Tensor<T>& mu, const Tensor<T>& logvar) {
  ad::detail::check_same_shape(mu.rows(), mu.cols(), logvar.rows(), logvar.cols(), "kl");
  return ad::sum(ad::exp(logvar) + ad::square(mu) - logvar + T(-1)) * T(0.5);
}

// ---------------------------------------------------------------- reconstruction terms

// Mean over elements of the L2 distance between pixel arrays in [0,1].
template <class T>
Tensor<T> image_reconstruction(const std::vector<Tensor<T>>& recon, const std::vector<Tensor<T>>& real) {
  if (recon.size() != real.size()) throw ShapeError("image_rec_loss: sequences differ in length");
  if (recon.empty()) return Tensor<T>::scalar(T(0));
  std::vector<Tensor<T>> norms;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    if (recon[i].size() != real[i].size()) throw ShapeError("image_rec_loss: patch sizes differ");
    Tensor<T> d = recon[i] - real[i];
    norms.push_back(ad::row_norm(ad::reshape(d, 1, int(d.size()))));
  }
  return ad::mean(ad::concat_rows(norms));
}

// Decoder output for one text element.
template <class T>
struct TextLogits {
  Tensor<T> chars;   // [len+1, vocab] teacher-forced next-character logits
  Tensor<T> cls;     // [1, 4]
  Tensor<T> length;  // [1, 256]
};

struct TextTarget {
  std::vector<int> chars;  // next-character targets, terminated by the end token
  int cls = 0;
  int length_level = 0;
};

// Mean over text elements of weighted string, class and length cross-entropies.
template <class T>
Tensor<T> text_reconstruction(const std::vector<TextLogits<T>>& pred, const std::vector<TextTarget>& target,
                              const LossWeights& w) {
  if (pred.size() != target.size()) throw ShapeError("text_rec_loss: sequences differ in length");
  if (pred.empty()) return Tensor<T>::scalar(T(0));
  std::vector<Tensor<T>> per;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].cls.cols() != kTextClassCount) throw ShapeError("text_rec_loss: class logits must be 4-way");
    if (pred[i].length.cols() != kLengthLevels) throw ShapeError("text_rec_loss: length logits must be 256-way");
    if (pred[i].chars.rows() != int(target[i].chars.size()))
      throw ShapeError("text_rec_loss: character logits do not match the target length");
    Tensor<T> str = ad::mean(ad::cross_entropy_rows(pred[i].chars, target[i].chars));
    Tensor<T> cls = ad::sum(ad::cross_entropy_rows(pred[i].cls, {target[i].cls}));
    Tensor<T> len = ad::sum(ad::cross_entropy_rows(pred[i].length, {target[i].length_level}));
    per.push_back(str * T(w.lambda_str) + cls * T(w.lambda_cls) + len * T(w.lambda_len));
  }
  return ad::mean(ad::concat_rows(per));
}

// ---------------------------------------------------------------- objective composition

template <class T>
struct ObjectiveTerms {
  std::optional<Tensor<T>> adversarial;         // generator-side GAN loss, already scaled
  std::optional<Tensor<T>> vae_layout;          // raw layout L2 of the VAE reconstruction
  std::optional<Tensor<T>> vae_kl;              // raw KL
  std::optional<Tensor<T>> giou;                // raw mean (1 - gIoU)
  std::optional<Tensor<T>> rec_image;           // raw image reconstruction
  std::optional<Tensor<T>> rec_text;            // text reconstruction (carries its own weights)
  std::optional<Tensor<T>> overlap;             // raw
  std::optional<Tensor<T>> misalign;            // raw
  std::optional<Tensor<T>> layout_supervision;  // raw layout L2 supervision outside the VAE
};

template <class T>
struct ComposedObjective {
  Tensor<T> total;
  LossReport report;
};

// Generator-side objective: L_GAN + L_VAE + L_gIoU + L_rec + L_overlap +
// L_misalign, masked by variant. Absent optional terms are skipped;
// missing variant-required terms are a configuration error.
template <class T>
ComposedObjective<T> compose_objective(Variant variant, const ObjectiveTerms<T>& t, const LossWeights& w) {
  const bool use_gan = variant != Variant::vae;
  const bool use_vae = variant != Variant::gan;
  if (use_gan && !t.adversarial) throw ConfigurationError("objective: adversarial term required for this variant");
  if (use_vae && (!t.vae_layout || !t.vae_kl))
    throw ConfigurationError("objective: VAE reconstruction and KL terms required for this variant");

  std::vector<Tensor<T>> parts;
  LossReport report;
  auto add = [&](const char* name, const std::optional<Tensor<T>>& term, double weight) {
    if (!term) return;
    Tensor<T> weighted = (weight == 1.0) ? *term : (*term) * T(weight);
    parts.push_back(ad::reshape(weighted, 1, 1));
    report.terms[name] = double(weighted.item());
  };
  if (use_gan) add("adversarial", t.adversarial, 1.0);
  if (use_vae) {
    add("vae_layout", t.vae_layout, w.lambda_layout);
    add("vae_kl", t.vae_kl, w.lambda_kl);
  }
  add("layout_supervision", t.layout_supervision, w.lambda_layout);
  add("giou", t.giou, w.lambda_giou);
  add("rec_image", t.rec_image, w.lambda_im);
  add("rec_text", t.rec_text, 1.0);
  add("overlap", t.overlap, w.lambda_overlap);
  add("misalign", t.misalign, w.lambda_misalign);

  Tensor<T> total = parts.empty() ? Tensor<T>::scalar(T(0)) : ad::sum(ad::concat_rows(parts));
  report.total = double(total.item());
  return {total, report};
}

// ================================================================ plain-value API

inline double layout_l2_loss(const Layout& fake, const Layout& real) {
  if (fake.size() != real.size()) throw ShapeError("layout_l2_loss: layouts differ in length");
  if (fake.empty()) return 0.0;
  return layout_l2(boxes_tensor<double>(fake), boxes_tensor<double>(real)).item();
}

inline double giou_loss(const Layout& fake, const Layout& real, const LossWeights& w) {
  if (fake.size() != real.size()) throw ShapeError("giou_loss: layouts differ in length");
  if (fake.empty()) return 0.0;
  return w.lambda_giou * giou_dissimilarity(boxes_tensor<double>(fake), boxes_tensor<double>(real)).item();
}

inline double overlap_loss(const Layout& l) {
  if (l.empty()) throw ValidationError("overlap_loss: layout must contain at least one box");
  return overlap(boxes_tensor<double>(l)).item();
}

inline double misalignment_loss(const Layout& l) {
  if (l.empty()) throw ValidationError("misalignment_loss: layout must contain at least one box");
  return misalignment(boxes_tensor<double>(l)).item();
}

// Patch arrays in [0,1]; equal-size pairs are compared natively, mismatched
// pairs after bilinear resampling of both to the common resolution.
inline double image_rec_loss(const std::vector<Image>& p1, const std::vector<Image>& p2,
                             int working_resolution = kPatchCompareResolution) {
  if (p1.size() != p2.size()) throw ShapeError("image_rec_loss: sequences differ in length");
  if (p1.empty()) return 0.0;
  double total = 0;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    Image a = p1[i], b = p2[i];
    if (a.height != b.height || a.width != b.width) {
      a = resize_bilinear(a, working_resolution, working_resolution);
      b = resize_bilinear(b, working_resolution, working_resolution);
    }
    double sq = 0;
    for (std::size_t k = 0; k < a.pixels.size(); ++k) {
      const double d = (a.pixels[k] - b.pixels[k]) / 255.0;
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / double(p1.size());
}

// Plain-value text prediction: logits per character step, class, length.
struct TextPrediction {
  std::vector<std::vector<double>> char_logits;
  std::vector<double> class_logits;
  std::vector<double> length_logits;
};

inline Tensor<double> rows_tensor(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ShapeError("empty logit matrix");
  const std::size_t c = rows[0].size();
  std::vector<double> v;
  for (const auto& r : rows) {
    if (r.size() != c) throw ShapeError("ragged logit matrix");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor<double>::constant(int(rows.size()), int(c), std::move(v));
}

inline double text_rec_loss(const std::vector<TextPrediction>& pred, const std::vector<TextTarget>& target,
                            const LossWeights& w) {
  if (pred.size() != target.size()) throw ShapeError("text_rec_loss: sequences differ in length");
  std::vector<TextLogits<double>> logits;
  for (const auto& p : pred) {
    if (p.class_logits.size() != kTextClassCount) throw ShapeError("text_rec_loss: class logits must be 4-way");
    if (p.length_logits.size() != kLengthLevels) throw ShapeError("text_rec_loss: length logits must be 256-way");
    logits.push_back({rows_tensor(p.char_logits), rows_tensor({p.class_logits}), rows_tensor({p.length_logits})});
  }
  return text_reconstruction(logits, target, w).item();
}

struct Reconstruction {
  Layout layout;
  Image background;
  std::vector<Image> patches;
  std::vector<TextPrediction> texts;
};

struct ReconstructionTarget {
  Layout layout;
  Image background;
  std::vector<Image> patches;
  std::vector<TextTarget> texts;
};

// lambda_layout * L_layout + lambda_im * (||B1 - B2|| + L_im) + L_text.
inline double dec_rec_loss(const Reconstruction& rec, const ReconstructionTarget& real, const LossWeights& w) {
  double bg = 0;
  {
    Image a = rec.background, b = real.background;
    if (a.height != b.height || a.width != b.width) {
      if (a.empty() || b.empty()) throw ShapeError("dec_rec_loss: background missing");
      b = resize_bilinear(b, a.height, a.width);
    }
    double sq = 0;
    for (std::size_t k = 0; k < a.pixels.size(); ++k) {
      const double d = (a.pixels[k] - b.pixels[k]) / 255.0;
      sq += d * d;
    }
    bg = std::sqrt(sq);
  }
  const double layout = rec.layout.empty() && real.layout.empty() ? 0.0 : layout_l2_loss(rec.layout, real.layout);
  return w.lambda_layout * layout + w.lambda_im * (bg + image_rec_loss(rec.patches, real.patches)) +
         text_rec_loss(rec.texts, real.texts, w);
}

struct GanLosses {
  double generator = 0;
  double discriminator = 0;
};

inline GanLosses gan_losses(double d_real_c, double d_fake_c, double d_real_u, double d_fake_u,
                            bool saturating_generator = false) {
  for (double v : {d_real_c, d_fake_c, d_real_u, d_fake_u})
    if (!std::isfinite(v)) throw NumericError("gan_losses: non-finite discriminator logit");
  auto s = [](double v) { return Tensor<double>::scalar(v); };
  GanLosses out;
  out.discriminator = discriminator_gan_loss(s(d_real_c), s(d_fake_c)).item() +
                      discriminator_gan_loss(s(d_real_u), s(d_fake_u)).item();
  out.generator = generator_gan_loss(s(d_fake_c), saturating_generator).item() +
                  generator_gan_loss(s(d_fake_u), saturating_generator).item();
  return out;
}

inline double kl_to_standard_normal(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size()) throw ShapeError("kl: mu and logvar differ in dimension");
  if (mu.empty()) return 0.0;
  const int d = int(mu.size());
  return kl_standard_normal(Tensor<double>::from<double>(1, d, mu), Tensor<double>::from<double>(1, d, logvar)).item();
}

inline double vae_objective(const Layout& fake, const Layout& real, std::span<const double> mu,
                            std::span<const double> logvar, const LossWeights& w) {
  return w.lambda_layout * layout_l2_loss(fake, real) + w.lambda_kl * kl_to_standard_normal(mu, logvar);
}

// Plain-value components for total_objective.
struct ObjectiveComponents {
  std::optional<double> adversarial, vae_layout, vae_kl, giou, rec_image, rec_text, overlap, misalign,
      layout_supervision;
};

inline LossReport total_objective(Variant variant, const ObjectiveComponents& c, const LossWeights& w) {
  auto wrap = [](const std::optional<double>& v) -> std::optional<Tensor<double>> {
    if (!v) return std::nullopt;
    return Tensor<double>::scalar(*v);
  };
  ObjectiveTerms<double> t{wrap(c.adversarial), wrap(c.vae_layout), wrap(c.vae_kl),  wrap(c.giou),
                           wrap(c.rec_image),   wrap(c.rec_text),   wrap(c.overlap), wrap(c.misalign),
                           wrap(c.layout_supervision)};
  return compose_objective(variant, t, w).report;
}

}  // namespace layoutdetr::objectives

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "layoutdetr/objectives/losses.hpp"
#include "test_support.hpp"

using namespace layoutdetr;
using namespace layoutdetr::objectives;
using D = ad::Tensor<double>;

namespace {

Layout L(std::vector<NormalizedBox> b) { return Layout::from_boxes(std::move(b)); }

NormalizedBox edges(double top, double left, double bottom, double right) {
  return {(top + bottom) / 2, (left + right) / 2, bottom - top, right - left};
}

std::vector<NormalizedBox> random_boxes(Rng& rng, int n) {
  std::vector<NormalizedBox> v;
  for (int i = 0; i < n; ++i) v.push_back(oracle::random_inner_box(rng, 0.05, 0.5));
  return v;
}

// Independent brute-force recomputations straight from the definitions.
double brute_overlap(const std::vector<NormalizedBox>& b) {
  if (b.size() < 2) return 0;
  double s = 0;
  int n = 0;
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (i == j) continue;
      const double ih = std::max(0.0, std::min(b[i].bottom(), b[j].bottom()) - std::max(b[i].top(), b[j].top()));
      const double iw = std::max(0.0, std::min(b[i].right(), b[j].right()) - std::max(b[i].left(), b[j].left()));
      s += ih * iw / (b[i].h * b[i].w);
      ++n;
    }
  return s / n;
}

double brute_misalign(const std::vector<NormalizedBox>& b) {
  if (b.size() < 2) return 0;
  double s = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    double best = 1e9;
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (i == j) continue;
      for (double d : {std::abs(b[i].left() - b[j].left()), std::abs(b[i].cx - b[j].cx),
                       std::abs(b[i].right() - b[j].right()), std::abs(b[i].top() - b[j].top()),
                       std::abs(b[i].cy - b[j].cy), std::abs(b[i].bottom() - b[j].bottom())})
        best = std::min(best, d);
    }
    s += best;
  }
  return s / b.size();
}

}  // namespace

TEST(LayoutL2, HandValues) {
  const NormalizedBox a{0.5, 0.5, 0.2, 0.2};
  EXPECT_EQ(layout_l2_loss(L({a}), L({a})), 0.0);
  EXPECT_NEAR(layout_l2_loss(L({{0.8, 0.5, 0.2, 0.2}}), L({a})), 0.3, 1e-12);
  const NormalizedBox b{0.3, 0.3, 0.2, 0.2};
  EXPECT_NEAR(layout_l2_loss(L({{0.6, 0.5, 0.2, 0.2}, {0.3, 0.6, 0.2, 0.2}}), L({a, b})), 0.2, 1e-12);
  EXPECT_THROW(layout_l2_loss(L({a}), L({a, b})), ShapeError);
}

TEST(ImageRec, HandValues) {
  Image black(1, 1, 0), white(1, 1, 255);
  EXPECT_EQ(image_rec_loss({white}, {white}), 0.0);
  EXPECT_NEAR(image_rec_loss({black}, {white}), std::sqrt(3.0), 1e-12);
  EXPECT_EQ(image_rec_loss({}, {}), 0.0);
  EXPECT_THROW(image_rec_loss({black}, {}), ShapeError);
  // Mismatched sizes go through the common working resolution.
  EXPECT_NEAR(image_rec_loss({Image(3, 5, 0)}, {Image(7, 2, 255)}), std::sqrt(3.0 * 64 * 64), 1e-9);
}

TEST(TextRec, HandValues) {
  LossWeights w;
  TextTarget t{{65, 257}, 1, 2};
  TextPrediction perfect;
  perfect.char_logits = {std::vector<double>(258, -1e3), std::vector<double>(258, -1e3)};
  perfect.char_logits[0][65] = 1e3;
  perfect.char_logits[1][257] = 1e3;
  perfect.class_logits = {-1e3, 1e3, -1e3, -1e3};
  perfect.length_logits.assign(256, -1e3);
  perfect.length_logits[2] = 1e3;
  EXPECT_NEAR(text_rec_loss({perfect}, {t}, w), 0.0, 1e-12);

  TextPrediction uniform_cls = perfect;
  uniform_cls.class_logits = {0, 0, 0, 0};
  EXPECT_NEAR(text_rec_loss({uniform_cls}, {t}, w), w.lambda_cls * std::log(4.0), 1e-9);

  TextPrediction bad = perfect;
  bad.class_logits.push_back(0);
  EXPECT_THROW(text_rec_loss({bad}, {t}, w), ShapeError);
  EXPECT_EQ(quantize_text_length(300), 255);
  EXPECT_EQ(quantize_text_length(42), 42);
  EXPECT_EQ(quantize_text_length(0), 0);
  EXPECT_THROW(quantize_text_length(-1), ValidationError);
}

TEST(DecRec, WeightedComposition) {
  LossWeights w;
  ReconstructionTarget real{L({{0.5, 0.5, 0.2, 0.2}}), Image(4, 4, 100), {}, {}};
  Reconstruction rec{real.layout, real.background, {}, {}};
  EXPECT_EQ(dec_rec_loss(rec, real, w), 0.0);
  rec.layout = L({{0.6, 0.5, 0.2, 0.2}});
  EXPECT_NEAR(dec_rec_loss(rec, real, w), 50.0, 1e-9);
  EXPECT_EQ(dec_rec_loss(rec, real, w.scaled(0.0)), 0.0);
}

TEST(GiouLoss, HandValues) {
  LossWeights w;
  const NormalizedBox a{0.25, 0.25, 0.5, 0.5}, b{0.75, 0.75, 0.5, 0.5};
  EXPECT_NEAR(giou_loss(L({a}), L({a}), w), 0.0, 1e-15);
  EXPECT_NEAR(giou_loss(L({a}), L({b}), w), 6.0, 1e-12);
  const auto p = edges(0, 0, 1, 0.5), q = edges(0, 0.25, 1, 0.75);
  EXPECT_NEAR(giou_loss(L({a, p}), L({a, q}), w), 4.0 / 3.0, 1e-12);
}

TEST(OverlapLoss, HandValues) {
  EXPECT_EQ(overlap_loss(L({{0.5, 0.5, 0.2, 0.2}})), 0.0);
  EXPECT_NEAR(overlap_loss(L({{0.5, 0.5, 0.2, 0.2}, {0.5, 0.5, 0.2, 0.2}})), 1.0, 1e-12);
  EXPECT_EQ(overlap_loss(L({{0.25, 0.25, 0.5, 0.5}, {0.75, 0.75, 0.5, 0.5}})), 0.0);
}

TEST(MisalignmentLoss, HandValues) {
  EXPECT_EQ(misalignment_loss(L({{0.5, 0.5, 0.2, 0.2}})), 0.0);
  EXPECT_NEAR(misalignment_loss(L({edges(0.1, 0.1, 0.3, 0.5), edges(0.5, 0.1, 0.9, 0.3)})), 0.0, 1e-15);
  // Every one of the six deltas is >= 0.03 and the left delta is exactly 0.03.
  EXPECT_NEAR(misalignment_loss(L({edges(0.10, 0.10, 0.20, 0.50), edges(0.60, 0.13, 0.90, 0.40)})), 0.03, 1e-12);
}

TEST(LayoutLosses, MatchBruteForceOracles) {
  Rng rng(17);
  for (int t = 0; t < 300; ++t) {
    const auto boxes = random_boxes(rng, rng.uniform_int(1, 7));
    EXPECT_NEAR(overlap_loss(L(boxes)), brute_overlap(boxes), 1e-12);
    EXPECT_NEAR(misalignment_loss(L(boxes)), brute_misalign(boxes), 1e-12);
  }
}

TEST(LayoutLosses, PermutationAndTranslationInvariance) {
  Rng rng(23);
  for (int t = 0; t < 100; ++t) {
    auto boxes = random_boxes(rng, 5);
    for (auto& b : boxes) {  // keep room for a translation
      b.cy = 0.1 + 0.6 * b.cy;
      b.cx = 0.1 + 0.6 * b.cx;
      b.h *= 0.3;
      b.w *= 0.3;
    }
    auto perm = boxes;
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[0], perm[2]);
    EXPECT_NEAR(overlap_loss(L(boxes)), overlap_loss(L(perm)), 1e-12);
    EXPECT_NEAR(misalignment_loss(L(boxes)), misalignment_loss(L(perm)), 1e-12);
    auto shifted = boxes;
    for (auto& b : shifted) {
      b.cy += 0.07;
      b.cx -= 0.05;
    }
    EXPECT_NEAR(misalignment_loss(L(boxes)), misalignment_loss(L(shifted)), 1e-12);
  }
}

TEST(LayoutLosses, ZeroIffEqual) {
  LossWeights w;
  Rng rng(29);
  const auto a = random_boxes(rng, 4);
  auto b = a;
  EXPECT_EQ(layout_l2_loss(L(a), L(b)), 0.0);
  EXPECT_NEAR(giou_loss(L(a), L(b), w), 0.0, 1e-14);
  b[2].cx += 0.01;
  EXPECT_GT(layout_l2_loss(L(a), L(b)), 0.0);
  EXPECT_GT(giou_loss(L(a), L(b), w), 0.0);
}

TEST(GanLosses, ClosedForms) {
  const auto zero = gan_losses(0, 0, 0, 0);
  EXPECT_NEAR(zero.discriminator, 4 * std::log(2.0), 1e-12);
  EXPECT_NEAR(zero.generator, 2 * std::log(2.0), 1e-12);
  const auto perfect = gan_losses(60, -60, 60, -60);
  EXPECT_LT(perfect.discriminator, 1e-20);
  EXPECT_NEAR(gan_losses(0, 0, 0, 0, true).generator, -2 * std::log(2.0), 1e-12);
  EXPECT_THROW(gan_losses(std::nan(""), 0, 0, 0), NumericError);
  EXPECT_THROW(gan_losses(0, INFINITY, 0, 0), NumericError);
}

TEST(Kl, ClosedForms) {
  const std::vector<double> z{0.0}, one{1.0}, ln4{std::log(4.0)};
  EXPECT_EQ(kl_to_standard_normal(z, z), 0.0);
  EXPECT_NEAR(kl_to_standard_normal(one, z), 0.5, 1e-12);
  EXPECT_NEAR(kl_to_standard_normal(z, ln4), 0.5 * (4 - 1 - std::log(4.0)), 1e-12);
}

TEST(VaeObjective, Composition) {
  LossWeights w;
  const NormalizedBox a{0.5, 0.5, 0.2, 0.2};
  const std::vector<double> z{0.0}, one{1.0};
  EXPECT_EQ(vae_objective(L({a}), L({a}), z, z, w), 0.0);
  EXPECT_NEAR(vae_objective(L({a}), L({a}), one, z, w), 0.5, 1e-12);
  EXPECT_NEAR(vae_objective(L({{0.51, 0.5, 0.2, 0.2}}), L({a}), z, z, w), 5.0, 1e-9);
}

TEST(TotalObjective, VariantMaskingAndAdditivity) {
  LossWeights w;
  ObjectiveComponents zeros{0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, std::nullopt};
  EXPECT_EQ(total_objective(Variant::vaegan, zeros, w).total, 0.0);

  ObjectiveComponents gan_only{1.5, std::nullopt, std::nullopt, 0.2, 0.1, 0.3, 0.05, 0.01, std::nullopt};
  ObjectiveComponents gan_with_vae = gan_only;
  gan_with_vae.vae_layout = 0.4;
  gan_with_vae.vae_kl = 2.0;
  const auto r1 = total_objective(Variant::gan, gan_only, w);
  const auto r2 = total_objective(Variant::gan, gan_with_vae, w);
  EXPECT_EQ(r1.terms, r2.terms);
  EXPECT_EQ(r1.total, r2.total);

  ObjectiveComponents ab{};
  ab.adversarial = 3.0;
  ab.vae_layout = 0.0;
  ab.vae_kl = 0.25;
  EXPECT_NEAR(total_objective(Variant::vaegan, ab, w).total, 3.25, 1e-12);

  ObjectiveComponents missing{};
  missing.adversarial = 1.0;
  EXPECT_THROW(total_objective(Variant::vae, missing, w), ConfigurationError);
  EXPECT_THROW(total_objective(Variant::gan, ObjectiveComponents{}, w), ConfigurationError);
}

TEST(TotalObjective, TotalIsSumAndScalesLinearly) {
  LossWeights w;
  ObjectiveComponents c{0.7, 0.01, 0.3, 0.4, 0.9, 2.2, 0.05, 0.002, 0.03};
  const auto r = total_objective(Variant::vaegan, c, w);
  EXPECT_LE(std::abs(r.total - r.sum_of_terms()), 1e-6 * std::abs(r.total));
  // Adversarial and text terms arrive already weighted; scale them too.
  auto c3 = c;
  *c3.adversarial *= 3;
  *c3.rec_text *= 3;
  const auto r3 = total_objective(Variant::vaegan, c3, w.scaled(3));
  EXPECT_NEAR(r3.total, 3 * r.total, 1e-9 * r.total);
}

TEST(LossWeights, PaperDefaultsSnapshot) {
  const LossWeights w;
  EXPECT_EQ(w.lambda_layout, 500.0);
  EXPECT_EQ(w.lambda_im, 0.5);
  EXPECT_EQ(w.lambda_str, 0.1);
  EXPECT_EQ(w.lambda_cls, 50.0);
  EXPECT_EQ(w.lambda_len, 2.0);
  EXPECT_EQ(w.lambda_kl, 1.0);
  EXPECT_EQ(w.lambda_giou, 4.0);
  EXPECT_EQ(w.lambda_overlap, 7.0);
  EXPECT_EQ(w.lambda_misalign, 17.0);
  nlohmann::json j = w;
  EXPECT_EQ(j.get<LossWeights>(), w);
  EXPECT_THROW(LossWeights{.lambda_kl = -1}.validate(), ConfigurationError);
}

// ---------------------------------------------------------------- gradient suite

class LossGradients : public ::testing::Test {
 protected:
  static constexpr int kPoints = 100;
  Rng rng{2024};
};

TEST_F(LossGradients, LayoutL2) {
  int done = 0;
  while (done < kPoints) {
    const int n = rng.uniform_int(1, 5);
    const auto real = random_boxes(rng, n), fake = random_boxes(rng, n);
    const D r = boxes_tensor<double>(L(real));
    auto res = oracle::check_gradient([&](const D& x) { return layout_l2(x, r); }, n, 4, oracle::flatten(fake));
    EXPECT_LE(res.max_rel_error, 1e-3);
    ++done;
  }
}

TEST_F(LossGradients, Giou) {
  int done = 0;
  while (done < kPoints) {
    const int n = rng.uniform_int(1, 4);
    const auto real = random_boxes(rng, n), fake = random_boxes(rng, n);
    bool ok = true;
    for (int i = 0; i < n; ++i) ok = ok && oracle::away_from_ties({real[i], fake[i]});
    if (!ok) continue;
    const D r = boxes_tensor<double>(L(real));
    auto res =
        oracle::check_gradient([&](const D& x) { return giou_dissimilarity(x, r); }, n, 4, oracle::flatten(fake));
    EXPECT_LE(res.max_rel_error, 1e-3);
    ++done;
  }
}

TEST_F(LossGradients, Overlap) {
  int done = 0;
  while (done < kPoints) {
    const int n = rng.uniform_int(2, 5);
    const auto boxes = random_boxes(rng, n);
    if (!oracle::away_from_ties(boxes)) continue;
    auto res = oracle::check_gradient([](const D& x) { return overlap(x); }, n, 4, oracle::flatten(boxes));
    EXPECT_LE(res.max_rel_error, 1e-3);
    ++done;
  }
}

TEST_F(LossGradients, Misalignment) {
  int done = 0;
  while (done < kPoints) {
    const int n = rng.uniform_int(2, 5);
    const auto boxes = random_boxes(rng, n);
    if (!oracle::away_from_ties(boxes) || !oracle::misalignment_min_is_unique(boxes)) continue;
    auto res = oracle::check_gradient([](const D& x) { return misalignment(x); }, n, 4, oracle::flatten(boxes));
    EXPECT_LE(res.max_rel_error, 1e-3);
    ++done;
  }
}

TEST_F(LossGradients, Kl) {
  for (int t = 0; t < kPoints; ++t) {
    const int d = rng.uniform_int(1, 8);
    std::vector<double> mu(d), lv(d);
    for (auto& v : mu) v = rng.normal();
    for (auto& v : lv) v = rng.uniform(-2, 2);
    const D lvt = D::constant(1, d, lv), mut = D::constant(1, d, mu);
    EXPECT_LE(oracle::check_gradient([&](const D& x) { return kl_standard_normal(x, lvt); }, 1, d, mu).max_rel_error,
              1e-3);
    EXPECT_LE(oracle::check_gradient([&](const D& x) { return kl_standard_normal(mut, x); }, 1, d, lv).max_rel_error,
              1e-3);
  }
}

TEST_F(LossGradients, Gan) {
  for (int t = 0; t < kPoints; ++t) {
    const std::vector<double> logits{rng.uniform(-4, 4), rng.uniform(-4, 4)};
    auto disc = [](const D& x) { return discriminator_gan_loss(ad::slice_cols(x, 0, 1), ad::slice_cols(x, 1, 1)); };
    EXPECT_LE(oracle::check_gradient(disc, 1, 2, logits).max_rel_error, 1e-3);
    EXPECT_LE(oracle::check_gradient([](const D& x) { return generator_gan_loss(x); }, 1, 2, logits).max_rel_error,
              1e-3);
    EXPECT_LE(
        oracle::check_gradient([](const D& x) { return generator_gan_loss(x, true); }, 1, 2, logits).max_rel_error,
        1e-3);
  }
}

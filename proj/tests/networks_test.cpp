#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "layoutdetr/conditioning/embedding.hpp"
#include "layoutdetr/networks/checkpoint.hpp"
#include "layoutdetr/networks/models.hpp"
#include "test_support.hpp"

using namespace layoutdetr;
using namespace layoutdetr::nn;
using D = ad::Tensor<double>;

namespace {

NetworkConfig small_net() {
  NetworkConfig n;
  n.model_dim = 32;
  n.num_heads = 4;
  n.encoder_depth = 1;
  n.decoder_depth = 2;
  n.char_dim = 16;
  n.max_chars = 12;
  n.recon_resolution = 4;
  return n;
}

EmbedderConfig small_emb() {
  EmbedderConfig e;
  e.token_dim = 48;
  e.noise_dim = 8;
  e.text_string_dim = 24;
  e.class_dim = 8;
  e.length_dim = 8;
  e.patch_dim = 40;
  e.background_patch_size = 8;
  e.working_resolution = 32;
  e.patch_resolution = 16;
  return e;
}

Image noise_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (auto& p : img.pixels) p = std::uint8_t(rng.uniform_int(0, 255));
  return img;
}

ForegroundSet sample_fg() {
  ForegroundSet fg;
  fg.elements.push_back(TextElement{"Summer SALE", TextClass::header});
  fg.elements.push_back(TextElement{"Up to 50% off everything", TextClass::body});
  fg.elements.push_back(ImageElement{noise_image(10, 14, 5)});
  fg.elements.push_back(TextElement{"Shop now", TextClass::button});
  return fg;
}

D boxes_of(const std::vector<NormalizedBox>& b) { return objectives::boxes_tensor<double>(Layout::from_boxes(b)); }

std::vector<NormalizedBox> some_boxes(std::uint64_t seed, int n) {
  Rng rng(seed);
  std::vector<NormalizedBox> v;
  for (int i = 0; i < n; ++i) v.push_back(oracle::random_inner_box(rng, 0.05, 0.4));
  return v;
}

double max_abs_diff(const D& a, const D& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

struct Fixture : ::testing::Test {
  LayoutDetrModel<double> model{small_net(), small_emb(), 42};
  Image bg = noise_image(40, 56, 1);
  ForegroundSet fg = sample_fg();
  Rng rng{7};
};

}  // namespace

// ---------------------------------------------------------------- conditioning

TEST(StringEmbedding, DeterministicCaseSensitiveAndNormalized) {
  const EmbedderConfig ec;
  const auto a = conditioning::embed_text_string("SALE", ec), b = conditioning::embed_text_string("SALE", ec);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, conditioning::embed_text_string("sale", ec));
  double n = 0;
  for (double x : a) n += x * x;
  EXPECT_NEAR(n, 1.0, 1e-12);
  const auto e = conditioning::embed_text_string("", ec);
  EXPECT_EQ(int(e.size()), ec.text_string_dim);
  for (double x : e) EXPECT_EQ(x, 0.0);
}

TEST(EmbedderConfig, ValidatesDimensionSums) {
  EXPECT_NO_THROW(EmbedderConfig{}.validate());
  EmbedderConfig bad;
  bad.class_dim = 17;
  EXPECT_THROW(bad.validate(), ConfigurationError);
  EmbedderConfig res;
  res.working_resolution = 250;
  EXPECT_THROW(res.validate(), ConfigurationError);
}

TEST_F(Fixture, ClassDictionaryLookupAndGradient) {
  const auto& cond = model.G.conditioner;
  const D h = cond.embed_text_class(TextClass::header), b = cond.embed_text_class(TextClass::body);
  EXPECT_GT(max_abs_diff(h, b), 0.0);
  EXPECT_EQ(max_abs_diff(h, cond.embed_text_class(TextClass::header)), 0.0);
  model.gen_params.zero_grad();
  ad::sum(ad::square(cond.embed_text_class(TextClass::disclaimer))).backward();
  const auto& g = cond.class_dict.grad();
  const int c = cond.class_dict.cols();
  for (int r = 0; r < kTextClassCount; ++r) {
    double row = 0;
    for (int j = 0; j < c; ++j) row += std::abs(g[r * c + j]);
    if (r == 2)
      EXPECT_GT(row, 0.0);
    else
      EXPECT_EQ(row, 0.0);
  }
  // Finite-difference check on one dictionary entry.
  const double analytic = g[2 * c + 3];
  double* w = model.G.conditioner.class_dict.mutable_data();
  const double orig = w[2 * c + 3];
  auto f = [&] { return ad::sum(ad::square(cond.embed_text_class(TextClass::disclaimer))).item(); };
  w[2 * c + 3] = orig + 1e-6;
  const double fp = f();
  w[2 * c + 3] = orig - 1e-6;
  const double fm = f();
  w[2 * c + 3] = orig;
  EXPECT_LE(oracle::relative_error(analytic, (fp - fm) / 2e-6), 1e-6);
}

TEST_F(Fixture, ImagePatchEmbedding) {
  const auto& cond = model.G.conditioner;
  const D a = cond.embed_image_patch(noise_image(9, 30, 3), model.G.background);
  const D b = cond.embed_image_patch(noise_image(9, 30, 3), model.G.background);
  EXPECT_EQ(a.cols(), small_emb().patch_dim);
  EXPECT_EQ(max_abs_diff(a, b), 0.0);
  const D z = cond.embed_image_patch(Image(3, 3, 0), model.G.background);
  EXPECT_TRUE(ad::all_finite(z));
  EXPECT_EQ(cond.embed_image_patch(Image(200, 1, 0), model.G.background).cols(), small_emb().patch_dim);
  EXPECT_THROW(cond.embed_image_patch(Image{}, model.G.background), ValidationError);
}

TEST_F(Fixture, TokenAssembly) {
  const auto ec = small_emb();
  EXPECT_EQ(model.G.tokens(ForegroundSet{}, D{}).size(), 0u);
  const auto toks = model.G.tokens(fg, D::zeros(4, ec.noise_dim));
  using conditioning::Modality;
  EXPECT_EQ(toks.modalities,
            (std::vector<Modality>{Modality::text, Modality::text, Modality::image, Modality::text}));
  const auto list = toks.to_list();
  ASSERT_EQ(list.size(), 4u);
  EXPECT_EQ(list[2].element_index, 2);
  const auto noisy = model.G.tokens(fg, conditioning::sample_noise<double>(4, ec.noise_dim, rng)).to_list();
  for (std::size_t i = 0; i < 4; ++i)
    for (int c = 0; c < ec.token_dim; ++c) {
      if (c < ec.noise_dim)
        EXPECT_NE(list[i].vector[c], noisy[i].vector[c]);
      else
        EXPECT_EQ(list[i].vector[c], noisy[i].vector[c]);
    }
  EXPECT_THROW(model.G.tokens(fg, D::zeros(3, ec.noise_dim)), ShapeError);
}

TEST_F(Fixture, ZeroingClassDictionaryTouchesOnlyClassCoordinates) {
  const auto ec = small_emb();
  const auto before = model.G.tokens(fg, D::zeros(4, ec.noise_dim)).to_list();
  double* w = model.G.conditioner.class_dict.mutable_data();
  std::fill(w, w + model.G.conditioner.class_dict.size(), 0.0);
  const auto after = model.G.tokens(fg, D::zeros(4, ec.noise_dim)).to_list();
  const int lo = ec.noise_dim + ec.text_string_dim, hi = lo + ec.class_dim;
  for (std::size_t i = 0; i < 4; ++i) {
    if (before[i].modality != conditioning::Modality::text) continue;
    for (int c = 0; c < ec.token_dim; ++c)
      if (c < lo || c >= hi) EXPECT_EQ(before[i].vector[c], after[i].vector[c]);
  }
}

TEST(BackgroundEncoding, DefaultGridHas256Tokens) {
  LayoutDetrModel<float> m(NetworkConfig{}, EmbedderConfig{}, 1);
  const auto t1 = m.G.encode_background(noise_image(300, 500, 2));
  const auto t2 = m.G.encode_background(noise_image(300, 500, 2));
  EXPECT_EQ(t1.rows(), 256);
  EXPECT_EQ(t1.values(), t2.values());
  EXPECT_TRUE(ad::all_finite(t1));
  EXPECT_TRUE(ad::all_finite(m.G.encode_background(Image(8, 8, 0))));
  EXPECT_TRUE(ad::all_finite(m.G.encode_background(Image(8, 8, 255))));
}

TEST(BackgroundEncoding, PositionalEncodingsBreakPermutationSymmetry) {
  auto ec = small_emb();
  for (bool pe : {false, true}) {
    ec.positional_encoding = pe;
    LayoutDetrModel<double> m(small_net(), ec, 3);
    const D patches = conditioning::patchify<double>(noise_image(32, 32, 9), ec.working_resolution,
                                                     ec.background_patch_size);
    std::vector<int> perm(patches.rows());
    for (int i = 0; i < patches.rows(); ++i) perm[i] = patches.rows() - 1 - i;
    const D a = ad::masked_mean_rows(m.G.background.encode_patches(patches, ec.grid()));
    const D b = ad::masked_mean_rows(m.G.background.encode_patches(ad::gather_rows(patches, perm), ec.grid()));
    if (pe)
      EXPECT_GT(max_abs_diff(a, b), 1e-6);
    else
      EXPECT_LT(max_abs_diff(a, b), 1e-12);
  }
}

// ---------------------------------------------------------------- networks

TEST(Networks, DefaultParameterBudget) {
  LayoutDetrModel<float> m(NetworkConfig{}, EmbedderConfig{}, 1);
  EXPECT_LT(m.parameter_count(), 5'000'000u);
  EXPECT_GT(m.parameter_count(), 100'000u);
}

TEST_F(Fixture, GeneratorShapesRangeAndDeterminism) {
  const D noise = conditioning::sample_noise<double>(4, small_emb().noise_dim, rng);
  const auto a = model.G(bg, fg, noise), b = model.G(bg, fg, noise);
  EXPECT_EQ(a.boxes.rows(), 4);
  EXPECT_EQ(a.features.cols(), small_net().model_dim);
  EXPECT_EQ(a.boxes.values(), b.boxes.values());
  for (double v : a.boxes.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_NO_THROW(validate_layout(a.layout()));
  EXPECT_THROW(model.G.forward(model.G.encode_background(bg), D{}), ValidationError);
}

TEST_F(Fixture, GeneratorIsPermutationEquivariant) {
  const D noise = conditioning::sample_noise<double>(4, small_emb().noise_dim, rng);
  const D bgt = model.G.encode_background(bg);
  const D tok = model.G.tokens(fg, noise).tokens;
  const std::vector<int> perm{2, 0, 3, 1};
  const auto a = model.G.forward(bgt, tok);
  const auto b = model.G.forward(bgt, ad::gather_rows(tok, perm));
  EXPECT_LT(max_abs_diff(ad::gather_rows(a.boxes, perm), b.boxes), 1e-12);
}

TEST_F(Fixture, PaddingIsInvisible) {
  const int n = 4, pad = 3;
  const D noise = conditioning::sample_noise<double>(n, small_emb().noise_dim, rng);
  const D bgt = model.G.encode_background(bg);
  const D tok = model.G.tokens(fg, noise).tokens;
  const D padded = ad::concat_rows<double>({tok, D::full(pad, tok.cols(), 0.37)});
  Mask mask(n + pad, 1);
  for (int i = n; i < n + pad; ++i) mask[i] = 0;
  const auto a = model.G.forward(bgt, tok);
  const auto b = model.G.forward(bgt, padded, mask);
  EXPECT_LT(max_abs_diff(a.boxes, ad::slice_rows(b.boxes, 0, n)), 1e-6);

  const D real = boxes_of(some_boxes(3, n));
  const D real_padded = ad::concat_rows<double>({real, D::full(pad, 4, 0.5)});
  const D dtok = model.Dc.tokens(fg);
  const D dtok_padded = ad::concat_rows<double>({dtok, D::full(pad, dtok.cols(), -1.0)});
  const D dbg = model.Dc.encode_background(bg);
  EXPECT_LT(max_abs_diff(model.Dc.forward(real, dbg, dtok).logit, model.Dc.forward(real_padded, dbg, dtok_padded, mask).logit),
            1e-6);
  EXPECT_LT(max_abs_diff(model.Du.forward(real).logit, model.Du.forward(real_padded, mask).logit), 1e-6);
  EXPECT_LT(max_abs_diff(model.E(real).mu, model.E(real_padded, mask).mu), 1e-6);
  EXPECT_LT(max_abs_diff(model.Fu(model.Du.forward(real).features),
                         ad::slice_rows(model.Fu(model.Du.forward(real_padded, mask).features, mask), 0, n)),
            1e-6);
}

TEST_F(Fixture, ConditionalDiscriminator) {
  const D real = boxes_of(some_boxes(4, 4));
  const D tok = model.Dc.tokens(fg);
  const auto out = model.Dc.forward(real, model.Dc.encode_background(bg), tok);
  EXPECT_TRUE(ad::all_finite(out.logit));
  EXPECT_EQ(out.logit.size(), 1u);
  EXPECT_EQ(out.features.rows(), 4);
  const auto other = model.Dc.forward(real, model.Dc.encode_background(noise_image(40, 56, 77)), tok);
  EXPECT_NE(out.logit.item(), other.logit.item());
  EXPECT_THROW(model.Dc.forward(boxes_of(some_boxes(4, 3)), model.Dc.encode_background(bg), tok), ShapeError);
}

TEST_F(Fixture, UnconditionalDiscriminator) {
  auto boxes = some_boxes(5, 4);
  const auto out = model.Du.forward(boxes_of(boxes));
  EXPECT_EQ(out.features.rows(), 4);
  boxes[1].cx += 0.1;
  EXPECT_NE(out.logit.item(), model.Du.forward(boxes_of(boxes)).logit.item());
}

TEST_F(Fixture, ConditionalAuxDecoder) {
  const auto f = model.Dc.forward(boxes_of(some_boxes(6, 4)), model.Dc.encode_background(bg), model.Dc.tokens(fg));
  const auto out = model.Fc(f.features, fg);
  EXPECT_EQ(out.boxes.rows(), 4);
  ASSERT_EQ(out.foreground.texts.size(), 3u);
  ASSERT_EQ(out.foreground.patches.size(), 1u);
  EXPECT_EQ(out.foreground.texts[0].cls.cols(), 4);
  EXPECT_EQ(out.foreground.texts[0].length.cols(), 256);
  EXPECT_EQ(out.foreground.texts[0].chars.rows(), int(std::string("Summer SALE").size()) + 1);
  EXPECT_EQ(out.foreground.patches[0].cols(), 64 * 64 * 3);
  EXPECT_EQ(out.background.cols(), 4 * 4 * 3);
  const auto again = model.Fc(f.features, fg);
  EXPECT_EQ(out.boxes.values(), again.boxes.values());
  EXPECT_THROW(model.Fc(D::zeros(17, small_net().model_dim), ForegroundSet{}), ShapeError);
}

TEST_F(Fixture, UnconditionalAuxDecoderGradientReachesPositionalEmbedding) {
  const D real = boxes_of(some_boxes(8, 3));
  const D feats = model.Du.forward(real).features.detach();
  auto loss = [&] { return objectives::layout_l2(model.Fu(feats), real); };
  model.disc_params.zero_grad();
  loss().backward();
  const auto g = model.Fu.pos.grad();
  ASSERT_FALSE(g.empty());
  const int idx = 1 * model.Fu.pos.cols() + 5;
  double* w = model.Fu.pos.mutable_data();
  const double orig = w[idx];
  w[idx] = orig + 1e-6;
  const double fp = loss().item();
  w[idx] = orig - 1e-6;
  const double fm = loss().item();
  w[idx] = orig;
  EXPECT_NE(g[idx], 0.0);
  EXPECT_LE(oracle::relative_error(g[idx], (fp - fm) / 2e-6), 1e-4);
}

TEST_F(Fixture, LatentEncoderAndReparameterization) {
  const auto a = model.E(boxes_of(some_boxes(9, 3)));
  EXPECT_EQ(a.mu.cols(), small_emb().noise_dim);
  EXPECT_EQ(a.logvar.cols(), small_emb().noise_dim);
  EXPECT_EQ(a.mu.values(), model.E(boxes_of(some_boxes(9, 3))).mu.values());
  EXPECT_GT(max_abs_diff(a.mu, model.E(boxes_of(some_boxes(10, 3))).mu), 0.0);

  const D v = D::constant(1, 3, {0.3, -1.2, 2.0});
  EXPECT_EQ(reparameterize<double>({D::zeros(1, 3), D::zeros(1, 3)}, v).values(), v.values());
  const D mu = D::constant(1, 3, {0.1, 0.2, 0.3});
  EXPECT_EQ(reparameterize<double>({mu, D::constant(1, 3, {4, -2, 0.5})}, D::zeros(1, 3)).values(), mu.values());
  EXPECT_NEAR(reparameterize<double>({D::zeros(1, 1), D::scalar(std::log(4.0))}, D::scalar(1.0)).item(), 2.0, 1e-15);
}

TEST_F(Fixture, ReconstructorGradientReachesGenerator) {
  const D noise = conditioning::sample_noise<double>(4, small_emb().noise_dim, rng);
  std::vector<objectives::TextTarget> targets;
  std::vector<D> patch_targets;
  for (const auto& e : fg.elements) {
    if (const auto* t = std::get_if<TextElement>(&e))
      targets.push_back(text_target(*t, small_net().max_chars));
    else
      patch_targets.push_back(patch_target<double>(std::get<ImageElement>(e).patch));
  }
  const LossWeights w;
  auto loss = [&] {
    const auto out = model.G(bg, fg, noise);
    const auto rec = model.R(out.features, fg);
    EXPECT_EQ(rec.texts[1].cls.cols(), 4);
    EXPECT_EQ(rec.texts[1].length.cols(), 256);
    return objectives::text_reconstruction(rec.texts, targets, w) +
           objectives::image_reconstruction(rec.patches, patch_targets) * 0.5;
  };
  model.gen_params.zero_grad();
  loss().backward();
  // Probe a weight deep inside G's decoder.
  auto& wq = model.G.layers[0].cross_attn.q.w;
  const int idx = 7;
  const double analytic = wq.grad()[idx];
  double* p = wq.mutable_data();
  const double orig = p[idx];
  p[idx] = orig + 1e-5;
  const double fp = loss().item();
  p[idx] = orig - 1e-5;
  const double fm = loss().item();
  p[idx] = orig;
  EXPECT_NE(analytic, 0.0);
  EXPECT_LE(oracle::relative_error(analytic, (fp - fm) / 2e-5), 1e-4);
}

TEST_F(Fixture, CheckpointRoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "layoutdetr_ckpt_test.bin").string();
  write_archive(path, model_archive(model, LossWeights{}));
  auto loaded = load_model<double>(path);
  ASSERT_EQ(loaded->gen_params.params().size(), model.gen_params.params().size());
  EXPECT_EQ(loaded->gen_params.fingerprint(), model.gen_params.fingerprint());
  EXPECT_EQ(loaded->disc_params.fingerprint(), model.disc_params.fingerprint());
  const D noise = conditioning::sample_noise<double>(4, small_emb().noise_dim, rng);
  EXPECT_EQ(loaded->G(bg, fg, noise).boxes.values(), model.G(bg, fg, noise).boxes.values());
  std::filesystem::remove(path);
  EXPECT_THROW(read_archive(path), IoError);
}

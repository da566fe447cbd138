#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "layoutdetr/training/trainer.hpp"

using namespace layoutdetr;
namespace fs = std::filesystem;

namespace {

NetworkConfig small_net() {
  NetworkConfig n;
  n.model_dim = 32;
  n.num_heads = 4;
  n.encoder_depth = 1;
  n.decoder_depth = 1;
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

TrainConfig fast(Variant v = Variant::gan) {
  TrainConfig c;
  c.variant = v;
  c.learning_rate = 1e-3;
  c.batch_size = 4;
  c.seed = 3;
  return c;
}

const std::vector<DesignSample>& data() {
  static const auto ds = synth_dataset_generate(16, 21, [] {
                           SynthGrammar g;
                           g.image_probability = 0.5;
                           return g;
                         }())
                             .samples;
  return ds;
}

std::vector<const DesignSample*> batch(int n = 4) {
  std::vector<const DesignSample*> b;
  for (int i = 0; i < n; ++i) b.push_back(&data()[std::size_t(i)]);
  return b;
}

std::set<std::string> generator_terms(const LossReport& r) {
  std::set<std::string> out;
  for (const auto& [k, v] : r.terms)
    if (k.rfind("disc_", 0) != 0) out.insert(k);
  return out;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ldetr_training_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c = fast(Variant::vaegan);
  c.enable_overlap = false;
  c.adversarial_weight = 0.25;
  nlohmann::json j = c;
  EXPECT_EQ(j.at("variant"), "vaegan");
  EXPECT_EQ(j.get<TrainConfig>(), c);
  EXPECT_EQ(nlohmann::json::object().get<TrainConfig>(), TrainConfig{});
  TrainConfig bad;
  bad.learning_rate = 0;
  EXPECT_THROW(bad.validate(), ConfigurationError);
  bad = TrainConfig{};
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigurationError);
}

TEST(TrainConfig, DefaultsFollowThePaper) {
  const TrainConfig c;
  EXPECT_EQ(c.learning_rate, 1e-5);
  EXPECT_EQ(c.batch_size, 64);
  EXPECT_TRUE(c.enable_giou && c.enable_overlap && c.enable_misalign && c.enable_gen_rec && c.enable_uncond_disc);
}

TEST(TrainStep, AllTogglesOffLeavesOnlyGanTerms) {
  TrainConfig c = fast();
  c.enable_giou = c.enable_overlap = c.enable_misalign = c.enable_gen_rec = c.enable_uncond_disc = false;
  Trainer<double> t(small_net(), small_emb(), c);
  const auto r = t.train_step_gan(batch());
  EXPECT_EQ(generator_terms(r), std::set<std::string>{"adversarial"});
  EXPECT_TRUE(r.has("disc_cond"));
  EXPECT_FALSE(r.has("disc_uncond"));
}

TEST(TrainStep, FullGanReportHasEveryToggledTerm) {
  Trainer<double> t(small_net(), small_emb(), fast());
  const auto r = t.train_step_gan(batch());
  EXPECT_EQ(generator_terms(r),
            (std::set<std::string>{"adversarial", "giou", "rec_image", "rec_text", "overlap", "misalign"}));
  EXPECT_TRUE(r.has("disc_uncond"));
  EXPECT_TRUE(r.has("disc_rec_layout_u"));
  EXPECT_NEAR(r.total, r.at("adversarial") + r.at("giou") + r.at("rec_image") + r.at("rec_text") +
                           r.at("overlap") + r.at("misalign"),
              1e-9 * std::max(1.0, std::abs(r.total)));
}

TEST(TrainStep, VaeganReportIsUnionOfGanAndVae) {
  Trainer<double> gan(small_net(), small_emb(), fast(Variant::gan));
  Trainer<double> vae(small_net(), small_emb(), fast(Variant::vae));
  Trainer<double> both(small_net(), small_emb(), fast(Variant::vaegan));
  std::set<std::string> expected;
  for (const auto& [k, v] : gan.train_step(batch()).terms) expected.insert(k);
  for (const auto& [k, v] : vae.train_step(batch()).terms) expected.insert(k);
  std::set<std::string> got;
  for (const auto& [k, v] : both.train_step(batch()).terms) got.insert(k);
  EXPECT_EQ(got, expected);
}

TEST(TrainStep, IdenticalSeedsGiveIdenticalReports) {
  for (Variant v : {Variant::gan, Variant::vae, Variant::vaegan}) {
    Trainer<double> a(small_net(), small_emb(), fast(v)), b(small_net(), small_emb(), fast(v));
    for (int s = 0; s < 3; ++s) {
      const auto ra = a.train_on(data()), rb = b.train_on(data());
      EXPECT_EQ(ra.terms, rb.terms);
      EXPECT_EQ(ra.total, rb.total);
    }
  }
}

TEST(TrainStep, HalfStepsTouchOnlyTheirOwnGroup) {
  Trainer<double> t(small_net(), small_emb(), fast(Variant::vaegan));
  auto& m = t.model();
  const auto g0 = m.gen_params.fingerprint(), d0 = m.disc_params.fingerprint();
  t.discriminator_half_step(batch(), Variant::vaegan);
  EXPECT_EQ(m.gen_params.fingerprint(), g0);
  const auto d1 = m.disc_params.fingerprint();
  EXPECT_NE(d1, d0);
  t.generator_half_step(batch(), Variant::vaegan);
  EXPECT_EQ(m.disc_params.fingerprint(), d1);
  EXPECT_NE(m.gen_params.fingerprint(), g0);
}

TEST(TrainStep, VaeStepLeavesDiscriminatorAlone) {
  Trainer<double> t(small_net(), small_emb(), fast(Variant::vae));
  const auto d0 = t.model().disc_params.fingerprint();
  t.train_step_vae(batch());
  EXPECT_EQ(t.model().disc_params.fingerprint(), d0);
}

TEST(TrainStep, VaeKlTermIsTheClosedFormOnThePosterior) {
  Trainer<double> t(small_net(), small_emb(), fast(Variant::vae));
  const auto& s = data()[0];
  Rng rng(9);
  const auto obj = t.generator_objective(s, rng, Variant::vae);
  const auto post = t.model().E(objectives::boxes_tensor<double>(s.layout));
  const double kl = objectives::kl_to_standard_normal(post.mu.values(), post.logvar.values());
  EXPECT_EQ(obj.report.at("vae_kl"), t.weights().lambda_kl * kl);
}

TEST(TrainStep, PerfectReconstructionLeavesKlDominant) {
  // Identical fake and real layouts: the VAE objective reduces to lambda_KL * KL.
  const auto& s = data()[1];
  const std::vector<double> mu = {0.3, -0.2}, logvar = {0.1, -0.4};
  const LossWeights w;
  EXPECT_DOUBLE_EQ(objectives::vae_objective(s.layout, s.layout, mu, logvar, w),
                   w.lambda_kl * objectives::kl_to_standard_normal(mu, logvar));
}

TEST(TrainStep, ZeroAdversarialVaeganMatchesVaeGradients) {
  TrainConfig cv = fast(Variant::vae), cg = fast(Variant::vaegan);
  cv.adversarial_weight = cg.adversarial_weight = 0;
  Trainer<double> vae(small_net(), small_emb(), cv), vaegan(small_net(), small_emb(), cg);
  ASSERT_EQ(vae.model().gen_params.fingerprint(), vaegan.model().gen_params.fingerprint());
  const auto& s = data()[2];
  Rng r1(4), r2(4);
  vae.generator_objective(s, r1, Variant::vae).total.backward();
  vaegan.generator_objective(s, r2, Variant::vaegan).total.backward();
  const auto& pa = vae.model().gen_params.params();
  const auto& pb = vaegan.model().gen_params.params();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k].tensor.grad(), pb[k].tensor.grad()) << pa[k].name;

  // and whole steps agree too, the adversarial term reporting zero
  const auto a = vae.train_step_vae(batch()), b = vaegan.train_step_vaegan(batch());
  EXPECT_EQ(b.at("adversarial"), 0.0);
  EXPECT_EQ(a.total, b.total);
  EXPECT_EQ(vae.model().gen_params.fingerprint(), vaegan.model().gen_params.fingerprint());
}

TEST(TrainStep, KlDropsBelowItsInitialValue) {
  Trainer<double> t(small_net(), small_emb(), fast(Variant::vae));
  const double kl0 = t.train_on(data()).at("vae_kl");
  double best = kl0;
  for (int s = 1; s < 500 && best >= kl0; ++s) best = std::min(best, t.train_on(data()).at("vae_kl"));
  EXPECT_LT(best, kl0);
}

TEST(TrainStep, NonFiniteLossNamesTheTerm) {
  Trainer<double> t(small_net(), small_emb(), fast());
  for (auto& p : t.model().gen_params.params())
    if (p.name.rfind("G.box", 0) == 0) p.tensor.mutable_data()[0] = std::nan("");
  try {
    t.generator_half_step(batch(), Variant::gan);
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("loss term '"), std::string::npos) << e.what();
  }
}

TEST(TrainStep, RejectsEmptyInputs) {
  Trainer<double> t(small_net(), small_emb(), fast());
  EXPECT_THROW(t.train_step_gan({}), ValidationError);
  EXPECT_THROW(t.train_on({}), ConfigurationError);
  DesignSample empty = data()[0];
  empty.foreground.elements.clear();
  empty.layout = Layout{};
  EXPECT_THROW(t.train_step_gan({&empty}), ValidationError);
}

TEST(Checkpoint, ResumeReproducesTheTrajectory) {
  const auto dir = scratch("resume");
  Trainer<double> a(small_net(), small_emb(), fast(Variant::vaegan));
  for (int s = 0; s < 3; ++s) a.train_on(data());
  const auto path = (dir / "k3.ldetr").string();
  a.save_checkpoint(path);
  std::vector<LossReport> straight;
  for (int s = 0; s < 2; ++s) straight.push_back(a.train_on(data()));
  auto b = Trainer<double>::resume(path);
  EXPECT_EQ(b->step(), 3);
  for (int s = 0; s < 2; ++s) {
    const auto r = b->train_on(data());
    EXPECT_EQ(r.terms, straight[std::size_t(s)].terms);
    EXPECT_EQ(r.total, straight[std::size_t(s)].total);
  }
  EXPECT_EQ(b->model().gen_params.fingerprint(), a.model().gen_params.fingerprint());
  EXPECT_EQ(b->loss_ema(), a.loss_ema());
}

TEST(TrainLoop, ZeroStepsWritesOnlyTheInitialCheckpoint) {
  const auto dir = scratch("zero");
  TrainConfig c = fast();
  c.max_steps = 0;
  TrainLoopOptions o{small_net(), small_emb(), {}, dir.string()};
  const auto r = train_loop(data(), c, o);
  EXPECT_EQ(fs::path(r.final_checkpoint).filename(), "checkpoint_0.ldetr");
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir)) files += e.path().extension() == ".ldetr" ? 1 : 0;
  EXPECT_EQ(files, 1);
  EXPECT_EQ(fs::file_size(r.log_path), 0u);
  EXPECT_NO_THROW(load_model<double>(r.final_checkpoint));
}

TEST(TrainLoop, LogsCheckpointsAndEvaluates) {
  const auto dir = scratch("loop");
  TrainConfig c = fast();
  c.max_steps = 4;
  c.checkpoint_every = 2;
  c.eval_every = 2;
  TrainLoopOptions o{small_net(), small_emb(), {}, dir.string()};
  std::size_t seen_test = 0;
  o.evaluator = [&](const nn::LayoutDetrModel<double>&, const std::vector<DesignSample>& test) {
    seen_test = test.size();
    return nlohmann::json{{"ok", true}};
  };
  const auto r = train_loop(data(), c, o);
  EXPECT_EQ(seen_test, 1u);  // 10% of 16, floored
  EXPECT_TRUE(fs::exists(dir / "checkpoint_2.ldetr"));
  EXPECT_TRUE(fs::exists(dir / "checkpoint_4.ldetr"));
  std::ifstream log(r.log_path);
  std::string line;
  int n = 0, evals = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<int>(), ++n);
    evals += j.contains("eval") ? 1 : 0;
  }
  EXPECT_EQ(n, 4);
  EXPECT_EQ(evals, 2);
}

TEST(TrainLoop, EmptyDatasetIsAConfigurationError) {
  TrainLoopOptions o{small_net(), small_emb(), {}, scratch("empty").string()};
  EXPECT_THROW(train_loop({}, fast(), o), ConfigurationError);
}

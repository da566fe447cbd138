#pragma once

// Alternating discriminator / generator optimization for the GAN, VAE and
// VAE-GAN variants. Samples of a batch are processed one at a time and
// their gradients averaged, which is equivalent to padded masked batches
// (the networks are pad-invariant) without the padding cost.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "layoutdetr/autodiff/params.hpp"
#include "layoutdetr/conditioning/embedding.hpp"
#include "layoutdetr/dataset/manifest.hpp"
#include "layoutdetr/dataset/synth.hpp"
#include "layoutdetr/networks/checkpoint.hpp"
#include "layoutdetr/networks/inference.hpp"
#include "layoutdetr/networks/models.hpp"
#include "layoutdetr/objectives/losses.hpp"

namespace layoutdetr {

struct TrainConfig {
  Variant variant = Variant::gan;
  double learning_rate = 1e-5;
  int batch_size = 64;
  int max_steps = 1000;
  std::uint64_t seed = 0;
  // ablation axes
  bool enable_giou = true;
  bool enable_overlap = true;
  bool enable_misalign = true;
  bool enable_gen_rec = true;
  bool enable_uncond_disc = true;
  // Direct layout L2 supervision of the generator (lambda_layout); the
  // supervised path used for overfitting checks.
  bool enable_layout_l2 = false;
  // Scale on the generator's adversarial term. 0 also skips the
  // discriminator half-step.
  double adversarial_weight = 1.0;
  bool saturating_gan = false;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double ema_decay = 0.98;
  int checkpoint_every = 500;
  int eval_every = 0;
  // Random-region masking of backgrounds; off by default.
  bool mask_augmentation = false;

  void validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate))
      throw ConfigurationError("train: learning_rate must be positive");
    if (batch_size < 1) throw ConfigurationError("train: batch_size must be positive");
    if (max_steps < 0) throw ConfigurationError("train: max_steps must be non-negative");
    if (!(adversarial_weight >= 0) || !std::isfinite(adversarial_weight))
      throw ConfigurationError("train: adversarial_weight must be non-negative");
    if (checkpoint_every < 0 || eval_every < 0) throw ConfigurationError("train: intervals must be non-negative");
    if (!(ema_decay >= 0 && ema_decay < 1)) throw ConfigurationError("train: ema_decay must be in [0,1)");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigurationError("train: betas must be in [0,1)");
  }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

NLOHMANN_JSON_SERIALIZE_ENUM(Variant, {{Variant::gan, "gan"}, {Variant::vae, "vae"}, {Variant::vaegan, "vaegan"}})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, variant, learning_rate, batch_size, max_steps, seed,
                                                enable_giou, enable_overlap, enable_misalign, enable_gen_rec,
                                                enable_uncond_disc, enable_layout_l2, adversarial_weight,
                                                saturating_gan, clip_norm, beta1, beta2, ema_decay, checkpoint_every,
                                                eval_every, mask_augmentation)

struct TrainState {
  std::int64_t step = 0;
  std::map<std::string, double> loss_ema;
  std::string rng_state;
};

inline void to_json(nlohmann::json& j, const TrainState& s) {
  j = {{"step", s.step}, {"loss_ema", s.loss_ema}, {"rng_state", s.rng_state}};
}
inline void from_json(const nlohmann::json& j, TrainState& s) {
  s.step = j.at("step").get<std::int64_t>();
  s.loss_ema = j.at("loss_ema").get<std::map<std::string, double>>();
  s.rng_state = j.at("rng_state").get<std::string>();
}

namespace training_detail {

// Temporarily removes a parameter group from the autodiff graph.
template <class T>
class Freeze {
 public:
  explicit Freeze(ad::ParamRegistry<T>& r) : r_(r) {
    for (auto& p : r_.params()) p.tensor.set_requires_grad(false);
  }
  ~Freeze() {
    for (auto& p : r_.params()) p.tensor.set_requires_grad(true);
  }
  Freeze(const Freeze&) = delete;
  Freeze& operator=(const Freeze&) = delete;

 private:
  ad::ParamRegistry<T>& r_;
};

inline void merge_mean(LossReport& acc, const LossReport& r, double scale) {
  for (const auto& [k, v] : r.terms) acc.terms[k] += v * scale;
  acc.total += r.total * scale;
}

}  // namespace training_detail

template <class T = double>
class Trainer {
 public:
  using Tensor = ad::Tensor<T>;
  using Model = nn::LayoutDetrModel<T>;

  Trainer(const NetworkConfig& nc, const EmbedderConfig& ec, const TrainConfig& tc, const LossWeights& w = {})
      : config_(tc), weights_(w) {
    tc.validate();
    w.validate();
    model_ = std::make_unique<Model>(nc, ec, mix_seed(tc.seed, 1));
    rng_ = Rng(mix_seed(tc.seed, 2));
    init_optimizers();
  }

  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  const TrainConfig& config() const { return config_; }
  const LossWeights& weights() const { return weights_; }
  std::int64_t step() const { return step_; }
  Rng& rng() { return rng_; }
  const std::map<std::string, double>& loss_ema() const { return ema_; }

  TrainState state() const { return {step_, ema_, rng_.serialize()}; }

  // ------------------------------------------------------------ objectives

  Tensor real_boxes(const DesignSample& s) const { return objectives::boxes_tensor<T>(s.layout); }

  // Generator-side objective for one sample. `variant` selects where the
  // generated layout's noise comes from: the prior (GAN) or the layout
  // posterior (VAE, VAE-GAN).
  objectives::ComposedObjective<T> generator_objective(const DesignSample& s, Rng& rng, Variant variant) const {
    const Model& m = *model_;
    const auto& ec = m.embedder_config();
    const int n = int(s.foreground.size());
    const Tensor real = real_boxes(s);
    objectives::ObjectiveTerms<T> t;
    Tensor noise;
    if (variant == Variant::gan) {
      noise = conditioning::sample_noise<T>(n, ec.noise_dim, rng);
    } else {
      const auto post = m.E(real);
      const Tensor z = nn::reparameterize(post, conditioning::sample_noise<T>(1, ec.noise_dim, rng));
      noise = ad::expand_rows(z, n);
      t.vae_kl = objectives::kl_standard_normal(post.mu, post.logvar);
    }
    const auto out = m.G.forward(m.G.encode_background(s.background), m.G.tokens(s.foreground, noise).tokens);
    if (variant != Variant::gan) t.vae_layout = objectives::layout_l2(out.boxes, real);

    if (variant != Variant::vae) {
      if (config_.adversarial_weight > 0) {
        const auto dc = m.Dc.forward(out.boxes, m.Dc.encode_background(s.background), m.Dc.tokens(s.foreground));
        Tensor adv = objectives::generator_gan_loss(dc.logit, config_.saturating_gan);
        if (config_.enable_uncond_disc)
          adv = adv + objectives::generator_gan_loss(m.Du.forward(out.boxes).logit, config_.saturating_gan);
        t.adversarial = adv * T(config_.adversarial_weight);
      } else {
        t.adversarial = Tensor::scalar(T(0));
      }
    }
    if (config_.enable_layout_l2 && variant == Variant::gan) t.layout_supervision = objectives::layout_l2(out.boxes, real);
    if (config_.enable_giou) t.giou = objectives::giou_dissimilarity(out.boxes, real);
    if (config_.enable_gen_rec) {
      const auto rec = m.R(out.features, s.foreground);
      t.rec_image = objectives::image_reconstruction(rec.patches, patch_targets(s.foreground));
      t.rec_text = objectives::text_reconstruction(rec.texts, text_targets(s.foreground), weights_);
    }
    if (config_.enable_overlap) t.overlap = objectives::overlap(out.boxes);
    if (config_.enable_misalign) t.misalign = objectives::misalignment(out.boxes);
    return objectives::compose_objective(variant, t, weights_);
  }

  // Discriminator-side loss for one sample: GAN classification plus the
  // auxiliary reconstructions of the real sample from discriminator features.
  std::pair<Tensor, LossReport> discriminator_objective(const DesignSample& s, Rng& rng, Variant variant) const {
    const Model& m = *model_;
    const auto& ec = m.embedder_config();
    const int n = int(s.foreground.size());
    const Tensor real = real_boxes(s);
    Tensor fake;
    {
      ad::NoGradGuard guard;
      Tensor noise;
      if (variant == Variant::gan) {
        noise = conditioning::sample_noise<T>(n, ec.noise_dim, rng);
      } else {
        const auto post = m.E(real);
        noise = ad::expand_rows(nn::reparameterize(post, conditioning::sample_noise<T>(1, ec.noise_dim, rng)), n);
      }
      fake = m.G.forward(m.G.encode_background(s.background), m.G.tokens(s.foreground, noise).tokens).boxes.detach();
    }
    LossReport rep;
    std::vector<Tensor> parts;
    auto add = [&](const char* name, const Tensor& v) {
      parts.push_back(ad::reshape(v, 1, 1));
      rep.terms[name] = double(v.item());
    };
    const Tensor bg = m.Dc.encode_background(s.background);
    const Tensor fg = m.Dc.tokens(s.foreground);
    const auto dc_real = m.Dc.forward(real, bg, fg);
    const auto dc_fake = m.Dc.forward(fake, bg, fg);
    add("disc_cond", objectives::discriminator_gan_loss(dc_real.logit, dc_fake.logit));
    const auto aux = m.Fc(dc_real.features, s.foreground);
    add("disc_rec_layout", objectives::layout_l2(aux.boxes, real) * T(weights_.lambda_layout));
    std::vector<Tensor> img_rec{aux.background}, img_real{nn::background_target<T>(s.background,
                                                                                     m.network_config().recon_resolution)};
    const auto pt = patch_targets(s.foreground);
    img_rec.insert(img_rec.end(), aux.foreground.patches.begin(), aux.foreground.patches.end());
    img_real.insert(img_real.end(), pt.begin(), pt.end());
    add("disc_rec_image", objectives::image_reconstruction(img_rec, img_real) * T(weights_.lambda_im));
    add("disc_rec_text", objectives::text_reconstruction(aux.foreground.texts, text_targets(s.foreground), weights_));
    if (config_.enable_uncond_disc) {
      const auto du_real = m.Du.forward(real);
      const auto du_fake = m.Du.forward(fake);
      add("disc_uncond", objectives::discriminator_gan_loss(du_real.logit, du_fake.logit));
      add("disc_rec_layout_u", objectives::layout_l2(m.Fu(du_real.features), real) * T(weights_.lambda_layout));
    }
    Tensor total = ad::sum(ad::concat_rows(parts));
    rep.total = double(total.item());
    return {total, rep};
  }

  // ------------------------------------------------------------ steps

  LossReport train_step(const std::vector<const DesignSample*>& batch) {
    switch (config_.variant) {
      case Variant::gan: return train_step_gan(batch);
      case Variant::vae: return train_step_vae(batch);
      case Variant::vaegan: return train_step_vaegan(batch);
    }
    return {};
  }

  LossReport train_step_gan(const std::vector<const DesignSample*>& batch) { return run_step(batch, Variant::gan); }
  LossReport train_step_vae(const std::vector<const DesignSample*>& batch) { return run_step(batch, Variant::vae); }
  LossReport train_step_vaegan(const std::vector<const DesignSample*>& batch) {
    return run_step(batch, Variant::vaegan);
  }

  // Batch of indices into `data` for the next step.
  std::vector<std::size_t> sample_batch(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const std::size_t b = std::min<std::size_t>(n, std::size_t(config_.batch_size));
    for (std::size_t i = 0; i < b; ++i) std::swap(idx[i], idx[i + std::size_t(rng_.next_u64() % (n - i))]);
    idx.resize(b);
    return idx;
  }

  LossReport train_on(const std::vector<DesignSample>& data) {
    if (data.empty()) throw ConfigurationError("train: empty dataset");
    std::vector<const DesignSample*> batch;
    std::vector<DesignSample> masked;
    const auto idx = sample_batch(data.size());
    if (config_.mask_augmentation) {
      for (auto i : idx) {
        masked.push_back(data[i]);
        masked.back().background = mask_random_regions(data[i].background, data[i].layout, rng_.next_u64());
      }
      for (const auto& s : masked) batch.push_back(&s);
    } else {
      for (auto i : idx) batch.push_back(&data[i]);
    }
    return train_step(batch);
  }

  // ------------------------------------------------------------ checkpoints

  Archive archive() const {
    Archive a = model_archive(*model_, weights_);
    a.header["train_config"] = config_;
    a.header["train_state"] = state();
    a.header["adam"] = {{"gen_t", gen_opt_.steps_taken()}, {"disc_t", disc_opt_.steps_taken()}};
    append_moments(a, "adam_gen", model_->gen_params, gen_opt_);
    append_moments(a, "adam_disc", model_->disc_params, disc_opt_);
    return a;
  }

  void save_checkpoint(const std::string& path) const {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    write_archive(path, archive());
  }

  static std::unique_ptr<Trainer> from_archive(const Archive& a) {
    const auto nc = a.header.at("network").get<NetworkConfig>();
    const auto ec = a.header.at("embedder").get<EmbedderConfig>();
    const auto tc = a.header.at("train_config").get<TrainConfig>();
    const auto w = a.header.at("loss_weights").get<LossWeights>();
    auto t = std::make_unique<Trainer>(nc, ec, tc, w);
    restore_params(a, t->model_->gen_params, "gen");
    restore_params(a, t->model_->disc_params, "disc");
    const auto st = a.header.at("train_state").get<TrainState>();
    t->step_ = st.step;
    t->ema_ = st.loss_ema;
    t->rng_.deserialize(st.rng_state);
    t->gen_opt_.restore(a.header.at("adam").at("gen_t").get<std::int64_t>(),
                        read_moments(a, "adam_gen/m", t->model_->gen_params),
                        read_moments(a, "adam_gen/v", t->model_->gen_params));
    t->disc_opt_.restore(a.header.at("adam").at("disc_t").get<std::int64_t>(),
                         read_moments(a, "adam_disc/m", t->model_->disc_params),
                         read_moments(a, "adam_disc/v", t->model_->disc_params));
    return t;
  }

  static std::unique_ptr<Trainer> resume(const std::string& path) { return from_archive(read_archive(path)); }

 private:
  void init_optimizers() {
    ad::AdamConfig ac{config_.learning_rate, config_.beta1, config_.beta2, 1e-8, config_.clip_norm};
    gen_opt_ = ad::Adam<T>(&model_->gen_params, ac);
    disc_opt_ = ad::Adam<T>(&model_->disc_params, ac);
  }

  std::vector<Tensor> patch_targets(const ForegroundSet& fg) const {
    std::vector<Tensor> out;
    for (const auto& e : fg.elements)
      if (const auto* im = std::get_if<ImageElement>(&e)) out.push_back(nn::patch_target<T>(im->patch));
    return out;
  }

  std::vector<objectives::TextTarget> text_targets(const ForegroundSet& fg) const {
    std::vector<objectives::TextTarget> out;
    for (const auto& e : fg.elements)
      if (const auto* t = std::get_if<TextElement>(&e))
        out.push_back(nn::text_target(*t, model_->network_config().max_chars));
    return out;
  }

  void check_finite(const LossReport& r, const char* phase) const {
    for (const auto& [k, v] : r.terms)
      if (!std::isfinite(v))
        throw NumericError(std::string(phase) + " loss term '" + k + "' is non-finite at step " +
                           std::to_string(step_));
    if (!std::isfinite(r.total))
      throw NumericError(std::string(phase) + " total loss is non-finite at step " + std::to_string(step_));
  }

  void check_batch(const std::vector<const DesignSample*>& batch) const {
    if (batch.empty()) throw ValidationError("train step: empty batch");
    for (const auto* s : batch) {
      if (s->foreground.size() == 0) throw ValidationError("train step: sample " + s->id + " has no elements");
      if (int(s->foreground.size()) > model_->network_config().max_elements)
        throw ValidationError("train step: sample " + s->id + " exceeds max_elements");
    }
  }

 public:
  // Discriminator-side update; generator parameters are frozen.
  LossReport discriminator_half_step(const std::vector<const DesignSample*>& batch, Variant variant) {
    check_batch(batch);
    const double inv = 1.0 / double(batch.size());
    training_detail::Freeze<T> freeze(model_->gen_params);
    model_->disc_params.zero_grad();
    LossReport d;
    for (const auto* s : batch) {
      auto [loss, rep] = discriminator_objective(*s, rng_, variant);
      check_finite(rep, "discriminator");
      (loss * T(inv)).backward();
      training_detail::merge_mean(d, rep, inv);
    }
    disc_opt_.step();
    return d;
  }

  // Generator-side update; discriminator parameters are frozen.
  LossReport generator_half_step(const std::vector<const DesignSample*>& batch, Variant variant) {
    check_batch(batch);
    const double inv = 1.0 / double(batch.size());
    training_detail::Freeze<T> freeze(model_->disc_params);
    model_->gen_params.zero_grad();
    LossReport g;
    for (const auto* s : batch) {
      auto obj = generator_objective(*s, rng_, variant);
      check_finite(obj.report, "generator");
      (obj.total * T(inv)).backward();
      training_detail::merge_mean(g, obj.report, inv);
    }
    gen_opt_.step();
    return g;
  }

 private:
  LossReport run_step(const std::vector<const DesignSample*>& batch, Variant variant) {
    check_batch(batch);
    LossReport report;
    if (variant != Variant::vae && config_.adversarial_weight > 0) {
      const LossReport d = discriminator_half_step(batch, variant);
      report.terms = d.terms;
      report.terms["disc_total"] = d.total;
    }
    const LossReport g = generator_half_step(batch, variant);
    for (const auto& [k, v] : g.terms) report.terms[k] = v;
    report.total = g.total;
    for (const auto& [k, v] : report.terms) update_ema(k, v);
    update_ema("total", report.total);
    ++step_;
    return report;
  }

  void update_ema(const std::string& k, double v) {
    auto it = ema_.find(k);
    if (it == ema_.end())
      ema_[k] = v;
    else
      it->second = config_.ema_decay * it->second + (1 - config_.ema_decay) * v;
  }

  static void append_moments(Archive& a, const std::string& prefix, const ad::ParamRegistry<T>& reg,
                             const ad::Adam<T>& opt) {
    const auto& ps = reg.params();
    for (std::size_t k = 0; k < ps.size(); ++k) {
      a.blobs.push_back({prefix + "/m/" + ps[k].name, ps[k].tensor.rows(), ps[k].tensor.cols(), opt.first_moments()[k]});
      a.blobs.push_back({prefix + "/v/" + ps[k].name, ps[k].tensor.rows(), ps[k].tensor.cols(), opt.second_moments()[k]});
    }
  }

  static std::vector<std::vector<double>> read_moments(const Archive& a, const std::string& prefix,
                                                       const ad::ParamRegistry<T>& reg) {
    std::vector<std::vector<double>> out;
    for (const auto& p : reg.params()) {
      const Blob& b = a.blob(prefix + "/" + p.name);
      if (b.data.size() != p.tensor.size()) throw IoError("checkpoint: optimizer moment size mismatch for " + p.name);
      out.push_back(b.data);
    }
    return out;
  }

  TrainConfig config_;
  LossWeights weights_;
  std::unique_ptr<Model> model_;
  ad::Adam<T> gen_opt_, disc_opt_;
  Rng rng_;
  std::int64_t step_ = 0;
  std::map<std::string, double> ema_;
};

// ---------------------------------------------------------------- loop

struct TrainLoopOptions {
  NetworkConfig network;
  EmbedderConfig embedder;
  LossWeights weights;
  std::string out_dir = "run";
  // Resume from this checkpoint instead of initializing.
  std::string resume_from;
  // Hold out 10% for evaluation (needs >= 10 samples); otherwise all data trains.
  bool holdout = true;
  // Called every eval_every steps with the held-out samples; result goes to the log.
  std::function<nlohmann::json(const nn::LayoutDetrModel<double>&, const std::vector<DesignSample>&)> evaluator;
  std::function<void(std::int64_t, const LossReport&)> on_step;
};

struct TrainLoopResult {
  std::string final_checkpoint;
  std::string log_path;
  TrainState state;
  std::vector<LossReport> history;
};

inline TrainLoopResult train_loop(const std::vector<DesignSample>& dataset, const TrainConfig& config,
                                  const TrainLoopOptions& opts) {
  if (dataset.empty()) throw ConfigurationError("train: empty dataset");
  config.validate();
  std::vector<DesignSample> train, test;
  if (opts.holdout) {
    const auto [tr, te] = split_indices(dataset.size(), config.seed);
    for (auto i : tr) train.push_back(dataset[i]);
    for (auto i : te) test.push_back(dataset[i]);
  } else {
    train = dataset;
  }
  std::unique_ptr<Trainer<double>> trainer;
  if (!opts.resume_from.empty()) {
    trainer = Trainer<double>::resume(opts.resume_from);
  } else {
    trainer = std::make_unique<Trainer<double>>(opts.network, opts.embedder, config, opts.weights);
  }
  std::filesystem::create_directories(opts.out_dir);
  TrainLoopResult result;
  result.log_path = (std::filesystem::path(opts.out_dir) / "metrics.ndjson").string();
  std::ofstream log(result.log_path, opts.resume_from.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot open metrics log " + result.log_path);
  auto checkpoint = [&](std::int64_t step) {
    const auto p = (std::filesystem::path(opts.out_dir) / ("checkpoint_" + std::to_string(step) + ".ldetr")).string();
    trainer->save_checkpoint(p);
    return p;
  };
  if (trainer->step() == 0) result.final_checkpoint = checkpoint(0);
  while (trainer->step() < config.max_steps) {
    const LossReport r = trainer->train_on(train);
    const auto step = trainer->step();
    result.history.push_back(r);
    nlohmann::json rec = {{"step", step}, {"terms", r.terms}, {"total", r.total}};
    if (config.eval_every > 0 && step % config.eval_every == 0 && opts.evaluator && !test.empty())
      rec["eval"] = opts.evaluator(trainer->model(), test);
    log << rec.dump() << '\n';
    log.flush();
    if (opts.on_step) opts.on_step(step, r);
    if ((config.checkpoint_every > 0 && step % config.checkpoint_every == 0) || step == config.max_steps)
      result.final_checkpoint = checkpoint(step);
  }
  if (result.final_checkpoint.empty()) result.final_checkpoint = checkpoint(trainer->step());
  result.state = trainer->state();
  return result;
}

}  // namespace layoutdetr

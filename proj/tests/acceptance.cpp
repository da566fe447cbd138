// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Training-based checks use the desk preset networks.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <map>
#include <set>
#include <thread>

#include "layoutdetr/dataset/synth.hpp"
#include "layoutdetr/metrics/metrics.hpp"
#include "layoutdetr/objectives/losses.hpp"
#include "layoutdetr/renderer/render.hpp"
#include "layoutdetr/service/run_config.hpp"
#include "layoutdetr/training/evaluation.hpp"
#include "layoutdetr/training/trainer.hpp"
#include "layoutdetr/service/design_service.hpp"
#include "test_support.hpp"

using namespace layoutdetr;
using namespace layoutdetr::objectives;
using D = ad::Tensor<double>;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int n, const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("criterion %2d %-26s %s  (%s; %.1fs)\n", n, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str(),
              seconds_since(t0));
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Layout L(std::vector<NormalizedBox> b) { return Layout::from_boxes(std::move(b)); }

std::vector<NormalizedBox> random_boxes(Rng& rng, int n) {
  std::vector<NormalizedBox> v;
  for (int i = 0; i < n; ++i) v.push_back(oracle::random_inner_box(rng, 0.05, 0.5));
  return v;
}

// ---------------------------------------------------------------- 1

Outcome geometry_oracle() {
  Rng rng(1);
  double worst = 0;
  int overlapping = 0;
  const auto t0 = Clock::now();
  for (int i = 0; i < 1000; ++i) {
    const auto a = oracle::random_inner_box(rng), b = oracle::random_inner_box(rng);
    const auto r = oracle::rasterize_pair(a, b, 512);
    worst = std::max({worst, std::abs(box_iou(a, b) - oracle::raster_iou(r)),
                      std::abs(box_giou(a, b) - oracle::raster_giou(r))});
    overlapping += r.inter > 0;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-2 && secs < 60,
          fmt("1000 pairs (%d overlapping), max |err| %.2e, %.1fs", overlapping, worst, secs)};
}

// ---------------------------------------------------------------- 2

Outcome gradient_suite() {
  Rng rng(2024);
  constexpr int kPoints = 100;
  std::map<std::string, double> worst;
  auto note = [&](const std::string& k, double e) { worst[k] = std::max(worst[k], e); };
  for (int done = 0; done < kPoints; ++done) {
    const int n = rng.uniform_int(1, 5);
    const auto real = random_boxes(rng, n), fake = random_boxes(rng, n);
    const D r = boxes_tensor<double>(L(real));
    note("layout_l2",
         oracle::check_gradient([&](const D& x) { return layout_l2(x, r); }, n, 4, oracle::flatten(fake)).max_rel_error);
  }
  for (int done = 0; done < kPoints;) {
    const int n = rng.uniform_int(1, 4);
    const auto real = random_boxes(rng, n), fake = random_boxes(rng, n);
    bool ok = true;
    for (int i = 0; i < n; ++i) ok = ok && oracle::away_from_ties({real[i], fake[i]});
    if (!ok) continue;
    const D r = boxes_tensor<double>(L(real));
    note("giou", oracle::check_gradient([&](const D& x) { return giou_dissimilarity(x, r); }, n, 4,
                                        oracle::flatten(fake))
                     .max_rel_error);
    ++done;
  }
  for (int done = 0; done < kPoints;) {
    const auto boxes = random_boxes(rng, rng.uniform_int(2, 5));
    if (!oracle::away_from_ties(boxes)) continue;
    const int n = int(boxes.size());
    note("overlap",
         oracle::check_gradient([](const D& x) { return overlap(x); }, n, 4, oracle::flatten(boxes)).max_rel_error);
    ++done;
  }
  for (int done = 0; done < kPoints;) {
    const auto boxes = random_boxes(rng, rng.uniform_int(2, 5));
    if (!oracle::away_from_ties(boxes) || !oracle::misalignment_min_is_unique(boxes)) continue;
    const int n = int(boxes.size());
    note("misalign",
         oracle::check_gradient([](const D& x) { return misalignment(x); }, n, 4, oracle::flatten(boxes)).max_rel_error);
    ++done;
  }
  for (int t = 0; t < kPoints; ++t) {
    const int d = rng.uniform_int(1, 8);
    std::vector<double> mu(d), lv(d);
    for (auto& v : mu) v = rng.normal();
    for (auto& v : lv) v = rng.uniform(-2, 2);
    const D lvt = D::constant(1, d, lv), mut = D::constant(1, d, mu);
    note("kl", oracle::check_gradient([&](const D& x) { return kl_standard_normal(x, lvt); }, 1, d, mu).max_rel_error);
    note("kl", oracle::check_gradient([&](const D& x) { return kl_standard_normal(mut, x); }, 1, d, lv).max_rel_error);
  }
  for (int t = 0; t < kPoints; ++t) {
    const std::vector<double> logits{rng.uniform(-4, 4), rng.uniform(-4, 4)};
    auto disc = [](const D& x) { return discriminator_gan_loss(ad::slice_cols(x, 0, 1), ad::slice_cols(x, 1, 1)); };
    note("gan", oracle::check_gradient(disc, 1, 2, logits).max_rel_error);
    note("gan", oracle::check_gradient([](const D& x) { return generator_gan_loss(x); }, 1, 2, logits).max_rel_error);
    note("gan",
         oracle::check_gradient([](const D& x) { return generator_gan_loss(x, true); }, 1, 2, logits).max_rel_error);
  }
  bool pass = true;
  std::string detail = "max rel err:";
  for (const auto& [k, v] : worst) {
    pass = pass && v <= 1e-3;
    detail += fmt(" %s %.1e", k.c_str(), v);
  }
  return {pass, detail + fmt(", %d points each", kPoints)};
}

// ---------------------------------------------------------------- 3

Outcome closed_forms() {
  const double kl = kl_to_standard_normal(std::vector<double>{1.0}, std::vector<double>{0.0});
  const int n = 10000, d = 4;
  const double gap = 1.5;
  Rng rng(3);
  metrics::FeatureMatrix a(n, d), b(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      a(i, j) = rng.normal();
      b(i, j) = rng.normal() + (j == 0 ? gap : 0.0);
    }
  const double fd = metrics::frechet_distance(a, b);
  const double rel = std::abs(fd - gap * gap) / (gap * gap);
  return {std::abs(kl - 0.5) <= 1e-9 && rel <= 0.05,
          fmt("KL %.12f; FD %.4f vs d^2 %.4f (rel %.3f)", kl, fd, gap * gap, rel)};
}

// ---------------------------------------------------------------- 4

RunConfig desk() { return preset("desk"); }

Outcome overfit() {
  const RunConfig c = desk();
  TrainConfig tc = c.train;
  tc.batch_size = 32;
  tc.adversarial_weight = 0;
  tc.enable_layout_l2 = true;
  tc.enable_giou = true;
  tc.enable_overlap = tc.enable_misalign = tc.enable_gen_rec = tc.enable_uncond_disc = false;
  tc.seed = 1;
  const auto ds = synth_dataset_generate(32, 7);
  Trainer<double> tr(c.network, c.embedder, tc);
  const auto t0 = Clock::now();
  double l2 = 1, iou = 0;
  int steps = 0;
  auto measure = [&] {
    const auto fake = generate_for_samples(tr.model(), ds.samples, 5);
    double s = 0, si = 0;
    int boxes = 0;
    for (std::size_t k = 0; k < fake.size(); ++k) {
      si += metrics::mean_layout_iou(fake[k], ds.samples[k].layout);
      for (std::size_t i = 0; i < fake[k].size(); ++i) {
        const auto p = fake[k].boxes[i].params(), q = ds.samples[k].layout.boxes[i].params();
        double d2 = 0;
        for (int j = 0; j < 4; ++j) d2 += (p[j] - q[j]) * (p[j] - q[j]);
        s += std::sqrt(d2);
        ++boxes;
      }
    }
    l2 = s / boxes;
    iou = si / double(fake.size());
  };
  while (steps < 2000) {
    tr.train_on(ds.samples);
    ++steps;
    if (steps % 250 == 0) {
      measure();
      if (l2 < 0.02 && iou >= 0.6) break;
    }
  }
  const double secs = seconds_since(t0);
  return {l2 < 0.02 && iou >= 0.6 && secs < 600,
          fmt("per-box L2 %.4f, mean IoU %.3f after %d steps, %.0fs", l2, iou, steps, secs)};
}

// ---------------------------------------------------------------- 5

Outcome ablation() {
  const RunConfig c = desk();
  const auto ds = synth_dataset_generate(200, 77);
  const auto [tr_i, te_i] = split_indices(200, 77);
  std::vector<DesignSample> train, test;
  for (auto i : tr_i) train.push_back(ds.samples[i]);
  for (auto i : te_i) test.push_back(ds.samples[i]);
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    double ov[2], mis[2];
    for (int on = 0; on < 2; ++on) {
      TrainConfig tc = c.train;
      tc.batch_size = 16;
      tc.adversarial_weight = 0;
      tc.enable_layout_l2 = false;
      tc.enable_giou = true;
      tc.enable_gen_rec = tc.enable_uncond_disc = false;
      tc.enable_overlap = tc.enable_misalign = on == 1;
      tc.seed = seed;
      Trainer<double> trainer(c.network, c.embedder, tc);
      for (int s = 0; s < 300; ++s) trainer.train_on(train);
      const auto fake = generate_for_samples(trainer.model(), test, 5);
      ov[on] = metrics::overlap_metric(fake);
      mis[on] = metrics::misalignment_metric(fake);
    }
    const bool win = ov[1] < ov[0] && mis[1] < mis[0];
    wins += win;
    detail += fmt("%sseed %d %s", seed ? ", " : "", int(seed), win ? "ok" : "no");
  }
  return {wins >= 4, fmt("%d/5 seeds lower with toggles on (", wins) + detail + ")"};
}

// ---------------------------------------------------------------- 6

Outcome configuration() {
  const LossWeights w;
  const bool weights = w.lambda_layout == 500 && w.lambda_im == 0.5 && w.lambda_str == 0.1 && w.lambda_cls == 50 &&
                       w.lambda_len == 2 && w.lambda_kl == 1 && w.lambda_giou == 4 && w.lambda_overlap == 7 &&
                       w.lambda_misalign == 17;
  std::set<int> levels;
  for (long long len = 0; len <= 5000; ++len) levels.insert(quantize_text_length(len));
  const bool quant = kLengthLevels == 256 && levels.size() == 256 && *levels.begin() == 0 && *levels.rbegin() == 255 &&
                     quantize_text_length(255) == 255 && quantize_text_length(256) == 255 &&
                     quantize_text_length(1000000) == 255;
  bool split = true;
  for (std::size_t n : {10, 100, 1000, 7190}) {
    const auto [tr, te] = split_indices(n, 42);
    split = split && te.size() * 10 == n && tr.size() * 10 == 9 * n;
  }
  return {weights && quant && split, fmt("weights %s, %zu length levels (clamp at 255), split 90/10 %s",
                                         weights ? "match" : "DIFFER", levels.size(), split ? "exact" : "WRONG")};
}

// ---------------------------------------------------------------- 7

Outcome renderer_suite() {
  Rng rng(11);
  int fit_checked = 0, fit_bad = 0;
  while (fit_checked < 200) {
    const std::string text = oracle::random_text(rng);
    const int h = 10 + int(rng.uniform() * 110), w = 20 + int(rng.uniform() * 230);
    try {
      const auto fit = render::fit_text_to_box(text, h, w);
      if (!oracle::text_fits(text, fit.font_size, h, w) || oracle::text_fits(text, fit.font_size + 1, h, w)) ++fit_bad;
      ++fit_checked;
    } catch (const OverflowError&) {
    }
  }
  int contrast_bad = 0;
  for (int i = 0; i < 100; ++i) {
    const auto r = std::uint8_t(rng.uniform() * 256), g = std::uint8_t(rng.uniform() * 256),
               b = std::uint8_t(rng.uniform() * 256);
    Image img(8, 8);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) img.set(y, x, r, g, b);
    const double lum = (0.2126 * r + 0.7152 * g + 0.0722 * b) / 255.0;
    contrast_bad += render::pick_contrast_color(img) != (lum >= 0.5 ? render::Color::black : render::Color::white);
  }
  int jitter_bad = 0, moved = 0;
  for (int i = 0; i < 100; ++i) {
    const Layout in = oracle::random_regular_layout(rng);
    const Layout out = render::jitter_layout(in, 0.2, std::uint64_t(i));
    const bool same_groups = render::alignment_structure(out) == render::alignment_structure(in);
    const bool no_more_overlap = overlap_loss(out) <= overlap_loss(in) + 1e-9;
    jitter_bad += !(same_groups && no_more_overlap);
    moved += out.boxes != in.boxes;
  }
  return {fit_bad == 0 && contrast_bad == 0 && jitter_bad == 0,
          fmt("font-fit %d/200 maximal, contrast %d/100, jitter %d/100 regular layouts (%d moved)", 200 - fit_bad,
              100 - contrast_bad, 100 - jitter_bad, moved)};
}

// ---------------------------------------------------------------- 8

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const RunConfig c = desk();
  TrainConfig tc = c.train;  // full GAN objective, every toggle on
  tc.batch_size = 8;
  tc.seed = 8;
  const auto ds = synth_dataset_generate(40, 8);
  auto run = [&](std::vector<double>& losses) {
    Trainer<double> tr(c.network, c.embedder, tc);
    for (int s = 0; s < 100; ++s) losses.push_back(tr.train_on(ds.samples).total);
  };
  std::vector<double> a, b;
  run(a);
  run(b);
  const bool losses_equal = a.size() == 100 && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;

  // generate CLI twice with the same seed
  const fs::path work = fs::temp_directory_path() / "ldetr_acceptance_determinism";
  fs::remove_all(work);
  fs::create_directories(work);
  Trainer<double> tr(c.network, c.embedder, tc);
  for (int s = 0; s < 5; ++s) tr.train_on(ds.samples);
  tr.save_checkpoint((work / "model.ldetr").string());
  io::write_png((work / "bg.png").string(), ds.samples[3].background);
  auto gen = [&](const std::string& out) {
    const std::string cmd = std::string(LAYOUTDETR_CLI) + " generate --checkpoint " + (work / "model.ldetr").string() +
                            " --background " + (work / "bg.png").string() +
                            " --text 'header=Autumn Collection' --text 'body=Warm layers for cold days'"
                            " --text 'button=Discover' --seed 21 --out " +
                            (work / out).string() + " > /dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  };
  const int g1 = gen("a"), g2 = gen("b");
  int files = 0, differing = 0;
  if (g1 == 0 && g2 == 0)
    for (const auto& e : fs::directory_iterator(work / "a")) {
      ++files;
      differing += slurp(e.path()) != slurp(work / "b" / e.path().filename());
    }
  const bool files_equal = g1 == 0 && g2 == 0 && files > 0 && differing == 0;
  return {losses_equal && files_equal,
          fmt("first 100 losses %s; generate: %d files, %d differ (exit %d/%d)",
              losses_equal ? "bit-identical" : "DIFFER", files, differing, g1, g2)};
}

// ---------------------------------------------------------------- 9

Outcome metric_convention() {
  const std::string shown = metrics::format_misalignment(0.00646);
  Layout a = L({{0.2, 0.5, 0.1, 0.4}, {0.5, 0.5, 0.1, 0.2}});
  const auto record = metrics::to_record(metrics::evaluate({a}, {a}));
  return {shown == "0.646" && record.contains("misalign_x1e-2"), "0.00646 prints as " + shown};
}

// ---------------------------------------------------------------- 10

Outcome latency() {
  RunConfig c;  // default NetworkConfig / EmbedderConfig
  const fs::path store = fs::temp_directory_path() / "ldetr_acceptance_latency";
  fs::remove_all(store);
  c.service.store_dir = store.string();
  auto model = std::make_shared<nn::LayoutDetrModel<double>>(c.network, c.embedder, 10);
  service::DesignService svc(model, c);
  const auto s = synth_sample(10, 2);
  const auto id = svc.create_session().body.at("id").get<std::string>();
  svc.put_background(id, io::encode_png(s.background));
  nlohmann::json fg = {{"elements", nlohmann::json::array()}};
  for (const auto& e : s.foreground.elements)
    if (const auto* t = std::get_if<TextElement>(&e))
      fg["elements"].push_back({{"type", "text"}, {"class", to_string(t->cls)}, {"text", t->text}});
    else
      fg["elements"].push_back(
          {{"type", "image"},
           {"image", svc.post_image(io::encode_png(std::get<ImageElement>(e).patch)).body.at("image")}});
  svc.put_foreground(id, fg);
  const auto t0 = Clock::now();
  const auto r = svc.post_candidates(id, std::nullopt);
  const double per_layout = seconds_since(t0) / 6.0;
  // A single cold candidate, background encoding included.
  double single = 0;
  for (int k = 0; k < 3; ++k) {
    const auto t1 = Clock::now();
    generate_layout(*model, s.background, s.foreground, std::uint64_t(k));
    single = std::max(single, seconds_since(t1));
  }
  return {r.status == 200 && per_layout < 1.0 && single < 1.0,
          fmt("%zu elements, model_dim %d: %.3fs per candidate via service (generate+render), %.3fs single call",
              s.foreground.size(), c.network.model_dim, per_layout, single)};
}

}  // namespace

int main() {
  std::printf("layoutdetr acceptance (hardware threads: %u)\n", std::thread::hardware_concurrency());
  report(1, "geometry oracle", geometry_oracle);
  report(2, "gradient suite", gradient_suite);
  report(3, "closed-form checks", closed_forms);
  report(4, "overfit oracle", overfit);
  report(5, "ablation direction", ablation);
  report(6, "configuration fidelity", configuration);
  report(7, "renderer suite", renderer_suite);
  report(8, "determinism", determinism);
  report(9, "metric x1e-2 convention", metric_convention);
  report(10, "service latency", latency);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

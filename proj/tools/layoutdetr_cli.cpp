// layoutdetr: train | eval | generate | serve | synth-data
//
// Exit codes: 0 success, 1 runtime error, 2 configuration error.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "layoutdetr/dataset/manifest.hpp"
#include "layoutdetr/dataset/synth.hpp"
#include "layoutdetr/networks/checkpoint.hpp"
#include "layoutdetr/networks/inference.hpp"
#include "layoutdetr/renderer/render.hpp"
#include "layoutdetr/service/run_config.hpp"
#include "layoutdetr/training/evaluation.hpp"
#include "layoutdetr/training/trainer.hpp"
// last: see the note in http.hpp
#include "layoutdetr/service/http.hpp"

using namespace layoutdetr;
namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
  std::string config_path;
  std::string preset = "paper";
};

RunConfig base_config(const ConfigArgs& a) {
  return a.config_path.empty() ? preset(a.preset) : load_run_config(a.config_path);
}

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.config_path, "Run configuration file (JSON)");
  cmd->add_option("--preset", a.preset, "Built-in configuration when --config is absent: paper|desk");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::vector<DesignSample> dataset_samples(const std::string& data, int synth_count, std::uint64_t synth_seed) {
  if (!data.empty() && synth_count > 0) throw ConfigurationError("use either --data or --synth, not both");
  if (!data.empty()) return load_samples(load_dataset(data));
  if (synth_count > 0) return synth_dataset_generate(synth_count, synth_seed).samples;
  throw ConfigurationError("no training data: pass --data <manifest> or --synth <count>");
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  ConfigArgs cfg;
  std::string data, out = "run", resume, variant;
  int synth = 0;
  std::uint64_t synth_seed = 7;
  std::optional<int> steps, batch_size, ablation_row, checkpoint_every, eval_every;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> toggle_on, toggle_off;
  bool print_config = false;
  int log_every = 10;
};

RunConfig effective_train_config(const TrainArgs& a) {
  RunConfig c = base_config(a.cfg);
  if (!a.variant.empty()) c.train.variant = nlohmann::json(a.variant).get<Variant>();
  if (!a.variant.empty() && nlohmann::json(c.train.variant).get<std::string>() != a.variant)
    throw ConfigurationError("unknown variant '" + a.variant + "' (gan|vae|vaegan)");
  if (a.ablation_row) apply_ablation_row(c.train, *a.ablation_row);
  for (const auto& t : a.toggle_on) toggle_ref(c.train, t) = true;
  for (const auto& t : a.toggle_off) toggle_ref(c.train, t) = false;
  if (a.steps) c.train.max_steps = *a.steps;
  if (a.batch_size) c.train.batch_size = *a.batch_size;
  if (a.lr) c.train.learning_rate = *a.lr;
  if (a.seed) c.train.seed = *a.seed;
  if (a.checkpoint_every) c.train.checkpoint_every = *a.checkpoint_every;
  if (a.eval_every) c.train.eval_every = *a.eval_every;
  c.validate();
  return c;
}

int run_train(const TrainArgs& a) {
  const RunConfig c = effective_train_config(a);
  if (a.print_config) {
    std::cout << run_config_text(c);
    return 0;
  }
  const auto samples = dataset_samples(a.data, a.synth, a.synth_seed);
  write_text(fs::path(a.out) / "run_config.json", run_config_text(c));
  TrainLoopOptions opts;
  opts.network = c.network;
  opts.embedder = c.embedder;
  opts.weights = c.weights;
  opts.out_dir = a.out;
  opts.resume_from = a.resume;
  opts.holdout = samples.size() >= 10;
  opts.evaluator = [seed = c.train.seed](const nn::LayoutDetrModel<double>& m, const std::vector<DesignSample>& test) {
    return nlohmann::json(metrics::to_record(evaluate_model(m, test, seed)));
  };
  const int every = std::max(1, a.log_every);
  opts.on_step = [&](std::int64_t step, const LossReport& r) {
    if (step % every == 0 || step == c.train.max_steps)
      std::cerr << "step " << step << "  loss " << r.total << "\n";
  };
  const auto result = train_loop(samples, c.train, opts);
  std::cout << result.final_checkpoint << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint, data, split = "test", json_out, log;
  std::optional<std::uint64_t> split_seed;
  std::uint64_t seed = 0;
  int synth = 0;
  std::uint64_t synth_seed = 7;
  bool json = false;
};

int run_eval(const EvalArgs& a) {
  if (a.split != "test" && a.split != "train" && a.split != "all")
    throw ConfigurationError("--split must be test|train|all");
  const auto model = load_model<double>(a.checkpoint);
  std::vector<DesignSample> samples;
  std::uint64_t split_seed = a.split_seed.value_or(0);
  if (!a.data.empty()) {
    const auto m = load_dataset(a.data);
    if (!a.split_seed) split_seed = m.split_seed;
    samples = load_samples(m);
  } else {
    samples = dataset_samples("", a.synth, a.synth_seed);
    if (!a.split_seed) split_seed = a.synth_seed;
  }
  std::vector<DesignSample> chosen;
  if (a.split == "all") {
    chosen = samples;
  } else {
    const auto [tr, te] = split_indices(samples.size(), split_seed);
    for (auto i : (a.split == "test" ? te : tr)) chosen.push_back(samples[i]);
  }
  const auto report = evaluate_model(*model, chosen, a.seed);
  const auto record = metrics::to_record(report);
  if (a.json)
    std::cout << record.dump(2) << "\n";
  else
    std::cout << metrics::format_table(report) << "samples: " << report.sample_count
              << "  feature extractor: " << report.extractor << "\n";
  if (!a.json_out.empty()) write_text(a.json_out, record.dump(2) + "\n");
  if (!a.log.empty()) {
    std::ofstream log(a.log, std::ios::app);
    if (!log) throw IoError("cannot open " + a.log);
    log << record.dump() << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  ConfigArgs cfg;
  std::string checkpoint, background, foreground, out = "generated";
  std::vector<std::string> texts, images;
  int count = 6;
  std::uint64_t seed = 0;
  std::optional<double> jitter;
};

ForegroundSet foreground_from_args(const GenerateArgs& a) {
  ForegroundSet fg;
  if (!a.foreground.empty()) {
    std::ifstream in(a.foreground);
    if (!in) throw IoError("cannot open " + a.foreground);
    const auto j = nlohmann::json::parse(in);
    const auto base = fs::path(a.foreground).parent_path();
    for (const auto& e : j.at("elements")) {
      if (e.value("type", "text") == "image") {
        fs::path p = e.at("path").get<std::string>();
        if (p.is_relative()) p = base / p;
        fg.elements.push_back(ImageElement{io::read_image(p.string())});
      } else {
        const auto cls = service::parse_class_alias(e.at("class").get<std::string>());
        if (!cls) throw ValidationError("unknown text class '" + e.at("class").get<std::string>() + "'");
        fg.elements.push_back(TextElement{e.at("text").get<std::string>(), *cls});
      }
    }
  }
  for (const auto& t : a.texts) {
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigurationError("--text expects class=string, got '" + t + "'");
    const auto cls = service::parse_class_alias(t.substr(0, eq));
    if (!cls) throw ConfigurationError("unknown text class '" + t.substr(0, eq) + "'");
    fg.elements.push_back(TextElement{t.substr(eq + 1), *cls});
  }
  for (const auto& p : a.images) fg.elements.push_back(ImageElement{io::read_image(p)});
  if (fg.size() == 0) throw ConfigurationError("no foreground elements: pass --text, --image or --foreground");
  return fg;
}

int run_generate(const GenerateArgs& a) {
  RunConfig c = a.cfg.config_path.empty() ? RunConfig{} : load_run_config(a.cfg.config_path);
  if (a.jitter) c.render.jitter_fraction = *a.jitter;
  c.render.validate();
  if (a.count < 1) throw ConfigurationError("--count must be >= 1");
  const ForegroundSet fg = foreground_from_args(a);
  const auto model = load_model<double>(a.checkpoint);
  const Image bg = io::read_image(a.background);
  const std::uint64_t seed = mix_seed(a.seed, 0xCA);
  const auto layouts = generate_candidates(*model, bg, fg, a.count, seed);
  fs::create_directories(a.out);
  nlohmann::json summary = {{"seed", a.seed}, {"candidates", nlohmann::json::array()}};
  int rendered = 0;
  for (int k = 0; k < a.count; ++k) {
    const std::uint64_t jitter_seed = mix_seed(seed, 1000 + std::uint64_t(k));
    const std::string stem = "candidate_" + std::to_string(k);
    nlohmann::json entry = {{"index", k}};
    try {
      const auto r = render::render_design(bg, fg, layouts[std::size_t(k)], c.render, jitter_seed);
      const auto png = io::encode_png(r.image);
      io::write_file_bytes((fs::path(a.out) / (stem + ".png")).string(), png);
      entry = render::to_json_record(r);
      entry["index"] = k;
      entry["image"] = stem + ".png";
      ++rendered;
    } catch (const OverflowError& e) {
      const auto l = render::prepare_layout(layouts[std::size_t(k)], c.render, jitter_seed);
      entry["layout"] = service::boxes_json(l.boxes);
      entry["warning"] = std::string("render_overflow: ") + e.what();
      std::cerr << stem << ": " << e.what() << "\n";
    }
    write_text(fs::path(a.out) / (stem + ".json"), entry.dump(2) + "\n");
    summary["candidates"].push_back(entry);
  }
  write_text(fs::path(a.out) / "candidates.json", summary.dump(2) + "\n");
  std::cout << "wrote " << rendered << "/" << a.count << " rendered candidates to " << a.out << "\n";
  return rendered > 0 ? 0 : 1;
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  ConfigArgs cfg;
  std::string checkpoint, host, store;
  std::optional<int> port;
  std::optional<std::uint64_t> seed;
  bool deterministic = false, print_config = false;
};

httplib::Server* g_server = nullptr;

int run_serve(const ServeArgs& a) {
  RunConfig c = base_config(a.cfg);
  if (!a.host.empty()) c.service.host = a.host;
  if (!a.store.empty()) c.service.store_dir = a.store;
  if (a.port) c.service.port = *a.port;
  if (a.seed) c.service.seed = *a.seed;
  if (a.deterministic) c.service.deterministic = true;
  c.validate();
  if (a.print_config) {
    std::cout << run_config_text(c);
    return 0;
  }
  std::shared_ptr<const nn::LayoutDetrModel<double>> model = load_model<double>(a.checkpoint);
  service::DesignService svc(model, c);
  httplib::Server server;
  service::register_routes(server, svc);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  int port = c.service.port;
  if (port == 0) {
    port = server.bind_to_any_port(c.service.host);
    if (port < 0) throw IoError("cannot bind " + c.service.host);
  } else if (!server.bind_to_port(c.service.host, port)) {
    throw IoError("cannot bind " + c.service.host + ":" + std::to_string(port));
  }
  std::cout << "listening on http://" << c.service.host << ":" << port << "/v1" << std::endl;
  server.listen_after_bind();
  return 0;
}

// ---------------------------------------------------------------- synth-data

struct SynthArgs {
  int count = 32;
  std::uint64_t seed = 7;
  std::string out = "synth";
};

int run_synth(const SynthArgs& a) {
  if (a.count < 1) throw ConfigurationError("--count must be >= 1");
  auto ds = synth_dataset_generate(a.count, a.seed);
  std::cout << write_synthetic_dataset(a.out, ds) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LayoutDETR layout generation: training, evaluation, generation and the design service"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model from a run configuration");
  add_config_options(train, ta.cfg);
  train->add_option("--data", ta.data, "Dataset manifest");
  train->add_option("--synth", ta.synth, "Train on N synthetic samples instead of --data");
  train->add_option("--synth-seed", ta.synth_seed, "Seed for --synth");
  train->add_option("--out", ta.out, "Output directory for checkpoints and logs");
  train->add_option("--resume", ta.resume, "Checkpoint to resume from");
  train->add_option("--variant", ta.variant, "gan|vae|vaegan");
  train->add_option("--ablation-row", ta.ablation_row, "Loss ablation ladder row 1..5");
  train->add_option("--toggle-on", ta.toggle_on, "Enable a loss toggle (repeatable)");
  train->add_option("--toggle-off", ta.toggle_off, "Disable a loss toggle (repeatable)");
  train->add_option("--steps", ta.steps, "max_steps");
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--lr", ta.lr, "learning_rate");
  train->add_option("--seed", ta.seed);
  train->add_option("--checkpoint-every", ta.checkpoint_every);
  train->add_option("--eval-every", ta.eval_every);
  train->add_option("--log-every", ta.log_every, "Progress line interval on stderr");
  train->add_flag("--print-config", ta.print_config, "Print the effective run configuration and exit");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; prints the metric table");
  eval->add_option("--checkpoint", ea.checkpoint)->required();
  eval->add_option("--data", ea.data, "Dataset manifest");
  eval->add_option("--synth", ea.synth, "Evaluate on N synthetic samples instead of --data");
  eval->add_option("--synth-seed", ea.synth_seed);
  eval->add_option("--split", ea.split, "test|train|all");
  eval->add_option("--split-seed", ea.split_seed, "Defaults to the manifest's split seed");
  eval->add_option("--seed", ea.seed, "Generation seed");
  eval->add_flag("--json", ea.json, "Print the flat JSON record instead of the table");
  eval->add_option("--json-out", ea.json_out, "Also write the record to this file");
  eval->add_option("--log", ea.log, "Append the record to this NDJSON log");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Generate and render candidate designs");
  add_config_options(gen, ga.cfg);
  gen->add_option("--checkpoint", ga.checkpoint)->required();
  gen->add_option("--background", ga.background)->required();
  gen->add_option("--text", ga.texts, "class=string (repeatable)");
  gen->add_option("--image", ga.images, "Foreground image patch (repeatable)");
  gen->add_option("--foreground", ga.foreground, "JSON file with an 'elements' list");
  gen->add_option("--count", ga.count, "Number of candidates");
  gen->add_option("--seed", ga.seed);
  gen->add_option("--jitter", ga.jitter, "Override the render jitter fraction");
  gen->add_option("--out", ga.out, "Output directory");

  ServeArgs sa;
  auto* serve = app.add_subcommand("serve", "Run the /v1 design service");
  add_config_options(serve, sa.cfg);
  serve->add_option("--checkpoint", sa.checkpoint)->required();
  serve->add_option("--host", sa.host);
  serve->add_option("--port", sa.port, "0 picks a free port");
  serve->add_option("--store", sa.store, "Session store directory");
  serve->add_option("--seed", sa.seed, "Service seed");
  serve->add_flag("--deterministic", sa.deterministic, "Pin session ids and seeds");
  serve->add_flag("--print-config", sa.print_config, "Print the effective run configuration and exit");

  SynthArgs ya;
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic dataset");
  synth->add_option("--count", ya.count);
  synth->add_option("--seed", ya.seed);
  synth->add_option("--out", ya.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return run_train(ta);
    if (*eval) return run_eval(ea);
    if (*gen) return run_generate(ga);
    if (*serve) return run_serve(sa);
    if (*synth) return run_synth(ya);
  } catch (const ConfigurationError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

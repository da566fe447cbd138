// Small end-to-end run: train the desk preset on synthetic data, then
// generate and render candidates for a held-out design.
//   train_and_generate [steps] [out_dir]

#include <filesystem>
#include <iostream>
#include <string>

#include "layoutdetr/dataset/image_io.hpp"
#include "layoutdetr/dataset/synth.hpp"
#include "layoutdetr/networks/checkpoint.hpp"
#include "layoutdetr/networks/inference.hpp"
#include "layoutdetr/renderer/render.hpp"
#include "layoutdetr/service/run_config.hpp"
#include "layoutdetr/training/evaluation.hpp"
#include "layoutdetr/training/trainer.hpp"

using namespace layoutdetr;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  const int steps = argc > 1 ? std::stoi(argv[1]) : 200;
  const std::string out = argc > 2 ? argv[2] : "train_and_generate";

  RunConfig c = preset("desk");
  c.train.max_steps = steps;
  c.train.checkpoint_every = steps;
  c.train.eval_every = steps;

  const auto data = synth_dataset_generate(64, 7).samples;
  TrainLoopOptions opts;
  opts.network = c.network;
  opts.embedder = c.embedder;
  opts.weights = c.weights;
  opts.out_dir = out;
  opts.on_step = [](std::int64_t step, const LossReport& r) {
    if (step % 50 == 0) std::cerr << "step " << step << "  loss " << r.total << "\n";
  };
  const auto result = train_loop(data, c.train, opts);
  const auto model = load_model<double>(result.final_checkpoint);

  // held-out split, same rule the trainer uses
  const auto [train_idx, test_idx] = split_indices(data.size(), c.train.seed);
  std::vector<DesignSample> test;
  for (auto i : test_idx) test.push_back(data[i]);
  std::cout << metrics::format_table(evaluate_model(*model, test, 0)) << "\n";

  const auto& s = test.front();
  const auto layouts = generate_candidates(*model, s.background, s.foreground, 6, 1);
  for (std::size_t k = 0; k < layouts.size(); ++k) {
    const auto path = (fs::path(out) / ("candidate_" + std::to_string(k) + ".png")).string();
    try {
      const auto r = render::render_design(s.background, s.foreground, layouts[k], c.render, k);
      io::write_file_bytes(path, io::encode_png(r.image));
      std::cout << path << "\n";
    } catch (const OverflowError& e) {
      std::cout << "candidate " << k << ": " << e.what() << "\n";
    }
  }
}

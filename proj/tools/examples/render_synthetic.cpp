// Render the planted layouts of a few synthetic designs to PNG.
//   render_synthetic [out_dir] [count]

#include <filesystem>
#include <iostream>
#include <string>

#include "layoutdetr/dataset/image_io.hpp"
#include "layoutdetr/dataset/synth.hpp"
#include "layoutdetr/renderer/render.hpp"

using namespace layoutdetr;

int main(int argc, char** argv) {
  const std::string out = argc > 1 ? argv[1] : "render_synthetic";
  const int count = argc > 2 ? std::stoi(argv[2]) : 4;
  std::filesystem::create_directories(out);

  const auto ds = synth_dataset_generate(count, 7);
  render::RenderSpec spec;
  spec.jitter_fraction = 0;  // planted layout as-is
  for (const auto& s : ds.samples) {
    try {
      const auto r = render::render_design(s.background, s.foreground, s.layout, spec, 0);
      const auto path = (std::filesystem::path(out) / (s.id + ".png")).string();
      io::write_file_bytes(path, io::encode_png(r.image));
      std::cout << path;
      for (const auto& e : r.elements)
        if (e.font_size > 0) std::cout << "  " << e.font_size << "px/" << e.lines.size() << "l";
      std::cout << "\n";
    } catch (const OverflowError& e) {
      std::cout << s.id << ": " << e.what() << "\n";
    }
  }
}

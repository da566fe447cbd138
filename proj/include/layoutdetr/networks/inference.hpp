#pragma once

// Candidate generation: K layouts for one design, one noise draw each.

#include <vector>

#include "layoutdetr/conditioning/embedding.hpp"
#include "layoutdetr/networks/models.hpp"

namespace layoutdetr {

// Noise for candidate k depends only on (seed, k), so candidate lists are
// prefix-stable and reproducible.
template <class T>
std::vector<Layout> generate_candidates(const nn::LayoutDetrModel<T>& model, const Image& background,
                                        const ForegroundSet& fg, int count, std::uint64_t seed) {
  if (fg.size() == 0) throw ValidationError("generate: foreground set is empty");
  if (count < 1) throw ValidationError("generate: candidate count must be positive");
  if (int(fg.size()) > model.network_config().max_elements)
    throw ValidationError("generate: more elements than the model supports (" +
                          std::to_string(model.network_config().max_elements) + ")");
  validate_foreground(fg);
  ad::NoGradGuard guard;
  const ad::Tensor<T> bg_tokens = model.G.encode_background(background);
  std::vector<Layout> out;
  for (int k = 0; k < count; ++k) {
    Rng rng(mix_seed(seed, std::uint64_t(k)));
    const auto noise = conditioning::sample_noise<T>(int(fg.size()), model.embedder_config().noise_dim, rng);
    out.push_back(model.generate(bg_tokens, fg, noise));
  }
  return out;
}

template <class T>
Layout generate_layout(const nn::LayoutDetrModel<T>& model, const Image& background, const ForegroundSet& fg,
                       std::uint64_t seed) {
  return generate_candidates(model, background, fg, 1, seed).front();
}

}  // namespace layoutdetr

#pragma once

// Model -> metric report on a set of ground-truth samples: one generated
// layout per sample (noise seeded by sample position) against its
// annotated layout.

#include <vector>

#include "layoutdetr/metrics/metrics.hpp"
#include "layoutdetr/networks/inference.hpp"

namespace layoutdetr {

inline std::vector<Layout> generate_for_samples(const nn::LayoutDetrModel<double>& model,
                                                const std::vector<DesignSample>& samples, std::uint64_t seed) {
  std::vector<Layout> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    out.push_back(generate_layout(model, samples[i].background, samples[i].foreground, mix_seed(seed, i)));
  return out;
}

inline metrics::MetricReport evaluate_model(const nn::LayoutDetrModel<double>& model,
                                            const std::vector<DesignSample>& samples, std::uint64_t seed = 0,
                                            const metrics::FeatureExtractor& fx = metrics::surrogate_extractor()) {
  if (samples.empty()) throw ValidationError("evaluate: no samples");
  std::vector<Layout> real;
  for (const auto& s : samples) real.push_back(s.layout);
  return metrics::evaluate(generate_for_samples(model, samples, seed), real, fx);
}

}  // namespace layoutdetr

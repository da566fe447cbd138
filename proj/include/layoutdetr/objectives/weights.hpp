#pragma once

#include <cmath>
#include <map>
#include <string>
#include <string_view>

#include "json.hpp"

#include "layoutdetr/core/errors.hpp"

namespace layoutdetr {

enum class Variant { gan, vae, vaegan };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::gan: return "gan";
    case Variant::vae: return "vae";
    case Variant::vaegan: return "vaegan";
  }
  return "gan";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "gan" || s == "GAN") return Variant::gan;
  if (s == "vae" || s == "VAE") return Variant::vae;
  if (s == "vaegan" || s == "VAEGAN" || s == "vae-gan") return Variant::vaegan;
  throw ConfigurationError("unknown variant '" + std::string(s) + "'");
}

// Calibration constants of the training objective.
struct LossWeights {
  double lambda_layout = 500.0;
  double lambda_im = 0.5;
  double lambda_str = 0.1;
  double lambda_cls = 50.0;
  double lambda_len = 2.0;
  double lambda_kl = 1.0;
  double lambda_giou = 4.0;
  double lambda_overlap = 7.0;
  double lambda_misalign = 17.0;

  LossWeights scaled(double k) const {
    LossWeights w = *this;
    w.lambda_layout *= k;
    w.lambda_im *= k;
    w.lambda_str *= k;
    w.lambda_cls *= k;
    w.lambda_len *= k;
    w.lambda_kl *= k;
    w.lambda_giou *= k;
    w.lambda_overlap *= k;
    w.lambda_misalign *= k;
    return w;
  }

  void validate() const {
    for (double v : {lambda_layout, lambda_im, lambda_str, lambda_cls, lambda_len, lambda_kl, lambda_giou,
                     lambda_overlap, lambda_misalign})
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigurationError("loss weights must be finite and non-negative");
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, lambda_layout, lambda_im, lambda_str, lambda_cls,
                                                lambda_len, lambda_kl, lambda_giou, lambda_overlap,
                                                lambda_misalign)

// Itemized weighted loss terms; `total` is their sum.
struct LossReport {
  std::map<std::string, double> terms;
  double total = 0.0;

  bool has(const std::string& name) const { return terms.count(name) != 0; }
  double at(const std::string& name) const {
    auto it = terms.find(name);
    if (it == terms.end()) throw ValidationError("loss report has no term '" + name + "'");
    return it->second;
  }

  double sum_of_terms() const {
    double s = 0;
    for (const auto& [k, v] : terms) s += v;
    return s;
  }
};

inline void to_json(nlohmann::json& j, const LossReport& r) {
  j = nlohmann::json{{"terms", r.terms}, {"total", r.total}};
}

}  // namespace layoutdetr

#pragma once

// The run configuration file: one JSON document holding every config the
// CLI and service consume. All fields are written out, so any deviation
// from the paper defaults is visible in the file itself.

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "layoutdetr/networks/config.hpp"
#include "layoutdetr/objectives/weights.hpp"
#include "layoutdetr/renderer/render.hpp"
#include "layoutdetr/training/trainer.hpp"

namespace layoutdetr {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string store_dir = "sessions";
  double session_ttl_hours = 24.0;
  int default_candidates = 6;
  int max_candidates = 24;
  std::uint64_t seed = 0;
  // Pins session ids and candidate seeds; for test harnesses.
  bool deterministic = false;

  void validate() const {
    if (port < 0 || port > 65535) throw ConfigurationError("service: port out of range");
    if (!(session_ttl_hours > 0)) throw ConfigurationError("service: session_ttl_hours must be positive");
    if (default_candidates < 1 || max_candidates < default_candidates)
      throw ConfigurationError("service: need 1 <= default_candidates <= max_candidates");
  }
  friend bool operator==(const ServiceConfig&, const ServiceConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ServiceConfig, host, port, store_dir, session_ttl_hours,
                                                default_candidates, max_candidates, seed, deterministic)

struct RunConfig {
  TrainConfig train;
  NetworkConfig network;
  EmbedderConfig embedder;
  LossWeights weights;
  render::RenderSpec render;
  ServiceConfig service;

  void validate() const {
    train.validate();
    network.validate();
    embedder.validate();
    weights.validate();
    render.validate();
    service.validate();
  }
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, train, network, embedder, weights, render, service)

// Networks small enough to train in minutes on one CPU core.
inline void apply_desk_scale(RunConfig& c) {
  c.network.model_dim = 64;
  c.network.num_heads = 4;
  c.network.encoder_depth = 1;
  c.network.decoder_depth = 2;
  c.network.char_dim = 32;
  c.network.recon_resolution = 8;
  c.embedder.token_dim = 64;
  c.embedder.noise_dim = 8;
  c.embedder.text_string_dim = 32;
  c.embedder.class_dim = 8;
  c.embedder.length_dim = 16;
  c.embedder.patch_dim = 56;
  c.embedder.working_resolution = 64;
  c.embedder.background_patch_size = 16;
  c.embedder.patch_resolution = 32;
  c.train.learning_rate = 1e-3;
  c.train.batch_size = 16;
}

// "paper" keeps every default; "desk" shrinks the networks.
inline RunConfig preset(const std::string& name) {
  RunConfig c;
  if (name == "paper") return c;
  if (name == "desk") {
    apply_desk_scale(c);
    return c;
  }
  throw ConfigurationError("unknown preset '" + name + "' (expected paper|desk)");
}

// Rows of the loss ablation ladder: 1 base conditional GAN, 2 +generator
// reconstruction, 3 +unconditional discriminator, 4 +gIoU, 5 +overlap and
// misalignment (the full model).
inline void apply_ablation_row(TrainConfig& t, int row) {
  if (row < 1 || row > 5) throw ConfigurationError("ablation row must be in 1..5");
  t.enable_gen_rec = row >= 2;
  t.enable_uncond_disc = row >= 3;
  t.enable_giou = row >= 4;
  t.enable_overlap = row >= 5;
  t.enable_misalign = row >= 5;
}

// Toggle names accepted by --toggle-on / --toggle-off.
inline bool& toggle_ref(TrainConfig& t, const std::string& name) {
  if (name == "giou") return t.enable_giou;
  if (name == "overlap") return t.enable_overlap;
  if (name == "misalign") return t.enable_misalign;
  if (name == "gen_rec") return t.enable_gen_rec;
  if (name == "uncond_disc") return t.enable_uncond_disc;
  if (name == "layout_l2") return t.enable_layout_l2;
  if (name == "mask_augmentation") return t.mask_augmentation;
  throw ConfigurationError("unknown toggle '" + name +
                           "' (giou|overlap|misalign|gen_rec|uncond_disc|layout_l2|mask_augmentation)");
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c = j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("run config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError("run config: " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline std::string run_config_text(const RunConfig& c) { return nlohmann::json(c).dump(2) + "\n"; }

}  // namespace layoutdetr

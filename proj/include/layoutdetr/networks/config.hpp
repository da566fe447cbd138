#pragma once

#include "json.hpp"

#include "layoutdetr/core/errors.hpp"

namespace layoutdetr {

struct NetworkConfig {
  int model_dim = 128;
  int num_heads = 4;
  int encoder_depth = 2;
  int decoder_depth = 2;
  double dropout = 0.0;
  // Box slots of the learned positional embeddings in the auxiliary decoders.
  int max_elements = 16;
  int char_dim = 64;
  int max_chars = 32;
  // Side of the auxiliary background / patch reconstructions.
  int recon_resolution = 16;

  void validate() const {
    if (model_dim < 1 || num_heads < 1 || encoder_depth < 0 || decoder_depth < 1)
      throw ConfigurationError("network: dimensions and depths must be positive");
    if (model_dim % num_heads != 0) throw ConfigurationError("network: model_dim must be divisible by num_heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigurationError("network: dropout must be in [0,1)");
    if (max_elements < 1 || char_dim < 1 || max_chars < 1 || recon_resolution < 1)
      throw ConfigurationError("network: auxiliary sizes must be positive");
  }
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NetworkConfig, model_dim, num_heads, encoder_depth, decoder_depth,
                                                dropout, max_elements, char_dim, max_chars, recon_resolution)

struct EmbedderConfig {
  int token_dim = 128;
  int noise_dim = 32;
  int text_string_dim = 64;
  int class_dim = 16;
  int length_dim = 16;
  int patch_dim = 96;
  int background_patch_size = 16;
  int working_resolution = 256;
  // Foreground image patches are resized to this side before encoding.
  int patch_resolution = 64;
  bool positional_encoding = true;

  int grid() const { return working_resolution / background_patch_size; }
  int background_tokens() const { return grid() * grid(); }
  int content_dim() const { return token_dim - noise_dim; }

  void validate() const {
    for (int v : {token_dim, noise_dim, text_string_dim, class_dim, length_dim, patch_dim, background_patch_size,
                  working_resolution, patch_resolution})
      if (v < 1) throw ConfigurationError("embedder: all dimensions must be positive");
    if (noise_dim + text_string_dim + class_dim + length_dim != token_dim)
      throw ConfigurationError("embedder: noise + string + class + length dims must equal token_dim");
    if (noise_dim + patch_dim != token_dim)
      throw ConfigurationError("embedder: noise + patch dims must equal token_dim");
    if (working_resolution % background_patch_size != 0)
      throw ConfigurationError("embedder: working_resolution must be divisible by background_patch_size");
    if (patch_resolution % background_patch_size != 0)
      throw ConfigurationError("embedder: patch_resolution must be divisible by background_patch_size");
  }
  friend bool operator==(const EmbedderConfig&, const EmbedderConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EmbedderConfig, token_dim, noise_dim, text_string_dim, class_dim,
                                                length_dim, patch_dim, background_patch_size, working_resolution,
                                                patch_resolution, positional_encoding)

}  // namespace layoutdetr

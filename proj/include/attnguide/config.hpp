#pragma once

#include <cstddef>
#include <string>

#include "json.hpp"

#include "attnguide/error.hpp"

namespace attnguide {

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 32;
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 2;
  std::size_t channels = 3;
  double layernorm_eps = 1e-6;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t tokens() const { return 1 + num_patches(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t hidden_dim() const { return embed_dim * mlp_ratio; }

  void validate() const {
    auto fail = [](const std::string& m) { throw PreconditionError("model config: " + m); };
    if (patch_size == 0 || image_size == 0 || image_size % patch_size) fail("image_size must be a positive multiple of patch_size");
    if (num_heads == 0 || embed_dim == 0 || embed_dim % num_heads) fail("embed_dim must be a positive multiple of num_heads");
    if (num_layers < 1) fail("num_layers must be >= 1");
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
    if (channels < 1) fail("channels must be >= 1");
    if (!(layernorm_eps > 0)) fail("layernorm_eps must be > 0");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
       {"num_layers", c.num_layers}, {"num_heads", c.num_heads},   {"mlp_ratio", c.mlp_ratio},
       {"num_classes", c.num_classes}, {"channels", c.channels},   {"layernorm_eps", c.layernorm_eps}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.num_layers = j.value("num_layers", d.num_layers);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.channels = j.value("channels", d.channels);
  c.layernorm_eps = j.value("layernorm_eps", d.layernorm_eps);
}

}  // namespace attnguide

#pragma once

#include <cstddef>
#include <vector>

namespace cmslstm {

/// Topology of the stacked recurrent model and its ablation switches.
struct ModelConfig {
  std::size_t layers = 4;
  std::size_t hidden = 64;
  std::size_t kernel = 5;
  std::size_t frame_channels = 1;
  std::size_t frame_size = 64;  // square frames

  bool enable_ce = true;
  std::size_t ce_iterations = 2;
  double ce_scale = 2.0;

  bool enable_se = true;
  std::vector<std::size_t> se_scales{1, 2, 4};  // grid factors g -> g x g tiles
  bool share_qkv = false;  // one Q/K/V projection set for all scales

  bool layer_norm = true;  // per-gate LayerNorm on the gate pre-activations

  /// Throws ConfigError; in particular every scale must divide frame_size.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace cmslstm

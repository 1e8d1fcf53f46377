#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmslstm/cells.hpp"
#include "cmslstm/config.hpp"
#include "cmslstm/nn.hpp"

namespace cmslstm::model {

/// Per-sample teacher-forcing decisions for the prediction phase.
/// at(b, j) == true feeds the ground-truth frame t_in + j at step t_in + j.
class SamplingMask {
 public:
  SamplingMask() = default;
  SamplingMask(std::size_t batch, std::size_t steps, bool fill);

  std::size_t batch() const noexcept { return batch_; }
  std::size_t steps() const noexcept { return steps_; }
  bool at(std::size_t b, std::size_t j) const { return bits_.at(b * steps_ + j) != 0; }
  void set(std::size_t b, std::size_t j, bool v) { bits_.at(b * steps_ + j) = v ? 1 : 0; }
  /// Mask restricted to one sample.
  SamplingMask row(std::size_t b) const;

  bool operator==(const SamplingMask&) const = default;

 private:
  std::size_t batch_ = 0;
  std::size_t steps_ = 0;
  std::vector<std::uint8_t> bits_;
};

std::string layer_prefix(std::size_t layer);

/// Registers every parameter of the model in a fixed order:
/// per layer CE (conv_h, conv_x), gates (x_*, h_*, ln_*), SE (per-scale q/k/v,
/// fuse, a_*, h_*), then the 1x1 output convolution. Kernels are fan-in
/// uniform, biases zero, LayerNorm gains one. Pure function of (config, seed).
nn::ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

/// Closed-form scalar parameter count of init_params(config, *).
std::size_t count_parameters(const ModelConfig& config);

/// Throws ConfigError naming the first entry whose name or shape differs.
void check_topology(const nn::ParamStore& expected, const nn::ParamStore& actual);

cells::CellParams bind_cell(nn::GraphParams& params, const ModelConfig& config, std::size_t layer);

/// Diagnostics of the top layer for one emitted frame.
using FrameDiagnostics = cells::CellDiagnostics;

/// Runs the stacked model over frames [B, t_in + t_out, F, H, W] and returns
/// predictions [B, t_out, F, H, W] in [0,1]. Ground truth is fed for t < t_in;
/// afterwards the fed frame is ground truth or the previous prediction per
/// `mask` (B x (t_out - 1)). States start at zero.
Var model_forward(nn::GraphParams& params, const Tensor& frames, const ModelConfig& config, std::size_t t_in,
                  const SamplingMask& mask, std::vector<FrameDiagnostics>* diagnostics = nullptr);

}  // namespace cmslstm::model

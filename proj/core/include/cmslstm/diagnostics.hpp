#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cmslstm/config.hpp"
#include "cmslstm/nn.hpp"
#include "cmslstm/pgm.hpp"
#include "cmslstm/tensor.hpp"

namespace cmslstm::diagnostics {

/// One exported map before normalization.
struct MapImage {
  std::string name;  // file stem, e.g. "f03_ce_input"
  Tensor raw;        // [H,W]
  double min = 0.0;
  double max = 0.0;
  /// Per-patch sums of the raw values (attention maps only), row-major over the grid.
  std::vector<double> patch_sums;

  double variance() const;
};

/// Per-image min-max map to 0..255; a constant image becomes mid-gray (128).
GrayImage normalize(const Tensor& raw);

struct MapSet {
  std::vector<MapImage> maps;
  bool ce_skipped = false;  // model has no CE block
  bool se_skipped = false;  // model has no SE block
};

/// Maps of the last layer for every predicted frame of one sequence
/// [T,F,H,W] under pure autoregression:
///   fNN_ce_input    channel mean of the final s*sigmoid(conv_h(h)) field
///   fNN_ce_context  channel mean of the final s*sigmoid(conv_x(x)) field
///   fNN_se_sG       attention mass received per position at grid factor G
MapSet compute_maps(const nn::ParamStore& store, const ModelConfig& config, const Tensor& sequence,
                    std::size_t t_in);

/// Writes <stem>.pgm per map plus maps.txt holding "<stem> min max" lines and
/// "<stem> patch_sums v..." lines for attention maps.
void write_maps(const MapSet& maps, const std::filesystem::path& out_dir);

/// maps.txt contents.
std::string format_sidecar(const MapSet& maps);

}  // namespace cmslstm::diagnostics

#pragma once

// CMS-LSTM cell: context embedding (CE), ConvLSTM gates, and the multi-scale
// spatiotemporal expression (SE) block. All functions are differentiable and
// operate on Vars of one tape; states are [B,C,H,W].

#include <array>
#include <optional>
#include <vector>

#include "cmslstm/autodiff.hpp"
#include "cmslstm/nn.hpp"

namespace cmslstm::cells {

struct CellState {
  Var h;
  Var c;
};

// ---------------------------------------------------------------------------
// Context embedding

/// Shared weights for every CE iteration.
/// conv_h maps the hidden state (C channels) to an input-sized weight map
/// (Cin channels); conv_x maps the input back to a C-channel weight map.
struct CEParams {
  nn::ConvLayer conv_h;
  nn::ConvLayer conv_x;
  double scale = 2.0;
  std::size_t iterations = 1;
};

/// Weight maps s*sigma(.) of the final CE iteration.
struct CEMaps {
  Tensor input_weight;    // multiplies x, [B,Cin,H,W]
  Tensor context_weight;  // multiplies h, [B,C,H,W]
};

struct CEOutput {
  Var x;
  Var h;
};

/// Repeats, with shared weights:
///   x <- s * sigmoid(conv_h(h)) o x
///   h <- s * sigmoid(conv_x(x)) o h     (using the freshly updated x)
CEOutput ce_block(const Var& x, const Var& h, const CEParams& p, CEMaps* maps = nullptr);

// ---------------------------------------------------------------------------
// ConvLSTM gates

enum Gate : std::size_t { kG = 0, kI = 1, kF = 2, kO = 3 };

/// x-convs carry the gate biases; h-convs are bias-free. The four gates are
/// evaluated as one convolution over concat(x, h) with a stacked kernel.
struct GateParams {
  std::array<nn::ConvLayer, 4> x;  // g, i, f, o
  std::array<nn::ConvLayer, 4> h;
  std::optional<std::array<nn::LayerNorm, 4>> norm;
  Var stacked_kernel;  // [4C, Cin + C, k, k]
  Var stacked_bias;    // [4C]
};

GateParams make_gate_params(std::array<nn::ConvLayer, 4> x, std::array<nn::ConvLayer, 4> h,
                            std::optional<std::array<nn::LayerNorm, 4>> norm);

/// g = tanh(LN(Wxg*x + Whg*h + bg)), i, f, o = sigmoid(LN(...)),
/// c = f o c_prev + i o g, h = o o tanh(c).
CellState convlstm_gates(const Var& x, const Var& h, const Var& c, const GateParams& p);

// ---------------------------------------------------------------------------
// Multi-scale spatiotemporal expression

/// 1x1 projections, 2C -> 2C each.
struct QKV {
  nn::ConvLayer q;
  nn::ConvLayer k;
  nn::ConvLayer v;
};

/// Patch self-attention with residual on z [P, 2C, h, w]:
///   out = V softmax(Q^T K)^T + z
/// `mass`, when given, receives the attention mass per key position [P,h,w].
Var bam(const Var& z, const QKV& p, Tensor* mass = nullptr);

struct SEScale {
  std::size_t grid = 1;
  QKV qkv;
};

enum SEGate : std::size_t { kSeI = 0, kSeG = 1, kSeO = 2 };

struct SEParams {
  std::vector<SEScale> scales;
  nn::ConvLayer fuse;              // 2nC -> 2C, output split into [A_H, A_C]
  std::array<nn::ConvLayer, 3> a;  // [A_H, A_C] -> C for i, g, o, with biases
  std::array<nn::ConvLayer, 3> h;  // h -> C for i, g, o, bias-free
  Var stacked_kernel;              // [3C, 3C, k, k]
  Var stacked_bias;                // [3C]
};

SEParams make_se_params(std::vector<SEScale> scales, nn::ConvLayer fuse, std::array<nn::ConvLayer, 3> a,
                        std::array<nn::ConvLayer, 3> h);

/// Per-scale attention mass, restored to image layout [B,1,H,W].
struct SEMaps {
  std::vector<std::size_t> grids;
  std::vector<Tensor> attention_mass;
};

/// Z = concat(h, c); per scale: patches -> bam -> restore; fuse the scales
/// with a conv into [A_H, A_C]; then
///   i = sigmoid(W_Ai*[A_H,A_C] + W_hi*h + b_i), g = tanh(...), o = sigmoid(...)
///   c_hat = (1 - i) o c + i o g,  h_hat = o o c_hat.
CellState se_block(const Var& h, const Var& c, const SEParams& p, SEMaps* maps = nullptr);

// ---------------------------------------------------------------------------
// Full cell

struct CellParams {
  std::optional<CEParams> ce;
  GateParams gates;
  std::optional<SEParams> se;
};

struct CellDiagnostics {
  std::optional<CEMaps> ce;
  std::optional<SEMaps> se;
};

/// CE (if enabled) -> ConvLSTM gates -> SE (if enabled). With both blocks off
/// this is exactly convlstm_gates.
CellState cms_cell_step(const Var& x, const CellState& state, const CellParams& p, CellDiagnostics* diag = nullptr);

}  // namespace cmslstm::cells

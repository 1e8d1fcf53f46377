#include "cmslstm/cells.hpp"

#include "cmslstm/error.hpp"
#include "cmslstm/ops.hpp"

namespace cmslstm::cells {

namespace {

void require_same(const char* what, const Shape& a, const Shape& b) {
  if (a != b) throw ShapeError(std::string(what) + ": " + shape_string(a) + " vs " + shape_string(b));
}

Tensor restore_tensor(const Tensor& patches, std::size_t grid) {
  Tape scratch;
  return ops::restore_patches(scratch.constant(patches), grid).value();
}

}  // namespace

CEOutput ce_block(const Var& x, const Var& h, const CEParams& p, CEMaps* maps) {
  if (p.iterations == 0) throw ConfigError("ce_block: iteration count must be positive");
  if (!(p.scale > 0.0)) throw ConfigError("ce_block: scale must be positive");
  if (p.conv_h.in_channels() != h.shape()[1] || p.conv_h.out_channels() != x.shape()[1] ||
      p.conv_x.in_channels() != x.shape()[1] || p.conv_x.out_channels() != h.shape()[1]) {
    throw ShapeError("ce_block: convolutions do not match input " + shape_string(x.shape()) + " and state " +
                     shape_string(h.shape()));
  }
  Var xs = x;
  Var hs = h;
  for (std::size_t it = 0; it < p.iterations; ++it) {
    Var input_weight = ops::scale(ops::sigmoid(p.conv_h(hs)), p.scale);
    xs = ops::hadamard(input_weight, xs);
    Var context_weight = ops::scale(ops::sigmoid(p.conv_x(xs)), p.scale);
    hs = ops::hadamard(context_weight, hs);
    if (maps && it + 1 == p.iterations) {
      maps->input_weight = input_weight.value();
      maps->context_weight = context_weight.value();
    }
  }
  return {xs, hs};
}

GateParams make_gate_params(std::array<nn::ConvLayer, 4> x, std::array<nn::ConvLayer, 4> h,
                            std::optional<std::array<nn::LayerNorm, 4>> norm) {
  GateParams p{std::move(x), std::move(h), std::move(norm), {}, {}};
  std::vector<Var> kernels, biases;
  for (std::size_t gate = 0; gate < 4; ++gate) {
    if (!p.x[gate].bias) throw ConfigError("gate input convolutions must carry the gate biases");
    kernels.push_back(ops::concat({p.x[gate].kernel, p.h[gate].kernel}, 1));
    biases.push_back(*p.x[gate].bias);
  }
  p.stacked_kernel = ops::concat(kernels, 0);
  p.stacked_bias = ops::concat(biases, 0);
  return p;
}

CellState convlstm_gates(const Var& x, const Var& h, const Var& c, const GateParams& p) {
  require_same("convlstm_gates: h and c", h.shape(), c.shape());
  const std::size_t C = h.shape()[1];
  if (p.stacked_kernel.shape()[0] != 4 * C) throw ShapeError("convlstm_gates: parameters do not match hidden size");
  Var pre = ops::conv2d(ops::concat({x, h}, 1), p.stacked_kernel, p.stacked_bias);
  std::vector<Var> parts = ops::split(pre, {C, C, C, C}, 1);
  if (p.norm) {
    for (std::size_t gate = 0; gate < 4; ++gate) parts[gate] = (*p.norm)[gate](parts[gate]);
  }
  Var g = ops::tanh(parts[kG]);
  Var i = ops::sigmoid(parts[kI]);
  Var f = ops::sigmoid(parts[kF]);
  Var o = ops::sigmoid(parts[kO]);
  Var c_next = ops::add(ops::hadamard(f, c), ops::hadamard(i, g));
  Var h_next = ops::hadamard(o, ops::tanh(c_next));
  return {h_next, c_next};
}

Var bam(const Var& z, const QKV& p, Tensor* mass) {
  Var q = p.q(z);
  Var k = p.k(z);
  Var v = p.v(z);
  if (q.shape() != z.shape() || v.shape() != z.shape()) {
    throw ShapeError("bam: projections must preserve the shape " + shape_string(z.shape()));
  }
  if (mass) *mass = attention_mass(q.value(), k.value());
  return ops::add(ops::attention(q, k, v), z);
}

SEParams make_se_params(std::vector<SEScale> scales, nn::ConvLayer fuse, std::array<nn::ConvLayer, 3> a,
                        std::array<nn::ConvLayer, 3> h) {
  if (scales.empty()) throw ConfigError("se_block needs at least one scale");
  SEParams p{std::move(scales), std::move(fuse), std::move(a), std::move(h), {}, {}};
  std::vector<Var> kernels, biases;
  for (std::size_t gate = 0; gate < 3; ++gate) {
    if (!p.a[gate].bias) throw ConfigError("SE gate convolutions must carry the gate biases");
    kernels.push_back(ops::concat({p.a[gate].kernel, p.h[gate].kernel}, 1));
    biases.push_back(*p.a[gate].bias);
  }
  p.stacked_kernel = ops::concat(kernels, 0);
  p.stacked_bias = ops::concat(biases, 0);
  return p;
}

CellState se_block(const Var& h, const Var& c, const SEParams& p, SEMaps* maps) {
  require_same("se_block: h and c", h.shape(), c.shape());
  const std::size_t C = h.shape()[1];
  const std::size_t H = h.shape()[2], W = h.shape()[3];

  Var z = ops::concat({h, c}, 1);
  std::vector<Var> per_scale;
  if (maps) *maps = SEMaps{};
  for (const SEScale& s : p.scales) {
    if (s.grid == 0 || H % s.grid != 0 || W % s.grid != 0) {
      throw ConfigError("se_block: scale " + std::to_string(s.grid) + " does not divide " + std::to_string(H) + "x" +
                        std::to_string(W));
    }
    Tensor mass;
    Var attended = bam(ops::extract_patches(z, s.grid), s.qkv, maps ? &mass : nullptr);
    per_scale.push_back(ops::restore_patches(attended, s.grid));
    if (maps) {
      maps->grids.push_back(s.grid);
      const std::size_t P = mass.dim(0);
      maps->attention_mass.push_back(restore_tensor(mass.reshaped({P, 1, H / s.grid, W / s.grid}), s.grid));
    }
  }
  Var z_hat = per_scale.size() == 1 ? per_scale.front() : ops::concat(per_scale, 1);
  Var fused = p.fuse(z_hat);  // [A_H, A_C]
  if (fused.shape()[1] != 2 * C) throw ShapeError("se_block: fuse convolution must produce 2C channels");

  Var pre = ops::conv2d(ops::concat({fused, h}, 1), p.stacked_kernel, p.stacked_bias);
  std::vector<Var> parts = ops::split(pre, {C, C, C}, 1);
  Var i = ops::sigmoid(parts[kSeI]);
  Var g = ops::tanh(parts[kSeG]);
  Var o = ops::sigmoid(parts[kSeO]);
  Var keep = ops::add_scalar(ops::scale(i, -1.0), 1.0);
  Var c_hat = ops::add(ops::hadamard(keep, c), ops::hadamard(i, g));
  Var h_hat = ops::hadamard(o, c_hat);
  return {h_hat, c_hat};
}

CellState cms_cell_step(const Var& x, const CellState& state, const CellParams& p, CellDiagnostics* diag) {
  Var xs = x;
  Var hs = state.h;
  if (p.ce) {
    CEMaps maps;
    CEOutput out = ce_block(xs, hs, *p.ce, diag ? &maps : nullptr);
    xs = out.x;
    hs = out.h;
    if (diag) diag->ce = std::move(maps);
  }
  CellState next = convlstm_gates(xs, hs, state.c, p.gates);
  if (p.se) {
    SEMaps maps;
    next = se_block(next.h, next.c, *p.se, diag ? &maps : nullptr);
    if (diag) diag->se = std::move(maps);
  }
  return next;
}

}  // namespace cmslstm::cells

#pragma once

// Differentiable primitives. Every op checks shapes exactly and never
// broadcasts; a mismatch raises ShapeError.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "cmslstm/autodiff.hpp"
#include "cmslstm/tensor.hpp"

namespace cmslstm::ops {

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var abs(const Var& x);
Var square(const Var& x);

// Reductions to shape [1].
Var sum(const Var& x);
Var mean(const Var& x);

// Shape manipulation.
Var reshape(const Var& x, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);
std::vector<Var> split(const Var& x, const std::vector<std::size_t>& sizes, std::size_t axis);

/// [B,C,H,W] -> [B*g*g, C, H/g, W/g]. Tiles are ordered row-major over the
/// g x g grid, batch-major across samples.
Var extract_patches(const Var& x, std::size_t grid);
/// Exact inverse of extract_patches.
Var restore_patches(const Var& patches, std::size_t grid);

// Linear algebra on 2-D tensors.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// Row-wise softmax with max subtraction.
Var softmax_rows(const Var& m);

/// Same-padded stride-1 convolution. input [B,Cin,H,W], kernel [Cout,Cin,k,k]
/// with k odd, optional bias [Cout]. Out-of-range input reads as zero.
Var conv2d(const Var& input, const Var& kernel, const std::optional<Var>& bias);

/// Per-sample normalization over all non-batch axes of x [B,C,...], followed
/// by a per-channel affine map with gain [C] and bias [C].
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps);

/// Patch attention on [P,C2,h,w] tensors. Per patch p, with N = h*w and
/// Q, K, V viewed as [C2, N]:
///   A = softmax_rows(Q^T K)   (row n: query position n over key positions)
///   out = V A^T               (each output position mixes value vectors)
/// Forward is numerically the same as composing transpose/matmul/softmax_rows;
/// the attention matrix is kept for the backward pass.
Var attention(const Var& q, const Var& k, const Var& v);

/// Tape op names of every primitive above.
const std::vector<std::string>& primitive_names();

}  // namespace cmslstm::ops

namespace cmslstm {

/// Attention mass received by each key position, sum_n A[n, m], for every
/// patch of q/k [P,C2,h,w]. Result [P,h,w]; each patch sums to h*w.
Tensor attention_mass(const Tensor& q, const Tensor& k);

/// Plain (non-recorded) versions used by oracles and diagnostics.
double sigmoid_value(double x);

}  // namespace cmslstm

#include <Eigen/Core>
#include <array>
#include <cmath>

#include "cmslstm/error.hpp"
#include "cmslstm/ops.hpp"

namespace cmslstm::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ColMat = Eigen::MatrixXd;
using MapColMat = Eigen::Map<ColMat>;
using ConstMapColMat = Eigen::Map<const ColMat>;

struct ConvGeometry {
  std::size_t batch, cin, cout, height, width, k, pad;
  std::size_t pixels() const { return height * width; }
  std::size_t patch() const { return cin * k * k; }
};

// Per-thread scratch reused across calls; every user overwrites what it reads.
double* scratch(std::size_t slot, std::size_t n) {
  thread_local std::array<Buffer, 4> buffers;
  if (buffers[slot].size() < n) buffers[slot].resize(n);
  return buffers[slot].data();
}

// cols[(c*k+ky)*k+kx][y*W+x] = input[c][y+ky-p][x+kx-p], zero outside.
void im2col(const double* in, const ConvGeometry& g, double* cols) {
  const std::size_t H = g.height, W = g.width, k = g.k;
  const long p = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* plane = in + c * H * W;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * H * W;
        const long dx = static_cast<long>(kx) - p;
        const std::size_t x_lo = static_cast<std::size_t>(std::max(0L, -dx));
        const std::size_t x_hi = static_cast<std::size_t>(std::min(static_cast<long>(W), static_cast<long>(W) - dx));
        for (std::size_t y = 0; y < H; ++y) {
          double* dst = row + y * W;
          const long sy = static_cast<long>(y + ky) - p;
          if (sy < 0 || sy >= static_cast<long>(H)) {
            std::fill(dst, dst + W, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sy) * W;
          std::fill(dst, dst + x_lo, 0.0);
          for (std::size_t x = x_lo; x < x_hi; ++x) dst[x] = src[static_cast<long>(x) + dx];
          std::fill(dst + x_hi, dst + W, 0.0);
        }
      }
    }
  }
}

// Pixel-major variant: cols[(y*W+x)*K + (c*k+ky)*k+kx], one patch per pixel.
void im2col_pixel_major(const double* in, const ConvGeometry& g, double* cols) {
  const std::size_t H = g.height, W = g.width, k = g.k, K = g.patch();
  const long p = static_cast<long>(g.pad);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double* dst = cols + (y * W + x) * K;
      for (std::size_t c = 0; c < g.cin; ++c) {
        const double* plane = in + c * H * W;
        for (std::size_t ky = 0; ky < k; ++ky, dst += k) {
          const long sy = static_cast<long>(y + ky) - p;
          if (sy < 0 || sy >= static_cast<long>(H)) {
            std::fill(dst, dst + k, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sy) * W;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const long sx = static_cast<long>(x + kx) - p;
            dst[kx] = (sx < 0 || sx >= static_cast<long>(W)) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back onto the image.
void col2im_add(const double* cols, const ConvGeometry& g, double* out) {
  const std::size_t H = g.height, W = g.width, k = g.k;
  const long p = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* plane = out + c * H * W;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * H * W;
        const long dx = static_cast<long>(kx) - p;
        const std::size_t x_lo = static_cast<std::size_t>(std::max(0L, -dx));
        const std::size_t x_hi = static_cast<std::size_t>(std::min(static_cast<long>(W), static_cast<long>(W) - dx));
        for (std::size_t y = 0; y < H; ++y) {
          const long sy = static_cast<long>(y + ky) - p;
          if (sy < 0 || sy >= static_cast<long>(H)) continue;
          double* dst = plane + static_cast<std::size_t>(sy) * W;
          const double* src = row + y * W;
          for (std::size_t x = x_lo; x < x_hi; ++x) dst[static_cast<long>(x) + dx] += src[x];
        }
      }
    }
  }
}

ConvGeometry conv_geometry(const Var& input, const Var& kernel, const std::optional<Var>& bias) {
  const Shape& is = input.shape();
  const Shape& ks = kernel.shape();
  if (is.size() != 4) throw ShapeError("conv2d: input must be [B,Cin,H,W], got " + shape_string(is));
  if (ks.size() != 4 || ks[2] != ks[3]) {
    throw ShapeError("conv2d: kernel must be [Cout,Cin,k,k], got " + shape_string(ks));
  }
  if (ks[2] % 2 == 0) throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(ks[2]));
  if (ks[1] != is[1]) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(ks[1]) + " input channels, input has " +
                     std::to_string(is[1]));
  }
  if (bias && bias->shape() != Shape{ks[0]}) {
    throw ShapeError("conv2d: bias must be [" + std::to_string(ks[0]) + "], got " + shape_string(bias->shape()));
  }
  return {is[0], is[1], ks[0], is[2], is[3], ks[2], (ks[2] - 1) / 2};
}

}  // namespace

Var conv2d(const Var& input, const Var& kernel, const std::optional<Var>& bias) {
  const ConvGeometry g = conv_geometry(input, kernel, bias);
  const std::size_t N = g.pixels();
  const std::size_t K = g.patch();
  const bool pointwise = g.k == 1;

  Tensor out({g.batch, g.cout, g.height, g.width});
  // Column-major operands keep the small output-channel dimension on the
  // lhs, which Eigen's GEMM kernels handle far better than the transpose.
  double* cols = pointwise ? nullptr : scratch(0, K * N);
  double* tmp = pointwise ? nullptr : scratch(1, g.cout * N);
  const ConstMapMat w(kernel.value().raw(), g.cout, K);
  const ColMat wc = w;
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* in_b = input.value().raw() + b * g.cin * N;
    MapMat o(out.raw() + b * g.cout * N, g.cout, N);
    if (pointwise) {
      o.noalias() = w * ConstMapMat(in_b, K, N);
    } else {
      im2col_pixel_major(in_b, g, cols);
      MapColMat t(tmp, g.cout, N);
      t.noalias() = wc * ConstMapColMat(cols, K, N);
      o = t;
    }
    if (bias) {
      const Tensor& bv = bias->value();
      for (std::size_t oc = 0; oc < g.cout; ++oc) o.row(oc).array() += bv[oc];
    }
  }

  std::vector<Var> inputs{input, kernel};
  if (bias) inputs.push_back(*bias);
  return input.tape().record(
      std::move(out), "conv2d", inputs, [input, kernel, bias, g](const Tensor&, const Tensor& grad, BackwardContext& ctx) {
        const std::size_t N = g.pixels();
        const std::size_t K = g.patch();
        const bool pointwise = g.k == 1;
        Tensor* gin = ctx.grad(input);
        Tensor* gk = ctx.grad(kernel);
        Tensor* gb = bias ? ctx.grad(*bias) : nullptr;

        double* cols = gk && !pointwise ? scratch(0, K * N) : nullptr;
        double* dcols = gin && !pointwise ? scratch(2, K * N) : nullptr;
        double* goc_buf = gk ? scratch(1, g.cout * N) : nullptr;
        const ConstMapMat w(ctx.value(kernel).raw(), g.cout, K);
        const ColMat wc = w;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const ConstMapMat go(grad.raw() + b * g.cout * N, g.cout, N);
          if (gk) {
            const double* in_b = ctx.value(input).raw() + b * g.cin * N;
            if (!pointwise) im2col(in_b, g, cols);
            const ConstMapMat c(pointwise ? in_b : cols, K, N);
            MapColMat goc(goc_buf, g.cout, N);
            goc = go;
            // dW^T, column-major, shares storage with row-major dW.
            MapColMat dwt(gk->raw(), K, g.cout);
            dwt.noalias() += c * goc.transpose();
          }
          if (gb) {
            for (std::size_t oc = 0; oc < g.cout; ++oc) (*gb)[oc] += go.row(oc).sum();
          }
          if (gin) {
            double* gin_b = gin->raw() + b * g.cin * N;
            if (pointwise) {
              MapMat di(gin_b, K, N);
              di.noalias() += wc.transpose() * go;
            } else {
              MapMat dc(dcols, K, N);
              dc.noalias() = wc.transpose() * go;
              col2im_add(dcols, g, gin_b);
            }
          }
        }
      });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("layer_norm: expected [B,C,...], got " + shape_string(s));
  const std::size_t B = s[0], C = s[1];
  if (gain.shape() != Shape{C} || bias.shape() != Shape{C}) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(C) + "]");
  }
  const std::size_t n = x.value().size() / B;
  const std::size_t spatial = n / C;

  Tensor out(s);
  Tensor xhat(s);
  std::vector<double> rstd(B);
  const double* xv = x.value().raw();
  for (std::size_t b = 0; b < B; ++b) {
    const double* xb = xv + b * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += xb[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xb[i] - mu) * (xb[i] - mu);
    var /= static_cast<double>(n);
    rstd[b] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < C; ++c) {
      const double gc = gain.value()[c], bc = bias.value()[c];
      for (std::size_t i = c * spatial; i < (c + 1) * spatial; ++i) {
        const double h = (xb[i] - mu) * rstd[b];
        xhat[b * n + i] = h;
        out[b * n + i] = h * gc + bc;
      }
    }
  }

  return x.tape().record(
      std::move(out), "layer_norm", {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd), B, C, n, spatial](
          const Tensor&, const Tensor& g, BackwardContext& ctx) {
        Tensor* gx = ctx.grad(x);
        Tensor* gg = ctx.grad(gain);
        Tensor* gbias = ctx.grad(bias);
        const Tensor& gv = ctx.value(gain);
        Buffer dxhat(n);
        for (std::size_t b = 0; b < B; ++b) {
          const double* gb = g.raw() + b * n;
          const double* hb = xhat.raw() + b * n;
          for (std::size_t c = 0; c < C; ++c) {
            double sg = 0.0, sgh = 0.0;
            for (std::size_t i = c * spatial; i < (c + 1) * spatial; ++i) {
              sg += gb[i];
              sgh += gb[i] * hb[i];
              dxhat[i] = gb[i] * gv[c];
            }
            if (gg) (*gg)[c] += sgh;
            if (gbias) (*gbias)[c] += sg;
          }
          if (gx) {
            double mean_d = 0.0, mean_dh = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              mean_d += dxhat[i];
              mean_dh += dxhat[i] * hb[i];
            }
            mean_d /= static_cast<double>(n);
            mean_dh /= static_cast<double>(n);
            double* out = gx->raw() + b * n;
            for (std::size_t i = 0; i < n; ++i) out[i] += rstd[b] * (dxhat[i] - mean_d - hb[i] * mean_dh);
          }
        }
      });
}

}  // namespace cmslstm::ops

#include <algorithm>
#include <numeric>

#include "cmslstm/error.hpp"
#include "cmslstm/ops.hpp"

namespace cmslstm::ops {

namespace {

// View of a shape around one axis: [outer, axis, inner].
struct AxisView {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

void require_4d(const char* op, const Shape& s) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected a 4-D tensor, got " + shape_string(s));
}

}  // namespace

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), "reshape", {x}, [x](const Tensor&, const Tensor& g, BackwardContext& ctx) {
    if (Tensor* gx = ctx.grad(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));

  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw ShapeError("concat: incompatible shapes " + shape_string(first) + " and " + shape_string(s));
    out_shape[axis] += s[axis];
  }

  Tensor out(out_shape);
  const AxisView ov = axis_view(out_shape, axis);
  std::size_t start = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    const AxisView iv = axis_view(pv.shape(), axis);
    const std::size_t block = iv.len * iv.inner;
    for (std::size_t o = 0; o < ov.outer; ++o) {
      std::copy_n(pv.raw() + o * block, block, out.raw() + (o * ov.len + start) * ov.inner);
    }
    start += iv.len;
  }

  return parts.front().tape().record(
      std::move(out), "concat", parts, [parts, axis](const Tensor& y, const Tensor& g, BackwardContext& ctx) {
        const AxisView ov = axis_view(y.shape(), axis);
        std::size_t start = 0;
        for (const Var& p : parts) {
          const AxisView iv = axis_view(p.shape(), axis);
          if (Tensor* gp = ctx.grad(p)) {
            const std::size_t block = iv.len * iv.inner;
            for (std::size_t o = 0; o < ov.outer; ++o) {
              const double* src = g.raw() + (o * ov.len + start) * ov.inner;
              double* dst = gp->raw() + o * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          start += iv.len;
        }
      });
}

std::vector<Var> split(const Var& x, const std::vector<std::size_t>& sizes, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) throw ShapeError("split: axis out of range for " + shape_string(shape));
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total != shape[axis] || std::find(sizes.begin(), sizes.end(), 0) != sizes.end()) {
    throw ShapeError("split: sizes do not partition axis " + std::to_string(axis) + " of " + shape_string(shape));
  }

  const AxisView xv = axis_view(shape, axis);
  std::vector<Var> out;
  out.reserve(sizes.size());
  std::size_t start = 0;
  for (std::size_t len : sizes) {
    Shape part_shape = shape;
    part_shape[axis] = len;
    Tensor part(part_shape);
    const std::size_t block = len * xv.inner;
    for (std::size_t o = 0; o < xv.outer; ++o) {
      std::copy_n(x.value().raw() + (o * xv.len + start) * xv.inner, block, part.raw() + o * block);
    }
    out.push_back(x.tape().record(std::move(part), "split", {x},
                                  [x, xv, start, len](const Tensor&, const Tensor& g, BackwardContext& ctx) {
                                    if (Tensor* gx = ctx.grad(x)) {
                                      const std::size_t block = len * xv.inner;
                                      for (std::size_t o = 0; o < xv.outer; ++o) {
                                        double* dst = gx->raw() + (o * xv.len + start) * xv.inner;
                                        const double* src = g.raw() + o * block;
                                        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                                      }
                                    }
                                  }));
    start += len;
  }
  return out;
}

namespace {

// Calls f(src_offset, dst_offset, run) for every contiguous row segment that
// moves from image layout [B,C,H,W] to patch layout [B*g*g, C, H/g, W/g].
template <typename F>
void for_each_patch_row(const Shape& image, std::size_t grid, F f) {
  const std::size_t B = image[0], C = image[1], H = image[2], W = image[3];
  const std::size_t ph = H / grid, pw = W / grid;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t gy = 0; gy < grid; ++gy) {
      for (std::size_t gx = 0; gx < grid; ++gx) {
        const std::size_t patch = (b * grid + gy) * grid + gx;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t y = 0; y < ph; ++y) {
            const std::size_t src = ((b * C + c) * H + gy * ph + y) * W + gx * pw;
            const std::size_t dst = ((patch * C + c) * ph + y) * pw;
            f(src, dst, pw);
          }
        }
      }
    }
  }
}

void check_grid(const char* op, std::size_t grid, std::size_t H, std::size_t W) {
  if (grid == 0 || H % grid != 0 || W % grid != 0) {
    throw ShapeError(std::string(op) + ": grid " + std::to_string(grid) + " does not divide " + std::to_string(H) +
                     "x" + std::to_string(W));
  }
}

}  // namespace

Var extract_patches(const Var& x, std::size_t grid) {
  const Shape image = x.shape();
  require_4d("extract_patches", image);
  check_grid("extract_patches", grid, image[2], image[3]);
  Tensor out({image[0] * grid * grid, image[1], image[2] / grid, image[3] / grid});
  const double* src = x.value().raw();
  double* dst = out.raw();
  for_each_patch_row(image, grid, [&](std::size_t s, std::size_t d, std::size_t n) { std::copy_n(src + s, n, dst + d); });
  return x.tape().record(std::move(out), "extract_patches", {x},
                         [x, image, grid](const Tensor&, const Tensor& g, BackwardContext& ctx) {
                           if (Tensor* gx = ctx.grad(x)) {
                             double* dst = gx->raw();
                             const double* src = g.raw();
                             for_each_patch_row(image, grid, [&](std::size_t s, std::size_t d, std::size_t n) {
                               for (std::size_t i = 0; i < n; ++i) dst[s + i] += src[d + i];
                             });
                           }
                         });
}

Var restore_patches(const Var& patches, std::size_t grid) {
  const Shape& ps = patches.shape();
  require_4d("restore_patches", ps);
  if (grid == 0 || ps[0] % (grid * grid) != 0) {
    throw ShapeError("restore_patches: patch count " + std::to_string(ps[0]) + " is not a multiple of grid^2");
  }
  const Shape image{ps[0] / (grid * grid), ps[1], ps[2] * grid, ps[3] * grid};
  Tensor out(image);
  const double* src = patches.value().raw();
  double* dst = out.raw();
  for_each_patch_row(image, grid, [&](std::size_t s, std::size_t d, std::size_t n) { std::copy_n(src + d, n, dst + s); });
  return patches.tape().record(std::move(out), "restore_patches", {patches},
                               [patches, image, grid](const Tensor&, const Tensor& g, BackwardContext& ctx) {
                                 if (Tensor* gp = ctx.grad(patches)) {
                                   double* dst = gp->raw();
                                   const double* src = g.raw();
                                   for_each_patch_row(image, grid, [&](std::size_t s, std::size_t d, std::size_t n) {
                                     for (std::size_t i = 0; i < n; ++i) dst[d + i] += src[s + i];
                                   });
                                 }
                               });
}

}  // namespace cmslstm::ops

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "cmslstm/error.hpp"
#include "cmslstm/ops.hpp"

namespace cmslstm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_2d(const char* op, const Shape& s) {
  if (s.size() != 2) throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_string(s));
}

// In-place row softmax of an R x C row-major block.
void softmax_rows_inplace(double* m, std::size_t rows, std::size_t cols) {
  MapMat all(m, rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = all.row(static_cast<Eigen::Index>(r)).array();
    row = (row - row.maxCoeff()).exp();
    row *= 1.0 / row.sum();
  }
}

struct AttentionGeometry {
  std::size_t patches, channels, positions;
};

AttentionGeometry attention_geometry(const Shape& q, const Shape& k, const Shape* v) {
  if (q.size() != 4) throw ShapeError("attention: expected [P,C2,h,w], got " + shape_string(q));
  if (k != q || (v && *v != q)) throw ShapeError("attention: q, k, v must share one shape " + shape_string(q));
  return {q[0], q[1], q[2] * q[3]};
}

// A = softmax_rows(Q^T K) for one patch; Q, K are [C2, N].
void attention_weights(const double* q, const double* k, std::size_t c2, std::size_t n, RowMat& a) {
  a.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  a.noalias() = ConstMapMat(q, c2, n).transpose() * ConstMapMat(k, c2, n);
  softmax_rows_inplace(a.data(), n, n);
}

}  // namespace

Tensor attention_mass(const Tensor& q, const Tensor& k) {
  const AttentionGeometry g = attention_geometry(q.shape(), k.shape(), nullptr);
  Tensor out({g.patches, q.dim(2), q.dim(3)});
  RowMat a;
  const std::size_t stride = g.channels * g.positions;
  for (std::size_t p = 0; p < g.patches; ++p) {
    attention_weights(q.raw() + p * stride, k.raw() + p * stride, g.channels, g.positions, a);
    for (std::size_t m = 0; m < g.positions; ++m) {
      double mass = 0.0;
      for (std::size_t n = 0; n < g.positions; ++n) mass += a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
      out[p * g.positions + m] = mass;
    }
  }
  return out;
}

namespace ops {

Var matmul(const Var& a, const Var& b) {
  require_2d("matmul", a.shape());
  require_2d("matmul", b.shape());
  const std::size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  if (b.shape()[0] != K) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({M, N});
  MapMat(out.raw(), M, N).noalias() = ConstMapMat(a.value().raw(), M, K) * ConstMapMat(b.value().raw(), K, N);
  return a.tape().record(std::move(out), "matmul", {a, b},
                         [a, b, M, K, N](const Tensor&, const Tensor& g, BackwardContext& ctx) {
                           const ConstMapMat go(g.raw(), M, N);
                           if (Tensor* ga = ctx.grad(a)) {
                             MapMat(ga->raw(), M, K).noalias() += go * ConstMapMat(ctx.value(b).raw(), K, N).transpose();
                           }
                           if (Tensor* gb = ctx.grad(b)) {
                             MapMat(gb->raw(), K, N).noalias() += ConstMapMat(ctx.value(a).raw(), M, K).transpose() * go;
                           }
                         });
}

Var transpose(const Var& a) {
  require_2d("transpose", a.shape());
  const std::size_t R = a.shape()[0], C = a.shape()[1];
  Tensor out({C, R});
  MapMat(out.raw(), C, R) = ConstMapMat(a.value().raw(), R, C).transpose();
  return a.tape().record(std::move(out), "transpose", {a}, [a, R, C](const Tensor&, const Tensor& g, BackwardContext& ctx) {
    if (Tensor* ga = ctx.grad(a)) MapMat(ga->raw(), R, C) += ConstMapMat(g.raw(), C, R).transpose();
  });
}

Var softmax_rows(const Var& m) {
  require_2d("softmax_rows", m.shape());
  const std::size_t R = m.shape()[0], C = m.shape()[1];
  Tensor out = m.value();
  softmax_rows_inplace(out.raw(), R, C);
  return m.tape().record(std::move(out), "softmax_rows", {m},
                         [m, R, C](const Tensor& y, const Tensor& g, BackwardContext& ctx) {
                           Tensor* gm = ctx.grad(m);
                           if (!gm) return;
                           for (std::size_t r = 0; r < R; ++r) {
                             const double* yr = y.raw() + r * C;
                             const double* gr = g.raw() + r * C;
                             double dot = 0.0;
                             for (std::size_t c = 0; c < C; ++c) dot += yr[c] * gr[c];
                             double* out = gm->raw() + r * C;
                             for (std::size_t c = 0; c < C; ++c) out[c] += yr[c] * (gr[c] - dot);
                           }
                         });
}

Var attention(const Var& q, const Var& k, const Var& v) {
  const AttentionGeometry geo = attention_geometry(q.shape(), k.shape(), &v.shape());
  const std::size_t C2 = geo.channels, N = geo.positions, stride = C2 * N;
  Tensor out(q.shape());
  // The weights are kept for the backward pass.
  std::vector<RowMat> weights(geo.patches);
  for (std::size_t p = 0; p < geo.patches; ++p) {
    RowMat& a = weights[p];
    attention_weights(q.value().raw() + p * stride, k.value().raw() + p * stride, C2, N, a);
    MapMat(out.raw() + p * stride, C2, N).noalias() = ConstMapMat(v.value().raw() + p * stride, C2, N) * a.transpose();
  }

  return q.tape().record(
      std::move(out), "attention", {q, k, v},
      [q, k, v, geo, weights = std::move(weights)](const Tensor&, const Tensor& g, BackwardContext& ctx) {
        const std::size_t C2 = geo.channels, N = geo.positions, stride = C2 * N;
        Tensor* gq = ctx.grad(q);
        Tensor* gk = ctx.grad(k);
        Tensor* gv = ctx.grad(v);
        RowMat da;
        for (std::size_t p = 0; p < geo.patches; ++p) {
          const RowMat& a = weights[p];
          const double* qp = ctx.value(q).raw() + p * stride;
          const double* kp = ctx.value(k).raw() + p * stride;
          const ConstMapMat vp(ctx.value(v).raw() + p * stride, C2, N);
          const ConstMapMat go(g.raw() + p * stride, C2, N);
          if (gv) MapMat(gv->raw() + p * stride, C2, N).noalias() += go * a;
          if (!gq && !gk) continue;
          // dA = dO^T V, then the softmax Jacobian turns it into dS in place.
          da.noalias() = go.transpose() * vp;
          for (std::size_t n = 0; n < N; ++n) {
            const auto row = static_cast<Eigen::Index>(n);
            const double dot = a.row(row).dot(da.row(row));
            da.row(row).array() = a.row(row).array() * (da.row(row).array() - dot);
          }
          if (gq) MapMat(gq->raw() + p * stride, C2, N).noalias() += ConstMapMat(kp, C2, N) * da.transpose();
          if (gk) MapMat(gk->raw() + p * stride, C2, N).noalias() += ConstMapMat(qp, C2, N) * da;
        }
      });
}

}  // namespace ops
}  // namespace cmslstm

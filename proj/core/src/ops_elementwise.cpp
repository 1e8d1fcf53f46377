#include <cmath>

#include "cmslstm/error.hpp"
#include "cmslstm/ops.hpp"

namespace cmslstm {

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace ops {

namespace {

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape().record(std::move(out), "add", {a, b}, [a, b](const Tensor&, const Tensor& g, BackwardContext& ctx) {
    for (const Var& v : {a, b}) {
      if (Tensor* ga = ctx.grad(v)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return a.tape().record(std::move(out), "sub", {a, b}, [a, b](const Tensor&, const Tensor& g, BackwardContext& ctx) {
    if (Tensor* ga = ctx.grad(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = ctx.grad(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape("hadamard", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record(std::move(out), "hadamard", {a, b},
                         [a, b](const Tensor&, const Tensor& g, BackwardContext& ctx) {
                           if (Tensor* ga = ctx.grad(a)) {
                             const Tensor& bv = ctx.value(b);
                             for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
                           }
                           if (Tensor* gb = ctx.grad(b)) {
                             const Tensor& av = ctx.value(a);
                             for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
                           }
                         });
}

Var scale(const Var& a, double s) {
  Tensor out = map(a.value(), [s](double v) { return s * v; });
  return a.tape().record(std::move(out), "scale", {a}, [a, s](const Tensor&, const Tensor& g, BackwardContext& ctx) {
    if (Tensor* ga = ctx.grad(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
    }
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = map(a.value(), [s](double v) { return v + s; });
  return a.tape().record(std::move(out), "add_scalar", {a}, [a](const Tensor&, const Tensor& g, BackwardContext& ctx) {
    if (Tensor* ga = ctx.grad(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out = map(x.value(), sigmoid_value);
  return x.tape().record(std::move(out), "sigmoid", {x}, [x](const Tensor& y, const Tensor& g, BackwardContext& ctx) {
    if (Tensor* gx = ctx.grad(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (1.0 - y[i]);
    }
  });
}

Var tanh(const Var& x) {
  Tensor out = map(x.value(), [](double v) { return std::tanh(v); });
  return x.tape().record(std::move(out), "tanh", {x}, [x](const Tensor& y, const Tensor& g, BackwardContext& ctx) {
    if (Tensor* gx = ctx.grad(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (1.0 - y[i] * y[i]);
    }
  });
}

// Subgradient 0 at 0.
Var abs(const Var& x) {
  Tensor out = map(x.value(), [](double v) { return std::abs(v); });
  return x.tape().record(std::move(out), "abs", {x}, [x](const Tensor&, const Tensor& g, BackwardContext& ctx) {
    if (Tensor* gx = ctx.grad(x)) {
      const Tensor& xv = ctx.value(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double sign = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
        (*gx)[i] += g[i] * sign;
      }
    }
  });
}

Var square(const Var& x) {
  Tensor out = map(x.value(), [](double v) { return v * v; });
  return x.tape().record(std::move(out), "square", {x}, [x](const Tensor&, const Tensor& g, BackwardContext& ctx) {
    if (Tensor* gx = ctx.grad(x)) {
      const Tensor& xv = ctx.value(x);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += 2.0 * xv[i] * g[i];
    }
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record(Tensor::scalar(total), "sum", {x}, [x](const Tensor&, const Tensor& g, BackwardContext& ctx) {
    if (Tensor* gx = ctx.grad(x)) {
      for (double& v : gx->data()) v += g[0];
    }
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record(Tensor::scalar(total / n), "mean", {x},
                         [x, n](const Tensor&, const Tensor& g, BackwardContext& ctx) {
                           if (Tensor* gx = ctx.grad(x)) {
                             const double d = g[0] / n;
                             for (double& v : gx->data()) v += d;
                           }
                         });
}

const std::vector<std::string>& primitive_names() {
  static const std::vector<std::string> names = {
      "add",     "sub",          "hadamard", "scale",   "add_scalar",      "sigmoid",         "tanh",
      "abs",     "square",       "sum",      "mean",    "reshape",         "concat",          "split",
      "matmul",  "transpose",    "softmax_rows", "conv2d", "layer_norm",   "extract_patches", "restore_patches",
      "attention"};
  return names;
}

}  // namespace ops
}  // namespace cmslstm

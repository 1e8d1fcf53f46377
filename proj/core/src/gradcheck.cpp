#include "cmslstm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <set>

#include "cmslstm/cells.hpp"
#include "cmslstm/error.hpp"
#include "cmslstm/model.hpp"
#include "cmslstm/ops.hpp"
#include "cmslstm/random.hpp"
#include "cmslstm/train.hpp"

namespace cmslstm::gradcheck {

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Entries at least 0.2 away from zero, for kinks at the origin.
Tensor away_from_zero(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = ((rng.next() & 1) ? 1.0 : -1.0) * rng.uniform(0.2, 1.0);
  return t;
}

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

struct Evaluation {
  double value = 0.0;
  std::vector<Tensor> grads;
  std::vector<std::string> ops;
};

Evaluation evaluate(const Case& c, const std::vector<Tensor>& inputs, const Tensor* projection, bool with_grads,
                    Shape* out_shape = nullptr) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
  Var out = c.forward(vars);
  if (out_shape) *out_shape = out.shape();
  if (projection) out = ops::sum(ops::hadamard(out, tape.constant(*projection)));
  else out = ops::sum(out);
  Evaluation e;
  e.value = out.value().item();
  if (with_grads) {
    const Gradients g = tape.backward(out);
    for (const Var& v : vars) e.grads.push_back(g.of(v));
    std::set<std::string> seen;
    for (std::size_t id = 0; id < tape.size(); ++id) seen.insert(tape.op(id));
    e.ops.assign(seen.begin(), seen.end());
  }
  return e;
}

// Case whose inputs are the cell inputs followed by the store entries whose
// names contain one of `filters`; `body` receives the bound cell parameters.
using CellBody = std::function<Var(const Var& x, const Var& h, const Var& c, const cells::CellParams& p)>;

Case cell_case(std::string name, const ModelConfig& config, std::uint64_t seed,
               const std::vector<std::string>& filters, CellBody body) {
  auto store = std::make_shared<nn::ParamStore>(model::init_params(config, seed));
  Rng rng(derive_seed(seed, 0xCE11));
  std::vector<std::string> names;
  for (auto& e : store->entries()) {
    // Perturb every entry so no test relies on the identity initializations.
    for (double& v : e.value.data()) v += rng.uniform(-0.3, 0.3);
    const bool wanted = std::any_of(filters.begin(), filters.end(),
                                    [&](const std::string& f) { return e.name.find(f) != std::string::npos; });
    if (wanted && e.name.rfind(model::layer_prefix(0), 0) == 0) names.push_back(e.name);
  }
  const std::size_t S = config.frame_size, C = config.hidden;
  Case out;
  out.name = std::move(name);
  out.inputs.push_back(random_tensor(rng, {1, config.frame_channels, S, S}, 0.0, 1.0));
  out.inputs.push_back(random_tensor(rng, {1, C, S, S}));
  out.inputs.push_back(random_tensor(rng, {1, C, S, S}));
  for (const auto& n : names) out.inputs.push_back(store->at(n).value);
  out.forward = [store, names, config, body](const std::vector<Var>& v) {
    nn::GraphParams params(v[0].tape(), *store);
    for (std::size_t i = 0; i < names.size(); ++i) params.bind(names[i], v[3 + i]);
    const cells::CellParams cell = model::bind_cell(params, config, 0);
    return body(v[0], v[1], v[2], cell);
  };
  return out;
}

std::string ablation_name(bool ce, bool se) {
  return std::string("cms_cell[") + (ce ? "+CE," : "-CE,") + (se ? "+SE]" : "-SE]");
}

}  // namespace

Var faulty_square(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= v;
  return x.tape().record(std::move(out), "faulty_square", {x},
                         [x](const Tensor&, const Tensor& g, BackwardContext& ctx) {
                           Tensor* gx = ctx.grad(x);
                           if (!gx) return;
                           const Tensor& xv = x.value();
                           for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += 3.0 * xv[i] * g[i];
                         });
}

double relative_error(const Tensor& analytic, const Tensor& numeric) {
  if (analytic.shape() != numeric.shape()) throw ShapeError("relative_error: shape mismatch");
  std::vector<double> diff(analytic.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
  const double scale = std::max(l2(analytic.data()), l2(numeric.data()));
  if (scale == 0.0) return 0.0;
  return l2(diff) / scale;
}

CaseResult check_case(const Case& c, double h, double tolerance, std::uint64_t seed) {
  Shape out_shape;
  evaluate(c, c.inputs, nullptr, false, &out_shape);
  Rng rng(derive_seed(seed, 0x9E0));
  const Tensor projection = random_tensor(rng, out_shape, 0.5, 1.5);
  const Evaluation base = evaluate(c, c.inputs, &projection, true);

  CaseResult r;
  r.name = c.name;
  r.ops = base.ops;
  std::vector<Tensor> work = c.inputs;
  std::vector<double> analytic, numeric_all;
  for (std::size_t i = 0; i < work.size(); ++i) {
    Tensor numeric(work[i].shape(), 0.0);
    for (std::size_t j = 0; j < work[i].size(); ++j) {
      const double saved = work[i][j];
      work[i][j] = saved + h;
      const double plus = evaluate(c, work, &projection, false).value;
      work[i][j] = saved - h;
      const double minus = evaluate(c, work, &projection, false).value;
      work[i][j] = saved;
      numeric[j] = (plus - minus) / (2.0 * h);
    }
    r.elements += work[i].size();
    analytic.insert(analytic.end(), base.grads[i].data().begin(), base.grads[i].data().end());
    numeric_all.insert(numeric_all.end(), numeric.data().begin(), numeric.data().end());
  }
  r.worst_rel_error = relative_error(Tensor({analytic.size()}, analytic), Tensor({numeric_all.size()}, numeric_all));
  r.passed = r.worst_rel_error < tolerance;
  return r;
}

ModelConfig default_cell_config() {
  ModelConfig c;
  c.layers = 1;
  c.hidden = 2;
  c.kernel = 3;
  c.frame_channels = 1;
  c.frame_size = 4;
  c.se_scales = {1, 2};
  return c;
}

std::vector<Case> suite(const Options& options) {
  Rng rng(derive_seed(options.seed, 0x5017E));
  std::vector<Case> cases;
  const auto add = [&cases](std::string name, std::vector<Tensor> inputs, std::function<Var(const std::vector<Var>&)> f) {
    cases.push_back({std::move(name), std::move(inputs), std::move(f)});
  };
  const auto r = [&rng](Shape s) { return random_tensor(rng, std::move(s)); };

  add("add", {r({2, 3}), r({2, 3})}, [](const auto& v) { return ops::add(v[0], v[1]); });
  add("sub", {r({2, 3}), r({2, 3})}, [](const auto& v) { return ops::sub(v[0], v[1]); });
  add("hadamard", {r({2, 3}), r({2, 3})}, [](const auto& v) { return ops::hadamard(v[0], v[1]); });
  add("scale", {r({2, 3})}, [](const auto& v) { return ops::scale(v[0], -1.7); });
  add("add_scalar", {r({2, 3})}, [](const auto& v) { return ops::add_scalar(v[0], 0.3); });
  add("sigmoid", {r({2, 3})}, [](const auto& v) { return ops::sigmoid(v[0]); });
  add("tanh", {r({2, 3})}, [](const auto& v) { return ops::tanh(v[0]); });
  add("abs", {away_from_zero(rng, {2, 3})}, [](const auto& v) { return ops::abs(v[0]); });
  add("square", {r({2, 3})}, [](const auto& v) { return ops::square(v[0]); });
  add("sum", {r({2, 3})}, [](const auto& v) { return ops::sum(v[0]); });
  add("mean", {r({2, 3})}, [](const auto& v) { return ops::mean(v[0]); });
  add("reshape", {r({2, 3})}, [](const auto& v) { return ops::reshape(v[0], {3, 2}); });
  add("concat", {r({2, 1, 2}), r({2, 2, 2})}, [](const auto& v) { return ops::concat({v[0], v[1]}, 1); });
  add("split", {r({2, 3, 2})}, [](const auto& v) {
    auto parts = ops::split(v[0], {1, 2}, 1);
    return ops::concat({parts[1], parts[0]}, 1);
  });
  add("matmul", {r({2, 3}), r({3, 4})}, [](const auto& v) { return ops::matmul(v[0], v[1]); });
  add("transpose", {r({2, 3})}, [](const auto& v) { return ops::transpose(v[0]); });
  add("softmax_rows", {r({3, 4})}, [](const auto& v) { return ops::softmax_rows(v[0]); });
  add("conv2d", {r({2, 2, 4, 5}), r({3, 2, 3, 3}), r({3})},
      [](const auto& v) { return ops::conv2d(v[0], v[1], v[2]); });
  add("conv2d[1x1]", {r({2, 3, 3, 3}), r({2, 3, 1, 1}), r({2})},
      [](const auto& v) { return ops::conv2d(v[0], v[1], v[2]); });
  add("conv2d[5x5,no bias]", {r({1, 2, 4, 4}), r({2, 2, 5, 5})},
      [](const auto& v) { return ops::conv2d(v[0], v[1], std::nullopt); });
  add("layer_norm", {r({2, 3, 2, 2}), r({3}), r({3})},
      [](const auto& v) { return ops::layer_norm(v[0], v[1], v[2], 1e-5); });
  add("extract_patches", {r({2, 2, 4, 4})}, [](const auto& v) { return ops::extract_patches(v[0], 2); });
  add("restore_patches", {r({8, 2, 2, 2})}, [](const auto& v) { return ops::restore_patches(v[0], 2); });
  add("attention", {r({2, 3, 2, 2}), r({2, 3, 2, 2}), r({2, 3, 2, 2})},
      [](const auto& v) { return ops::attention(v[0], v[1], v[2]); });
  add("loss_l1_l2", {r({2, 3}), r({2, 3})}, [](const auto& v) {
    // Keep every difference away from the L1 kink.
    return train::loss_l1_l2(ops::add_scalar(v[0], 3.0), v[1]);
  });
  if (options.inject_fault) {
    add("faulty_square", {r({2, 3})}, [](const auto& v) { return faulty_square(v[0]); });
  }

  ModelConfig full = options.cell;
  full.enable_ce = true;
  full.enable_se = true;
  const std::uint64_t seed = options.seed;
  cases.push_back(cell_case("ce_block", full, seed, {".ce."}, [](const Var& x, const Var& h, const Var&, const auto& p) {
    const auto out = cells::ce_block(x, h, *p.ce);
    return ops::concat({ops::reshape(out.x, {x.value().size()}), ops::reshape(out.h, {h.value().size()})}, 0);
  }));
  cases.push_back(cell_case("convlstm_gates", full, seed, {".gate."},
                            [](const Var& x, const Var& h, const Var& c, const auto& p) {
                              const auto s = cells::convlstm_gates(x, h, c, p.gates);
                              return ops::concat({s.h, s.c}, 1);
                            }));
  cases.push_back(cell_case("bam", full, seed, {".se.s" + std::to_string(full.se_scales.back()) + ".", ".se.shared."},
                            [](const Var&, const Var& h, const Var& c, const auto& p) {
                              const auto& scale = p.se->scales.back();
                              const Var z = ops::extract_patches(ops::concat({h, c}, 1), scale.grid);
                              return cells::bam(z, scale.qkv);
                            }));
  cases.push_back(cell_case("se_block", full, seed, {".se."}, [](const Var&, const Var& h, const Var& c, const auto& p) {
    const auto s = cells::se_block(h, c, *p.se);
    return ops::concat({s.h, s.c}, 1);
  }));
  for (bool ce : {false, true}) {
    for (bool se : {false, true}) {
      ModelConfig config = options.cell;
      config.enable_ce = ce;
      config.enable_se = se;
      cases.push_back(cell_case(ablation_name(ce, se), config, seed, {"."},
                                [](const Var& x, const Var& h, const Var& c, const auto& p) {
                                  const auto s = cells::cms_cell_step(x, {h, c}, p);
                                  return ops::concat({s.h, s.c}, 1);
                                }));
    }
  }
  return cases;
}

Report run(const Options& options) {
  options.cell.validate();
  Report report;
  std::set<std::string> seen;
  for (const Case& c : suite(options)) {
    report.cases.push_back(check_case(c, options.h, options.tolerance, options.seed));
    seen.insert(report.cases.back().ops.begin(), report.cases.back().ops.end());
  }
  for (const auto& name : ops::primitive_names()) {
    if (!seen.count(name)) report.uncovered.push_back(name);
  }
  report.passed = report.uncovered.empty();
  for (const auto& c : report.cases) {
    report.worst = std::max(report.worst, c.worst_rel_error);
    report.passed = report.passed && c.passed;
  }
  return report;
}

std::string format_report(const Report& report, double tolerance) {
  std::string out;
  char line[256];
  for (const auto& c : report.cases) {
    std::snprintf(line, sizeof line, "%-24s %6zu  %.3e  %s\n", c.name.c_str(), c.elements, c.worst_rel_error,
                  c.passed ? "ok" : "FAIL");
    out += line;
  }
  for (const auto& u : report.uncovered) out += "uncovered primitive: " + u + "\n";
  std::snprintf(line, sizeof line, "gradcheck %s: %zu cases, worst %.3e, tolerance %.1e\n",
                report.passed ? "passed" : "FAILED", report.cases.size(), report.worst, tolerance);
  out += line;
  return out;
}

}  // namespace cmslstm::gradcheck

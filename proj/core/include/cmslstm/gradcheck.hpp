#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cmslstm/autodiff.hpp"
#include "cmslstm/config.hpp"

namespace cmslstm::gradcheck {

/// A differentiable function of `inputs`. Non-scalar outputs are reduced to
/// sum(out o R) with a fixed random R so every output entry contributes.
struct Case {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Var(const std::vector<Var>&)> forward;
};

struct CaseResult {
  std::string name;
  std::size_t elements = 0;  // scalars perturbed
  double worst_rel_error = 0.0;  // norm-wise over all inputs
  bool passed = false;
  std::vector<std::string> ops;  // distinct tape ops the case exercised
};

/// Relative error ||a - n|| / max(||a||, ||n||), 0 when both vanish.
double relative_error(const Tensor& analytic, const Tensor& numeric);

/// Compares backward() against central differences with step h. The error is
/// relative_error over the gradient of all inputs taken as one vector, so a
/// parameter whose true gradient vanishes (e.g. a key bias under softmax) does
/// not turn rounding noise into a ratio of order one.
CaseResult check_case(const Case& c, double h, double tolerance, std::uint64_t seed);

/// B=1 cell geometry: one layer, 2 hidden channels, 3x3 kernels, 4x4 frames, scales {1,2}.
ModelConfig default_cell_config();

struct Options {
  double h = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 7;
  /// Geometry of the cell cases; enable_ce/enable_se are overridden per ablation.
  ModelConfig cell = default_cell_config();
  /// Adds a primitive whose backward is deliberately wrong.
  bool inject_fault = false;
};

/// Every primitive, the loss, the CE / SE / gate blocks and the full cell in
/// each {+-CE, +-SE} configuration.
std::vector<Case> suite(const Options& options);

struct Report {
  std::vector<CaseResult> cases;
  std::vector<std::string> uncovered;  // registered primitives no case exercised
  bool passed = false;
  double worst = 0.0;
};

Report run(const Options& options);

/// One line per case: "<name> <worst rel error> <ok|FAIL>", then a summary line.
std::string format_report(const Report& report, double tolerance);

/// Primitive with the forward of square() but backward 3x instead of 2x.
Var faulty_square(const Var& x);

}  // namespace cmslstm::gradcheck

#pragma once

// Desk-scale ablation protocol: 32x32 frames, 2 shapes, 10 -> 10 frames,
// 2000 / 200 sequences; 2 layers, 16 hidden, 5x5 kernels, SE scales {1,2};
// 2000 iterations at batch 8, lr 0.001.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cmslstm/metrics.hpp"
#include "cmslstm/run_config.hpp"
#include "cmslstm/train.hpp"

namespace cmslstm::ablation {

inline constexpr std::size_t kFrameSize = 32;
inline constexpr std::size_t kShapes = 2;
inline constexpr std::size_t kTin = 10;
inline constexpr std::size_t kTout = 10;
inline constexpr std::size_t kTrainSequences = 2000;
inline constexpr std::size_t kTestSequences = 200;
inline constexpr std::size_t kIterations = 2000;
inline constexpr double kRuntimeTargetSeconds = 45.0 * 60.0;

/// The full CMS configuration of the protocol.
RunConfig reference_config(std::uint64_t seed = 1, std::size_t iters = kIterations);

/// Hidden width of a plain ConvLSTM (no CE, no SE) whose parameter count is
/// closest to that of `target`.
std::size_t matched_hidden(const ModelConfig& target);

/// Named variants of the reference config:
///   cms             CE + SE
///   ce              CE only
///   se              SE only
///   convlstm        plain ConvLSTM, hidden width matched to cms's parameter count
///   convlstm_small  plain ConvLSTM at the reference width
/// All seeds (init, shuffle, sampling) derive from `seed`.
RunConfig named_config(const std::string& name, std::uint64_t seed, std::size_t iters = kIterations);

struct RunSpec {
  std::string label;  // "<name>_s<seed>" or "<name>_s<seed>_repeat"
  std::string name;
  std::uint64_t seed = 0;
  bool repeat = false;
  RunConfig config;
};

/// Configurations x seeds, in seed-major order so every configuration gets a
/// first seed before any gets a second. `repeat` adds a second run of the
/// first configuration's first seed right after the first run.
std::vector<RunSpec> sweep_specs(const std::vector<std::string>& names, const std::vector<std::uint64_t>& seeds,
                                 std::size_t iters, bool repeat);

struct RunResult {
  std::string label;
  std::string name;
  std::uint64_t seed = 0;
  bool repeat = false;
  std::size_t parameters = 0;
  std::size_t iterations = 0;
  double loss_first10 = 0.0;   // mean loss of iterations 1..10
  double loss_last10 = 0.0;    // mean loss of the last 10 iterations
  double loss_reduction = 0.0; // 1 - last10 / first10
  double test_mse = 0.0;
  double test_mae = 0.0;
  double test_psnr = 0.0;
  double test_ssim = 0.0;
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
};

double loss_reduction(const std::vector<train::LogRow>& log);

RunResult summarize(const RunSpec& spec, const std::vector<train::LogRow>& log, const metrics::MetricReport& report);
std::string format_result(const RunResult& r);
RunResult parse_result(std::string_view text);

/// Every <sweep>/runs/*/result.txt, sorted by label.
std::vector<RunResult> collect_results(const std::filesystem::path& sweep);
std::string format_summary(const std::vector<RunResult>& results);

struct Verdict {
  bool complete = false;  // every required run is present
  bool passed = false;
  std::string detail;
};

/// (a) every cms run cuts its loss by >= 50%; (b) cms beats convlstm on test
/// MSE for >= 2 of 3 seeds; (c) ce beats convlstm on >= 2 of 3 seeds; and the
/// whole sweep ran within the runtime target.
Verdict judge_training(const std::vector<RunResult>& results, const std::vector<std::uint64_t>& seeds);

/// Loss curves of <name>_s<seed> and its repeat agree to 1e-9 and both final
/// checkpoints are byte-identical.
Verdict judge_determinism(const std::filesystem::path& sweep, const std::string& label);

}  // namespace cmslstm::ablation

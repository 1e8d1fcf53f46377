#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cmslstm/autodiff.hpp"
#include "cmslstm/data.hpp"
#include "cmslstm/error.hpp"
#include "cmslstm/metrics.hpp"
#include "cmslstm/model.hpp"
#include "cmslstm/nn.hpp"
#include "cmslstm/run_config.hpp"

namespace cmslstm::train {

/// mean(|d| + d^2) with d = pred - target.
Var loss_l1_l2(const Var& pred, const Var& target);

struct SamplingSchedule {
  double eps0 = 1.0;
  double eps_min = 0.0;
  std::size_t decay_iters = 1;

  /// max(eps_min, eps0 - it/decay_iters) (with eps0 = 1 this is the linear schedule).
  double epsilon(std::size_t iteration) const;
};

SamplingSchedule schedule_for(const RunConfig& config);

/// Bernoulli(epsilon(iteration)) teacher-forcing mask [batch, t_out-1]. Each
/// entry is drawn from its own counter-keyed stream (seed, iteration, b, j).
model::SamplingMask sample_mask(const SamplingSchedule& schedule, std::size_t iteration, std::size_t t_out,
                                std::size_t batch, std::uint64_t seed);

struct LogRow {
  std::size_t iteration = 0;  // 1-based
  double loss = 0.0;
  double epsilon = 0.0;
  double elapsed_ms = 0.0;
};

/// "iteration,loss,epsilon,elapsed_ms" rows.
std::string format_log(const std::vector<LogRow>& rows);
std::vector<LogRow> parse_log(std::string_view csv);

/// Thrown when the loss of an iteration is not finite; the log up to and
/// including that iteration has been written.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, std::size_t iteration) : NumericError(what), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

struct TrainHooks {
  std::function<void(const LogRow&)> on_iteration;
};

struct TrainResult {
  nn::ParamStore store;
  nn::AdamWState optimizer;
  std::vector<LogRow> log;
  std::filesystem::path final_checkpoint;  // empty when out_dir is empty
};

/// State to continue an interrupted run: a checkpoint written at iteration
/// log.size() and the log rows up to it.
struct ResumePoint {
  nn::ParamStore store;
  nn::AdamWState optimizer;
  std::vector<LogRow> log;
};

/// Latest ckpt_<iter>.cmsl in `out_dir` with the matching log prefix, if any.
std::optional<ResumePoint> find_resume_point(const std::filesystem::path& out_dir);

/// One optimization step on a batch [B,T,F,H,W]. Each sample is its own graph;
/// gradients are summed in batch order with the loss scaled by 1/B. Returns the
/// batch loss.
double train_step(nn::ParamStore& store, nn::AdamWState& opt, const ModelConfig& model, const Tensor& frames,
                  std::size_t t_in, const model::SamplingMask& mask);

/// Runs config.iters iterations on `train_set`. When config.out_dir is set it
/// receives config.txt, log.csv, ckpt_<iter>.cmsl every checkpoint interval and
/// final.cmsl. A pure function of (config, train_set) apart from elapsed_ms;
/// resuming from a checkpoint of the same run gives the same result.
TrainResult train_loop(const RunConfig& config, const data::Dataset& train_set, const TrainHooks& hooks = {},
                       std::optional<ResumePoint> resume = std::nullopt);
/// Loads config.dataset; throws IoError when missing.
TrainResult train_loop(const RunConfig& config, const TrainHooks& hooks = {});

/// Pure autoregressive predictions [B, t_out, F, H, W]: ground truth is only
/// read for the first t_in frames.
Tensor predict(const nn::ParamStore& store, const ModelConfig& model, const Tensor& frames, std::size_t t_in,
               std::vector<model::FrameDiagnostics>* diagnostics = nullptr);

/// Metrics of pure autoregression over every sequence of `dataset`.
metrics::MetricReport evaluate(const nn::ParamStore& store, const ModelConfig& model, const data::Dataset& dataset,
                               std::size_t t_in);

/// Checks the checkpoint against init_params(model) first (ConfigError naming
/// the first mismatched parameter).
metrics::MetricReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const ModelConfig& model,
                                          const data::Dataset& dataset, std::size_t t_in);

}  // namespace cmslstm::train

#include "cmslstm/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "cmslstm/checkpoint.hpp"
#include "cmslstm/io.hpp"
#include "cmslstm/ops.hpp"
#include "cmslstm/random.hpp"

namespace cmslstm::train {

namespace {

constexpr std::uint64_t kMaskStream = 0x4D41534BULL;  // "MASK"

// frames[b] as [1,T,F,H,W].
Tensor sample(const Tensor& frames, std::size_t b) {
  const Shape& s = frames.shape();
  const std::size_t n = s[1] * s[2] * s[3] * s[4];
  Tensor out({1, s[1], s[2], s[3], s[4]});
  std::copy_n(frames.raw() + b * n, n, out.raw());
  return out;
}

// frames[:, t_in:] as [B,t_out,F,H,W].
Tensor targets(const Tensor& frames, std::size_t t_in) {
  const Shape& s = frames.shape();
  const std::size_t B = s[0], T = s[1], frame = s[2] * s[3] * s[4];
  const std::size_t t_out = T - t_in;
  Tensor out({B, t_out, s[2], s[3], s[4]});
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(frames.raw() + (b * T + t_in) * frame, t_out * frame, out.raw() + b * t_out * frame);
  }
  return out;
}

void check_dataset(const ModelConfig& model, const data::Dataset& dataset, std::size_t t_in) {
  const auto& h = dataset.header();
  if (h.height != model.frame_size || h.width != model.frame_size || h.channels != model.frame_channels) {
    throw ConfigError("dataset frames " + std::to_string(h.channels) + "x" + std::to_string(h.height) + "x" +
                      std::to_string(h.width) + " do not match the model (" + std::to_string(model.frame_channels) +
                      "x" + std::to_string(model.frame_size) + "x" + std::to_string(model.frame_size) + ")");
  }
  if (t_in == 0 || t_in >= h.frames) {
    throw ConfigError("t_in " + std::to_string(t_in) + " incompatible with sequences of " + std::to_string(h.frames) +
                      " frames");
  }
}

std::string checkpoint_name(std::size_t iteration) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06zu.cmsl", iteration);
  return buf;
}

}  // namespace

Var loss_l1_l2(const Var& pred, const Var& target) {
  const Var d = ops::sub(pred, target);
  return ops::mean(ops::add(ops::abs(d), ops::square(d)));
}

double SamplingSchedule::epsilon(std::size_t iteration) const {
  const double decayed = eps0 - static_cast<double>(iteration) / static_cast<double>(decay_iters);
  return std::max(eps_min, decayed);
}

SamplingSchedule schedule_for(const RunConfig& config) { return {1.0, config.eps_min, config.decay_iters()}; }

model::SamplingMask sample_mask(const SamplingSchedule& schedule, std::size_t iteration, std::size_t t_out,
                                std::size_t batch, std::uint64_t seed) {
  if (t_out == 0) throw ConfigError("sample_mask: t_out must be >= 1");
  const double eps = schedule.epsilon(iteration);
  model::SamplingMask mask(batch, t_out - 1, false);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j + 1 < t_out; ++j) {
      const std::uint64_t key = derive_seed(seed, kMaskStream ^ iteration, b, j);
      mask.set(b, j, unit_double(mix64(key)) < eps);
    }
  }
  return mask;
}

std::string format_log(const std::vector<LogRow>& rows) {
  std::string out = "iteration,loss,epsilon,elapsed_ms\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.3f\n", r.iteration, r.loss, r.epsilon, r.elapsed_ms);
    out += line;
  }
  return out;
}

std::vector<LogRow> parse_log(std::string_view csv) {
  std::vector<LogRow> rows;
  bool header = true;
  while (!csv.empty()) {
    const auto nl = csv.find('\n');
    const std::string line(csv.substr(0, nl));
    csv.remove_prefix(nl == std::string_view::npos ? csv.size() : nl + 1);
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    LogRow r;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf", &r.iteration, &r.loss, &r.epsilon, &r.elapsed_ms) != 4) {
      throw FormatError("malformed log row '" + line + "'", 0);
    }
    rows.push_back(r);
  }
  return rows;
}

double train_step(nn::ParamStore& store, nn::AdamWState& opt, const ModelConfig& model, const Tensor& frames,
                  std::size_t t_in, const model::SamplingMask& mask) {
  const std::size_t B = frames.shape().at(0);
  const double weight = 1.0 / static_cast<double>(B);
  double total = 0.0;
  store.zero_grad();
  for (std::size_t b = 0; b < B; ++b) {
    Tape tape;
    nn::GraphParams params(tape, store);
    const Tensor x = sample(frames, b);
    const Var pred = model::model_forward(params, x, model, t_in, mask.row(b));
    const Var loss = ops::scale(loss_l1_l2(pred, tape.constant(targets(x, t_in))), weight);
    total += loss.value().item();
    params.accumulate_into(store, tape.backward(loss));
  }
  if (std::isfinite(total)) adamw_step(store, opt);
  return total;
}

std::optional<ResumePoint> find_resume_point(const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(out_dir) || !fs::exists(out_dir / "log.csv")) return std::nullopt;
  std::size_t best = 0;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    const std::string name = entry.path().filename().string();
    std::size_t it = 0;
    if (std::sscanf(name.c_str(), "ckpt_%zu.cmsl", &it) == 1 && name == checkpoint_name(it)) best = std::max(best, it);
  }
  if (best == 0) return std::nullopt;
  const auto bytes = io::read_file(out_dir / "log.csv");
  auto log = parse_log(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  if (log.size() < best) return std::nullopt;
  log.resize(best);
  Checkpoint ckpt = load_checkpoint(out_dir / checkpoint_name(best));
  return ResumePoint{std::move(ckpt.store), ckpt.optimizer, std::move(log)};
}

TrainResult train_loop(const RunConfig& config, const data::Dataset& train_set, const TrainHooks& hooks,
                       std::optional<ResumePoint> resume) {
  config.validate();
  check_dataset(config.model, train_set, config.t_in);
  const std::size_t t_out = train_set.header().frames - config.t_in;

  TrainResult result{model::init_params(config.model, config.init_seed), {}, {}, {}};
  result.optimizer.lr = config.lr;
  result.optimizer.weight_decay = config.weight_decay;
  std::size_t first = 1;
  double elapsed_offset = 0.0;
  if (resume) {
    model::check_topology(result.store, resume->store);
    if (resume->log.size() > config.iters || resume->optimizer.t != resume->log.size()) {
      throw ConfigError("resume point does not belong to this run");
    }
    result.store = std::move(resume->store);
    result.optimizer = resume->optimizer;
    result.log = std::move(resume->log);
    first = result.log.size() + 1;
    if (!result.log.empty()) elapsed_offset = result.log.back().elapsed_ms;
  }

  const bool persist = !config.out_dir.empty();
  if (persist) io::atomic_write(config.out_dir / "config.txt", format_run_config(config));

  const SamplingSchedule schedule = schedule_for(config);
  data::BatchIterator batches(train_set, config.batch, config.data_seed, config.t_in);
  batches.skip(first - 1);
  const auto start = std::chrono::steady_clock::now();
  const std::size_t every = config.checkpoint_interval();

  for (std::size_t it = first; it <= config.iters; ++it) {
    const data::SequenceBatch batch = batches.next();
    // The schedule is evaluated at the number of completed iterations.
    const auto mask = sample_mask(schedule, it - 1, t_out, config.batch, config.sampling_seed);
    const double loss = train_step(result.store, result.optimizer, config.model, batch.frames, config.t_in, mask);
    const double ms =
        elapsed_offset + std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back({it, loss, schedule.epsilon(it - 1), ms});
    if (hooks.on_iteration) hooks.on_iteration(result.log.back());

    if (!std::isfinite(loss)) {
      if (persist) io::atomic_write(config.out_dir / "log.csv", format_log(result.log));
      throw DivergenceError("loss is not finite at iteration " + std::to_string(it), it);
    }
    if (persist && (it % every == 0 || it == config.iters)) {
      save_checkpoint(result.store, result.optimizer, config.out_dir / checkpoint_name(it));
      io::atomic_write(config.out_dir / "log.csv", format_log(result.log));
    }
  }
  if (persist) {
    result.final_checkpoint = config.out_dir / "final.cmsl";
    save_checkpoint(result.store, result.optimizer, result.final_checkpoint);
  }
  return result;
}

TrainResult train_loop(const RunConfig& config, const TrainHooks& hooks) {
  config.validate();
  return train_loop(config, data::load_dataset(config.dataset), hooks);
}

Tensor predict(const nn::ParamStore& store, const ModelConfig& model, const Tensor& frames, std::size_t t_in,
               std::vector<model::FrameDiagnostics>* diagnostics) {
  const Shape& s = frames.shape();
  if (s.size() != 5) throw ShapeError("predict: frames must be [B,T,F,H,W], got " + shape_string(s));
  const std::size_t B = s[0], T = s[1];
  if (t_in == 0 || t_in >= T) throw ConfigError("predict: need 1 <= t_in < T");
  const std::size_t t_out = T - t_in;
  const std::size_t frame = s[2] * s[3] * s[4];

  // Only the observed frames are handed to the model; the rest stay zero.
  Tensor observed(s, 0.0);
  for (std::size_t b = 0; b < B; ++b) std::copy_n(frames.raw() + b * T * frame, t_in * frame, observed.raw() + b * T * frame);

  Tensor out({B, t_out, s[2], s[3], s[4]});
  for (std::size_t b = 0; b < B; ++b) {
    Tape tape;
    nn::GraphParams params(tape, store, false);
    const Var pred = model::model_forward(params, sample(observed, b), model, t_in,
                                          model::SamplingMask(1, t_out - 1, false), diagnostics);
    std::copy_n(pred.value().raw(), t_out * frame, out.raw() + b * t_out * frame);
  }
  return out;
}

metrics::MetricReport evaluate(const nn::ParamStore& store, const ModelConfig& model, const data::Dataset& dataset,
                               std::size_t t_in) {
  check_dataset(model, dataset, t_in);
  metrics::MetricReport report;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const std::size_t index[1] = {i};
    const Tensor frames = dataset.gather(index);
    report.add_batch(predict(store, model, frames, t_in), targets(frames, t_in), index);
  }
  return report;
}

metrics::MetricReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const ModelConfig& model,
                                          const data::Dataset& dataset, std::size_t t_in) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  model::check_topology(model::init_params(model, 0), ckpt.store);
  return evaluate(ckpt.store, model, dataset, t_in);
}

}  // namespace cmslstm::train

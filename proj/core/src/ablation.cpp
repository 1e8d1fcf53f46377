#include "cmslstm/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "cmslstm/error.hpp"
#include "cmslstm/io.hpp"
#include "cmslstm/model.hpp"

namespace cmslstm::ablation {

namespace {

std::string text_of(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

double mean_of(const std::vector<train::LogRow>& log, std::size_t begin, std::size_t end) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += log[i].loss;
  return s / static_cast<double>(end - begin);
}

const RunResult* find(const std::vector<RunResult>& results, const std::string& name, std::uint64_t seed) {
  for (const auto& r : results) {
    if (r.name == name && r.seed == seed && !r.repeat) return &r;
  }
  return nullptr;
}

}  // namespace

RunConfig reference_config(std::uint64_t seed, std::size_t iters) {
  RunConfig c;
  c.model.layers = 2;
  c.model.hidden = 16;
  c.model.kernel = 5;
  c.model.frame_channels = 1;
  c.model.frame_size = kFrameSize;
  c.model.enable_ce = true;
  c.model.enable_se = true;
  c.model.se_scales = {1, 2};
  c.lr = 1e-3;
  c.batch = 8;
  c.iters = iters;
  c.t_in = kTin;
  c.init_seed = seed;
  c.data_seed = seed;
  c.sampling_seed = seed;
  return c;
}

std::size_t matched_hidden(const ModelConfig& target) {
  const double want = static_cast<double>(model::count_parameters(target));
  ModelConfig plain = target;
  plain.enable_ce = false;
  plain.enable_se = false;
  std::size_t best = 1;
  double best_gap = INFINITY;
  for (std::size_t h = 1; h <= 4 * target.hidden + 64; ++h) {
    plain.hidden = h;
    const double gap = std::abs(static_cast<double>(model::count_parameters(plain)) - want);
    if (gap < best_gap) {
      best_gap = gap;
      best = h;
    }
  }
  return best;
}

RunConfig named_config(const std::string& name, std::uint64_t seed, std::size_t iters) {
  RunConfig c = reference_config(seed, iters);
  if (name == "cms") return c;
  if (name == "ce") {
    c.model.enable_se = false;
  } else if (name == "se") {
    c.model.enable_ce = false;
  } else if (name == "convlstm") {
    c.model.hidden = matched_hidden(c.model);
    c.model.enable_ce = false;
    c.model.enable_se = false;
  } else if (name == "convlstm_small") {
    c.model.enable_ce = false;
    c.model.enable_se = false;
  } else {
    throw ConfigError("unknown ablation configuration '" + name + "'");
  }
  return c;
}

std::vector<RunSpec> sweep_specs(const std::vector<std::string>& names, const std::vector<std::uint64_t>& seeds,
                                 std::size_t iters, bool repeat) {
  if (names.empty() || seeds.empty()) throw ConfigError("sweep needs at least one configuration and one seed");
  std::vector<RunSpec> specs;
  for (std::uint64_t seed : seeds) {
    for (const auto& name : names) {
      specs.push_back({name + "_s" + std::to_string(seed), name, seed, false, named_config(name, seed, iters)});
      if (repeat && specs.size() == 1) {
        specs.push_back({name + "_s" + std::to_string(seed) + "_repeat", name, seed, true, named_config(name, seed, iters)});
      }
    }
  }
  return specs;
}

double loss_reduction(const std::vector<train::LogRow>& log) {
  if (log.size() < 20) throw ConfigError("loss reduction needs at least 20 logged iterations");
  return 1.0 - mean_of(log, log.size() - 10, log.size()) / mean_of(log, 0, 10);
}

RunResult summarize(const RunSpec& spec, const std::vector<train::LogRow>& log, const metrics::MetricReport& report) {
  RunResult r;
  r.label = spec.label;
  r.name = spec.name;
  r.seed = spec.seed;
  r.repeat = spec.repeat;
  r.parameters = model::count_parameters(spec.config.model);
  r.iterations = log.size();
  if (log.size() >= 20) {
    r.loss_first10 = mean_of(log, 0, 10);
    r.loss_last10 = mean_of(log, log.size() - 10, log.size());
    r.loss_reduction = loss_reduction(log);
  }
  const auto m = report.mean();
  r.test_mse = m.mse;
  r.test_mae = m.mae;
  r.test_psnr = m.psnr;
  r.test_ssim = m.ssim;
  r.train_seconds = log.empty() ? 0.0 : log.back().elapsed_ms / 1000.0;
  return r;
}

std::string format_result(const RunResult& r) {
  char buf[1024];
  std::snprintf(buf, sizeof buf,
                "label=%s\nname=%s\nseed=%llu\nrepeat=%d\nparameters=%zu\niterations=%zu\nloss_first10=%.17g\n"
                "loss_last10=%.17g\nloss_reduction=%.17g\ntest_mse=%.17g\ntest_mae=%.17g\ntest_psnr=%.17g\n"
                "test_ssim=%.17g\ntrain_seconds=%.3f\neval_seconds=%.3f\n",
                r.label.c_str(), r.name.c_str(), static_cast<unsigned long long>(r.seed), r.repeat ? 1 : 0,
                r.parameters, r.iterations, r.loss_first10, r.loss_last10, r.loss_reduction, r.test_mse, r.test_mae,
                r.test_psnr, r.test_ssim, r.train_seconds, r.eval_seconds);
  return buf;
}

RunResult parse_result(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto get = [&kv](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("run result lacks '") + key + "'", 0);
    return it->second;
  };
  RunResult r;
  r.label = get("label");
  r.name = get("name");
  r.seed = std::stoull(get("seed"));
  r.repeat = get("repeat") == "1";
  r.parameters = std::stoull(get("parameters"));
  r.iterations = std::stoull(get("iterations"));
  r.loss_first10 = std::stod(get("loss_first10"));
  r.loss_last10 = std::stod(get("loss_last10"));
  r.loss_reduction = std::stod(get("loss_reduction"));
  r.test_mse = std::stod(get("test_mse"));
  r.test_mae = std::stod(get("test_mae"));
  r.test_psnr = std::stod(get("test_psnr"));
  r.test_ssim = std::stod(get("test_ssim"));
  r.train_seconds = std::stod(get("train_seconds"));
  r.eval_seconds = std::stod(get("eval_seconds"));
  return r;
}

std::vector<RunResult> collect_results(const std::filesystem::path& sweep) {
  std::vector<RunResult> out;
  const auto runs = sweep / "runs";
  if (!std::filesystem::is_directory(runs)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(runs)) {
    const auto file = entry.path() / "result.txt";
    if (std::filesystem::exists(file)) out.push_back(parse_result(text_of(file)));
  }
  std::sort(out.begin(), out.end(), [](const RunResult& a, const RunResult& b) { return a.label < b.label; });
  return out;
}

std::string format_summary(const std::vector<RunResult>& results) {
  std::string out =
      "label,name,seed,parameters,iterations,loss_first10,loss_last10,loss_reduction,test_mse,test_mae,test_psnr,"
      "test_ssim,train_seconds,eval_seconds\n";
  char buf[512];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%s,%s,%llu,%zu,%zu,%.6f,%.6f,%.4f,%.4f,%.4f,%.4f,%.6f,%.1f,%.1f\n",
                  r.label.c_str(), r.name.c_str(), static_cast<unsigned long long>(r.seed), r.parameters,
                  r.iterations, r.loss_first10, r.loss_last10, r.loss_reduction, r.test_mse, r.test_mae, r.test_psnr,
                  r.test_ssim, r.train_seconds, r.eval_seconds);
    out += buf;
  }
  return out;
}

Verdict judge_training(const std::vector<RunResult>& results, const std::vector<std::uint64_t>& seeds) {
  Verdict v;
  std::string missing;
  for (const char* name : {"cms", "ce", "convlstm"}) {
    for (std::uint64_t s : seeds) {
      const RunResult* r = find(results, name, s);
      if (!r || r->iterations != kIterations) missing += std::string(missing.empty() ? "" : " ") + name + "_s" + std::to_string(s);
    }
  }
  if (!missing.empty()) {
    v.detail = "missing runs: " + missing;
    return v;
  }
  v.complete = true;

  bool drop_ok = true;
  std::size_t cms_wins = 0, ce_wins = 0;
  double seconds = 0.0;
  char buf[256];
  std::string drops;
  for (std::uint64_t s : seeds) {
    const RunResult& cms = *find(results, "cms", s);
    const RunResult& ce = *find(results, "ce", s);
    const RunResult& plain = *find(results, "convlstm", s);
    drop_ok = drop_ok && cms.loss_reduction >= 0.5;
    cms_wins += cms.test_mse < plain.test_mse ? 1 : 0;
    ce_wins += ce.test_mse < plain.test_mse ? 1 : 0;
    std::snprintf(buf, sizeof buf, "%s%.0f%%", drops.empty() ? "" : "/", 100.0 * cms.loss_reduction);
    drops += buf;
  }
  for (const auto& r : results) {
    if (!r.repeat) seconds += r.train_seconds + r.eval_seconds;
  }
  const bool runtime_ok = seconds < kRuntimeTargetSeconds;
  std::snprintf(buf, sizeof buf, "(a) loss drop %s; (b) cms<convlstm %zu/%zu; (c) ce<convlstm %zu/%zu; runtime %.1f min",
                drops.c_str(), cms_wins, seeds.size(), ce_wins, seeds.size(), seconds / 60.0);
  v.detail = buf;
  v.passed = drop_ok && cms_wins >= 2 && ce_wins >= 2 && runtime_ok;
  return v;
}

Verdict judge_determinism(const std::filesystem::path& sweep, const std::string& label) {
  Verdict v;
  const auto a = sweep / "runs" / label;
  const auto b = sweep / "runs" / (label + "_repeat");
  for (const auto& dir : {a, b}) {
    if (!std::filesystem::exists(dir / "result.txt")) {
      v.detail = "missing run " + dir.filename().string();
      return v;
    }
  }
  v.complete = true;
  const auto la = train::parse_log(text_of(a / "log.csv"));
  const auto lb = train::parse_log(text_of(b / "log.csv"));
  double worst = la.size() == lb.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(la.size(), lb.size()); ++i) {
    worst = std::max(worst, std::abs(la[i].loss - lb[i].loss));
  }
  const bool same_ckpt = io::read_file(a / "final.cmsl") == io::read_file(b / "final.cmsl");
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu iterations, max loss difference %.3g, final checkpoints %s", la.size(), worst,
                same_ckpt ? "identical" : "differ");
  v.detail = buf;
  v.passed = worst <= 1e-9 && same_ckpt;
  return v;
}

}  // namespace cmslstm::ablation

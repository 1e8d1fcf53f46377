#include "cmslstm/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <set>

#include "cmslstm/error.hpp"
#include "cmslstm/io.hpp"

namespace cmslstm {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key) + ", expected " + expected);
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "an unsigned integer");
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view v) { return static_cast<std::size_t>(parse_u64(key, v)); }

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_size(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) bad_value(key, v, "a comma-separated list");
  return out;
}

using Setter = std::function<void(RunConfig&, std::string_view, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"layers", [](RunConfig& c, auto k, auto v) { c.model.layers = parse_size(k, v); }},
      {"hidden", [](RunConfig& c, auto k, auto v) { c.model.hidden = parse_size(k, v); }},
      {"kernel", [](RunConfig& c, auto k, auto v) { c.model.kernel = parse_size(k, v); }},
      {"frame_channels", [](RunConfig& c, auto k, auto v) { c.model.frame_channels = parse_size(k, v); }},
      {"frame_size", [](RunConfig& c, auto k, auto v) { c.model.frame_size = parse_size(k, v); }},
      {"enable_ce", [](RunConfig& c, auto k, auto v) { c.model.enable_ce = parse_bool(k, v); }},
      {"ce_iterations", [](RunConfig& c, auto k, auto v) { c.model.ce_iterations = parse_size(k, v); }},
      {"ce_scale", [](RunConfig& c, auto k, auto v) { c.model.ce_scale = parse_double(k, v); }},
      {"enable_se", [](RunConfig& c, auto k, auto v) { c.model.enable_se = parse_bool(k, v); }},
      {"se_scales", [](RunConfig& c, auto k, auto v) { c.model.se_scales = parse_list(k, v); }},
      {"share_qkv", [](RunConfig& c, auto k, auto v) { c.model.share_qkv = parse_bool(k, v); }},
      {"layer_norm", [](RunConfig& c, auto k, auto v) { c.model.layer_norm = parse_bool(k, v); }},
      {"lr", [](RunConfig& c, auto k, auto v) { c.lr = parse_double(k, v); }},
      {"batch", [](RunConfig& c, auto k, auto v) { c.batch = parse_size(k, v); }},
      {"iters", [](RunConfig& c, auto k, auto v) { c.iters = parse_size(k, v); }},
      {"weight_decay", [](RunConfig& c, auto k, auto v) { c.weight_decay = parse_double(k, v); }},
      {"t_in", [](RunConfig& c, auto k, auto v) { c.t_in = parse_size(k, v); }},
      {"sampling_decay", [](RunConfig& c, auto k, auto v) { c.sampling_decay = parse_double(k, v); }},
      {"eps_min", [](RunConfig& c, auto k, auto v) { c.eps_min = parse_double(k, v); }},
      {"init_seed", [](RunConfig& c, auto k, auto v) { c.init_seed = parse_u64(k, v); }},
      {"data_seed", [](RunConfig& c, auto k, auto v) { c.data_seed = parse_u64(k, v); }},
      {"sampling_seed", [](RunConfig& c, auto k, auto v) { c.sampling_seed = parse_u64(k, v); }},
      {"checkpoint_every", [](RunConfig& c, auto k, auto v) { c.checkpoint_every = parse_size(k, v); }},
      {"dataset", [](RunConfig& c, auto, auto v) { c.dataset = std::string(v); }},
      {"out_dir", [](RunConfig& c, auto, auto v) { c.out_dir = std::string(v); }},
  };
  return table;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::size_t RunConfig::decay_iters() const {
  const double n = sampling_decay * static_cast<double>(iters);
  return std::max<std::size_t>(1, static_cast<std::size_t>(n + 0.5));
}

std::size_t RunConfig::checkpoint_interval() const {
  if (checkpoint_every != 0) return checkpoint_every;
  return std::max<std::size_t>(1, iters / 10);
}

void RunConfig::validate() const {
  model.validate();
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (iters == 0) throw ConfigError("iters must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (t_in == 0) throw ConfigError("t_in must be >= 1");
  if (!(sampling_decay > 0.0 && sampling_decay <= 1.0)) throw ConfigError("sampling_decay must be in (0, 1]");
  if (!(eps_min >= 0.0 && eps_min <= 1.0)) throw ConfigError("eps_min must be in [0, 1]");
}

void set_run_config_key(RunConfig& config, std::string_view key, std::string_view value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second(config, key, value);
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig config;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
    }
    try {
      set_run_config_key(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config not found: " + path.string());
  const auto bytes = io::read_file(path);
  return parse_run_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string format_run_config(const RunConfig& c) {
  const auto b = [](bool v) { return v ? std::string("true") : std::string("false"); };
  std::string scales;
  for (std::size_t i = 0; i < c.model.se_scales.size(); ++i) {
    if (i) scales += ",";
    scales += std::to_string(c.model.se_scales[i]);
  }
  std::string out;
  const auto put = [&out](const char* k, const std::string& v) { out += std::string(k) + "=" + v + "\n"; };
  put("layers", std::to_string(c.model.layers));
  put("hidden", std::to_string(c.model.hidden));
  put("kernel", std::to_string(c.model.kernel));
  put("frame_channels", std::to_string(c.model.frame_channels));
  put("frame_size", std::to_string(c.model.frame_size));
  put("enable_ce", b(c.model.enable_ce));
  put("ce_iterations", std::to_string(c.model.ce_iterations));
  put("ce_scale", fmt_double(c.model.ce_scale));
  put("enable_se", b(c.model.enable_se));
  put("se_scales", scales);
  put("share_qkv", b(c.model.share_qkv));
  put("layer_norm", b(c.model.layer_norm));
  put("lr", fmt_double(c.lr));
  put("batch", std::to_string(c.batch));
  put("iters", std::to_string(c.iters));
  put("weight_decay", fmt_double(c.weight_decay));
  put("t_in", std::to_string(c.t_in));
  put("sampling_decay", fmt_double(c.sampling_decay));
  put("eps_min", fmt_double(c.eps_min));
  put("init_seed", std::to_string(c.init_seed));
  put("data_seed", std::to_string(c.data_seed));
  put("sampling_seed", std::to_string(c.sampling_seed));
  put("checkpoint_every", std::to_string(c.checkpoint_every));
  put("dataset", c.dataset.string());
  put("out_dir", c.out_dir.string());
  return out;
}

}  // namespace cmslstm

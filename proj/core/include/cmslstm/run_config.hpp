#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "cmslstm/config.hpp"

namespace cmslstm {

/// Everything that determines a training run.
struct RunConfig {
  ModelConfig model;

  double lr = 1e-3;
  std::size_t batch = 8;
  std::size_t iters = 2000;
  double weight_decay = 1e-4;
  std::size_t t_in = 10;

  // Linear scheduled-sampling decay from 1 to eps_min over this fraction of iters.
  double sampling_decay = 0.5;
  double eps_min = 0.0;

  std::uint64_t init_seed = 1;
  std::uint64_t data_seed = 2;      // batch shuffling
  std::uint64_t sampling_seed = 3;  // teacher-forcing masks

  std::size_t checkpoint_every = 0;  // 0 = every 10% of iters
  std::filesystem::path dataset;     // train.stsq
  std::filesystem::path out_dir;     // log.csv and checkpoints

  std::size_t decay_iters() const;
  std::size_t checkpoint_interval() const;

  /// Throws ConfigError.
  void validate() const;

  bool operator==(const RunConfig&) const = default;
};

/// Parses line-based `key=value` text. `#` starts a comment; blank lines are
/// ignored. Unknown keys, duplicate keys and malformed values throw ConfigError
/// naming the line.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Renders every key; parse_run_config(format_run_config(c)) == c.
std::string format_run_config(const RunConfig& config);

/// Applies a single `key=value` assignment.
void set_run_config_key(RunConfig& config, std::string_view key, std::string_view value);

}  // namespace cmslstm

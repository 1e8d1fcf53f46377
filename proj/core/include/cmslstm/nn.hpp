#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmslstm/autodiff.hpp"
#include "cmslstm/random.hpp"
#include "cmslstm/tensor.hpp"

namespace cmslstm::nn {

/// One learnable tensor with its gradient slot and AdamW moments.
struct ParamEntry {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;
};

/// Ordered, name-unique collection of parameters. Registration order is the
/// iteration and serialization order.
class ParamStore {
 public:
  /// Registers a new entry; grad and moments start at zero.
  ParamEntry& add(std::string name, Tensor value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  ParamEntry& at(const std::string& name);
  const ParamEntry& at(const std::string& name) const;

  std::span<ParamEntry> entries() noexcept { return entries_; }
  std::span<const ParamEntry> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  /// Total number of scalar parameters.
  std::size_t parameter_count() const;

  void zero_grad();

  /// Names, shapes and values are bit-identical (moments/grads ignored).
  bool same_values(const ParamStore& other) const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Binds store entries into one tape as leaf variables, created on first use,
/// and carries their gradients back to the store after backward().
class GraphParams {
 public:
  /// With `trainable == false` entries bind as constants (inference only).
  GraphParams(Tape& tape, const ParamStore& store, bool trainable = true)
      : tape_(tape), store_(store), trainable_(trainable) {}

  Var operator[](const std::string& name);
  /// Binds `name` to an existing variable instead of the stored value.
  void bind(const std::string& name, Var v);
  Tape& tape() noexcept { return tape_; }

  /// Adds the gradient of every bound entry into ParamStore::grad.
  void accumulate_into(ParamStore& store, const Gradients& grads) const;

 private:
  Tape& tape_;
  const ParamStore& store_;
  bool trainable_;
  std::unordered_map<std::string, Var> bound_;
  std::vector<std::string> order_;
};

/// Same-padded convolution with an optional bias.
struct ConvLayer {
  Var kernel;  // [Cout, Cin, k, k]
  std::optional<Var> bias;  // [Cout]

  Var operator()(const Var& x) const;
  std::size_t in_channels() const { return kernel.shape()[1]; }
  std::size_t out_channels() const { return kernel.shape()[0]; }
  std::size_t kernel_size() const { return kernel.shape()[2]; }
};

/// Per-sample normalization over (C,H,W) with per-channel gain and bias.
struct LayerNorm {
  static constexpr double kEpsilon = 1e-5;

  Var gain;  // [C]
  Var bias;  // [C]
  double eps = kEpsilon;

  Var operator()(const Var& x) const;
};

/// Bound for fan-in uniform initialization, 1/sqrt(fan_in).
double init_bound(std::size_t fan_in);

/// Registers "<name>.w" drawn from Uniform(-a, a) with a = 1/sqrt(Cin*k*k),
/// and "<name>.b" = 0 when `bias` is set.
void register_conv(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                   bool bias, Rng& rng);
/// Registers "<name>.gain" = 1 and "<name>.bias" = 0.
void register_layer_norm(ParamStore& store, const std::string& name, std::size_t channels);

ConvLayer bind_conv(GraphParams& params, const std::string& name, bool bias);
LayerNorm bind_layer_norm(GraphParams& params, const std::string& name);

struct AdamWState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  std::uint64_t t = 0;

  friend bool operator==(const AdamWState&, const AdamWState&) = default;
};

/// One AdamW update over every entry, then zeroes the gradients:
///   w <- w * (1 - lr*wd)
///   w <- w - lr * m_hat / (sqrt(v_hat) + eps)
/// Throws NumericError (leaving the store untouched) if any gradient is non-finite.
void adamw_step(ParamStore& store, AdamWState& opt);

}  // namespace cmslstm::nn

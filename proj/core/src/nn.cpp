#include "cmslstm/nn.hpp"

#include <cmath>

#include "cmslstm/error.hpp"
#include "cmslstm/ops.hpp"

namespace cmslstm::nn {

ParamEntry& ParamStore::add(std::string name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  ParamEntry e;
  e.name = std::move(name);
  e.grad = Tensor(value.shape(), 0.0);
  e.m = Tensor(value.shape(), 0.0);
  e.v = Tensor(value.shape(), 0.0);
  e.value = std::move(value);
  index_.emplace(e.name, entries_.size());
  entries_.push_back(std::move(e));
  return entries_.back();
}

ParamEntry& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

const ParamEntry& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name || !(entries_[i].value == other.entries_[i].value)) return false;
  }
  return true;
}

Var GraphParams::operator[](const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Tensor& value = store_.at(name).value;
  Var v = trainable_ ? tape_.variable(value) : tape_.constant(value);
  bound_.emplace(name, v);
  order_.push_back(name);
  return v;
}

void GraphParams::bind(const std::string& name, Var v) {
  if (v.shape() != store_.at(name).value.shape()) {
    throw ShapeError("bind: '" + name + "' expects shape " + shape_string(store_.at(name).value.shape()));
  }
  if (!bound_.emplace(name, v).second) throw ConfigError("bind: '" + name + "' is already bound");
  order_.push_back(name);
}

void GraphParams::accumulate_into(ParamStore& store, const Gradients& grads) const {
  for (const auto& name : order_) {
    const Tensor* g = grads.find(bound_.at(name));
    if (!g) continue;
    Tensor& slot = store.at(name).grad;
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += (*g)[i];
  }
}

Var ConvLayer::operator()(const Var& x) const { return ops::conv2d(x, kernel, bias); }

Var LayerNorm::operator()(const Var& x) const { return ops::layer_norm(x, gain, bias, eps); }

double init_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

void register_conv(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                   bool bias, Rng& rng) {
  const double a = init_bound(in * k * k);
  Tensor w({out, in, k, k});
  for (double& v : w.data()) v = rng.uniform(-a, a);
  store.add(name + ".w", std::move(w));
  if (bias) store.add(name + ".b", Tensor({out}, 0.0));
}

void register_layer_norm(ParamStore& store, const std::string& name, std::size_t channels) {
  store.add(name + ".gain", Tensor({channels}, 1.0));
  store.add(name + ".bias", Tensor({channels}, 0.0));
}

ConvLayer bind_conv(GraphParams& params, const std::string& name, bool bias) {
  ConvLayer layer{params[name + ".w"], std::nullopt};
  if (bias) layer.bias = params[name + ".b"];
  return layer;
}

LayerNorm bind_layer_norm(GraphParams& params, const std::string& name) {
  return LayerNorm{params[name + ".gain"], params[name + ".bias"]};
}

void adamw_step(ParamStore& store, AdamWState& opt) {
  for (const auto& e : store.entries()) {
    if (!e.grad.all_finite()) {
      throw NumericError("non-finite gradient in '" + e.name + "' at optimizer step " + std::to_string(opt.t + 1));
    }
  }
  opt.t += 1;
  const double t = static_cast<double>(opt.t);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  const double decay = 1.0 - opt.lr * opt.weight_decay;
  for (auto& e : store.entries()) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      e.m[i] = opt.beta1 * e.m[i] + (1.0 - opt.beta1) * g;
      e.v[i] = opt.beta2 * e.v[i] + (1.0 - opt.beta2) * g * g;
      const double m_hat = e.m[i] / c1;
      const double v_hat = e.v[i] / c2;
      e.value[i] = e.value[i] * decay - opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
    }
    e.grad.fill(0.0);
  }
}

}  // namespace cmslstm::nn

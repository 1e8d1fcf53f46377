#include "cmslstm/model.hpp"

#include "cmslstm/error.hpp"
#include "cmslstm/ops.hpp"

namespace cmslstm {

void ModelConfig::validate() const {
  if (layers == 0) throw ConfigError("layers must be >= 1");
  if (hidden == 0) throw ConfigError("hidden must be >= 1");
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("kernel must be odd, got " + std::to_string(kernel));
  if (frame_channels == 0) throw ConfigError("frame_channels must be >= 1");
  if (frame_size == 0) throw ConfigError("frame_size must be >= 1");
  if (enable_ce) {
    if (ce_iterations == 0) throw ConfigError("ce_iterations must be >= 1");
    if (!(ce_scale > 0.0)) throw ConfigError("ce_scale must be > 0");
  }
  if (enable_se) {
    if (se_scales.empty()) throw ConfigError("se_scales must list at least one grid factor");
    for (std::size_t g : se_scales) {
      if (g == 0 || frame_size % g != 0) {
        throw ConfigError("se scale " + std::to_string(g) + " does not divide frame_size " +
                          std::to_string(frame_size));
      }
    }
  }
}

namespace model {

namespace {

const char* const kGateNames[4] = {"g", "i", "f", "o"};
const char* const kSeGateNames[3] = {"i", "g", "o"};

std::size_t layer_input(const ModelConfig& c, std::size_t layer) { return layer == 0 ? c.frame_channels : c.hidden; }

std::string qkv_prefix(const ModelConfig& c, std::size_t layer, std::size_t grid) {
  if (c.share_qkv) return layer_prefix(layer) + ".se.shared";
  return layer_prefix(layer) + ".se.s" + std::to_string(grid);
}

}  // namespace

SamplingMask::SamplingMask(std::size_t batch, std::size_t steps, bool fill)
    : batch_(batch), steps_(steps), bits_(batch * steps, fill ? 1 : 0) {}

SamplingMask SamplingMask::row(std::size_t b) const {
  SamplingMask r(1, steps_, false);
  for (std::size_t j = 0; j < steps_; ++j) r.set(0, j, at(b, j));
  return r;
}

std::string layer_prefix(std::size_t layer) { return "cell" + std::to_string(layer); }

nn::ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  nn::ParamStore store;
  Rng rng(seed);
  const std::size_t C = config.hidden, k = config.kernel;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = layer_prefix(l);
    const std::size_t cin = layer_input(config, l);
    if (config.enable_ce) {
      nn::register_conv(store, p + ".ce.conv_h", C, cin, k, true, rng);
      nn::register_conv(store, p + ".ce.conv_x", cin, C, k, true, rng);
    }
    for (const char* g : kGateNames) nn::register_conv(store, p + ".gate.x_" + g, cin, C, k, true, rng);
    for (const char* g : kGateNames) nn::register_conv(store, p + ".gate.h_" + g, C, C, k, false, rng);
    if (config.layer_norm) {
      for (const char* g : kGateNames) nn::register_layer_norm(store, p + ".gate.ln_" + g, C);
    }
    if (config.enable_se) {
      const std::size_t n = config.se_scales.size();
      for (std::size_t i = 0; i < (config.share_qkv ? 1 : n); ++i) {
        const std::string q = qkv_prefix(config, l, config.se_scales[i]);
        for (const char* part : {".q", ".k", ".v"}) nn::register_conv(store, q + part, 2 * C, 2 * C, 1, true, rng);
      }
      nn::register_conv(store, p + ".se.fuse", 2 * n * C, 2 * C, k, true, rng);
      for (const char* g : kSeGateNames) nn::register_conv(store, p + ".se.a_" + g, 2 * C, C, k, true, rng);
      for (const char* g : kSeGateNames) nn::register_conv(store, p + ".se.h_" + g, C, C, k, false, rng);
    }
  }
  nn::register_conv(store, "out", C, config.frame_channels, 1, true, rng);
  return store;
}

std::size_t count_parameters(const ModelConfig& c) {
  const std::size_t C = c.hidden, kk = c.kernel * c.kernel, F = c.frame_channels;
  std::size_t total = 0;
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::size_t cin = layer_input(c, l);
    if (c.enable_ce) total += (C * cin * kk + cin) + (cin * C * kk + C);
    total += 4 * (cin * C * kk + C) + 4 * (C * C * kk);
    if (c.layer_norm) total += 4 * 2 * C;
    if (c.enable_se) {
      const std::size_t n = c.se_scales.size();
      const std::size_t qkv_sets = c.share_qkv ? 1 : n;
      total += qkv_sets * 3 * (2 * C * 2 * C + 2 * C);
      total += 2 * n * C * 2 * C * kk + 2 * C;
      total += 3 * (2 * C * C * kk + C) + 3 * (C * C * kk);
    }
  }
  total += C * F + F;
  return total;
}

void check_topology(const nn::ParamStore& expected, const nn::ParamStore& actual) {
  const auto e = expected.entries();
  const auto a = actual.entries();
  for (std::size_t i = 0; i < std::max(e.size(), a.size()); ++i) {
    if (i >= a.size()) throw ConfigError("checkpoint lacks parameter '" + e[i].name + "'");
    if (i >= e.size()) throw ConfigError("checkpoint has unexpected parameter '" + a[i].name + "'");
    if (e[i].name != a[i].name) {
      throw ConfigError("parameter mismatch at position " + std::to_string(i) + ": expected '" + e[i].name +
                        "', checkpoint has '" + a[i].name + "'");
    }
    if (e[i].value.shape() != a[i].value.shape()) {
      throw ConfigError("parameter '" + e[i].name + "' has shape " + shape_string(a[i].value.shape()) +
                        ", expected " + shape_string(e[i].value.shape()));
    }
  }
}

cells::CellParams bind_cell(nn::GraphParams& params, const ModelConfig& config, std::size_t layer) {
  const std::string p = layer_prefix(layer);
  cells::CellParams cell;
  if (config.enable_ce) {
    cell.ce = cells::CEParams{nn::bind_conv(params, p + ".ce.conv_h", true), nn::bind_conv(params, p + ".ce.conv_x", true),
                              config.ce_scale, config.ce_iterations};
  }
  std::array<nn::ConvLayer, 4> x, h;
  for (std::size_t g = 0; g < 4; ++g) {
    x[g] = nn::bind_conv(params, p + ".gate.x_" + kGateNames[g], true);
    h[g] = nn::bind_conv(params, p + ".gate.h_" + kGateNames[g], false);
  }
  std::optional<std::array<nn::LayerNorm, 4>> norm;
  if (config.layer_norm) {
    norm.emplace();
    for (std::size_t g = 0; g < 4; ++g) (*norm)[g] = nn::bind_layer_norm(params, p + ".gate.ln_" + kGateNames[g]);
  }
  cell.gates = cells::make_gate_params(x, h, norm);

  if (config.enable_se) {
    std::vector<cells::SEScale> scales;
    for (std::size_t grid : config.se_scales) {
      const std::string q = qkv_prefix(config, layer, grid);
      scales.push_back({grid, {nn::bind_conv(params, q + ".q", true), nn::bind_conv(params, q + ".k", true),
                               nn::bind_conv(params, q + ".v", true)}});
    }
    std::array<nn::ConvLayer, 3> a, hh;
    for (std::size_t g = 0; g < 3; ++g) {
      a[g] = nn::bind_conv(params, p + ".se.a_" + kSeGateNames[g], true);
      hh[g] = nn::bind_conv(params, p + ".se.h_" + kSeGateNames[g], false);
    }
    cell.se = cells::make_se_params(std::move(scales), nn::bind_conv(params, p + ".se.fuse", true), a, hh);
  }
  return cell;
}

Var model_forward(nn::GraphParams& params, const Tensor& frames, const ModelConfig& config, std::size_t t_in,
                  const SamplingMask& mask, std::vector<FrameDiagnostics>* diagnostics) {
  config.validate();
  const Shape& s = frames.shape();
  if (s.size() != 5) throw ShapeError("model_forward: frames must be [B,T,F,H,W], got " + shape_string(s));
  const std::size_t B = s[0], T = s[1], F = s[2], H = s[3], W = s[4];
  if (F != config.frame_channels || H != config.frame_size || W != config.frame_size) {
    throw ShapeError("model_forward: frames " + shape_string(s) + " do not match the configured geometry");
  }
  if (t_in == 0 || t_in >= T) throw ConfigError("model_forward: need 1 <= t_in < T");
  const std::size_t t_out = T - t_in;
  if (mask.batch() != B || mask.steps() != t_out - 1) {
    throw ConfigError("model_forward: sampling mask must be " + std::to_string(B) + " x " + std::to_string(t_out - 1));
  }

  Tape& tape = params.tape();
  const std::size_t frame_len = F * H * W;
  auto ground_truth = [&](std::size_t t) {
    Tensor x({B, F, H, W});
    for (std::size_t b = 0; b < B; ++b) {
      std::copy_n(frames.raw() + (b * T + t) * frame_len, frame_len, x.raw() + b * frame_len);
    }
    return tape.constant(std::move(x));
  };

  std::vector<cells::CellParams> cells_params;
  for (std::size_t l = 0; l < config.layers; ++l) cells_params.push_back(bind_cell(params, config, l));
  const nn::ConvLayer out_conv = nn::bind_conv(params, "out", true);

  std::vector<cells::CellState> states;
  for (std::size_t l = 0; l < config.layers; ++l) {
    Var zero = tape.constant(Tensor({B, config.hidden, H, W}, 0.0));
    states.push_back({zero, zero});
  }

  std::vector<Var> predictions;
  Var previous;
  for (std::size_t t = 0; t + 1 < T; ++t) {
    Var input;
    if (t < t_in) {
      input = ground_truth(t);
    } else {
      const std::size_t j = t - t_in;
      std::size_t fed_truth = 0;
      for (std::size_t b = 0; b < B; ++b) fed_truth += mask.at(b, j) ? 1 : 0;
      if (fed_truth == 0) {
        input = previous;
      } else if (fed_truth == B) {
        input = ground_truth(t);
      } else {
        Tensor select({B, F, H, W});
        for (std::size_t b = 0; b < B; ++b) {
          std::fill_n(select.raw() + b * frame_len, frame_len, mask.at(b, j) ? 1.0 : 0.0);
        }
        Tensor keep = select;
        for (double& v : keep.data()) v = 1.0 - v;
        input = ops::add(ops::hadamard(tape.constant(std::move(select)), ground_truth(t)),
                         ops::hadamard(tape.constant(std::move(keep)), previous));
      }
    }

    const bool emits = t + 1 >= t_in;
    Var x = input;
    for (std::size_t l = 0; l < config.layers; ++l) {
      const bool record = diagnostics && emits && l + 1 == config.layers;
      FrameDiagnostics diag;
      states[l] = cells::cms_cell_step(x, states[l], cells_params[l], record ? &diag : nullptr);
      if (record) diagnostics->push_back(std::move(diag));
      x = states[l].h;
    }
    previous = ops::sigmoid(out_conv(x));
    if (emits) predictions.push_back(ops::reshape(previous, {B, 1, F, H, W}));
  }
  return predictions.size() == 1 ? predictions.front() : ops::concat(predictions, 1);
}

}  // namespace model
}  // namespace cmslstm

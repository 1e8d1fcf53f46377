#include "cmslstm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cmslstm/error.hpp"
#include "cmslstm/io.hpp"
#include "cmslstm/train.hpp"

namespace cmslstm::diagnostics {

namespace {

// Channel mean of sample 0 of a [B,C,H,W] tensor -> [H,W].
Tensor channel_mean(const Tensor& t) {
  const Shape& s = t.shape();
  const std::size_t C = s[1], plane = s[2] * s[3];
  Tensor out({s[2], s[3]}, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[i] += t[c * plane + i];
  }
  for (double& v : out.data()) v /= static_cast<double>(C);
  return out;
}

MapImage make_map(std::string name, Tensor raw) {
  MapImage m;
  m.name = std::move(name);
  const auto [lo, hi] = std::minmax_element(raw.data().begin(), raw.data().end());
  m.min = *lo;
  m.max = *hi;
  m.raw = std::move(raw);
  return m;
}

std::vector<double> grid_sums(const Tensor& raw, std::size_t grid) {
  const std::size_t H = raw.dim(0), W = raw.dim(1);
  const std::size_t ph = H / grid, pw = W / grid;
  std::vector<double> sums(grid * grid, 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) sums[(y / ph) * grid + x / pw] += raw[y * W + x];
  }
  return sums;
}

std::string stem(std::size_t frame, const std::string& what) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "f%02zu_%s", frame, what.c_str());
  return buf;
}

}  // namespace

double MapImage::variance() const {
  const double n = static_cast<double>(raw.size());
  double mean = 0.0;
  for (double v : raw.data()) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : raw.data()) var += (v - mean) * (v - mean);
  return var / n;
}

GrayImage normalize(const Tensor& raw) {
  if (raw.rank() != 2) throw ShapeError("normalize: expected [H,W], got " + shape_string(raw.shape()));
  GrayImage img{raw.dim(1), raw.dim(0), std::vector<std::uint8_t>(raw.size())};
  const auto [lo, hi] = std::minmax_element(raw.data().begin(), raw.data().end());
  const double range = *hi - *lo;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    img.pixels[i] = range > 0.0 ? quantize_pixel((raw[i] - *lo) / range) : 128;
  }
  return img;
}

MapSet compute_maps(const nn::ParamStore& store, const ModelConfig& config, const Tensor& sequence,
                    std::size_t t_in) {
  if (sequence.rank() != 4) throw ShapeError("compute_maps: expected [T,F,H,W], got " + shape_string(sequence.shape()));
  Shape batched = sequence.shape();
  batched.insert(batched.begin(), 1);
  std::vector<model::FrameDiagnostics> diag;
  train::predict(store, config, sequence.reshaped(batched), t_in, &diag);

  MapSet set;
  set.ce_skipped = !config.enable_ce;
  set.se_skipped = !config.enable_se;
  for (std::size_t j = 0; j < diag.size(); ++j) {
    const auto& d = diag[j];
    if (d.ce) {
      set.maps.push_back(make_map(stem(j, "ce_input"), channel_mean(d.ce->input_weight)));
      set.maps.push_back(make_map(stem(j, "ce_context"), channel_mean(d.ce->context_weight)));
    }
    if (d.se) {
      for (std::size_t s = 0; s < d.se->grids.size(); ++s) {
        const std::size_t grid = d.se->grids[s];
        MapImage m = make_map(stem(j, "se_s" + std::to_string(grid)), channel_mean(d.se->attention_mass[s]));
        m.patch_sums = grid_sums(m.raw, grid);
        set.maps.push_back(std::move(m));
      }
    }
  }
  return set;
}

std::string format_sidecar(const MapSet& maps) {
  std::string out = "# name min max (raw values before normalization)\n";
  char buf[128];
  for (const auto& m : maps.maps) {
    std::snprintf(buf, sizeof buf, "%s %.17g %.17g\n", m.name.c_str(), m.min, m.max);
    out += buf;
  }
  for (const auto& m : maps.maps) {
    if (m.patch_sums.empty()) continue;
    out += m.name + " patch_sums";
    for (double v : m.patch_sums) {
      std::snprintf(buf, sizeof buf, " %.17g", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

void write_maps(const MapSet& maps, const std::filesystem::path& out_dir) {
  for (const auto& m : maps.maps) write_pgm(out_dir / (m.name + ".pgm"), normalize(m.raw));
  io::atomic_write(out_dir / "maps.txt", format_sidecar(maps));
}

}  // namespace cmslstm::diagnostics

#include "cmslstm/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <map>

#include "cmslstm/error.hpp"
#include "cmslstm/io.hpp"

namespace cmslstm::metrics {

namespace {

void require_match(const FrameView& a, const FrameView& b) {
  if (a.pixels.size() != b.pixels.size() || a.channels != b.channels || a.height != b.height || a.width != b.width ||
      a.pixels.size() != a.channels * a.height * a.width) {
    throw ShapeError("metrics: frame geometry mismatch");
  }
}

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> w{};
  const double center = (kSsimWindow - 1) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - center;
    w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// Valid-mode separable Gaussian filter of an H x W plane.
std::vector<double> filter_valid(std::span<const double> plane, std::size_t H, std::size_t W,
                                 const std::array<double, kSsimWindow>& w) {
  const std::size_t oh = H - kSsimWindow + 1, ow = W - kSsimWindow + 1;
  std::vector<double> rows(H * ow);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < kSsimWindow; ++k) s += w[k] * plane[y * W + x + k];
      rows[y * ow + x] = s;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < kSsimWindow; ++k) s += w[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

double plane_ssim(std::span<const double> a, std::span<const double> b, std::size_t H, std::size_t W) {
  static const auto window = gaussian_window();
  const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
  const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, H, W, window);
  const auto mu_b = filter_valid(b, H, W, window);
  const auto e_aa = filter_valid(aa, H, W, window);
  const auto e_bb = filter_valid(bb, H, W, window);
  const auto e_ab = filter_valid(ab, H, W, window);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

struct FrameGeometry {
  std::size_t sequences, frames, channels, height, width;
  std::size_t frame_size() const { return channels * height * width; }
};

FrameGeometry geometry(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("metrics: shape mismatch " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  }
  const Shape& s = pred.shape();
  if (s.size() != 5) throw ShapeError("metrics: expected [B,T,C,H,W], got " + shape_string(s));
  return {s[0], s[1], s[2], s[3], s[4]};
}

template <typename F>
std::vector<double> per_frame(const Tensor& pred, const Tensor& target, F f) {
  const FrameGeometry g = geometry(pred, target);
  std::vector<double> out;
  out.reserve(g.sequences * g.frames);
  const std::size_t n = g.frame_size();
  for (std::size_t i = 0; i < g.sequences * g.frames; ++i) {
    FrameView p{pred.data().subspan(i * n, n), g.channels, g.height, g.width};
    FrameView t{target.data().subspan(i * n, n), g.channels, g.height, g.width};
    out.push_back(f(p, t));
  }
  return out;
}

}  // namespace

double frame_mse(const FrameView& pred, const FrameView& target) {
  require_match(pred, target);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const double d = 255.0 * (pred.pixels[i] - target.pixels[i]);
    s += d * d;
  }
  return s;
}

double frame_mae(const FrameView& pred, const FrameView& target) {
  require_match(pred, target);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) s += std::abs(255.0 * (pred.pixels[i] - target.pixels[i]));
  return s;
}

double psnr_from_mse(double mse, double max_value) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_value * max_value / mse));
}

double frame_psnr(const FrameView& pred, const FrameView& target, double max_value) {
  require_match(pred, target);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
    const double d = pred.pixels[i] - target.pixels[i];
    s += d * d;
  }
  return psnr_from_mse(s / static_cast<double>(pred.pixels.size()), max_value);
}

double frame_ssim(const FrameView& pred, const FrameView& target) {
  require_match(pred, target);
  if (pred.height < kSsimWindow || pred.width < kSsimWindow) {
    throw ShapeError("ssim: frame " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " is smaller than the 11x11 window");
  }
  const std::size_t plane = pred.height * pred.width;
  double total = 0.0;
  for (std::size_t c = 0; c < pred.channels; ++c) {
    total += plane_ssim(pred.pixels.subspan(c * plane, plane), target.pixels.subspan(c * plane, plane), pred.height,
                        pred.width);
  }
  return total / static_cast<double>(pred.channels);
}

std::vector<double> mse(const Tensor& pred, const Tensor& target) { return per_frame(pred, target, frame_mse); }
std::vector<double> mae(const Tensor& pred, const Tensor& target) { return per_frame(pred, target, frame_mae); }
std::vector<double> psnr(const Tensor& pred, const Tensor& target, double max_value) {
  return per_frame(pred, target, [max_value](const FrameView& p, const FrameView& t) { return frame_psnr(p, t, max_value); });
}
std::vector<double> ssim(const Tensor& pred, const Tensor& target) { return per_frame(pred, target, frame_ssim); }

void MetricReport::add_batch(const Tensor& pred, const Tensor& target, std::span<const std::size_t> sequences) {
  const FrameGeometry g = geometry(pred, target);
  if (sequences.size() != g.sequences) throw ShapeError("metrics: sequence ids do not match the batch size");
  const auto m = mse(pred, target);
  const auto a = mae(pred, target);
  const auto p = psnr(pred, target);
  const auto s = ssim(pred, target);
  for (std::size_t b = 0; b < g.sequences; ++b) {
    for (std::size_t t = 0; t < g.frames; ++t) {
      const std::size_t i = b * g.frames + t;
      frames_.push_back({sequences[b], t, m[i], a[i], p[i], s[i]});
    }
  }
}

FrameMetrics MetricReport::mean() const {
  FrameMetrics out;
  if (frames_.empty()) return out;
  for (const auto& f : frames_) {
    out.mse += f.mse;
    out.mae += f.mae;
    out.psnr += f.psnr;
    out.ssim += f.ssim;
  }
  const double n = static_cast<double>(frames_.size());
  out.mse /= n;
  out.mae /= n;
  out.psnr /= n;
  out.ssim /= n;
  return out;
}

std::vector<FrameMetrics> MetricReport::mean_per_frame_index() const {
  std::map<std::size_t, std::pair<FrameMetrics, std::size_t>> acc;
  for (const auto& f : frames_) {
    auto& [m, n] = acc[f.frame];
    m.frame = f.frame;
    m.mse += f.mse;
    m.mae += f.mae;
    m.psnr += f.psnr;
    m.ssim += f.ssim;
    ++n;
  }
  std::vector<FrameMetrics> out;
  for (auto& [t, entry] : acc) {
    auto [m, n] = entry;
    const double d = static_cast<double>(n);
    m.mse /= d;
    m.mae /= d;
    m.psnr /= d;
    m.ssim /= d;
    out.push_back(m);
  }
  return out;
}

std::string MetricReport::to_csv() const {
  std::string out = "sequence,frame,mse,mae,psnr,ssim\n";
  char line[256];
  for (const auto& f : frames_) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.17g,%.17g,%.17g,%.17g\n", f.sequence, f.frame, f.mse, f.mae, f.psnr,
                  f.ssim);
    out += line;
  }
  const FrameMetrics m = mean();
  std::snprintf(line, sizeof line, "mean,all,%.17g,%.17g,%.17g,%.17g\n", m.mse, m.mae, m.psnr, m.ssim);
  out += line;
  return out;
}

void MetricReport::write_csv(const std::filesystem::path& path) const { io::atomic_write(path, to_csv()); }

bool MetricReport::operator==(const MetricReport& other) const {
  if (frames_.size() != other.frames_.size()) return false;
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    const auto& a = frames_[i];
    const auto& b = other.frames_[i];
    if (a.sequence != b.sequence || a.frame != b.frame || a.mse != b.mse || a.mae != b.mae || a.psnr != b.psnr ||
        a.ssim != b.ssim) {
      return false;
    }
  }
  return true;
}

}  // namespace cmslstm::metrics

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cmslstm/tensor.hpp"

namespace cmslstm::metrics {

// Reporting convention. MSE and MAE are per-frame sums over pixels of the
// squared / absolute error on the 0-255 scale; sequence figures average them
// over frames. PSNR uses the per-pixel MSE on the [0,1] scale and is capped
// at kPsnrCap dB for identical frames. SSIM is single-scale with an 11x11
// Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1, averaged
// over valid window positions.

inline constexpr double kPsnrCap = 100.0;
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// One frame as a flat [C,H,W] view.
struct FrameView {
  std::span<const double> pixels;
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
};

double frame_mse(const FrameView& pred, const FrameView& target);   // 0-255 scale, pixel sum
double frame_mae(const FrameView& pred, const FrameView& target);   // 0-255 scale, pixel sum
double frame_psnr(const FrameView& pred, const FrameView& target, double max_value = 1.0);
/// Channel-averaged SSIM; throws ShapeError when H or W < 11.
double frame_ssim(const FrameView& pred, const FrameView& target);

/// PSNR in dB from a per-pixel MSE on the [0, max_value] scale.
double psnr_from_mse(double mse, double max_value = 1.0);

// Per-frame values over [B,T,C,H,W] tensors, ordered (b, t).
std::vector<double> mse(const Tensor& pred, const Tensor& target);
std::vector<double> mae(const Tensor& pred, const Tensor& target);
std::vector<double> psnr(const Tensor& pred, const Tensor& target, double max_value = 1.0);
std::vector<double> ssim(const Tensor& pred, const Tensor& target);

struct FrameMetrics {
  std::size_t sequence = 0;  // dataset index
  std::size_t frame = 0;     // index within the predicted window
  double mse = 0.0;
  double mae = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

class MetricReport {
 public:
  /// Appends per-frame metrics of one batch; `sequences` names each batch row.
  void add_batch(const Tensor& pred, const Tensor& target, std::span<const std::size_t> sequences);

  const std::vector<FrameMetrics>& frames() const noexcept { return frames_; }
  std::size_t count() const noexcept { return frames_.size(); }
  FrameMetrics mean() const;
  /// Means per predicted-frame index.
  std::vector<FrameMetrics> mean_per_frame_index() const;

  /// "sequence,frame,mse,mae,psnr,ssim" rows, then a final "mean,all,..." row.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;

  bool operator==(const MetricReport&) const;

 private:
  std::vector<FrameMetrics> frames_;
};

}  // namespace cmslstm::metrics

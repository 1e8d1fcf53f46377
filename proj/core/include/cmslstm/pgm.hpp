#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace cmslstm {

/// 8-bit grayscale raster, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

/// round(255 * v) after clamping v to [0,1].
std::uint8_t quantize_pixel(double v);

/// Binary PGM with the single-line header "P5 W H 255\n".
std::vector<std::uint8_t> encode_pgm(const GrayImage& image);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace cmslstm

#include "cmslstm/pgm.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "cmslstm/error.hpp"
#include "cmslstm/io.hpp"

namespace cmslstm {

std::uint8_t quantize_pixel(double v) {
  const double clamped = std::min(1.0, std::max(0.0, v));
  return static_cast<std::uint8_t>(std::lround(255.0 * clamped));
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height) throw ShapeError("pgm: pixel count does not match geometry");
  io::ByteWriter w;
  w.text("P5 " + std::to_string(image.width) + " " + std::to_string(image.height) + " 255\n");
  w.raw(image.pixels);
  return std::move(w).take();
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) { io::atomic_write(path, encode_pgm(image)); }

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t += static_cast<char>(bytes[pos++]);
    if (t.empty()) throw FormatError("pgm: truncated header", pos);
    return t;
  };
  if (token() != "P5") throw FormatError("pgm: bad magic, expected P5", 0);
  GrayImage img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (token() != "255") throw FormatError("pgm: only maxval 255 is supported", pos);
  } catch (const std::logic_error&) {
    throw FormatError("pgm: malformed header", pos);
  }
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos + img.width * img.height) throw FormatError("pgm: truncated pixel data", bytes.size());
  img.pixels.assign(bytes.begin() + static_cast<long>(pos), bytes.begin() + static_cast<long>(pos + img.width * img.height));
  return img;
}

GrayImage read_pgm(const std::filesystem::path& path) { return decode_pgm(io::read_file(path)); }

}  // namespace cmslstm

#include "cmslstm/io.hpp"

#include <bit>
#include <fstream>

#include "cmslstm/error.hpp"

namespace cmslstm::io {

void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void atomic_write(const std::filesystem::path& path, std::string_view text) {
  atomic_write(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("failed reading " + path.string());
  return bytes;
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

double ByteReader::f64() { return std::bit_cast<double>(get(8, "f64")); }

void ByteReader::need(std::size_t n, std::string_view what) const {
  if (bytes_.size() - pos_ < n) {
    throw FormatError("truncated file: need " + std::to_string(n) + " bytes for " + std::string(what), pos_);
  }
}

std::uint64_t ByteReader::get(std::size_t n, std::string_view what) {
  need(n, what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += n;
  return v;
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n, std::string_view what) {
  need(n, what);
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::string ByteReader::text(std::size_t n, std::string_view what) {
  auto s = raw(n, what);
  return std::string(s.begin(), s.end());
}

}  // namespace cmslstm::io

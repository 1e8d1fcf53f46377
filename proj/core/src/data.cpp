#include "cmslstm/data.hpp"

#include <algorithm>
#include <cmath>

#include "cmslstm/error.hpp"
#include "cmslstm/io.hpp"
#include "cmslstm/pgm.hpp"
#include "cmslstm/random.hpp"

namespace cmslstm::data {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'S', 'Q'};

bool inside(ShapeKind kind, int size, int row, int col) {
  switch (kind) {
    case ShapeKind::square:
      return true;
    case ShapeKind::cross: {
      const int arm = std::max(1, size / 3);
      const int lo = (size - arm) / 2;
      return (row >= lo && row < lo + arm) || (col >= lo && col < lo + arm);
    }
    case ShapeKind::disk: {
      // Pixel centers within radius size/2 of the box center, in doubled integer units.
      const int dy = 2 * row + 1 - size;
      const int dx = 2 * col + 1 - size;
      return dx * dx + dy * dy <= size * size;
    }
  }
  return false;
}

void reflect(double& pos, double& vel, double limit) {
  pos += vel;
  if (pos < 0.0) {
    pos = -pos;
    vel = -vel;
  } else if (pos > limit) {
    pos = 2.0 * limit - pos;
    vel = -vel;
  }
}

}  // namespace

void GeneratorParams::validate() const {
  if (frame_size < 8) throw ConfigError("frame size must be at least 8, got " + std::to_string(frame_size));
  if (frame_size > 65535) throw ConfigError("frame size does not fit the dataset header");
  if (frame_size < 4 * static_cast<std::size_t>(max_shape_size())) {
    throw ConfigError("frame size must be at least 4x the largest shape");
  }
  if (num_shapes == 0) throw ConfigError("need at least one shape");
  if (frames < 2 || frames > 65535) throw ConfigError("sequence length must be in [2, 65535]");
}

void advance(ShapeSpec& shape, std::size_t frame_size) {
  const double limit = static_cast<double>(frame_size) - shape.size;
  reflect(shape.x, shape.vx, limit);
  reflect(shape.y, shape.vy, limit);
}

void rasterize(const ShapeSpec& shape, std::span<double> frame, std::size_t frame_size) {
  const long S = static_cast<long>(frame_size);
  const long ox = std::lround(shape.x);
  const long oy = std::lround(shape.y);
  for (int r = 0; r < shape.size; ++r) {
    const long y = oy + r;
    if (y < 0 || y >= S) continue;
    for (int c = 0; c < shape.size; ++c) {
      const long x = ox + c;
      if (x < 0 || x >= S || !inside(shape.kind, shape.size, r, c)) continue;
      double& px = frame[static_cast<std::size_t>(y * S + x)];
      px = std::max(px, shape.intensity);
    }
  }
}

Tensor render(std::vector<ShapeSpec> shapes, std::size_t frame_size, std::size_t frames) {
  Tensor out({frames, 1, frame_size, frame_size}, 0.0);
  const std::size_t area = frame_size * frame_size;
  for (std::size_t t = 0; t < frames; ++t) {
    std::span<double> frame(out.raw() + t * area, area);
    for (auto& s : shapes) {
      rasterize(s, frame, frame_size);
      advance(s, frame_size);
    }
  }
  return out;
}

std::vector<ShapeSpec> random_shapes(std::uint64_t seed, const GeneratorParams& params) {
  params.validate();
  Rng rng(seed);
  const int lo = params.min_shape_size(), hi = params.max_shape_size();
  std::vector<ShapeSpec> shapes(params.num_shapes);
  for (auto& s : shapes) {
    s.kind = static_cast<ShapeKind>(rng.below(3));
    s.size = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    s.intensity = rng.uniform(0.6, 1.0);
    const double room = static_cast<double>(params.frame_size) - s.size;
    s.x = rng.uniform(0.0, room);
    s.y = rng.uniform(0.0, room);
    s.vx = rng.uniform(0.5, params.max_speed()) * ((rng.next() & 1) ? 1.0 : -1.0);
    s.vy = rng.uniform(0.5, params.max_speed()) * ((rng.next() & 1) ? 1.0 : -1.0);
  }
  return shapes;
}

Tensor generate_sequence(std::uint64_t seed, const GeneratorParams& params) {
  return render(random_shapes(seed, params), params.frame_size, params.frames);
}

std::uint64_t sequence_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return derive_seed(seed, stream, index);
}

Dataset::Dataset(DatasetHeader header, std::vector<std::uint8_t> pixels)
    : header_(header), pixels_(std::move(pixels)) {
  if (header_.frames == 0 || header_.height == 0 || header_.width == 0 || header_.channels == 0) {
    throw ConfigError("dataset header has a zero dimension");
  }
  if (pixels_.size() != header_.sequence_bytes() * header_.count) {
    throw ConfigError("dataset pixel count does not match its header");
  }
}

std::span<const std::uint8_t> Dataset::sequence_bytes(std::size_t index) const {
  if (index >= header_.count) {
    throw ConfigError("sequence index " + std::to_string(index) + " out of range (dataset has " +
                      std::to_string(header_.count) + ")");
  }
  const std::size_t n = header_.sequence_bytes();
  return std::span(pixels_).subspan(index * n, n);
}

Tensor Dataset::sequence(std::size_t index) const {
  auto bytes = sequence_bytes(index);
  Tensor out({header_.frames, header_.channels, header_.height, header_.width});
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = bytes[i] / 255.0;
  return out;
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ConfigError("gather needs at least one index");
  const std::size_t n = header_.sequence_bytes();
  Tensor out({indices.size(), header_.frames, header_.channels, header_.height, header_.width});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    auto bytes = sequence_bytes(indices[b]);
    for (std::size_t i = 0; i < n; ++i) out[b * n + i] = bytes[i] / 255.0;
  }
  return out;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset) {
  const DatasetHeader& h = dataset.header();
  io::ByteWriter w;
  w.text(std::string_view(kMagic, 4));
  w.u32(h.version);
  w.u32(h.count);
  w.u16(h.frames);
  w.u16(h.height);
  w.u16(h.width);
  w.u8(h.channels);
  for (int i = 0; i < 7; ++i) w.u8(0);
  w.raw(dataset.pixels());
  return std::move(w).take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.text(4, "magic") != std::string_view(kMagic, 4)) throw FormatError("bad magic, expected STSQ", 0);
  DatasetHeader h;
  h.version = r.u32();
  if (h.version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(h.version), 4);
  h.count = r.u32();
  h.frames = r.u16();
  h.height = r.u16();
  h.width = r.u16();
  h.channels = r.u8();
  r.raw(7, "reserved header bytes");
  if (h.frames == 0 || h.height == 0 || h.width == 0 || h.channels == 0) {
    throw FormatError("dataset header has a zero dimension", 12);
  }
  const std::size_t expected = h.sequence_bytes() * h.count;
  if (r.remaining() < expected) {
    throw FormatError("truncated pixel data: expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(r.remaining()),
                      bytes.size());
  }
  auto px = r.raw(expected, "pixels");
  if (r.remaining() != 0) throw FormatError("trailing bytes after pixel data", r.offset());
  return Dataset(h, std::vector<std::uint8_t>(px.begin(), px.end()));
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  io::atomic_write(path, encode_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("dataset not found: " + path.string());
  return decode_dataset(io::read_file(path));
}

Dataset make_dataset(std::uint64_t seed, std::uint64_t stream, std::size_t count, const GeneratorParams& params) {
  params.validate();
  DatasetHeader h;
  h.count = static_cast<std::uint32_t>(count);
  h.frames = static_cast<std::uint16_t>(params.frames);
  h.height = static_cast<std::uint16_t>(params.frame_size);
  h.width = static_cast<std::uint16_t>(params.frame_size);
  h.channels = 1;
  std::vector<std::uint8_t> pixels;
  pixels.reserve(h.sequence_bytes() * count);
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor seq = generate_sequence(sequence_seed(seed, stream, i), params);
    for (double v : seq.data()) pixels.push_back(quantize_pixel(v));
  }
  return Dataset(h, std::move(pixels));
}

BuildResult build_dataset(std::uint64_t seed, std::size_t n_train, std::size_t n_test, const GeneratorParams& params,
                          const std::filesystem::path& dir) {
  params.validate();
  if (n_train == 0 || n_test == 0) throw ConfigError("train and test sets must be non-empty");
  BuildResult out{dir / "train.stsq", dir / "test.stsq", {}, {}};
  Dataset train = make_dataset(seed, 0, n_train, params);
  Dataset test = make_dataset(seed, 1, n_test, params);
  save_dataset(train, out.train_path);
  save_dataset(test, out.test_path);
  out.train_header = train.header();
  out.test_header = test.header();
  return out;
}

BatchIterator::BatchIterator(const Dataset& dataset, std::size_t batch, std::uint64_t shuffle_seed, std::size_t t_in)
    : dataset_(dataset), batch_(batch), seed_(shuffle_seed), t_in_(t_in) {
  if (batch == 0 || batch > dataset.size()) {
    throw ConfigError("batch size " + std::to_string(batch) + " must be in [1, " + std::to_string(dataset.size()) + "]");
  }
  if (t_in == 0 || t_in >= dataset.header().frames) {
    throw ConfigError("t_in " + std::to_string(t_in) + " incompatible with sequences of " +
                      std::to_string(dataset.header().frames) + " frames");
  }
  reshuffle();
}

void BatchIterator::reshuffle() {
  order_.resize(dataset_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  Rng rng(derive_seed(seed_, 0x5348554646ULL, epoch_));
  for (std::size_t i = order_.size(); i-- > 1;) std::swap(order_[i], order_[rng.below(i + 1)]);
  cursor_ = 0;
}

void BatchIterator::skip(std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (cursor_ + batch_ > order_.size()) {
      ++epoch_;
      reshuffle();
    }
    cursor_ += batch_;
  }
}

SequenceBatch BatchIterator::next() {
  if (cursor_ + batch_ > order_.size()) {
    ++epoch_;
    reshuffle();
  }
  SequenceBatch b;
  b.indices.assign(order_.begin() + static_cast<long>(cursor_), order_.begin() + static_cast<long>(cursor_ + batch_));
  cursor_ += batch_;
  b.frames = dataset_.gather(b.indices);
  b.t_in = t_in_;
  b.t_out = dataset_.header().frames - t_in_;
  return b;
}

}  // namespace cmslstm::data

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cmslstm/tensor.hpp"

namespace cmslstm::data {

enum class ShapeKind : std::uint8_t { square = 0, cross = 1, disk = 2 };

/// One moving object. Position is the top-left corner of its size x size
/// bounding box in pixels; velocity is pixels per frame.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::square;
  int size = 4;
  double intensity = 1.0;
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
};

struct GeneratorParams {
  std::size_t frame_size = 32;
  std::size_t num_shapes = 2;
  std::size_t frames = 20;

  /// Throws ConfigError unless frame_size >= 4 * max_shape_size().
  void validate() const;
  int max_shape_size() const { return static_cast<int>(frame_size / 4); }
  int min_shape_size() const { return std::max(2, static_cast<int>(frame_size / 8)); }
  double max_speed() const { return std::max(1.0, static_cast<double>(frame_size) / 16.0); }
};

/// Moves one frame forward. When the bounding box would leave the frame the
/// position is reflected off the wall and that velocity component negates.
void advance(ShapeSpec& shape, std::size_t frame_size);

/// Draws the shape into a frame_size^2 frame by per-pixel max. The box origin
/// is the nearest pixel to the real-valued position.
void rasterize(const ShapeSpec& shape, std::span<double> frame, std::size_t frame_size);

/// Renders `frames` frames of the given shapes (advancing between frames).
/// Result [T,1,S,S].
Tensor render(std::vector<ShapeSpec> shapes, std::size_t frame_size, std::size_t frames);

/// Random shapes fully determined by `seed`.
std::vector<ShapeSpec> random_shapes(std::uint64_t seed, const GeneratorParams& params);

/// A sequence [T,1,S,S] with values in [0,1]; a pure function of its arguments.
Tensor generate_sequence(std::uint64_t seed, const GeneratorParams& params);

/// Seed of sequence `index` in stream `stream` (0 = train, 1 = test).
std::uint64_t sequence_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

// ---------------------------------------------------------------------------
// STSQ container. Little-endian, no padding:
//   "STSQ" | version u32 | n u32 | T u16 | H u16 | W u16 | C u8 | 7 reserved zero bytes
//   then n*T*H*W*C pixel bytes, row-major [n,T,C,H,W]. Pixel = round(255 v).

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderSize = 26;

struct DatasetHeader {
  std::uint32_t version = kDatasetVersion;
  std::uint32_t count = 0;
  std::uint16_t frames = 0;
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint8_t channels = 1;

  std::size_t sequence_bytes() const { return std::size_t{frames} * height * width * channels; }
  bool operator==(const DatasetHeader&) const = default;
};

/// Batch of sequences [B,T,C,H,W] with the input/target split.
struct SequenceBatch {
  Tensor frames;
  std::size_t t_in = 0;
  std::size_t t_out = 0;
  std::vector<std::size_t> indices;  // dataset indices of the batch rows
};

class Dataset {
 public:
  Dataset(DatasetHeader header, std::vector<std::uint8_t> pixels);

  const DatasetHeader& header() const noexcept { return header_; }
  std::size_t size() const noexcept { return header_.count; }
  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
  std::span<const std::uint8_t> sequence_bytes(std::size_t index) const;

  /// Sequence as [T,C,H,W] doubles v/255.
  Tensor sequence(std::size_t index) const;
  /// Rows `indices` as [B,T,C,H,W].
  Tensor gather(std::span<const std::size_t> indices) const;

  bool operator==(const Dataset&) const = default;

 private:
  DatasetHeader header_;
  std::vector<std::uint8_t> pixels_;
};

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Quantizes generated sequences [T,1,S,S] into a dataset.
Dataset make_dataset(std::uint64_t seed, std::uint64_t stream, std::size_t count, const GeneratorParams& params);

struct BuildResult {
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  DatasetHeader train_header;
  DatasetHeader test_header;
};

/// Writes <dir>/train.stsq (stream 0) and <dir>/test.stsq (stream 1).
BuildResult build_dataset(std::uint64_t seed, std::size_t n_train, std::size_t n_test, const GeneratorParams& params,
                          const std::filesystem::path& dir);

/// Epoch-wise shuffled batches. Each epoch is a Fisher-Yates permutation keyed
/// by (shuffle seed, epoch); the final partial batch of an epoch is dropped.
class BatchIterator {
 public:
  BatchIterator(const Dataset& dataset, std::size_t batch, std::uint64_t shuffle_seed, std::size_t t_in);

  SequenceBatch next();
  /// Advances past `n` batches without assembling them.
  void skip(std::size_t n);
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  void reshuffle();

  const Dataset& dataset_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::size_t t_in_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace cmslstm::data

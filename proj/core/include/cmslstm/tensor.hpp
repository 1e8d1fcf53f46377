#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace cmslstm {

using Shape = std::vector<std::size_t>;

/// Allocator with a fixed 64-byte alignment. Vectorized kernels choose their
/// summation order from the alignment of their operands, so buffers must not
/// inherit whatever alignment the heap happens to return.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Every dimension is >= 1 and the element
/// count always equals the product of the dimensions.
class Tensor {
 public:
  /// A scalar zero of shape [1].
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);
  Tensor(Shape shape, Buffer data);

  static Tensor scalar(double value) { return Tensor({1}, value); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Row-major multi-index access; bounds-checked.
  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  /// Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(double value);
  bool all_finite() const noexcept;

  /// Bit-exact equality of shape and every element.
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  Buffer data_;
};

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace cmslstm

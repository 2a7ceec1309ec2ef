#pragma once

#include <cstddef>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lgd {

using Shape = std::vector<std::size_t>;

// Cache-line aligned storage. Vectorised reductions peel differently depending
// on the start address, so a fixed alignment keeps results bit-reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Raised whenever an operation receives operands of incompatible shape.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline ShapeError shape_error(const std::string& op, const Shape& a, const Shape& b) {
  return ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Extents are all positive; a scalar is stored with shape {1}. The gradient
/// buffer is absent until first requested and always matches the value shape.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(numel(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, const std::vector<double>& values)
      : Tensor(std::move(shape), Buffer(values.begin(), values.end())) {}

  Tensor(Shape shape, Buffer values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    check_extents();
    if (values_.size() != numel(shape_)) {
      throw ShapeError("Tensor: " + std::to_string(values_.size()) + " values for shape " +
                       shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, Buffer{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  Buffer& storage() { return values_; }
  const Buffer& storage() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }
  double& at(std::size_t h, std::size_t w, std::size_t c) {
    return values_[(h * shape_[1] + w) * shape_[2] + c];
  }
  double at(std::size_t h, std::size_t w, std::size_t c) const {
    return values_[(h * shape_[1] + w) * shape_[2] + c];
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return !grad_.empty() || values_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  /// Allocates a zeroed gradient buffer if absent and returns it.
  Buffer& ensure_grad() {
    if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
    return grad_;
  }
  void zero_grad() {
    if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0);
  }
  void drop_grad() { grad_.clear(); }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size()) throw shape_error("reshape", shape_, shape);
    return Tensor(std::move(shape), values_);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_extents() const {
    for (auto e : shape_) {
      if (e == 0) throw ShapeError("Tensor: zero extent in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  Buffer values_;
  bool requires_grad_ = false;
  Buffer grad_;
};

}  // namespace lgd

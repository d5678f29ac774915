#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace unmix {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

// Dense row-major N-d array. Rank 0 (empty shape) is a scalar holding one
// value. Value semantics throughout; reshapes of rvalues move the buffer.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape shape)
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(checked_size(shape_))) {}

  TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != static_cast<std::int64_t>(data_.size())) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  TensorT(Shape shape, std::initializer_list<T> values)
      : TensorT(std::move(shape), std::vector<T>(values)) {}

  static TensorT full(Shape shape, T value) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static TensorT scalar(T value) { return TensorT(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const { return array().allFinite(); }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  TensorT reshaped(Shape shape) const& {
    TensorT t = *this;
    return std::move(t).reshaped(std::move(shape));
  }

  TensorT reshaped(Shape shape) && {
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
    return std::move(*this);
  }

  // Eigen views over the flat buffer
  MatMap<T> mat(std::int64_t rows, std::int64_t cols) {
    check_view(rows * cols);
    return MatMap<T>(data_.data(), rows, cols);
  }
  ConstMatMap<T> mat(std::int64_t rows, std::int64_t cols) const {
    check_view(rows * cols);
    return ConstMatMap<T>(data_.data(), rows, cols);
  }
  VecMap<T> vec() { return VecMap<T>(data_.data(), size()); }
  ConstVecMap<T> vec() const { return ConstVecMap<T>(data_.data(), size()); }
  ArrMap<T> array() { return ArrMap<T>(data_.data(), size()); }
  ConstArrMap<T> array() const { return ConstArrMap<T>(data_.data(), size()); }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape_);
    for (std::int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const TensorT& a, const TensorT& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::int64_t checked_size(const Shape& s) {
    for (std::int64_t e : s) {
      if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    }
    return shape_size(s);
  }
  void check_view(std::int64_t n) const {
    if (n != size()) {
      throw ShapeError("view of " + std::to_string(n) + " elements over tensor " +
                       shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;

// Trainable tensor with gradient and ADAM moment state. `trainable` excludes
// a parameter from both gradient computation and optimizer updates (used by
// the freeze-branches training strategy).
template <typename T>
struct ParameterT {
  TensorT<T> value;
  TensorT<T> grad;
  TensorT<T> adam_m;
  TensorT<T> adam_v;
  std::int64_t step_count = 0;
  bool trainable = true;

  ParameterT() = default;
  explicit ParameterT(TensorT<T> v)
      : value(std::move(v)), grad(value.shape()), adam_m(value.shape()), adam_v(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
};

using Parameter = ParameterT<float>;

}  // namespace unmix

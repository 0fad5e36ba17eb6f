#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spm {

// (N, C, H, W) extents. Scalars are (1, 1, 1, 1).
struct Shape {
  std::size_t n = 1, c = 1, h = 1, w = 1;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense NCHW array. Value type; copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0) {
      throw ShapeError("tensor dimensions must be >= 1, got " + shape.str());
    }
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape.numel()) {
      throw ShapeError("data size " + std::to_string(data_.size()) + " does not match shape " +
                       shape.str());
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) { return data_[index(n, c, y, x)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(n, c, y, x)];
  }

  // Pointer to the (n, c) spatial plane.
  T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  Tensor reshaped(Shape s) const {
    if (s.numel() != numel()) throw ShapeError("reshape " + shape_.str() + " -> " + s.str());
    return Tensor(s, data_);
  }

  // Batch slice [begin, begin+count).
  Tensor batch_slice(std::size_t begin, std::size_t count) const {
    Shape s = shape_;
    s.n = count;
    const std::size_t per = shape_.c * shape_.plane();
    return Tensor(s, std::vector<T>(data_.begin() + begin * per, data_.begin() + (begin + count) * per));
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

template <typename T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch of nothing");
  Shape s = parts.front().shape();
  s.n = 0;
  std::vector<T> data;
  for (const auto& p : parts) {
    if (p.shape().c != s.c || p.shape().h != s.h || p.shape().w != s.w) {
      throw ShapeError("concat_batch shape mismatch " + p.shape().str());
    }
    s.n += p.shape().n;
    data.insert(data.end(), p.vec().begin(), p.vec().end());
  }
  return Tensor<T>(s, std::move(data));
}

template <typename T, typename Rng>
Tensor<T> random_uniform(Shape s, T lo, T hi, Rng& rng) {
  Tensor<T> t(s);
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T, typename Rng>
Tensor<T> random_normal(Shape s, T stddev, Rng& rng) {
  Tensor<T> t(s);
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
  return t;
}

// 2-D grid of labels or mask bits, row-major.
template <typename V>
struct Grid {
  std::size_t h = 0, w = 0;
  std::vector<V> data;

  Grid() = default;
  Grid(std::size_t height, std::size_t width, V fill = V{}) : h(height), w(width), data(height * width, fill) {}

  V& operator()(std::size_t y, std::size_t x) { return data[y * w + x]; }
  const V& operator()(std::size_t y, std::size_t x) const { return data[y * w + x]; }
  std::size_t size() const { return data.size(); }
  bool operator==(const Grid&) const = default;
};

using LabelGrid = Grid<std::int32_t>;

// 1 marks the edited region, 0 the known region.
using Mask = Grid<std::uint8_t>;

}  // namespace spm

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace uqd {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array scalar(double v) { return Array({1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major 2-D / 3-D accessors; no bounds checks beyond debug asserts.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
  double& at(std::size_t ch, std::size_t r, std::size_t c) {
    return data_[(ch * shape_[rank() - 2] + r) * shape_.back() + c];
  }
  double at(std::size_t ch, std::size_t r, std::size_t c) const {
    return data_[(ch * shape_[rank() - 2] + r) * shape_.back() + c];
  }

  // Copy of channel `ch` of a C×H×W array as an H×W array.
  Array channel(std::size_t ch) const;

  Array reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const Array&, const Array&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Boolean H×W map stored as bytes.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<unsigned char> valid;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, bool v = true) : height(h), width(w), valid(h * w, v ? 1 : 0) {}
  std::size_t count() const;
  Array as_array() const;
  friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace uqd
